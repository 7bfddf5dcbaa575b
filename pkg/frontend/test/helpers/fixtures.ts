import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "..", "fixtures");

// Captured streams are stored as u32-length-prefixed frame payloads.
export function readFrames(name: string): ArrayBuffer[] {
  const raw = readFileSync(join(FIXTURES, name));
  const frames: ArrayBuffer[] = [];
  let at = 0;
  while (at < raw.length) {
    const len = raw.readUInt32LE(at);
    at += 4;
    const buf = new ArrayBuffer(len);
    new Uint8Array(buf).set(raw.subarray(at, at + len));
    frames.push(buf);
    at += len;
  }
  return frames;
}

export function readJson<T>(name: string): T {
  return JSON.parse(readFileSync(join(FIXTURES, name), "utf8")) as T;
}
