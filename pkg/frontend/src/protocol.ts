// Binary stream decoding. One message per WebSocket frame, little-endian,
// first byte is the tag. Layouts match the server encoder byte for byte.

import type { Vec3 } from "./math.js";

export const PROTOCOL_VERSION = 1;
export const NO_PARENT = 0xffffffff;

export class ProtocolError extends Error {}

export interface HelloMessage {
  kind: "hello";
  version: number;
  boundsMin: Vec3;
  boundsSize: number;
  gridRes: number;
  leafThreshold: number;
  chunkCapacity: number;
}

export interface NodeCreatedMessage {
  kind: "nodeCreated";
  node: number;
  parent: number;
  octant: number;
  level: number;
}

export interface NodeSplitMessage {
  kind: "nodeSplit";
  node: number;
}

export interface PointsAppendedMessage {
  kind: "points";
  node: number;
  count: number;
  positions: Float32Array;
  colors: Uint32Array;
}

export interface VoxelsAppendedMessage {
  kind: "voxels";
  node: number;
  count: number;
  cells: Uint32Array;
  colors: Uint32Array;
}

export interface StatsTickMessage {
  kind: "stats";
  points: number;
  voxels: number;
  nodes: number;
  splits: number;
  frames: number;
  elapsedSeconds: number;
  frameAvgMs: number;
  frameMaxMs: number;
}

export interface EndOfStreamMessage {
  kind: "end";
}

export type StreamMessage =
  | HelloMessage
  | NodeCreatedMessage
  | NodeSplitMessage
  | PointsAppendedMessage
  | VoxelsAppendedMessage
  | StatsTickMessage
  | EndOfStreamMessage;

function expectLength(data: ArrayBuffer, want: number, what: string): void {
  if (data.byteLength !== want) {
    throw new ProtocolError(
      `${what}: expected ${want} bytes, got ${data.byteLength}`,
    );
  }
}

export function decodeMessage(data: ArrayBuffer): StreamMessage {
  if (data.byteLength < 1) throw new ProtocolError("empty frame");
  const view = new DataView(data);
  const tag = view.getUint8(0);
  switch (tag) {
    case 0: {
      expectLength(data, 46, "hello");
      return {
        kind: "hello",
        version: view.getUint8(1),
        boundsMin: [
          view.getFloat64(2, true),
          view.getFloat64(10, true),
          view.getFloat64(18, true),
        ],
        boundsSize: view.getFloat64(26, true),
        gridRes: view.getUint32(34, true),
        leafThreshold: view.getUint32(38, true),
        chunkCapacity: view.getUint32(42, true),
      };
    }
    case 1: {
      expectLength(data, 11, "node-created");
      return {
        kind: "nodeCreated",
        node: view.getUint32(1, true),
        parent: view.getUint32(5, true),
        octant: view.getUint8(9),
        level: view.getUint8(10),
      };
    }
    case 2: {
      expectLength(data, 5, "node-split");
      return { kind: "nodeSplit", node: view.getUint32(1, true) };
    }
    case 3: {
      if (data.byteLength < 9) throw new ProtocolError("points: truncated header");
      const node = view.getUint32(1, true);
      const count = view.getUint32(5, true);
      expectLength(data, 9 + 16 * count, "points");
      // Copy past the 9-byte header so the typed views are aligned.
      const body = data.slice(9);
      const floats = new Float32Array(body);
      const words = new Uint32Array(body);
      const positions = new Float32Array(3 * count);
      const colors = new Uint32Array(count);
      for (let i = 0; i < count; i++) {
        positions[3 * i] = floats[4 * i];
        positions[3 * i + 1] = floats[4 * i + 1];
        positions[3 * i + 2] = floats[4 * i + 2];
        colors[i] = words[4 * i + 3];
      }
      return { kind: "points", node, count, positions, colors };
    }
    case 4: {
      if (data.byteLength < 9) throw new ProtocolError("voxels: truncated header");
      const node = view.getUint32(1, true);
      const count = view.getUint32(5, true);
      expectLength(data, 9 + 8 * count, "voxels");
      const body = data.slice(9);
      const words = new Uint32Array(body);
      const cells = new Uint32Array(count);
      const colors = new Uint32Array(count);
      for (let i = 0; i < count; i++) {
        cells[i] = words[2 * i];
        colors[i] = words[2 * i + 1];
      }
      return { kind: "voxels", node, count, cells, colors };
    }
    case 5: {
      expectLength(data, 53, "stats");
      return {
        kind: "stats",
        points: Number(view.getBigUint64(1, true)),
        voxels: Number(view.getBigUint64(9, true)),
        nodes: view.getUint32(17, true),
        splits: view.getUint32(21, true),
        frames: view.getUint32(25, true),
        elapsedSeconds: view.getFloat64(29, true),
        frameAvgMs: view.getFloat64(37, true),
        frameMaxMs: view.getFloat64(45, true),
      };
    }
    case 6: {
      expectLength(data, 1, "end-of-stream");
      return { kind: "end" };
    }
    default:
      throw new ProtocolError(`unknown tag ${tag}`);
  }
}
