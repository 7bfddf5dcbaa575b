import type { ClientTree } from "./tree.js";

function fmt(n: number): string {
  return n.toLocaleString("en-US");
}

export function hudText(tree: ClientTree, visibleNodes: number, visibleSamples: number): string {
  const lines: string[] = [];
  lines.push(tree.done ? "stream complete" : "streaming…");
  const s = tree.stats;
  if (s) {
    lines.push(`ingested  ${fmt(s.points)} pts  ${fmt(s.voxels)} vox`);
    lines.push(`tree      ${fmt(s.nodes)} nodes  ${fmt(s.splits)} splits`);
    lines.push(
      `server    ${s.frames} frames  avg ${s.frameAvgMs.toFixed(2)} ms` +
      `  max ${s.frameMaxMs.toFixed(2)} ms  ${s.elapsedSeconds.toFixed(1)} s`,
    );
  }
  lines.push(`resident  ${fmt(tree.residentPoints)} pts  ${fmt(tree.residentVoxels)} vox`);
  lines.push(`visible   ${fmt(visibleNodes)} nodes  ${fmt(visibleSamples)} samples`);
  return lines.join("\n");
}

export class Hud {
  private readonly el: HTMLElement;

  constructor(el: HTMLElement) {
    this.el = el;
  }

  update(tree: ClientTree, visibleNodes: number, visibleSamples: number): void {
    this.el.textContent = hudText(tree, visibleNodes, visibleSamples);
  }
}
