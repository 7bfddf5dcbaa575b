// Level-of-detail cut: the same walk the server renderer performs, so a
// finished mirror and the server always agree on what to draw.

import { frustumIntersects, frustumPlanes, screenSize, type CameraParams } from "./math.js";
import type { ClientTree } from "./tree.js";

export function selectVisible(
  tree: ClientTree,
  cam: CameraParams,
  threshold = 128,
): number[] {
  const root = tree.root;
  if (!root || (!root.inner && root.count === 0)) return [];
  const planes = frustumPlanes(cam);
  const out: number[] = [];
  const stack: number[] = [0];
  while (stack.length > 0) {
    const nid = stack.pop()!;
    const node = tree.nodes.get(nid)!;
    if (!frustumIntersects(planes, node.bounds)) continue;
    // Mid-stream, a split can arrive ahead of its child announcements; such
    // a node is drawn as voxels until the children exist.
    if (node.inner && screenSize(node.bounds, cam) > threshold && node.hasAllChildren()) {
      for (let o = 7; o >= 0; o--) stack.push(node.children[o]);
    } else {
      out.push(nid);
    }
  }
  return out;
}
