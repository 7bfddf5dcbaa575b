// Client-side mirror of the server octree, rebuilt purely from stream
// messages. Nodes are either leaves holding raw point samples or inner nodes
// holding voxel samples; a NodeSplit flips the kind and drops the points,
// because the server re-routes them to the children in the same flush.

import { childBounds, type CubeBounds, type Vec3 } from "./math.js";
import {
  NO_PARENT,
  PROTOCOL_VERSION,
  ProtocolError,
  type HelloMessage,
  type PointsAppendedMessage,
  type StatsTickMessage,
  type StreamMessage,
  type VoxelsAppendedMessage,
} from "./protocol.js";

export class ClientNode {
  readonly id: number;
  readonly parent: number;
  readonly octant: number;
  readonly level: number;
  readonly bounds: CubeBounds;
  readonly children = new Int32Array(8).fill(-1);
  inner = false;
  // Resident samples: xyz triples plus packed 0xAABBGGRR colors. For leaves
  // these are the streamed points; for inner nodes, reconstructed voxel
  // centers. Capacity grows in chunk-sized steps, mirroring server storage.
  count = 0;
  positions = new Float32Array(0);
  colors = new Uint32Array(0);
  cells = new Uint32Array(0);
  // Bumped whenever resident samples are discarded, so a renderer holding
  // GPU-side copies knows to start over instead of appending.
  generation = 0;

  constructor(id: number, parent: number, octant: number, level: number, bounds: CubeBounds) {
    this.id = id;
    this.parent = parent;
    this.octant = octant;
    this.level = level;
    this.bounds = bounds;
  }

  samplePositions(): Float32Array {
    return this.positions.subarray(0, this.count * 3);
  }

  sampleColors(): Uint32Array {
    return this.colors.subarray(0, this.count);
  }

  sampleCells(): Uint32Array {
    return this.cells.subarray(0, this.count);
  }

  hasAllChildren(): boolean {
    for (let o = 0; o < 8; o++) {
      if (this.children[o] < 0) return false;
    }
    return true;
  }

  private ensure(extra: number, step: number): void {
    const need = this.count + extra;
    if (need * 3 <= this.positions.length) return;
    const cap = Math.ceil(need / step) * step;
    const positions = new Float32Array(cap * 3);
    positions.set(this.positions.subarray(0, this.count * 3));
    this.positions = positions;
    const colors = new Uint32Array(cap);
    colors.set(this.colors.subarray(0, this.count));
    this.colors = colors;
    if (this.inner) {
      const cells = new Uint32Array(cap);
      cells.set(this.cells.subarray(0, this.count));
      this.cells = cells;
    }
  }

  appendPoints(msg: PointsAppendedMessage, step: number): void {
    this.ensure(msg.count, step);
    this.positions.set(msg.positions, this.count * 3);
    this.colors.set(msg.colors, this.count);
    this.count += msg.count;
  }

  appendVoxels(msg: VoxelsAppendedMessage, step: number, gridRes: number): void {
    this.ensure(msg.count, step);
    const g = gridRes;
    const cellSize = this.bounds.size / g;
    const m = this.bounds.min;
    for (let i = 0; i < msg.count; i++) {
      const cell = msg.cells[i];
      const cx = cell % g;
      const cy = Math.floor(cell / g) % g;
      const cz = Math.floor(cell / (g * g));
      const at = (this.count + i) * 3;
      this.positions[at] = m[0] + (cx + 0.5) * cellSize;
      this.positions[at + 1] = m[1] + (cy + 0.5) * cellSize;
      this.positions[at + 2] = m[2] + (cz + 0.5) * cellSize;
    }
    this.colors.set(msg.colors, this.count);
    this.cells.set(msg.cells, this.count);
    this.count += msg.count;
  }

  dropPoints(): void {
    this.count = 0;
    this.positions = new Float32Array(0);
    this.colors = new Uint32Array(0);
    this.generation++;
  }
}

export class ClientTree {
  hello: HelloMessage | null = null;
  stats: StatsTickMessage | null = null;
  done = false;
  readonly nodes = new Map<number, ClientNode>();
  splitCount = 0;
  residentPoints = 0;
  residentVoxels = 0;

  get root(): ClientNode | undefined {
    return this.nodes.get(0);
  }

  private require(id: number, what: string): ClientNode {
    const node = this.nodes.get(id);
    if (!node) throw new ProtocolError(`${what}: unknown node ${id}`);
    return node;
  }

  private get chunkStep(): number {
    return this.hello ? Math.max(1, this.hello.chunkCapacity) : 1;
  }

  apply(msg: StreamMessage): void {
    switch (msg.kind) {
      case "hello": {
        if (this.hello) throw new ProtocolError("duplicate hello");
        if (msg.version !== PROTOCOL_VERSION) {
          throw new ProtocolError(`protocol version ${msg.version}, expected ${PROTOCOL_VERSION}`);
        }
        this.hello = msg;
        return;
      }
      case "nodeCreated": {
        if (!this.hello) throw new ProtocolError("node before hello");
        if (this.nodes.has(msg.node)) {
          throw new ProtocolError(`node ${msg.node} created twice`);
        }
        let bounds: CubeBounds;
        if (msg.parent === NO_PARENT) {
          bounds = { min: [...this.hello.boundsMin] as Vec3, size: this.hello.boundsSize };
        } else {
          const parent = this.require(msg.parent, "node-created");
          bounds = childBounds(parent.bounds, msg.octant);
          parent.children[msg.octant] = msg.node;
        }
        this.nodes.set(
          msg.node,
          new ClientNode(msg.node, msg.parent, msg.octant, msg.level, bounds),
        );
        return;
      }
      case "nodeSplit": {
        const node = this.require(msg.node, "node-split");
        if (node.inner) throw new ProtocolError(`node ${msg.node} split twice`);
        this.residentPoints -= node.count;
        node.dropPoints();
        node.inner = true;
        this.splitCount++;
        return;
      }
      case "points": {
        const node = this.require(msg.node, "points");
        if (node.inner) throw new ProtocolError(`points sent to inner node ${msg.node}`);
        node.appendPoints(msg, this.chunkStep);
        this.residentPoints += msg.count;
        return;
      }
      case "voxels": {
        const node = this.require(msg.node, "voxels");
        if (!node.inner) throw new ProtocolError(`voxels sent to leaf node ${msg.node}`);
        node.appendVoxels(msg, this.chunkStep, this.hello!.gridRes);
        this.residentVoxels += msg.count;
        return;
      }
      case "stats": {
        this.stats = msg;
        return;
      }
      case "end": {
        this.done = true;
        return;
      }
    }
  }
}
