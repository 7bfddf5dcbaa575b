// Buffers incoming frames and applies them in batches. The render loop calls
// drain() once per animation frame, so a burst of small messages costs one
// redraw instead of one per message.

import { decodeMessage, ProtocolError } from "./protocol.js";
import { ClientTree } from "./tree.js";

export class StreamDriver {
  readonly tree = new ClientTree();
  error: string | null = null;
  private pending: ArrayBuffer[] = [];
  private readonly onFatal?: () => void;

  constructor(onFatal?: () => void) {
    this.onFatal = onFatal;
  }

  push(data: ArrayBuffer): void {
    if (this.error === null) this.pending.push(data);
  }

  // Returns the number of messages applied. A malformed frame poisons the
  // stream: the error sticks, queued frames are discarded, and onFatal runs
  // so the owner can close the socket and show a banner.
  drain(): number {
    if (this.pending.length === 0) return 0;
    const batch = this.pending;
    this.pending = [];
    let applied = 0;
    for (const frame of batch) {
      try {
        this.tree.apply(decodeMessage(frame));
      } catch (err) {
        if (err instanceof ProtocolError) {
          this.error = err.message;
          this.onFatal?.();
          return applied;
        }
        throw err;
      }
      applied++;
    }
    return applied;
  }
}
