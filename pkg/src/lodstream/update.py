"""Incremental batch insertion: expand, sample, allocate, store.

Each batch runs one update cycle against the tree:

1. **Expansion.**  Count batch points into leaf ``pending`` counters, then
   split every counted leaf whose prospective total (stored + pending)
   exceeds the threshold, spilling its stored points.  Splitting reroutes
   points deeper, so counting and splitting repeat until an iteration
   produces no splits.  Spilled points only ever route into the subtree of
   the node they came from, so the spill buffer is complete after the first
   iteration; later iterations recount spill and batch together.  Counted
   leaves that do not split are marked final and skipped by later
   iterations, which makes every leaf's pending settle in exactly one
   iteration.  Leaves at the depth cap never split, whatever their count.
2. **Sampling.**  With the topology frozen, every point descends again and
   claims its occupancy cell at each inner node on the way down.  First
   claim wins; winners join the voxel backlog and bump the node's pending.
3. **Allocation.**  Every node touched this cycle gets chunks topped up to
   ``ceil((count + pending) / capacity)``.
4. **Store.**  Points append to their leaves in input order (spill first,
   then batch, both in original order), voxels materialize from the backlog
   at cell centers.  Pending drains into count, per-cycle state clears.

Processing spill before batch in their original stored orders makes the
outcome identical to inserting every point one at a time in ingestion
order: spilled points predate the batch, and points from different spilled
nodes never compete for the same cell.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BacklogOverflow, SpillOverflow
from .octree import Octree

__all__ = [
    "UpdateConfig",
    "UpdateState",
    "UpdateStats",
    "BatchDelta",
    "BudgetClock",
    "SpillBuffer",
    "VoxelBacklog",
    "chunks_needed",
    "insert_batch",
    "run_frame_updates",
]


def chunks_needed(count: int, capacity: int) -> int:
    """Chunks required to hold ``count`` records: ceil(count / capacity)."""
    return (count + capacity - 1) // capacity


@dataclass
class UpdateConfig:
    batch_size: int = 1_000_000
    budget_ms: float = 10.0
    backlog_capacity: int = 10_000_000
    spill_capacity: int = 100_000_000


@dataclass
class UpdateStats:
    batches: int = 0
    frames: int = 0
    points: int = 0
    voxels_created: int = 0
    nodes: int = 0
    splits: int = 0
    update_seconds: float = 0.0
    max_batch_ms: float = 0.0
    frame_ms_total: float = 0.0
    frame_ms_max: float = 0.0
    backlog_high_water: int = 0
    spill_high_water: int = 0

    def throughput_mps(self) -> float:
        """Million points ingested per update-second."""
        if self.update_seconds <= 0.0:
            return 0.0
        return self.points / self.update_seconds / 1e6


class BudgetClock:
    """Wall-clock frame budget, checked between batches."""

    def __init__(self, budget_ms: float) -> None:
        self.budget_ms = budget_ms
        self._start = time.perf_counter()

    def restart(self) -> None:
        self._start = time.perf_counter()

    def elapsed_ms(self) -> float:
        return (time.perf_counter() - self._start) * 1e3

    def exceeded(self) -> bool:
        return self.elapsed_ms() >= self.budget_ms


class SpillBuffer:
    """Points displaced by splits, held until the store pass reinserts them.

    Segments arrive in split order (ascending node id) and each segment
    preserves its node's storage order, so concatenation preserves original
    ingestion order within every spilled node.
    """

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.total = 0
        self.high_water = 0
        self._xyz: list[np.ndarray] = []
        self._rgba: list[np.ndarray] = []

    def append(self, xyz: np.ndarray, rgba: np.ndarray) -> None:
        if self.total + len(rgba) > self.capacity:
            raise SpillOverflow(f"spill buffer past capacity {self.capacity}")
        self._xyz.append(xyz)
        self._rgba.append(rgba)
        self.total += len(rgba)
        self.high_water = max(self.high_water, self.total)

    def concat(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._xyz:
            return np.empty((0, 3), np.float32), np.empty(0, np.uint32)
        return np.concatenate(self._xyz), np.concatenate(self._rgba)

    def clear(self) -> None:
        self._xyz.clear()
        self._rgba.clear()
        self.total = 0

    def __len__(self) -> int:
        return self.total


class VoxelBacklog:
    """Flat (node, cell, color) triples claimed during sampling.

    Arrays grow on demand up to the configured capacity; hitting the cap is
    fatal for the cycle (BacklogOverflow).
    """

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.length = 0
        self.high_water = 0
        n0 = min(capacity, 4096)
        self.node = np.empty(n0, np.int32)
        self.cell = np.empty(n0, np.int32)
        self.rgba = np.empty(n0, np.uint32)

    def ensure(self, extra: int) -> None:
        want = min(self.length + extra, self.capacity)
        if want > len(self.node):
            size = max(want, 2 * len(self.node))
            size = min(size, self.capacity)
            for name in ("node", "cell", "rgba"):
                old = getattr(self, name)
                grown = np.empty(size, old.dtype)
                grown[: self.length] = old[: self.length]
                setattr(self, name, grown)

    def clear(self) -> None:
        self.length = 0


def _grow_to(arr: np.ndarray, n: int) -> np.ndarray:
    """Grown copy of a scratch array; existing entries survive."""
    if len(arr) >= n:
        return arr
    grown = np.empty(max(n, 2 * len(arr)), arr.dtype)
    grown[: len(arr)] = arr
    return grown


@dataclass
class BatchDelta:
    """What one cycle changed, in stream emission order.

    ``structure`` interleaves ("split", node) and ("create", node, parent,
    octant, level) events in split order; ``voxels`` and ``points`` list
    per-node additions in ascending node id.
    """

    structure: list[tuple] = field(default_factory=list)
    voxels: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)
    points: list[tuple[int, int, int]] = field(default_factory=list)


class UpdateState:
    """Per-tree transient state: spill, backlog, budget, scratch buffers."""

    def __init__(self, config: UpdateConfig | None = None) -> None:
        self.config = config or UpdateConfig()
        self.spill = SpillBuffer(self.config.spill_capacity)
        self.backlog = VoxelBacklog(self.config.backlog_capacity)
        self.stats = UpdateStats()
        self.clock = BudgetClock(self.config.budget_ms)
        self._touched = np.empty(1024, np.int32)
        self._vtouched = np.empty(1024, np.int32)
        self._leaf_ids = np.empty(1024, np.int32)
        self._alloc_node = np.empty(1024, np.int32)
        self._alloc_need = np.empty(1024, np.int32)
        self._stamp = np.full(1024, -1, np.int64)
        self._cursor = np.full(1024, -1, np.int32)
        self._pass = 0

    def _node_scratch(self, num_nodes: int) -> None:
        if len(self._stamp) < num_nodes:
            n = max(num_nodes, 2 * len(self._stamp))
            stamp = np.full(n, -1, np.int64)
            stamp[: len(self._stamp)] = self._stamp
            self._stamp = stamp
            cursor = np.full(n, -1, np.int32)
            cursor[: len(self._cursor)] = self._cursor
            self._cursor = cursor


def _split_pass(
    tree: Octree, state: UpdateState, ids: np.ndarray, events: list | None
) -> int:
    """Split or finalize every newly counted leaf; returns split count."""
    if len(ids) == 0:
        return 0
    if len(ids) > 1:
        ids = np.sort(ids)
    n_splits = 0
    t = tree.leaf_threshold
    for nid in ids:
        nid = int(nid)
        if tree.count[nid] + tree.pending[nid] > t and tree.level[nid] < tree.max_depth:
            kids = tree.split(nid, state.spill)
            n_splits += 1
            if events is not None:
                events.append(("split", nid))
                for kid in kids:
                    events.append(
                        ("create", kid, nid, int(tree.octant[kid]), int(tree.level[kid]))
                    )
        else:
            tree.final[nid] = True
    return n_splits


def insert_batch(
    tree: Octree,
    xyz: np.ndarray,
    rgba: np.ndarray,
    state: UpdateState,
    collect_delta: bool = False,
) -> BatchDelta | None:
    """Run one full update cycle for a batch; returns a delta on request.

    ``xyz`` is (n, 3) float32 inside the tree bounds, ``rgba`` packed
    uint32.  The caller owns batch sizing; this always consumes the whole
    batch.
    """
    t0 = time.perf_counter()
    n_batch = len(rgba)
    if n_batch == 0:
        return BatchDelta() if collect_delta else None
    events: list | None = [] if collect_delta else None
    bx0, by0, bz0 = tree.bounds.min
    size0 = tree.bounds.size

    # Expansion: iterate counting and splitting until no leaf overflows.
    state._touched = _grow_to(state._touched, n_batch + 8)
    nt = _kernels.count_points(
        xyz, tree.children, tree.inner, tree.final, tree.pending,
        state._touched, 0, bx0, by0, bz0, size0,
    )
    leaf_touch_end = nt
    n_splits = _split_pass(tree, state, state._touched[:nt], events)
    if len(state.spill):
        sp_xyz, sp_rgba = state.spill.concat()
        all_xyz = np.concatenate([sp_xyz, xyz])
        all_rgba = np.concatenate([sp_rgba, rgba])
    else:
        all_xyz, all_rgba = xyz, rgba
    n_all = len(all_rgba)
    while n_splits:
        state._touched = _grow_to(state._touched, leaf_touch_end + n_all + 8)
        nt = _kernels.count_points(
            all_xyz, tree.children, tree.inner, tree.final, tree.pending,
            state._touched, leaf_touch_end, bx0, by0, bz0, size0,
        )
        fresh = state._touched[leaf_touch_end:nt]
        leaf_touch_end = nt
        n_splits = _split_pass(tree, state, fresh, events)

    # Sampling: claim cells along every path, note each point's leaf.
    state._node_scratch(tree.num_nodes)
    state._vtouched = _grow_to(state._vtouched, tree.num_nodes + 8)
    state._leaf_ids = _grow_to(state._leaf_ids, n_all)
    backlog = state.backlog
    backlog.ensure(n_all * max(tree.max_level, 1))
    blen, vnt, overflow = _kernels.sample_and_route(
        all_xyz, all_rgba, tree.children, tree.inner, tree.grid_off,
        tree.arena.u8, tree.pending, tree.grid_res,
        backlog.node, backlog.cell, backlog.rgba, backlog.length,
        len(backlog.node), state._vtouched, 0, state._leaf_ids,
        bx0, by0, bz0, size0,
    )
    if overflow:
        raise BacklogOverflow(f"voxel backlog past capacity {backlog.capacity}")
    n_voxels = blen - backlog.length
    backlog.length = blen
    backlog.high_water = max(backlog.high_water, blen)

    # Allocation: top every touched node up to its exact chunk need.
    touched_leaves = state._touched[:leaf_touch_end]
    cap = tree.pool.capacity
    state._alloc_node = _grow_to(state._alloc_node, leaf_touch_end + vnt)
    state._alloc_need = _grow_to(state._alloc_need, leaf_touch_end + vnt)
    state._pass += 1
    n_short = _kernels.collect_allocs(
        tree.count, tree.pending, tree.chunk_count, cap,
        touched_leaves, leaf_touch_end, state._vtouched, vnt,
        state._alloc_node, state._alloc_need, state._stamp, state._pass,
    )
    for i in range(n_short):
        nid = int(state._alloc_node[i])
        for _ in range(int(state._alloc_need[i])):
            tree.append_chunk(nid)

    # Delta capture needs pre-store counts; store passes advance them.
    if collect_delta:
        delta = BatchDelta(structure=events or [])
        order = np.argsort(backlog.node[:blen], kind="stable")
        bnodes = backlog.node[:blen][order]
        marks = np.nonzero(np.diff(bnodes))[0] + 1
        starts = np.concatenate([[0], marks, [blen]])
        for s, e in zip(starts[:-1], starts[1:]):
            if e > s:
                idx = order[s:e]
                delta.voxels.append(
                    (
                        int(bnodes[s]),
                        backlog.cell[:blen][idx].astype(np.uint32),
                        backlog.rgba[:blen][idx].copy(),
                    )
                )
        for nid in np.sort(touched_leaves):
            nid = int(nid)
            if not tree.inner[nid] and tree.pending[nid] > 0:
                delta.points.append((nid, int(tree.count[nid]), int(tree.pending[nid])))
    else:
        delta = None

    # Store: points in global order, then voxels from the backlog.
    state._pass += 1
    _kernels.store_points(
        all_xyz, all_rgba, state._leaf_ids[:n_all], tree.count,
        tree.chunk_head, tree.pool.next, tree.pool.occupied, tree.pool.payload_off,
        cap, tree.arena.f32, tree.arena.u32,
        state._stamp, state._cursor, state._pass,
    )
    if blen:
        state._pass += 1
        _kernels.store_voxels(
            backlog.node, backlog.cell, backlog.rgba, blen,
            tree.bmin, tree.level, tree.size_by_level, tree.grid_res,
            tree.count, tree.chunk_head, tree.pool.next, tree.pool.occupied,
            tree.pool.payload_off, cap, tree.arena.f32, tree.arena.u32,
            state._stamp, state._cursor, state._pass,
        )

    # Cleanup: per-cycle flags and buffers go back to empty.
    _kernels.clear_marks(
        tree.pending, tree.final, touched_leaves, leaf_touch_end, state._vtouched, vnt
    )
    state.spill.clear()
    backlog.clear()

    st = state.stats
    st.batches += 1
    st.points += n_batch
    st.backlog_high_water = state.backlog.high_water
    st.spill_high_water = state.spill.high_water
    st.voxels_created += n_voxels
    st.splits = tree.splits_total
    st.nodes = tree.num_nodes
    dt = time.perf_counter() - t0
    st.update_seconds += dt
    st.max_batch_ms = max(st.max_batch_ms, dt * 1e3)
    return delta


def run_frame_updates(tree, batches, state: UpdateState, on_delta=None) -> int:
    """Drain queued batches for one frame, stopping once the budget is spent.

    ``batches`` is a deque of (xyz, rgba) pairs.  At least one batch is
    processed whenever any is queued; the budget is checked between
    batches, never inside one.  Returns the number of batches consumed.
    """
    state.clock.restart()
    processed = 0
    while batches and (processed == 0 or not state.clock.exceeded()):
        xyz, rgba = batches.popleft()
        delta = insert_batch(tree, xyz, rgba, state, collect_delta=on_delta is not None)
        if on_delta is not None:
            on_delta(delta)
        processed += 1
    if processed:
        st = state.stats
        st.frames += 1
        dt = state.clock.elapsed_ms()
        st.frame_ms_total += dt
        st.frame_ms_max = max(st.frame_ms_max, dt)
    return processed
