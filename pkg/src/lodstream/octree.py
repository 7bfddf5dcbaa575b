"""Octree of point and voxel nodes over a cubic domain.

Geometry conventions, used consistently here, in the kernels, and in the
renderer:

* The root domain is a cube, ``CubeBounds(min, size)``.  Rectangular input
  extents get cubified first (see ``cubify``).
* Child octant bits: bit 0 for x, bit 1 for y, bit 2 for z; a bit is set
  when the coordinate is >= the node center.  Points exactly on a splitting
  plane therefore route to the upper child.
* A child's bounds are ``min + half * offset`` with ``half = size * 0.5``
  and ``offset`` in {0,1}^3; the child size is ``half``.  All bounds math
  is float64 with this exact operation order, so descent recomputes the
  same bytes the node table stores.
* Inner nodes sample on an inscribed ``g``^3 cell grid.  A point falls in
  cell ``floor(g * (p - min) / size)`` per axis, clamped to [0, g-1], and
  cells linearize as ``cx + g*cy + g*g*cz``.  The voxel for a cell sits at
  the cell center, ``min + (c + 0.5) * (size / g)``.

Node storage is struct-of-arrays so the numba kernels can walk the tree
without touching Python objects.  Structural changes (creating and splitting
nodes) happen here, in plain Python; they are rare compared to per-point
work.  Node ids are assigned in creation order and never reused.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import Arena, ChunkPool, NO_CHUNK

NO_NODE = -1
POINT_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1"), ("a", "u1")]
)


@dataclass(frozen=True)
class CubeBounds:
    """Axis-aligned cube: minimum corner and edge length."""

    min: tuple[float, float, float]
    size: float

    @property
    def center(self) -> tuple[float, float, float]:
        h = self.size * 0.5
        return (self.min[0] + h, self.min[1] + h, self.min[2] + h)

    def child(self, octant: int) -> "CubeBounds":
        h = self.size * 0.5
        return CubeBounds(
            (
                self.min[0] + (h if octant & 1 else 0.0),
                self.min[1] + (h if octant & 2 else 0.0),
                self.min[2] + (h if octant & 4 else 0.0),
            ),
            h,
        )

    def contains(self, p) -> bool:
        return all(self.min[i] <= p[i] <= self.min[i] + self.size for i in range(3))

    def corners(self) -> np.ndarray:
        """(8, 3) float64 corner positions, corner i at octant offset i."""
        out = np.empty((8, 3), dtype=np.float64)
        for i in range(8):
            out[i, 0] = self.min[0] + (self.size if i & 1 else 0.0)
            out[i, 1] = self.min[1] + (self.size if i & 2 else 0.0)
            out[i, 2] = self.min[2] + (self.size if i & 4 else 0.0)
        return out


def cubify(mins, maxs) -> CubeBounds:
    """Smallest cube covering an AABB, centered on it along short axes."""
    mins = np.asarray(mins, dtype=np.float64)
    maxs = np.asarray(maxs, dtype=np.float64)
    extent = maxs - mins
    size = float(extent.max())
    if size <= 0.0:
        size = 1.0
    pad = (size - extent) * 0.5
    lo = mins - pad
    return CubeBounds((float(lo[0]), float(lo[1]), float(lo[2])), size)


def octant_of(p, bounds: CubeBounds) -> int:
    """Octant routing a point out of ``bounds``; upper child on ties."""
    cx, cy, cz = bounds.center
    o = 0
    if p[0] >= cx:
        o |= 1
    if p[1] >= cy:
        o |= 2
    if p[2] >= cz:
        o |= 4
    return o


def cell_of(p, bounds: CubeBounds, g: int) -> int:
    """Linear grid cell a point falls into, clamped to the grid."""
    idx = [0, 0, 0]
    for i in range(3):
        c = int(np.floor(g * (float(p[i]) - bounds.min[i]) / bounds.size))
        idx[i] = min(max(c, 0), g - 1)
    return idx[0] + g * idx[1] + g * g * idx[2]


def cell_coords(cell: int, g: int) -> tuple[int, int, int]:
    return cell % g, (cell // g) % g, cell // (g * g)


def voxel_center(cell: int, bounds: CubeBounds, g: int) -> np.ndarray:
    """float64 position of a cell's center."""
    cx, cy, cz = cell_coords(cell, g)
    step = bounds.size / g
    return np.array(
        [
            bounds.min[0] + (cx + 0.5) * step,
            bounds.min[1] + (cy + 0.5) * step,
            bounds.min[2] + (cz + 0.5) * step,
        ],
        dtype=np.float64,
    )


def pack_rgba(r: int, g: int, b: int, a: int = 255) -> int:
    return (r & 0xFF) | (g & 0xFF) << 8 | (b & 0xFF) << 16 | (a & 0xFF) << 24


class Octree:
    """Node table plus the arena and chunk pool its data lives in.

    Per-node columns (index is the node id):

    * ``parent``, ``octant``, ``level``: placement within the tree.
    * ``children``: (n, 8) int32 child ids, NO_NODE where absent.
    * ``inner``: kind flag; leaves store points, inner nodes store voxels.
    * ``final``: per-cycle flag, meaningful only inside an update cycle.
    * ``count``: settled samples (points for leaves, voxels for inner).
    * ``pending``: samples claimed this cycle but not yet stored.
    * ``chunk_head``/``chunk_tail``/``chunk_count``: the node's chunk list.
    * ``grid_off``: arena offset of the occupancy bitgrid, -1 for leaves.
    * ``bmin``: (n, 3) float64 minimum corner; size follows from level.
    """

    def __init__(
        self,
        bounds: CubeBounds,
        arena: Arena,
        pool: ChunkPool,
        *,
        grid_res: int = 128,
        leaf_threshold: int = 50000,
        max_depth: int = 20,
    ) -> None:
        if grid_res < 2 or grid_res & 1:
            raise ValueError("grid_res must be even, so the bitgrid is whole bytes")
        self.bounds = bounds
        self.arena = arena
        self.pool = pool
        self.grid_res = grid_res
        self.grid_bytes = grid_res ** 3 // 8
        self.leaf_threshold = leaf_threshold
        self.max_depth = max_depth
        self.size_by_level = bounds.size * 0.5 ** np.arange(max_depth + 2)

        cap = 1024
        self.parent = np.full(cap, NO_NODE, dtype=np.int32)
        self.octant = np.zeros(cap, dtype=np.uint8)
        self.level = np.zeros(cap, dtype=np.int32)
        self.children = np.full((cap, 8), NO_NODE, dtype=np.int32)
        self.inner = np.zeros(cap, dtype=np.bool_)
        self.final = np.zeros(cap, dtype=np.bool_)
        self.count = np.zeros(cap, dtype=np.int64)
        self.pending = np.zeros(cap, dtype=np.int64)
        self.chunk_head = np.full(cap, NO_CHUNK, dtype=np.int32)
        self.chunk_tail = np.full(cap, NO_CHUNK, dtype=np.int32)
        self.chunk_count = np.zeros(cap, dtype=np.int32)
        self.grid_off = np.full(cap, -1, dtype=np.int64)
        self.bmin = np.zeros((cap, 3), dtype=np.float64)

        self.num_nodes = 0
        self.splits_total = 0
        self.max_level = 0
        root = self._new_node(NO_NODE, 0, np.asarray(bounds.min, np.float64), 0)
        assert root == 0

    # -- structure ---------------------------------------------------------

    def _grow(self) -> None:
        def ext(a, fill):
            pad_shape = (len(a),) + a.shape[1:]
            return np.concatenate([a, np.full(pad_shape, fill, a.dtype)])

        self.parent = ext(self.parent, NO_NODE)
        self.octant = ext(self.octant, 0)
        self.level = ext(self.level, 0)
        self.children = ext(self.children, NO_NODE)
        self.inner = ext(self.inner, False)
        self.final = ext(self.final, False)
        self.count = ext(self.count, 0)
        self.pending = ext(self.pending, 0)
        self.chunk_head = ext(self.chunk_head, NO_CHUNK)
        self.chunk_tail = ext(self.chunk_tail, NO_CHUNK)
        self.chunk_count = ext(self.chunk_count, 0)
        self.grid_off = ext(self.grid_off, -1)
        self.bmin = ext(self.bmin, 0.0)

    def _new_node(self, parent: int, octant: int, bmin: np.ndarray, level: int) -> int:
        nid = self.num_nodes
        if nid >= len(self.parent):
            self._grow()
        self.parent[nid] = parent
        self.octant[nid] = octant
        self.level[nid] = level
        self.bmin[nid] = bmin
        self.num_nodes += 1
        return nid

    def split(self, nid: int, spill) -> list[int]:
        """Turn a leaf into an inner node with 8 fresh leaf children.

        Stored points move to the spill buffer in their stored order, the
        node's chunks go back to the pool, and the node gets a zeroed
        occupancy grid.  Returns the new child ids (octant order).
        """
        assert not self.inner[nid], "split target must be a leaf"
        assert self.level[nid] < self.max_depth, "cannot split at max depth"
        n = int(self.count[nid])
        if n:
            xyz, rgba = self.gather_samples(nid)
            spill.append(xyz, rgba)
        if self.chunk_head[nid] != NO_CHUNK:
            released = self.pool.release(int(self.chunk_head[nid]))
            assert released == int(self.chunk_count[nid])
        self.chunk_head[nid] = NO_CHUNK
        self.chunk_tail[nid] = NO_CHUNK
        self.chunk_count[nid] = 0
        self.count[nid] = 0
        self.pending[nid] = 0
        self.inner[nid] = True
        self.grid_off[nid] = self.arena.alloc(self.grid_bytes, 64)

        half = self.node_size(nid) * 0.5
        base = self.bmin[nid]
        lvl = int(self.level[nid]) + 1
        kids = []
        for o in range(8):
            cb = np.array(
                [
                    base[0] + (half if o & 1 else 0.0),
                    base[1] + (half if o & 2 else 0.0),
                    base[2] + (half if o & 4 else 0.0),
                ],
                dtype=np.float64,
            )
            kid = self._new_node(nid, o, cb, lvl)
            self.children[nid, o] = kid
            kids.append(kid)
        self.splits_total += 1
        self.max_level = max(self.max_level, lvl)
        return kids

    # -- per-node access ---------------------------------------------------

    def node_size(self, nid: int) -> float:
        return self.bounds.size * (0.5 ** int(self.level[nid]))

    def node_bounds(self, nid: int) -> CubeBounds:
        b = self.bmin[nid]
        return CubeBounds((float(b[0]), float(b[1]), float(b[2])), self.node_size(nid))

    def grid(self, nid: int) -> np.ndarray:
        """uint8 view of an inner node's occupancy bitgrid."""
        off = int(self.grid_off[nid])
        assert off >= 0, "leaf nodes have no grid"
        return self.arena.u8[off : off + self.grid_bytes]

    def grid_test_and_set(self, nid: int, cell: int) -> bool:
        """Set a cell bit; True when the cell was previously empty."""
        g = self.grid(nid)
        byte, bit = cell >> 3, cell & 7
        if g[byte] & (1 << bit):
            return False
        g[byte] |= 1 << bit
        return True

    def grid_popcount(self, nid: int) -> int:
        return int(np.unpackbits(self.grid(nid), bitorder="little").sum())

    def occupied_cells(self, nid: int) -> np.ndarray:
        """Sorted linear cell indices with their bit set."""
        bits = np.unpackbits(self.grid(nid), bitorder="little")
        return np.nonzero(bits)[0]

    def gather_samples(self, nid: int, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Copy samples [start, count) out of a node's chunk list.

        Walk order is storage order, which is insertion order; returns
        (xyz float32 (k, 3), rgba uint32 (k,)).
        """
        total = int(self.count[nid])
        k = max(total - start, 0)
        xyz = np.empty((k, 3), dtype=np.float32)
        rgba = np.empty(k, dtype=np.uint32)
        if k == 0:
            return xyz, rgba
        cid = int(self.chunk_head[nid])
        cap = self.pool.capacity
        skip_chunks = start // cap
        for _ in range(skip_chunks):
            cid = int(self.pool.next[cid])
        pos = start
        out = 0
        while out < k:
            cxyz, crgba = self.pool.records(cid)
            lo = pos % cap
            take = min(cap - lo, total - pos)
            xyz[out : out + take] = cxyz[lo : lo + take]
            rgba[out : out + take] = crgba[lo : lo + take]
            out += take
            pos += take
            cid = int(self.pool.next[cid])
        return xyz, rgba

    def append_chunk(self, nid: int) -> int:
        """Link one freshly acquired chunk at the tail of a node's list."""
        cid = self.pool.acquire()
        if self.chunk_head[nid] == NO_CHUNK:
            self.chunk_head[nid] = cid
        else:
            self.pool.next[self.chunk_tail[nid]] = cid
        self.chunk_tail[nid] = cid
        self.chunk_count[nid] += 1
        return cid

    # -- whole-tree helpers ------------------------------------------------

    def leaves(self) -> np.ndarray:
        return np.nonzero(~self.inner[: self.num_nodes])[0]

    def inner_nodes(self) -> np.ndarray:
        return np.nonzero(self.inner[: self.num_nodes])[0]

    def total_points(self) -> int:
        n = self.num_nodes
        return int(self.count[:n][~self.inner[:n]].sum())

    def total_voxels(self) -> int:
        n = self.num_nodes
        return int(self.count[:n][self.inner[:n]].sum())

    def validate(self) -> None:
        """Structural consistency sweep; raises AssertionError on damage."""
        for nid in range(self.num_nodes):
            cnt = int(self.count[nid])
            want = (cnt + self.pool.capacity - 1) // self.pool.capacity
            assert self.chunk_count[nid] == want, (nid, cnt, int(self.chunk_count[nid]))
            walked = 0
            cid = int(self.chunk_head[nid])
            seen = cnt
            while cid != NO_CHUNK:
                walked += 1
                got = int(self.pool.occupied[cid])
                assert got == min(seen, self.pool.capacity), (nid, cid, got)
                seen -= got
                cid = int(self.pool.next[cid])
            assert walked == want
            if self.inner[nid]:
                assert all(self.children[nid, o] != NO_NODE for o in range(8))
                assert self.grid_popcount(nid) == cnt, (nid, cnt)
            else:
                assert self.grid_off[nid] == -1
                assert all(self.children[nid, o] == NO_NODE for o in range(8))
        self.pool.check_ledger()
