"""Arena-backed storage: a monotone byte arena and a fixed-size chunk pool.

All bulk data (point records, voxel records, occupancy grids) lives in one
large zero-initialized byte buffer.  The arena hands out aligned regions and
never reclaims them; reuse happens one level up, in the chunk pool, which
keeps released chunks on a LIFO free list and only asks the arena for fresh
memory when the free list is empty.

A chunk is a row in the pool's tables: an arena offset for its payload
(``capacity`` 16-byte records), an occupied count, and a link to the next
chunk in a node's list.  Handles are plain ints so the hot kernels can walk
chunk lists without touching Python objects.

Record layout, shared by points and voxels (little endian, 16 bytes):

    float32 x, y, z | uint32 rgba   (r | g<<8 | b<<16 | a<<24)

Thread safety: ``Arena.alloc``, ``ChunkPool.acquire`` and
``ChunkPool.release`` are serialized with locks.  Reads of settled regions
need no lock, the arena never moves or recycles memory.
"""
from __future__ import annotations

import threading

import numpy as np

from .errors import OutOfArena

RECORD_BYTES = 16
NO_CHUNK = -1


class Arena:
    """Monotone bump allocator over one preallocated byte buffer."""

    __slots__ = ("capacity", "offset", "u8", "f32", "u32", "_lock")

    def __init__(self, capacity: int) -> None:
        if capacity <= 0:
            raise ValueError("arena capacity must be positive")
        # Round up so the typed views below cover the whole buffer.
        capacity = (capacity + 15) // 16 * 16
        self.capacity = capacity
        self.offset = 0
        self.u8 = np.zeros(capacity, dtype=np.uint8)
        self.f32 = self.u8.view(np.float32)
        self.u32 = self.u8.view(np.uint32)
        self._lock = threading.Lock()

    def alloc(self, size: int, align: int = 16) -> int:
        """Reserve ``size`` bytes, return the region's byte offset.

        The region starts at a multiple of ``align`` and is zeroed (the
        backing buffer starts zeroed and regions are never handed out twice).
        Raises OutOfArena when the reservation would pass the end.
        """
        if size < 0:
            raise ValueError("negative allocation")
        with self._lock:
            off = -self.offset % align + self.offset
            end = off + size
            if end > self.capacity:
                raise OutOfArena(
                    f"arena exhausted: need {end - self.capacity} bytes past "
                    f"capacity {self.capacity}"
                )
            self.offset = end
            return off

    @property
    def high_water(self) -> int:
        """Bytes consumed so far (monotone, equals current offset)."""
        return self.offset

    def bytes_at(self, off: int, size: int) -> np.ndarray:
        """uint8 view of a region previously returned by alloc."""
        return self.u8[off : off + size]


class ChunkPool:
    """Fixed-capacity chunk table with LIFO reuse of released chunks.

    ``allocated_total`` counts chunks ever created from arena memory and
    never decreases; at any instant it equals live chunks plus the free
    list length.  ``released_total`` counts individual release events.
    """

    def __init__(self, arena: Arena, capacity: int = 1000) -> None:
        if capacity <= 0:
            raise ValueError("chunk capacity must be positive")
        self.arena = arena
        self.capacity = capacity
        self.payload_bytes = capacity * RECORD_BYTES
        cap0 = 1024
        self.next = np.full(cap0, NO_CHUNK, dtype=np.int32)
        self.payload_off = np.zeros(cap0, dtype=np.int64)
        self.occupied = np.zeros(cap0, dtype=np.int32)
        self.allocated_total = 0
        self.released_total = 0
        self._free: list[int] = []
        self._lock = threading.Lock()

    def _grow(self) -> None:
        cap = len(self.next) * 2
        self.next = np.concatenate([self.next, np.full(cap // 2, NO_CHUNK, np.int32)])
        self.payload_off = np.concatenate([self.payload_off, np.zeros(cap // 2, np.int64)])
        self.occupied = np.concatenate([self.occupied, np.zeros(cap // 2, np.int32)])

    def acquire(self) -> int:
        """Hand out a chunk id, preferring the free list over the arena."""
        with self._lock:
            if self._free:
                cid = self._free.pop()
            else:
                cid = self.allocated_total
                if cid >= len(self.next):
                    self._grow()
                self.payload_off[cid] = self.arena.alloc(self.payload_bytes, RECORD_BYTES)
                self.allocated_total += 1
            self.next[cid] = NO_CHUNK
            self.occupied[cid] = 0
            return cid

    def release(self, head: int) -> int:
        """Release the whole chain starting at ``head``, return its length.

        Chunks go back on the free list in walk order, so the most recently
        released chunk is the next one acquired.  Payload bytes are left as
        is; ``occupied`` is the only source of truth for content.
        """
        n = 0
        with self._lock:
            cid = head
            while cid != NO_CHUNK:
                nxt = int(self.next[cid])
                self.occupied[cid] = 0
                self.next[cid] = NO_CHUNK
                self._free.append(cid)
                self.released_total += 1
                n += 1
                cid = nxt
        return n

    @property
    def free_count(self) -> int:
        return len(self._free)

    @property
    def live_count(self) -> int:
        return self.allocated_total - len(self._free)

    def records(self, cid: int) -> tuple[np.ndarray, np.ndarray]:
        """(xyz float32 view (capacity, 3), rgba uint32 view) of a payload."""
        off = int(self.payload_off[cid])
        f = self.arena.f32[off // 4 : off // 4 + 4 * self.capacity].reshape(self.capacity, 4)
        u = self.arena.u32[off // 4 : off // 4 + 4 * self.capacity].reshape(self.capacity, 4)
        return f[:, :3], u[:, 3]

    def check_ledger(self) -> None:
        """Assert the accounting identity; cheap, meant for tests and CLI."""
        assert self.allocated_total == self.live_count + self.free_count, (
            self.allocated_total,
            self.live_count,
            self.free_count,
        )
