"""Point cloud input: SIM and LAS readers, batching, and Morton ordering.

SIM is the native interchange format: headerless little-endian 16-byte
records, ``float32 x, y, z`` followed by ``uint8 r, g, b, a``.  A file's
length must be a multiple of 16.

LAS support covers uncompressed point record formats 2, 3, 7 and 8, the
ones that carry RGB.  Coordinates decode as ``raw * scale + offset`` from
the header; 16-bit color channels drop to 8 bits via a right shift.
Compressed (LAZ) input is rejected up front.

Readers push batches through a bounded queue so decode overlaps ingestion
without unbounded buffering.  Batches are clamped into the root bounds and
scrubbed of non-finite coordinates before they reach the tree.

The first read of a fresh file bypasses the page cache where the platform
allows it, so cold-start throughput numbers measure the disk and not a
warm cache; when direct reads are unavailable the reader quietly falls
back to buffered IO.
"""
from __future__ import annotations

import logging
import os
import queue
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, EmptyFile, Truncated, UnsupportedFormat
from .octree import CubeBounds, cubify

log = logging.getLogger(__name__)

SIM_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1"), ("a", "u1")]
)
RECORD_BYTES = 16

# LAS point record formats we accept, mapped to the byte offset of the
# red channel within a record.
_LAS_RGB_OFFSET = {2: 20, 3: 28, 7: 30, 8: 30}
_LAS_MIN_RECORD = {2: 26, 3: 34, 7: 36, 8: 38}


def _rgba_from_bytes(r: np.ndarray, g: np.ndarray, b: np.ndarray, a) -> np.ndarray:
    out = r.astype(np.uint32)
    out |= g.astype(np.uint32) << 8
    out |= b.astype(np.uint32) << 16
    out |= (a if isinstance(a, np.ndarray) else np.uint32(a)) << np.uint32(24)
    return out


# -- SIM ------------------------------------------------------------------


def write_sim(path, xyz: np.ndarray, rgba: np.ndarray) -> None:
    """Write records to a SIM file; ``rgba`` is packed uint32."""
    rec = np.empty(len(rgba), SIM_DTYPE)
    rec["x"] = xyz[:, 0]
    rec["y"] = xyz[:, 1]
    rec["z"] = xyz[:, 2]
    rgba = np.ascontiguousarray(rgba, np.uint32)
    rec["r"] = rgba & 0xFF
    rec["g"] = (rgba >> 8) & 0xFF
    rec["b"] = (rgba >> 16) & 0xFF
    rec["a"] = (rgba >> 24) & 0xFF
    with open(path, "wb") as f:
        rec.tofile(f)


def read_sim(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a whole SIM file as (xyz float32 (n, 3), rgba uint32)."""
    size = os.path.getsize(path)
    if size == 0:
        raise EmptyFile(str(path))
    if size % RECORD_BYTES:
        raise Truncated(f"{path}: {size} bytes is not a whole number of records")
    rec = np.fromfile(path, dtype=SIM_DTYPE)
    return _records_to_arrays(rec)


def _records_to_arrays(rec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xyz = np.empty((len(rec), 3), np.float32)
    xyz[:, 0] = rec["x"]
    xyz[:, 1] = rec["y"]
    xyz[:, 2] = rec["z"]
    rgba = _rgba_from_bytes(rec["r"], rec["g"], rec["b"], rec["a"].astype(np.uint32))
    return xyz, rgba


# -- LAS ------------------------------------------------------------------


@dataclass(frozen=True)
class LasInfo:
    """The slice of a LAS header this reader needs."""

    point_count: int
    point_format: int
    record_length: int
    data_offset: int
    scale: tuple[float, float, float]
    offset: tuple[float, float, float]
    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]


def las_info(path) -> LasInfo:
    """Parse and sanity-check a LAS header."""
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        head = f.read(375)
    if len(head) < 227:
        raise Truncated(f"{path}: too short for a LAS header")
    if head[:4] != b"LASF":
        raise BadMagic(f"{path}: not a LAS file")
    data_offset = struct.unpack_from("<I", head, 96)[0]
    fmt = head[104]
    if fmt & 0xC0:
        raise UnsupportedFormat(f"{path}: compressed (LAZ) input is not supported")
    record_length = struct.unpack_from("<H", head, 105)[0]
    legacy_count = struct.unpack_from("<I", head, 107)[0]
    scale = struct.unpack_from("<3d", head, 131)
    offset = struct.unpack_from("<3d", head, 155)
    xmax, xmin, ymax, ymin, zmax, zmin = struct.unpack_from("<6d", head, 179)
    count = legacy_count
    version = (head[24], head[25])
    if version >= (1, 4) and len(head) >= 255:
        count64 = struct.unpack_from("<Q", head, 247)[0]
        if count64:
            count = count64
    if fmt not in _LAS_RGB_OFFSET:
        raise UnsupportedFormat(f"{path}: point format {fmt} carries no RGB")
    if record_length < _LAS_MIN_RECORD[fmt]:
        raise Truncated(f"{path}: record length {record_length} too small for format {fmt}")
    if count == 0:
        raise EmptyFile(str(path))
    if data_offset + count * record_length > size:
        raise Truncated(
            f"{path}: header promises {count} records, file ends after "
            f"{(size - data_offset) // record_length}"
        )
    return LasInfo(
        point_count=count,
        point_format=fmt,
        record_length=record_length,
        data_offset=data_offset,
        scale=scale,
        offset=offset,
        mins=(xmin, ymin, zmin),
        maxs=(xmax, ymax, zmax),
    )


def _las_decode(raw: bytes, info: LasInfo) -> tuple[np.ndarray, np.ndarray]:
    ro = _LAS_RGB_OFFSET[info.point_format]
    dt = np.dtype(
        {
            "names": ["X", "Y", "Z", "red", "green", "blue"],
            "formats": ["<i4", "<i4", "<i4", "<u2", "<u2", "<u2"],
            "offsets": [0, 4, 8, ro, ro + 2, ro + 4],
            "itemsize": info.record_length,
        }
    )
    rec = np.frombuffer(raw, dtype=dt)
    xyz = np.empty((len(rec), 3), np.float32)
    for i, (axis, s, o) in enumerate(zip("XYZ", info.scale, info.offset)):
        xyz[:, i] = rec[axis].astype(np.float64) * s + o
    rgba = _rgba_from_bytes(rec["red"] >> 8, rec["green"] >> 8, rec["blue"] >> 8, 255)
    return xyz, rgba


def read_las(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a whole LAS file as (xyz float32 (n, 3), rgba uint32)."""
    info = las_info(path)
    with open(path, "rb") as f:
        f.seek(info.data_offset)
        raw = f.read(info.point_count * info.record_length)
    return _las_decode(raw, info)


# -- bounds ---------------------------------------------------------------


def discover_bounds(path) -> CubeBounds:
    """Cubified bounds for a file: LAS header extents, or a SIM pre-scan."""
    if _looks_like_las(path):
        info = las_info(path)
        return cubify(info.mins, info.maxs)
    mins = np.full(3, np.inf)
    maxs = np.full(3, -np.inf)
    any_finite = False
    for xyz, _ in _iter_sim(path, 4 << 20):
        ok = np.isfinite(xyz).all(axis=1)
        if ok.any():
            any_finite = True
            mins = np.minimum(mins, xyz[ok].min(axis=0))
            maxs = np.maximum(maxs, xyz[ok].max(axis=0))
    if not any_finite:
        raise EmptyFile(f"{path}: no finite points")
    return cubify(mins, maxs)


def _looks_like_las(path) -> bool:
    if str(path).lower().endswith((".las", ".laz")):
        return True
    with open(path, "rb") as f:
        return f.read(4) == b"LASF"


# -- direct reads ---------------------------------------------------------


class _DirectReader:
    """Sequential record reader that tries to bypass the page cache.

    Falls back to buffered reads when O_DIRECT is unavailable or the
    filesystem refuses it; content is identical either way.
    """

    def __init__(self, path, offset: int = 0) -> None:
        self.path = path
        self.pos = offset
        self.size = os.path.getsize(path)
        self.fd = -1
        self.direct = False
        flag = getattr(os, "O_DIRECT", 0)
        if flag:
            try:
                self.fd = os.open(path, os.O_RDONLY | flag)
                self.direct = True
            except OSError:
                pass
        if self.fd < 0:
            self.fd = os.open(path, os.O_RDONLY)
            log.debug("unbuffered read unavailable for %s, using page cache", path)

    def read(self, nbytes: int) -> bytes:
        """Read up to ``nbytes`` from the current position."""
        nbytes = min(nbytes, self.size - self.pos)
        if nbytes <= 0:
            return b""
        if self.direct:
            try:
                return self._read_direct(nbytes)
            except OSError:
                # Alignment or filesystem refusal mid-stream: drop to buffered.
                os.close(self.fd)
                self.fd = os.open(self.path, os.O_RDONLY)
                self.direct = False
                log.warning("direct read failed for %s, falling back to buffered", self.path)
        os.lseek(self.fd, self.pos, os.SEEK_SET)
        data = b""
        while len(data) < nbytes:
            piece = os.read(self.fd, nbytes - len(data))
            if not piece:
                break
            data += piece
        self.pos += len(data)
        return data

    def _read_direct(self, nbytes: int) -> bytes:
        align = 4096
        lo = self.pos - self.pos % align
        hi = min(self.size, self.pos + nbytes)
        span = hi - lo
        span_up = (span + align - 1) // align * align
        buf = np.empty(span_up + align, np.uint8)
        shift = (-buf.ctypes.data) % align
        view = buf[shift : shift + span_up]
        os.lseek(self.fd, lo, os.SEEK_SET)
        got = 0
        while got < span:
            n = os.readv(self.fd, [memoryview(view[got:])])
            if n <= 0:
                break
            got += n
        take = min(nbytes, max(got - (self.pos - lo), 0))
        out = view[self.pos - lo : self.pos - lo + take].tobytes()
        self.pos += take
        return out

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1


def _iter_sim(path, chunk_bytes: int):
    size = os.path.getsize(path)
    if size == 0:
        raise EmptyFile(str(path))
    if size % RECORD_BYTES:
        raise Truncated(f"{path}: {size} bytes is not a whole number of records")
    chunk_bytes -= chunk_bytes % RECORD_BYTES
    rd = _DirectReader(path)
    try:
        while True:
            raw = rd.read(chunk_bytes)
            if not raw:
                break
            rec = np.frombuffer(raw, dtype=SIM_DTYPE)
            yield _records_to_arrays(rec)
    finally:
        rd.close()


def _iter_las(path, batch_points: int):
    info = las_info(path)
    rd = _DirectReader(path, offset=info.data_offset)
    try:
        left = info.point_count
        while left:
            take = min(batch_points, left)
            raw = rd.read(take * info.record_length)
            if len(raw) < take * info.record_length:
                raise Truncated(f"{path}: file shrank while reading")
            yield _las_decode(raw, info)
            left -= take
    finally:
        rd.close()


# -- batching -------------------------------------------------------------


@dataclass
class Batch:
    xyz: np.ndarray
    rgba: np.ndarray

    def __len__(self) -> int:
        return len(self.rgba)


class BatchSource:
    """Reads a file as a sequence of scrubbed, bounds-clamped batches.

    A reader thread decodes ahead through a bounded queue (8 batches), so
    consumers overlap ingestion with decode.  ``rejected`` counts points
    dropped for non-finite coordinates.
    """

    QUEUE_DEPTH = 8

    def __init__(self, path, bounds: CubeBounds | None = None, batch_size: int = 1_000_000):
        self.path = Path(path)
        self.batch_size = batch_size
        self.bounds = bounds or discover_bounds(path)
        self.file_bytes = os.path.getsize(path)
        self.rejected = 0
        self._queue: queue.Queue = queue.Queue(maxsize=self.QUEUE_DEPTH)
        self._thread: threading.Thread | None = None
        self._error: BaseException | None = None

    def _scrub(self, xyz: np.ndarray, rgba: np.ndarray) -> Batch:
        ok = np.isfinite(xyz).all(axis=1)
        if not ok.all():
            self.rejected += int(len(ok) - ok.sum())
            xyz = xyz[ok]
            rgba = rgba[ok]
        lo = np.asarray(self.bounds.min, np.float64)
        np.clip(xyz, lo.astype(np.float32), (lo + self.bounds.size).astype(np.float32), out=xyz)
        return Batch(xyz, rgba)

    def _pump(self) -> None:
        try:
            pend_xyz: list[np.ndarray] = []
            pend_rgba: list[np.ndarray] = []
            held = 0
            it = (
                _iter_las(self.path, self.batch_size)
                if _looks_like_las(self.path)
                else _iter_sim(self.path, self.batch_size * RECORD_BYTES)
            )
            for xyz, rgba in it:
                pend_xyz.append(xyz)
                pend_rgba.append(rgba)
                held += len(rgba)
                while held >= self.batch_size:
                    x = np.concatenate(pend_xyz) if len(pend_xyz) > 1 else pend_xyz[0]
                    r = np.concatenate(pend_rgba) if len(pend_rgba) > 1 else pend_rgba[0]
                    out_x, x = x[: self.batch_size], x[self.batch_size :]
                    out_r, r = r[: self.batch_size], r[self.batch_size :]
                    pend_xyz, pend_rgba = [x], [r]
                    held = len(r)
                    self._queue.put(self._scrub(np.ascontiguousarray(out_x), out_r))
            if held:
                x = np.concatenate(pend_xyz) if len(pend_xyz) > 1 else pend_xyz[0]
                r = np.concatenate(pend_rgba) if len(pend_rgba) > 1 else pend_rgba[0]
                b = self._scrub(np.ascontiguousarray(x), r)
                if len(b):
                    self._queue.put(b)
        except BaseException as exc:  # surfaced on the consumer side
            self._error = exc
        finally:
            self._queue.put(None)

    def __iter__(self):
        self._thread = threading.Thread(target=self._pump, daemon=True)
        self._thread.start()
        while True:
            item = self._queue.get()
            if item is None:
                break
            yield item
        self._thread.join()
        if self._error is not None:
            raise self._error


# -- Morton order ---------------------------------------------------------


def _spread_bits(v: np.ndarray) -> np.ndarray:
    """Space 21-bit integers so consecutive bits land 3 apart."""
    v = v.astype(np.uint64)
    v &= np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_key(xyz: np.ndarray, bounds: CubeBounds, bits: int = 21) -> np.ndarray:
    """64-bit Morton codes: x at bit 0, then y, then z, interleaved."""
    scale = (1 << bits) / bounds.size
    top = (1 << bits) - 1
    keys = np.zeros(len(xyz), np.uint64)
    for axis in range(3):
        q = ((xyz[:, axis].astype(np.float64) - bounds.min[axis]) * scale).astype(np.int64)
        np.clip(q, 0, top, out=q)
        keys |= _spread_bits(q) << np.uint64(axis)
    return keys


def morton_sort(xyz: np.ndarray, rgba: np.ndarray, bounds: CubeBounds) -> tuple[np.ndarray, np.ndarray]:
    """Stable reorder of a point set by Morton key."""
    order = np.argsort(morton_key(xyz, bounds), kind="stable")
    return xyz[order], rgba[order]
