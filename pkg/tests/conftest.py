"""Shared fixtures: tree factories, synthetic datasets, a LAS writer."""
from __future__ import annotations

import struct

import numpy as np
import pytest

from lodstream.octree import CubeBounds, Octree
from lodstream.store import Arena, ChunkPool
from lodstream.update import UpdateConfig, UpdateState

UNIT = CubeBounds((0.0, 0.0, 0.0), 1.0)

# one line per criterion at the end of the run, plus measured figures
ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []
ACCEPTANCE_NOTES: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.module.__name__ == "test_acceptance":
        label = (item.function.__doc__ or item.name).strip().splitlines()[0]
        ACCEPTANCE_RESULTS.append((label, rep.passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}")
    for note in ACCEPTANCE_NOTES:
        terminalreporter.write_line(note)


def make_tree(
    bounds=UNIT,
    *,
    arena_bytes=64 << 20,
    chunk_capacity=1000,
    grid_res=16,
    leaf_threshold=100,
    max_depth=12,
):
    arena = Arena(arena_bytes)
    pool = ChunkPool(arena, chunk_capacity)
    return Octree(
        bounds, arena, pool,
        grid_res=grid_res, leaf_threshold=leaf_threshold, max_depth=max_depth,
    )


def make_state(**kw):
    return UpdateState(UpdateConfig(**kw))


@pytest.fixture
def tiny_tree():
    """Threshold 2, grid 4: the smallest tree that can split and voxelize."""
    return make_tree(chunk_capacity=2, grid_res=4, leaf_threshold=2, max_depth=8)


def cloud(n, seed=0, kind="uniform"):
    """Random points in the unit cube with packed colors."""
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        xyz = rng.random((n, 3)).astype(np.float32)
    elif kind == "surface":
        xy = rng.random((n, 2))
        z = 0.5 + 0.2 * np.sin(6.0 * xy[:, 0]) * np.cos(5.0 * xy[:, 1])
        xyz = np.column_stack([xy[:, 0], xy[:, 1], z]).astype(np.float32)
    else:
        raise ValueError(kind)
    np.clip(xyz, 0.0, np.nextafter(np.float32(1.0), np.float32(0.0)), out=xyz)
    rgba = rng.integers(0, 1 << 32, n, dtype=np.uint64).astype(np.uint32)
    return xyz, rgba


def partition(xyz, rgba, batch_size):
    return [
        (xyz[i : i + batch_size], rgba[i : i + batch_size])
        for i in range(0, len(rgba), batch_size)
    ]


def write_las(
    path,
    xyz,
    rgb=None,
    *,
    fmt=2,
    scale=(0.001, 0.001, 0.001),
    offset=(0.0, 0.0, 0.0),
    version=(1, 2),
    truncate_records=0,
    record_length=None,
):
    """Write a minimal LAS file, raw integers derived from world coords.

    ``truncate_records`` drops that many records from the end of the file
    while the header still promises all of them.
    """
    lengths = {0: 20, 1: 28, 2: 26, 3: 34, 6: 30, 7: 36, 8: 38}
    rlen = record_length if record_length is not None else lengths[fmt]
    header_size = 375 if version >= (1, 4) else 227
    n = len(xyz)
    header = bytearray(header_size)
    header[0:4] = b"LASF"
    header[24] = version[0]
    header[25] = version[1]
    struct.pack_into("<H", header, 94, header_size)
    struct.pack_into("<I", header, 96, header_size)
    header[104] = fmt
    struct.pack_into("<H", header, 105, rlen)
    struct.pack_into("<I", header, 107, n if version < (1, 4) else 0)
    struct.pack_into("<3d", header, 131, *scale)
    struct.pack_into("<3d", header, 155, *offset)
    xyz = np.asarray(xyz, np.float64).reshape(-1, 3)
    raw = np.round((xyz - np.asarray(offset)) / np.asarray(scale)).astype(np.int32)
    # header extents describe the quantized values actually stored
    stored = raw * np.asarray(scale) + np.asarray(offset)
    for axis in range(3):
        lo = stored[:, axis].min() if n else 0.0
        hi = stored[:, axis].max() if n else 0.0
        struct.pack_into("<2d", header, 179 + 16 * axis, hi, lo)
    if version >= (1, 4):
        struct.pack_into("<Q", header, 247, n)

    body = bytearray()
    rgb_off = {2: 20, 3: 28, 7: 30, 8: 30}.get(fmt)
    for i in range(n):
        rec = bytearray(rlen)
        struct.pack_into("<3i", rec, 0, *raw[i])
        if rgb is not None and rgb_off is not None:
            struct.pack_into("<3H", rec, rgb_off, *rgb[i])
        body += rec
    if truncate_records:
        body = body[: len(body) - truncate_records * rlen]
    path.write_bytes(bytes(header) + bytes(body))
    return path
