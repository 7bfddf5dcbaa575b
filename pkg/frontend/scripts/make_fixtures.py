#!/usr/bin/env python3
"""Regenerate the stream fixtures the vitest suite replays.

Two captures, written as length-prefixed WebSocket frame payloads, plus a
JSON file of camera poses with the node selections the server computes for
them.  The selection margins are asserted here so a regenerated fixture can
never encode a camera whose refine/draw decisions sit within float noise of
the threshold: the viewer must reproduce the lists exactly, not almost.

Usage: python3 frontend/scripts/make_fixtures.py
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from lodstream.io import Batch
from lodstream.octree import CubeBounds, Octree
from lodstream.render import Camera, frustum_planes, screen_size, select_visible
from lodstream.service import StreamPublisher
from lodstream.store import Arena, ChunkPool
from lodstream.update import UpdateConfig, UpdateState

FIXTURES = Path(__file__).resolve().parent.parent / "test" / "fixtures"
UNIT = CubeBounds((0.0, 0.0, 0.0), 1.0)
THRESHOLD = 128.0

RED = np.uint32(0xFF0000FF)
GREEN = np.uint32(0xFF00FF00)
BLUE = np.uint32(0xFFFF0000)


def make_tree(*, chunk_capacity, grid_res, leaf_threshold, max_depth=12):
    arena = Arena(64 << 20)
    pool = ChunkPool(arena, chunk_capacity)
    return Octree(
        UNIT, arena, pool,
        grid_res=grid_res, leaf_threshold=leaf_threshold, max_depth=max_depth,
    )


def publish(tree, batches):
    # Budget far above any single batch cost so captures are deterministic.
    state = UpdateState(UpdateConfig(budget_ms=60_000.0))
    pub = StreamPublisher(tree, state)
    pub.ingest(batches)
    return pub.log.snapshot()


def write_log(path: Path, frames: list[bytes]) -> None:
    with open(path, "wb") as f:
        for frame in frames:
            f.write(struct.pack("<I", len(frame)))
            f.write(frame)
    print(f"wrote {path.name}: {len(frames)} frames, {path.stat().st_size} bytes")


def camera_json(cam: Camera) -> dict:
    d = asdict(cam)
    d["fovDeg"] = d.pop("fov_deg")
    return d


def check_margins(tree, cam: Camera, label: str) -> None:
    """Refuse cameras whose selection decisions are float-noise fragile."""
    planes = frustum_planes(cam)
    px = math.inf
    plane = math.inf
    for nid in range(tree.num_nodes):
        b = tree.node_bounds(nid)
        s = screen_size(b, cam)
        if math.isfinite(s):
            px = min(px, abs(s - THRESHOLD))
        corners = b.corners()
        for n in planes:
            inside = corners @ n[:3] + n[3]
            plane = min(plane, abs(inside.max()))
    assert px > 1e-3, f"{label}: screen-size margin {px}"
    assert plane > 1e-9, f"{label}: frustum margin {plane}"


def selections(tree, cams: list[Camera], label: str) -> list[list[int]]:
    out = []
    for i, cam in enumerate(cams):
        check_margins(tree, cam, f"{label}[{i}]")
        out.append([int(n) for n in select_visible(tree, cam, THRESHOLD)])
    return out


def canonical() -> tuple[Octree, list[Camera], list[list[int]]]:
    tree = make_tree(chunk_capacity=2, grid_res=4, leaf_threshold=2, max_depth=8)
    xyz = np.array([[0.1] * 3, [0.2] * 3, [0.8] * 3], np.float32)
    rgba = np.array([RED, GREEN, BLUE], np.uint32)
    frames = publish(tree, [Batch(xyz[:2], rgba[:2]), Batch(xyz[2:], rgba[2:])])
    write_log(FIXTURES / "canonical.log", frames)
    cams = [
        Camera(position=(0.5, 0.5, -0.6), target=(0.5, 0.5, 0.5),
               fov_deg=60.0, near=0.05, far=50.0, width=800, height=600),
        Camera(position=(0.5, 0.5, -40.0), target=(0.5, 0.5, 0.5),
               fov_deg=60.0, near=0.05, far=100.0, width=800, height=600),
    ]
    return tree, cams, selections(tree, cams, "canonical")


def parity() -> tuple[Octree, list[Camera], list[list[int]], dict]:
    rng = np.random.default_rng(20260822)
    n = 5000
    xyz = rng.random((n, 3)).astype(np.float32)
    rgba = (rng.integers(0, 1 << 24, n, dtype=np.uint64).astype(np.uint32)
            | np.uint32(0xFF000000))
    tree = make_tree(chunk_capacity=256, grid_res=8, leaf_threshold=40)
    edges = np.linspace(0, n, 8, dtype=np.int64)
    batches = [Batch(xyz[a:b], rgba[a:b]) for a, b in zip(edges, edges[1:])]
    frames = publish(tree, batches)
    write_log(FIXTURES / "parity.log", frames)
    cams = [
        Camera(position=(0.5, 0.5, -2.2), target=(0.5, 0.5, 0.5),
               fov_deg=60.0, near=0.05, far=50.0, width=800, height=600),
        Camera(position=(0.35, 0.4, -0.25), target=(0.5, 0.5, 0.5),
               fov_deg=75.0, near=0.05, far=50.0, width=800, height=600),
        Camera(position=(1.4, 1.2, 1.3), target=(0.4, 0.5, 0.45),
               fov_deg=70.0, near=0.05, far=50.0, width=1024, height=768),
        Camera(position=(0.5, 0.5, -40.0), target=(0.5, 0.5, 0.5),
               fov_deg=60.0, near=0.05, far=100.0, width=800, height=600),
    ]
    picks = selections(tree, cams, "parity")
    sizes = {len(s) for s in picks}
    assert len(sizes) > 1 and any(s != [0] for s in picks), "cameras too uniform"
    counts = tree.count[: tree.num_nodes]
    inner = tree.inner[: tree.num_nodes]
    facts = {
        "numNodes": int(tree.num_nodes),
        "residentPoints": int(counts[~inner].sum()),
        "residentVoxels": int(counts[inner].sum()),
        "splits": int(inner.sum()),
    }
    return tree, cams, picks, facts


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    ctree, ccams, cpicks = canonical()
    ptree, pcams, ppicks, facts = parity()
    spec = {
        "threshold": THRESHOLD,
        "canonical": {
            "cameras": [camera_json(c) for c in ccams],
            "expected": cpicks,
        },
        "parity": {
            "cameras": [camera_json(c) for c in pcams],
            "expected": ppicks,
            **facts,
        },
    }
    out = FIXTURES / "selections.json"
    out.write_text(json.dumps(spec, indent=2) + "\n")
    print(f"wrote {out.name}: parity facts {facts}")


if __name__ == "__main__":
    main()
