"""Command line front end: build, render, convert, sort-morton, serve, bench."""
from __future__ import annotations

import argparse
import json
import sys
import time
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io as lio
from . import synth
from .octree import CubeBounds, Octree, cubify
from .render import Camera, brute_force_render, overlay_node_boxes, rasterize, write_image
from .service import StreamPublisher, StreamServer
from .store import Arena, ChunkPool
from .update import UpdateConfig, UpdateState, run_frame_updates

GIB = 1 << 30


@dataclass
class RunReport:
    """Everything one build run measured, ready for JSON or text."""

    input: str
    points: int
    rejected: int
    file_bytes: int
    nodes: int
    leaves: int
    inner: int
    splits: int
    voxels: int
    chunks_live: int
    chunks_allocated: int
    chunk_bytes: int
    arena_high_water: int
    backlog_high_water: int
    spill_high_water: int
    batches: int
    frames: int
    update_seconds: float
    wall_seconds: float
    frame_avg_ms: float
    frame_max_ms: float
    max_batch_ms: float
    mps: float
    gbps: float
    validated: bool

    def text(self) -> str:
        lines = [
            f"input              {self.input}",
            f"points             {self.points:,} ({self.rejected} rejected)",
            f"nodes              {self.nodes:,} ({self.leaves:,} leaves, {self.inner:,} inner, {self.splits:,} splits)",
            f"voxels             {self.voxels:,}",
            f"chunks             {self.chunks_live:,} live / {self.chunks_allocated:,} allocated ({self.chunk_bytes / 1e6:.1f} MB)",
            f"arena high water   {self.arena_high_water / 1e6:.1f} MB",
            f"backlog high water {self.backlog_high_water:,}",
            f"spill high water   {self.spill_high_water:,}",
            f"batches / frames   {self.batches:,} / {self.frames:,}",
            f"update time        {self.update_seconds:.3f} s ({self.mps:.2f} MP/s)",
            f"wall time          {self.wall_seconds:.3f} s ({self.gbps:.3f} GB/s)",
            f"frame avg / max    {self.frame_avg_ms:.2f} / {self.frame_max_ms:.2f} ms "
            f"(worst batch {self.max_batch_ms:.2f} ms)",
            f"validated          {self.validated}",
        ]
        return "\n".join(lines)


def _vec3(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"need x,y,z, got {text!r}")
    return tuple(parts)


def _wh(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"need WIDTHxHEIGHT, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",")]


def _add_tree_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--leaf-threshold", type=int, default=50_000,
                   help="max points a leaf holds before it splits")
    p.add_argument("--chunk-size", type=int, default=1000, help="records per storage chunk")
    p.add_argument("--grid-res", type=int, default=128, help="voxel grid resolution per inner node")
    p.add_argument("--max-depth", type=int, default=20, help="deepest allowed level; leaves there never split")
    p.add_argument("--batch-size", type=int, default=1_000_000, help="points per ingestion batch")
    p.add_argument("--budget-ms", type=float, default=10.0, help="per-frame update budget")
    p.add_argument("--arena-bytes", type=int, default=4 * GIB, help="backing arena capacity")
    p.add_argument("--backlog-capacity", type=int, default=10_000_000, help="voxel backlog capacity")
    p.add_argument("--bounds", type=float, nargs=4, metavar=("MINX", "MINY", "MINZ", "SIZE"),
                   default=None, help="override root cube, skipping bounds discovery")


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", nargs="?", default=None, help="SIM or LAS file")
    p.add_argument("--synthetic", nargs=3, metavar=("KIND", "N", "SEED"), default=None,
                   help="generate input instead: uniform|surface N seed")


def _add_camera_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--camera-pos", type=_vec3, default=(0.5, 0.5, -1.5))
    p.add_argument("--camera-target", type=_vec3, default=(0.5, 0.5, 0.5))
    p.add_argument("--camera-up", type=_vec3, default=(0.0, 1.0, 0.0))
    p.add_argument("--fov", type=float, default=60.0, help="vertical field of view, degrees")
    p.add_argument("--near", type=float, default=0.05)
    p.add_argument("--far", type=float, default=1000.0)
    p.add_argument("--size", type=_wh, default=(800, 600), metavar="WxH")


class _SyntheticSource:
    """In-memory stand-in for BatchSource over generated points."""

    def __init__(self, kind: str, n: int, seed: int, batch_size: int):
        self.xyz, self.rgba = synth.generate(kind, n, seed)
        self.bounds = CubeBounds((0.0, 0.0, 0.0), 1.0)
        self.file_bytes = n * 16
        self.rejected = 0
        self.batch_size = batch_size
        self.path = f"synthetic:{kind}:{n}:{seed}"

    def __iter__(self):
        for i in range(0, len(self.rgba), self.batch_size):
            yield lio.Batch(self.xyz[i : i + self.batch_size], self.rgba[i : i + self.batch_size])


def _open_source(args) -> lio.BatchSource | _SyntheticSource:
    if (args.input is None) == (args.synthetic is None):
        raise SystemExit("give exactly one of: an input file, or --synthetic KIND N SEED")
    if args.synthetic:
        kind, n, seed = args.synthetic
        return _SyntheticSource(kind, int(n), int(seed), args.batch_size)
    bounds = None
    if args.bounds:
        bounds = CubeBounds(tuple(args.bounds[:3]), args.bounds[3])
    return lio.BatchSource(args.input, bounds=bounds, batch_size=args.batch_size)


def _make_tree(args, bounds: CubeBounds) -> tuple[Octree, UpdateState]:
    arena = Arena(args.arena_bytes)
    pool = ChunkPool(arena, args.chunk_size)
    tree = Octree(
        bounds, arena, pool,
        grid_res=args.grid_res,
        leaf_threshold=args.leaf_threshold,
        max_depth=args.max_depth,
    )
    state = UpdateState(UpdateConfig(
        batch_size=args.batch_size,
        budget_ms=args.budget_ms,
        backlog_capacity=args.backlog_capacity,
    ))
    return tree, state


def _build(args, source) -> tuple[Octree, UpdateState, RunReport]:
    t0 = time.perf_counter()
    if args.bounds:
        bounds = CubeBounds(tuple(args.bounds[:3]), args.bounds[3])
    else:
        bounds = source.bounds
    tree, state = _make_tree(args, bounds)
    dq = deque()
    for batch in source:
        dq.append((batch.xyz, batch.rgba))
        run_frame_updates(tree, dq, state)
    while dq:
        run_frame_updates(tree, dq, state)
    wall = time.perf_counter() - t0
    tree.validate()
    st = state.stats
    n = tree.num_nodes
    inner = int(tree.inner[:n].sum())
    report = RunReport(
        input=str(source.path),
        points=st.points,
        rejected=source.rejected,
        file_bytes=source.file_bytes,
        nodes=n,
        leaves=n - inner,
        inner=inner,
        splits=tree.splits_total,
        voxels=tree.total_voxels(),
        chunks_live=tree.pool.live_count,
        chunks_allocated=tree.pool.allocated_total,
        chunk_bytes=tree.pool.allocated_total * tree.pool.payload_bytes,
        arena_high_water=tree.arena.high_water,
        backlog_high_water=st.backlog_high_water,
        spill_high_water=st.spill_high_water,
        batches=st.batches,
        frames=st.frames,
        update_seconds=st.update_seconds,
        wall_seconds=wall,
        frame_avg_ms=st.frame_ms_total / max(st.frames, 1),
        frame_max_ms=st.frame_ms_max,
        max_batch_ms=st.max_batch_ms,
        mps=st.throughput_mps(),
        gbps=source.file_bytes / wall / 1e9 if wall > 0 else 0.0,
        validated=True,
    )
    if tree.total_points() != st.points:
        report.validated = False
        raise SystemExit(
            f"conservation failure: stored {tree.total_points()} of {st.points} points"
        )
    return tree, state, report


def _emit_stats(args, payload: dict) -> None:
    if getattr(args, "stats", None):
        Path(args.stats).write_text(json.dumps(payload, indent=2) + "\n")


def cmd_build(args) -> int:
    source = _open_source(args)
    tree, state, report = _build(args, source)
    print(report.text())
    _emit_stats(args, asdict(report))
    return 0


def cmd_render(args) -> int:
    source = _open_source(args)
    camera = Camera(
        position=args.camera_pos, target=args.camera_target, up=args.camera_up,
        fov_deg=args.fov, near=args.near, far=args.far,
        width=args.size[0], height=args.size[1],
    )
    if args.mode == "brute":
        xs, rs = [], []
        for batch in source:
            xs.append(batch.xyz)
            rs.append(batch.rgba)
        t0 = time.perf_counter()
        fb = brute_force_render(np.concatenate(xs), np.concatenate(rs), camera)
        dt = time.perf_counter() - t0
        img = fb.image(background=args.bg)
        print(f"brute: {sum(len(r) for r in rs):,} points in {dt * 1e3:.1f} ms")
    else:
        tree, state, report = _build(args, source)
        t0 = time.perf_counter()
        fb, rep = rasterize(tree, camera, threshold=args.threshold)
        dt = time.perf_counter() - t0
        img = fb.image(background=args.bg)
        if args.show_nodes:
            overlay_node_boxes(img, tree, rep.selected, camera)
        print(
            f"lod: {rep.nodes_drawn} nodes, {rep.samples_drawn:,} samples "
            f"in {dt * 1e3:.1f} ms (threshold {args.threshold:g} px)"
        )
    write_image(args.out, img)
    print(f"wrote {args.out}")
    return 0


def cmd_convert(args) -> int:
    if args.synthetic:
        kind, n, seed = args.synthetic
        xyz, rgba = synth.generate(kind, int(n), int(seed))
    elif lio._looks_like_las(args.input):
        xyz, rgba = lio.read_las(args.input)
    else:
        xyz, rgba = lio.read_sim(args.input)
    lio.write_sim(args.out, xyz, rgba)
    print(f"wrote {args.out}: {len(rgba):,} records")
    return 0


def cmd_sort_morton(args) -> int:
    xyz, rgba = lio.read_sim(args.input)
    ok = np.isfinite(xyz).all(axis=1)
    xyz, rgba = xyz[ok], rgba[ok]
    bounds = cubify(xyz.min(axis=0), xyz.max(axis=0))
    t0 = time.perf_counter()
    sx, sr = lio.morton_sort(xyz, rgba, bounds)
    dt = time.perf_counter() - t0
    lio.write_sim(args.out, sx, sr)
    print(f"wrote {args.out}: {len(sr):,} records reordered in {dt * 1e3:.1f} ms")
    return 0


def cmd_serve(args) -> int:
    source = _open_source(args)
    if args.bounds:
        bounds = CubeBounds(tuple(args.bounds[:3]), args.bounds[3])
    else:
        bounds = source.bounds
    tree, state = _make_tree(args, bounds)
    publisher = StreamPublisher(tree, state, throttle_mps=args.throttle_mps)
    server = StreamServer(
        publisher.log, host=args.host, port=args.port, static_dir=args.static_dir
    )
    server.start()
    print(f"serving ws://{server.host}:{server.port}/ (static: {args.static_dir or 'off'})")
    try:
        publisher.ingest(source)
        print(f"stream complete: {len(publisher.log)} messages")
        if args.once:
            time.sleep(args.linger)
        else:
            while True:
                time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_bench(args) -> int:
    rows = []
    camera = Camera(
        position=(0.5, 0.5, -1.5), target=(0.5, 0.5, 0.5),
        fov_deg=60.0, near=0.05, far=100.0, width=1024, height=768,
    )
    for chunk_size in args.chunk_sizes:
        args.chunk_size = chunk_size
        source = _open_source(args)
        tree, state, report = _build(args, source)
        render_ms = []
        for _ in range(3):
            t0 = time.perf_counter()
            _, rep = rasterize(tree, camera, threshold=args.threshold)
            render_ms.append((time.perf_counter() - t0) * 1e3)
        rows.append(
            {
                "chunk_size": chunk_size,
                "build_ms": report.update_seconds * 1e3,
                "chunk_bytes": report.chunk_bytes,
                "chunks_allocated": report.chunks_allocated,
                "render_ms": min(render_ms),
                "render_ms_all": render_ms,
                "samples_drawn": rep.samples_drawn,
            }
        )
    print(f"{'chunk':>7} {'build ms':>10} {'chunk MB':>10} {'render ms':>10} {'samples':>10}")
    for r in rows:
        print(
            f"{r['chunk_size']:>7} {r['build_ms']:>10.1f} {r['chunk_bytes'] / 1e6:>10.1f} "
            f"{r['render_ms']:>10.2f} {r['samples_drawn']:>10,}"
        )
    _emit_stats(args, {"rows": rows})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lodstream",
        description="Incremental level-of-detail point cloud engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="ingest a point cloud and report on the tree")
    _add_input_flags(p)
    _add_tree_flags(p)
    p.add_argument("--stats", default=None, help="write the report as JSON here")
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("render", help="rasterize to a PPM image")
    _add_input_flags(p)
    _add_tree_flags(p)
    _add_camera_flags(p)
    p.add_argument("--mode", choices=("lod", "brute"), default="lod")
    p.add_argument("--out", required=True, help="output .ppm path")
    p.add_argument("--threshold", type=float, default=128.0,
                   help="refine inner nodes projecting larger than this many pixels")
    p.add_argument("--show-nodes", action="store_true", help="overlay node wireframes")
    p.add_argument("--bg", type=_vec3, default=(0.0, 0.0, 0.0), help="background r,g,b")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("convert", help="rewrite LAS (or synthetic) input as SIM")
    _add_input_flags(p)
    p.add_argument("out", help="output .sim path")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("sort-morton", help="reorder a SIM file along a space filling curve")
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(fn=cmd_sort_morton)

    p = sub.add_parser("serve", help="stream a build over WebSocket")
    _add_input_flags(p)
    _add_tree_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--throttle-mps", type=float, default=None,
                   help="cap ingestion at this many million points per second")
    p.add_argument("--static-dir", default=None, help="serve viewer files from here")
    p.add_argument("--once", action="store_true", help="exit shortly after the stream ends")
    p.add_argument("--linger", type=float, default=2.0, help="seconds to linger with --once")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench", help="sweep chunk sizes and time build and render")
    _add_input_flags(p)
    _add_tree_flags(p)
    p.add_argument("--chunk-sizes", type=_int_list, default=[500, 1000, 2000, 5000, 10000])
    p.add_argument("--threshold", type=float, default=128.0)
    p.add_argument("--stats", default=None, help="write rows as JSON here")
    p.set_defaults(fn=cmd_bench)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
