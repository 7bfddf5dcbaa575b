"""Streaming service: binary protocol, event log, server, and mirror client.

Wire format (all little-endian; one message per WebSocket binary frame):

====================  ===========================================================
Hello (0)             u8 tag, u8 version, f64 bmin[3], f64 size, u32 grid_res,
                      u32 leaf_threshold, u32 chunk_capacity
NodeCreated (1)       u8 tag, u32 node, u32 parent (0xFFFFFFFF for the root),
                      u8 octant, u8 level
NodeSplit (2)         u8 tag, u32 node
PointsAppended (3)    u8 tag, u32 node, u32 count, count * (f32 x, y, z, u32 rgba)
VoxelsAppended (4)    u8 tag, u32 node, u32 count, count * (u32 cell, u32 rgba)
StatsTick (5)         u8 tag, u64 points, u64 voxels, u32 nodes, u32 splits,
                      u32 frames, f64 elapsed_s, f64 frame_avg_ms, f64 frame_max_ms
EndOfStream (6)       u8 tag
====================  ===========================================================

Per update cycle the service emits structure first (splits interleaved with
the eight creations each produces, in split order), then voxel additions in
ascending node id, then point additions in ascending node id.  A StatsTick
closes every frame that processed at least one batch.

Every encoded message is appended to an in-memory event log.  A client
joining at any time replays the log from the start, so any two clients see
byte-identical streams, and a mirror applying the messages reconstructs the
server tree exactly.
"""
from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ws
from .errors import MalformedMessage
from .octree import CubeBounds, Octree
from .update import BatchDelta, UpdateState, insert_batch
from .store import RECORD_BYTES

TAG_HELLO = 0
TAG_NODE_CREATED = 1
TAG_NODE_SPLIT = 2
TAG_POINTS = 3
TAG_VOXELS = 4
TAG_STATS = 5
TAG_END = 6

PROTOCOL_VERSION = 1
NO_PARENT = 0xFFFFFFFF


@dataclass(frozen=True)
class Hello:
    version: int
    bounds: CubeBounds
    grid_res: int
    leaf_threshold: int
    chunk_capacity: int


@dataclass(frozen=True)
class NodeCreated:
    node: int
    parent: int
    octant: int
    level: int


@dataclass(frozen=True)
class NodeSplit:
    node: int


@dataclass(frozen=True)
class PointsAppended:
    node: int
    xyz: np.ndarray
    rgba: np.ndarray


@dataclass(frozen=True)
class VoxelsAppended:
    node: int
    cells: np.ndarray
    rgba: np.ndarray


@dataclass(frozen=True)
class StatsTick:
    points: int
    voxels: int
    nodes: int
    splits: int
    frames: int
    elapsed_s: float
    frame_avg_ms: float
    frame_max_ms: float


@dataclass(frozen=True)
class EndOfStream:
    pass


def encode_message(msg) -> bytes:
    if isinstance(msg, Hello):
        b = msg.bounds
        return struct.pack(
            "<BB3ddIII", TAG_HELLO, msg.version, *b.min, b.size,
            msg.grid_res, msg.leaf_threshold, msg.chunk_capacity,
        )
    if isinstance(msg, NodeCreated):
        return struct.pack("<BIIBB", TAG_NODE_CREATED, msg.node, msg.parent, msg.octant, msg.level)
    if isinstance(msg, NodeSplit):
        return struct.pack("<BI", TAG_NODE_SPLIT, msg.node)
    if isinstance(msg, PointsAppended):
        n = len(msg.rgba)
        rec = np.empty((n, 4), np.uint32)
        rec[:, :3] = msg.xyz.astype(np.float32, copy=False).view(np.uint32).reshape(n, 3)
        rec[:, 3] = msg.rgba
        return struct.pack("<BII", TAG_POINTS, msg.node, n) + rec.tobytes()
    if isinstance(msg, VoxelsAppended):
        n = len(msg.rgba)
        rec = np.empty((n, 2), np.uint32)
        rec[:, 0] = msg.cells
        rec[:, 1] = msg.rgba
        return struct.pack("<BII", TAG_VOXELS, msg.node, n) + rec.tobytes()
    if isinstance(msg, StatsTick):
        return struct.pack(
            "<BQQIIIddd", TAG_STATS, msg.points, msg.voxels, msg.nodes,
            msg.splits, msg.frames, msg.elapsed_s, msg.frame_avg_ms, msg.frame_max_ms,
        )
    if isinstance(msg, EndOfStream):
        return struct.pack("<B", TAG_END)
    raise TypeError(f"not a stream message: {type(msg)!r}")


def decode_message(buf: bytes):
    """Decode one whole message; anything short, long, or unknown raises."""
    if not buf:
        raise MalformedMessage("empty message")
    tag = buf[0]
    try:
        if tag == TAG_HELLO:
            if len(buf) != 46:
                raise MalformedMessage(f"hello wants 46 bytes, got {len(buf)}")
            _, ver, mx, my, mz, size, g, t, c = struct.unpack("<BB3ddIII", buf)
            return Hello(ver, CubeBounds((mx, my, mz), size), g, t, c)
        if tag == TAG_NODE_CREATED:
            if len(buf) != 11:
                raise MalformedMessage(f"node-created wants 11 bytes, got {len(buf)}")
            _, node, parent, octant, level = struct.unpack("<BIIBB", buf)
            return NodeCreated(node, parent, octant, level)
        if tag == TAG_NODE_SPLIT:
            if len(buf) != 5:
                raise MalformedMessage(f"node-split wants 5 bytes, got {len(buf)}")
            return NodeSplit(struct.unpack("<BI", buf)[1])
        if tag == TAG_POINTS:
            if len(buf) < 9:
                raise MalformedMessage("points message shorter than its header")
            _, node, n = struct.unpack_from("<BII", buf)
            if len(buf) != 9 + RECORD_BYTES * n:
                raise MalformedMessage(f"points payload wants {9 + RECORD_BYTES * n} bytes, got {len(buf)}")
            rec = np.frombuffer(buf, np.uint32, 4 * n, offset=9).reshape(n, 4)
            xyz = rec[:, :3].copy().view(np.float32)
            return PointsAppended(node, xyz, rec[:, 3].copy())
        if tag == TAG_VOXELS:
            if len(buf) < 9:
                raise MalformedMessage("voxels message shorter than its header")
            _, node, n = struct.unpack_from("<BII", buf)
            if len(buf) != 9 + 8 * n:
                raise MalformedMessage(f"voxels payload wants {9 + 8 * n} bytes, got {len(buf)}")
            rec = np.frombuffer(buf, np.uint32, 2 * n, offset=9).reshape(n, 2)
            return VoxelsAppended(node, rec[:, 0].copy(), rec[:, 1].copy())
        if tag == TAG_STATS:
            if len(buf) != 53:
                raise MalformedMessage(f"stats wants 53 bytes, got {len(buf)}")
            vals = struct.unpack("<BQQIIIddd", buf)
            return StatsTick(*vals[1:])
        if tag == TAG_END:
            if len(buf) != 1:
                raise MalformedMessage("end-of-stream carries no payload")
            return EndOfStream()
    except struct.error as exc:
        raise MalformedMessage(str(exc)) from exc
    raise MalformedMessage(f"unknown tag {tag}")


class EventLog:
    """Append-only encoded message log with blocking reads past the end."""

    def __init__(self) -> None:
        self._frames: list[bytes] = []
        self._cond = threading.Condition()
        self.closed = False

    def append(self, frame: bytes) -> None:
        with self._cond:
            self._frames.append(frame)
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    def __len__(self) -> int:
        with self._cond:
            return len(self._frames)

    def snapshot(self) -> list[bytes]:
        with self._cond:
            return list(self._frames)

    def wait(self, cursor: int, timeout: float = 1.0) -> list[bytes]:
        """Frames past ``cursor``; blocks briefly when none are ready yet."""
        with self._cond:
            if len(self._frames) <= cursor and not self.closed:
                self._cond.wait(timeout)
            return self._frames[cursor:]


def delta_messages(tree: Octree, delta: BatchDelta) -> list:
    """Expand one cycle's delta into protocol messages, emission order."""
    out = []
    for ev in delta.structure:
        if ev[0] == "split":
            out.append(NodeSplit(ev[1]))
        else:
            _, node, parent, octant, level = ev
            out.append(NodeCreated(node, parent, octant, level))
    for node, cells, rgba in delta.voxels:
        out.append(VoxelsAppended(node, cells, rgba))
    for node, start, count in delta.points:
        xyz, rgba = tree.gather_samples(node, start)
        assert len(rgba) == count
        out.append(PointsAppended(node, xyz, rgba))
    return out


class StreamPublisher:
    """Runs ingestion against a tree and publishes the event log."""

    def __init__(self, tree: Octree, state: UpdateState, throttle_mps: float | None = None):
        self.tree = tree
        self.state = state
        self.throttle_mps = throttle_mps
        self.log = EventLog()
        self._t0 = time.perf_counter()
        self.log.append(
            encode_message(
                Hello(
                    PROTOCOL_VERSION, tree.bounds, tree.grid_res,
                    tree.leaf_threshold, tree.pool.capacity,
                )
            )
        )
        self._root_announced = False

    def _stats_tick(self) -> StatsTick:
        st = self.state.stats
        frames = max(st.frames, 1)
        return StatsTick(
            points=st.points,
            voxels=st.voxels_created,
            nodes=st.nodes,
            splits=st.splits,
            frames=st.frames,
            elapsed_s=time.perf_counter() - self._t0,
            frame_avg_ms=st.frame_ms_total / frames,
            frame_max_ms=st.frame_ms_max,
        )

    def ingest(self, batches) -> None:
        """Drain a batch iterable in budgeted frames, then end the stream."""
        state = self.state
        tree = self.tree
        it = iter(batches)
        # The stream always terminates: a fatal update error still gets
        # EndOfStream appended so connected clients drain and disconnect,
        # then the error propagates to the caller.
        try:
            pending = next(it, None)
            while pending is not None:
                state.clock.restart()
                processed = 0
                while pending is not None and (processed == 0 or not state.clock.exceeded()):
                    batch = pending
                    if not self._root_announced:
                        # An empty source announces no nodes at all, so the
                        # root only hits the wire once a first batch exists.
                        self.log.append(encode_message(NodeCreated(0, NO_PARENT, 0, 0)))
                        self._root_announced = True
                    delta = insert_batch(tree, batch.xyz, batch.rgba, state, collect_delta=True)
                    for msg in delta_messages(tree, delta):
                        self.log.append(encode_message(msg))
                    processed += 1
                    pending = next(it, None)
                st = state.stats
                st.frames += 1
                dt = state.clock.elapsed_ms()
                st.frame_ms_total += dt
                st.frame_ms_max = max(st.frame_ms_max, dt)
                self.log.append(encode_message(self._stats_tick()))
                if self.throttle_mps:
                    target = st.points / (self.throttle_mps * 1e6)
                    wall = time.perf_counter() - self._t0
                    if wall < target:
                        time.sleep(target - wall)
        finally:
            self.log.append(encode_message(EndOfStream()))
            self.log.close()


class StreamServer:
    """WebSocket fanout of an event log, plus optional static file serving.

    Clients replay the full log from the start (late joiners catch up to
    the live edge), then follow it as it grows.  Send backpressure rides
    on the socket; a client that stalls past the timeout is dropped.
    """

    def __init__(self, log: EventLog, host: str = "127.0.0.1", port: int = 0,
                 static_dir: str | None = None, send_timeout: float = 30.0):
        self.log = log
        self.static_dir = Path(static_dir) if static_dir else None
        self.send_timeout = send_timeout
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self.host, self.port = self._listener.getsockname()

    def start(self) -> None:
        t = threading.Thread(target=self._accept_loop, name="stream-accept", daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_client, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_client(self, conn: socket.socket) -> None:
        try:
            conn.settimeout(self.send_timeout)
            wsconn, request = ws.server_accept(conn)
            if wsconn is not None:
                self._stream(wsconn)
            elif request:
                self._static(conn, request)
        except (ConnectionError, OSError):
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _stream(self, wsconn: ws.WsConn) -> None:
        cursor = 0
        while not self._stop.is_set():
            frames = self.log.wait(cursor, timeout=0.2)
            for frame in frames:
                wsconn.send_frame(frame)
            cursor += len(frames)
            if self.log.closed and cursor >= len(self.log):
                break

    def _static(self, conn: socket.socket, request: str) -> None:
        try:
            target = request.split(" ")[1]
        except IndexError:
            target = "/"
        target = target.split("?")[0]
        if target == "/":
            target = "/index.html"
        body = b"not found"
        status = "404 Not Found"
        ctype = "text/plain"
        if self.static_dir is not None:
            path = (self.static_dir / target.lstrip("/")).resolve()
            if str(path).startswith(str(self.static_dir.resolve())) and path.is_file():
                body = path.read_bytes()
                status = "200 OK"
                ctype = {
                    ".html": "text/html",
                    ".js": "text/javascript",
                    ".css": "text/css",
                    ".json": "application/json",
                }.get(path.suffix, "application/octet-stream")
        head = (
            f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
            f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n"
        )
        conn.sendall(head.encode() + body)

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for t in self._threads:
            t.join(timeout=2.0)


class MirrorNode:
    """Client-side node state rebuilt purely from stream messages."""

    __slots__ = ("node", "parent", "octant", "level", "inner", "xyz", "rgba", "cells", "vrgba")

    def __init__(self, node: int, parent: int, octant: int, level: int) -> None:
        self.node = node
        self.parent = parent
        self.octant = octant
        self.level = level
        self.inner = False
        self.xyz: list[np.ndarray] = []
        self.rgba: list[np.ndarray] = []
        self.cells: list[np.ndarray] = []
        self.vrgba: list[np.ndarray] = []

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.xyz:
            return np.empty((0, 3), np.float32), np.empty(0, np.uint32)
        return np.concatenate(self.xyz), np.concatenate(self.rgba)

    def voxels(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.cells:
            return np.empty(0, np.uint32), np.empty(0, np.uint32)
        return np.concatenate(self.cells), np.concatenate(self.vrgba)


class ClientMirror:
    """Applies decoded messages; ends up isomorphic to the server tree."""

    def __init__(self) -> None:
        self.hello: Hello | None = None
        self.stats: StatsTick | None = None
        self.nodes: dict[int, MirrorNode] = {}
        self.done = False
        self.messages = 0

    def apply(self, msg) -> None:
        self.messages += 1
        if isinstance(msg, Hello):
            self.hello = msg
        elif isinstance(msg, NodeCreated):
            self.nodes[msg.node] = MirrorNode(msg.node, msg.parent, msg.octant, msg.level)
        elif isinstance(msg, NodeSplit):
            node = self.nodes[msg.node]
            node.inner = True
            node.xyz.clear()
            node.rgba.clear()
        elif isinstance(msg, PointsAppended):
            node = self.nodes[msg.node]
            node.xyz.append(msg.xyz)
            node.rgba.append(msg.rgba)
        elif isinstance(msg, VoxelsAppended):
            node = self.nodes[msg.node]
            node.cells.append(msg.cells)
            node.vrgba.append(msg.rgba)
        elif isinstance(msg, StatsTick):
            self.stats = msg
        elif isinstance(msg, EndOfStream):
            self.done = True

    def apply_bytes(self, frame: bytes) -> None:
        self.apply(decode_message(frame))


def mirror_stream(host: str, port: int, path: str = "/") -> ClientMirror:
    """Connect, replay to EndOfStream, return the reconstructed mirror."""
    mirror = ClientMirror()
    conn = ws.client_connect(host, port, path)
    try:
        while not mirror.done:
            opcode, payload = conn.recv_frame()
            if opcode != ws.OP_BINARY:
                continue
            mirror.apply_bytes(payload)
    finally:
        conn.close()
    return mirror
