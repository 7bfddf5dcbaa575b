"""Software point rasterizer with level-of-detail node selection.

Projection conventions (shared by selection, rasterization, and the
kernels):

* View basis: ``fwd = normalize(target - pos)``, ``right = normalize(fwd x
  up)``, ``up' = right x fwd``.  A point's view depth is ``zv = (p - pos)
  . fwd``; visible depth is the open interval (near, far).
* NDC: ``x = xv / (zv * tan(fov/2) * aspect)``, ``y = yv / (zv *
  tan(fov/2))``, with ``fov`` the vertical field of view.
* Pixels: ``px = floor((x + 1) * 0.5 * width)``, row 0 at the top, so
  ``py = floor((1 - y) * 0.5 * height)``.
* Depth resolves to ``far * (zv - near) / ((far - near) * zv)``, 0 at the
  near plane and 1 at the far plane.

The framebuffer packs ``float32 depth bits << 32 | rgba`` into uint64 and
combines samples by minimum, which keeps the closest sample and breaks
exact depth ties toward the smaller color value.  Empty pixels hold the
all-ones sentinel.

Node selection walks the tree front-to-back-agnostic: a frustum-culled
node contributes nothing; an inner node whose projected extent is at most
``threshold`` pixels (or whose children are absent) is drawn as voxels;
otherwise its children are visited.  A node straddling or behind the near
plane has unbounded projected extent and always refines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .octree import CubeBounds, Octree

SENTINEL = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass
class Camera:
    position: tuple[float, float, float]
    target: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_deg: float = 60.0
    near: float = 0.1
    far: float = 1000.0
    width: int = 800
    height: int = 600

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = np.asarray(self.position, np.float64)
        fwd = np.asarray(self.target, np.float64) - pos
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, np.float64))
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd

    @property
    def aspect(self) -> float:
        return self.width / self.height

    @property
    def tan_half(self) -> float:
        return math.tan(math.radians(self.fov_deg) * 0.5)

    def packed(self) -> np.ndarray:
        """Flat float64 parameter block for the kernels."""
        right, up, fwd = self.basis()
        out = np.empty(18, np.float64)
        out[0:3] = self.position
        out[3:6] = right
        out[6:9] = up
        out[9:12] = fwd
        out[12] = self.tan_half
        out[13] = self.aspect
        out[14] = self.near
        out[15] = self.far
        out[16] = self.width
        out[17] = self.height
        return out

    def project(self, p) -> tuple[float, float, float] | None:
        """Continuous pixel coordinates and depth, or None when clipped."""
        right, up, fwd = self.basis()
        d = np.asarray(p, np.float64) - np.asarray(self.position, np.float64)
        zv = float(d @ fwd)
        if zv <= self.near or zv >= self.far:
            return None
        ndc_x = float(d @ right) / (zv * self.tan_half * self.aspect)
        ndc_y = float(d @ up) / (zv * self.tan_half)
        sx = (ndc_x + 1.0) * 0.5 * self.width
        sy = (1.0 - ndc_y) * 0.5 * self.height
        depth = self.far * (zv - self.near) / ((self.far - self.near) * zv)
        return sx, sy, depth


class Framebuffer:
    """Packed depth+color target; empty pixels hold the sentinel."""

    def __init__(self, width: int, height: int) -> None:
        self.width = width
        self.height = height
        self.cells = np.full(height * width, SENTINEL, np.uint64)

    def clear(self) -> None:
        self.cells.fill(SENTINEL)

    def grid(self) -> np.ndarray:
        return self.cells.reshape(self.height, self.width)

    def image(self, background=(0, 0, 0)) -> np.ndarray:
        """(height, width, 3) uint8 color image."""
        rgba = (self.cells & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        img = np.empty((self.height * self.width, 3), np.uint8)
        img[:, 0] = rgba & 0xFF
        img[:, 1] = (rgba >> 8) & 0xFF
        img[:, 2] = (rgba >> 16) & 0xFF
        img[self.cells == SENTINEL] = np.asarray(background, np.uint8)
        return img.reshape(self.height, self.width, 3)


# -- visibility -----------------------------------------------------------


def frustum_planes(camera: Camera) -> np.ndarray:
    """(6, 4) inward plane equations (normal, d) with normal . p + d >= 0
    inside: near, far, left, right, bottom, top."""
    right, up, fwd = camera.basis()
    pos = np.asarray(camera.position, np.float64)
    th = camera.tan_half
    planes = np.empty((6, 4), np.float64)

    def put(i, n, through):
        n = n / np.linalg.norm(n)
        planes[i, :3] = n
        planes[i, 3] = -n @ through

    # Side normals follow from the NDC bounds: inside means
    # |xv| <= zv * th * aspect and |yv| <= zv * th.
    put(0, fwd, pos + fwd * camera.near)
    put(1, -fwd, pos + fwd * camera.far)
    put(2, right + fwd * (th * camera.aspect), pos)  # left
    put(3, -right + fwd * (th * camera.aspect), pos)  # right
    put(4, up + fwd * th, pos)  # bottom
    put(5, -up + fwd * th, pos)  # top
    return planes


def frustum_intersects(bounds: CubeBounds, planes: np.ndarray) -> bool:
    """Conservative cube test: reject only when fully outside one plane."""
    corners = bounds.corners()
    for i in range(6):
        if (corners @ planes[i, :3] + planes[i, 3] < 0.0).all():
            return False
    return True


def screen_size(bounds: CubeBounds, camera: Camera) -> float:
    """Longest side, in pixels, of the projected corner bounding rect.

    Infinite when any corner is on or behind the near plane, since the
    projection is unbounded there.
    """
    right, up, fwd = camera.basis()
    pos = np.asarray(camera.position, np.float64)
    d = bounds.corners() - pos
    zv = d @ fwd
    if (zv <= camera.near).any():
        return math.inf
    sx = (d @ right / (zv * camera.tan_half * camera.aspect) + 1.0) * 0.5 * camera.width
    sy = (1.0 - d @ up / (zv * camera.tan_half)) * 0.5 * camera.height
    return float(max(sx.max() - sx.min(), sy.max() - sy.min()))


def select_visible(tree: Octree, camera: Camera, threshold: float = 128.0) -> list[int]:
    """Node ids to draw: a cut through the tree honoring the pixel budget.

    Inner nodes projecting larger than ``threshold`` pixels refine into
    their children; everything else on screen is drawn where the walk
    stopped.  Returns ids in visit (depth-first, octant) order.  A tree
    holding nothing yet selects nothing.
    """
    if not tree.inner[0] and tree.count[0] == 0:
        return []
    planes = frustum_planes(camera)
    out: list[int] = []
    stack = [0]
    while stack:
        nid = stack.pop()
        b = tree.node_bounds(nid)
        if not frustum_intersects(b, planes):
            continue
        if tree.inner[nid] and screen_size(b, camera) > threshold:
            for o in range(7, -1, -1):
                stack.append(int(tree.children[nid, o]))
        else:
            out.append(nid)
    return out


# -- drawing --------------------------------------------------------------


@dataclass
class RenderReport:
    nodes_drawn: int = 0
    samples_drawn: int = 0
    selected: list[int] = field(default_factory=list)


def rasterize(
    tree: Octree, camera: Camera, threshold: float = 128.0, fb: Framebuffer | None = None
) -> tuple[Framebuffer, RenderReport]:
    """Select and splat; returns the framebuffer and what was drawn."""
    fb = fb or Framebuffer(camera.width, camera.height)
    selected = select_visible(tree, camera, threshold)
    vis = np.asarray(selected, np.int32)
    pool = tree.pool
    samples = _kernels.rasterize_nodes(
        vis, tree.chunk_head, pool.next, pool.occupied, pool.payload_off,
        pool.capacity, tree.arena.f32, tree.arena.u32, camera.packed(), fb.cells,
    )
    return fb, RenderReport(nodes_drawn=len(selected), samples_drawn=int(samples), selected=selected)


def brute_force_render(
    xyz: np.ndarray, rgba: np.ndarray, camera: Camera, fb: Framebuffer | None = None
) -> Framebuffer:
    """Splat a flat point array with no tree and no selection."""
    fb = fb or Framebuffer(camera.width, camera.height)
    _kernels.rasterize_points(
        np.ascontiguousarray(xyz, np.float32),
        np.ascontiguousarray(rgba, np.uint32),
        camera.packed(),
        fb.cells,
    )
    return fb


def overlay_node_boxes(
    img: np.ndarray, tree: Octree, node_ids, camera: Camera, color=(255, 255, 0)
) -> int:
    """Draw wireframe node bounds onto an image in place; returns pixels set."""
    edges = [
        (0, 1), (2, 3), (4, 5), (6, 7),
        (0, 2), (1, 3), (4, 6), (5, 7),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ]
    h, w = img.shape[:2]
    color = np.asarray(color, np.uint8)
    painted = 0
    for nid in node_ids:
        corners = tree.node_bounds(int(nid)).corners()
        pts = [camera.project(c) for c in corners]
        for a, b in edges:
            pa, pb = pts[a], pts[b]
            if pa is None or pb is None:
                continue
            steps = int(max(abs(pb[0] - pa[0]), abs(pb[1] - pa[1]), 1))
            ts = np.linspace(0.0, 1.0, min(steps + 1, 4096))
            xs = np.floor(pa[0] + (pb[0] - pa[0]) * ts).astype(np.int64)
            ys = np.floor(pa[1] + (pb[1] - pa[1]) * ts).astype(np.int64)
            ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            img[ys[ok], xs[ok]] = color
            painted += int(ok.sum())
    return painted


def write_image(path, img: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 image as binary PPM (P6, maxval 255)."""
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img, np.uint8).tobytes())


def read_image(path) -> np.ndarray:
    """Read back a binary PPM written by ``write_image``."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a P6 file")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = map(int, line.split())
        maxval = int(f.readline())
        if maxval != 255:
            raise ValueError(f"{path}: unsupported maxval {maxval}")
        data = f.read(w * h * 3)
    if len(data) < w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, np.uint8).reshape(h, w, 3)
