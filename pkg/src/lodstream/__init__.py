"""Incremental level-of-detail engine for large point clouds.

Points stream in as batches and land in an octree whose leaves store raw
points and whose inner nodes store voxel approximations, both in fixed
size chunks from a reusable pool.  The tree is renderable after every
batch: a software rasterizer draws a screen-size-bounded cut, and a
WebSocket service streams every structural change to mirroring clients.
"""
from .octree import CubeBounds, Octree, cubify
from .store import Arena, ChunkPool
from .update import UpdateConfig, UpdateState, insert_batch, run_frame_updates

__version__ = "0.1.0"

__all__ = [
    "Arena",
    "ChunkPool",
    "CubeBounds",
    "Octree",
    "UpdateConfig",
    "UpdateState",
    "cubify",
    "insert_batch",
    "run_frame_updates",
    "__version__",
]
