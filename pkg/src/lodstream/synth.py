"""Seeded synthetic point clouds for benchmarks and tests.

``uniform`` fills the unit cube; ``surface`` samples a rolling heightfield,
which clusters points on a 2D sheet the way scanned scenes do and gives
spatial sorting something to exploit.
"""
from __future__ import annotations

import numpy as np


def _pack(r, g, b) -> np.ndarray:
    out = r.astype(np.uint32)
    out |= g.astype(np.uint32) << 8
    out |= b.astype(np.uint32) << 16
    out |= np.uint32(255) << 24
    return out


def gen_uniform(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    xyz = rng.random((n, 3), np.float32)
    rgb = rng.integers(0, 256, (n, 3), np.uint32)
    return xyz, _pack(rgb[:, 0], rgb[:, 1], rgb[:, 2])


def gen_surface(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    y = rng.random(n)
    z = 0.5 + 0.18 * np.sin(5.1 * x + 1.7) * np.cos(4.3 * y) + 0.08 * np.sin(11.0 * x * y)
    z += rng.normal(0.0, 0.004, n)
    xyz = np.empty((n, 3), np.float32)
    xyz[:, 0] = x
    xyz[:, 1] = y
    xyz[:, 2] = np.clip(z, 0.0, 0.999)
    shade = (np.clip(z, 0.0, 1.0) * 255).astype(np.uint32)
    r = (x * 255).astype(np.uint32)
    g = (y * 255).astype(np.uint32)
    return xyz, _pack(r, g, shade)


GENERATORS = {"uniform": gen_uniform, "surface": gen_surface}


def generate(kind: str, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown generator {kind!r}, have {sorted(GENERATORS)}") from None
    return gen(n, seed)
