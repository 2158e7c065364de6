"""Procedural test scenes used by the benchmark suite and the tests."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imaging import ImageGrid


def texture(size: int = 256, seed: int = 0) -> ImageGrid:
    """Seeded urban-like scene: smooth terrain shading plus many small rotated blocks."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    for sigma, amp in ((20.0, 1.0), (5.0, 0.4)):
        layer = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
        img += amp * layer / layer.std()
    img *= 0.25
    ys, xs = np.mgrid[0:size, 0:size]
    for _ in range(size * size // 300):
        cx, cy = rng.uniform(0, size, 2)
        w, h = rng.uniform(1.5, 7.0, 2)
        ang = rng.uniform(0, np.pi)
        u = (xs - cx) * np.cos(ang) + (ys - cy) * np.sin(ang)
        v = -(xs - cx) * np.sin(ang) + (ys - cy) * np.cos(ang)
        img[(np.abs(u) < w) & (np.abs(v) < h)] = rng.uniform(-1.0, 1.0)
    img = ndimage.gaussian_filter(img, 0.7)
    img = (img - img.min()) / (img.max() - img.min())
    return ImageGrid(20 + 215 * img)


def disc(size: int = 128, centre=(61.7, 66.2), radius: float = 32.0, supersample: int = 4,
         low: float = 0.0, high: float = 255.0) -> ImageGrid:
    """Anti-aliased bright disc on a dark background."""
    o = (np.arange(supersample) + 0.5) / supersample - 0.5
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cover = np.zeros((size, size))
    for a in o:
        for b in o:
            cover += (xs + a - centre[0]) ** 2 + (ys + b - centre[1]) ** 2 <= radius * radius
    return ImageGrid(low + (high - low) * cover / supersample**2)


def gaussian_blob(size: int = 128, centre=None, std: float = 4.0, amplitude: float = 200.0,
                  background: float = 20.0) -> ImageGrid:
    if centre is None:
        centre = ((size - 1) / 2, (size - 1) / 2)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    r2 = (xs - centre[0]) ** 2 + (ys - centre[1]) ** 2
    return ImageGrid(background + amplitude * np.exp(-r2 / (2 * std * std)))


def step_edge(size: int = 64, position: int | None = None, horizontal: bool = True,
              low: float = 0.0, high: float = 255.0) -> ImageGrid:
    """Horizontal (``horizontal=True``: intensity changes along y) or vertical step."""
    position = size // 2 if position is None else position
    img = np.full((size, size), low)
    if horizontal:
        img[position:, :] = high
    else:
        img[:, position:] = high
    return ImageGrid(img)


def checkerboard(size: int = 64, block: int = 8, low: float = 50.0, high: float = 200.0) -> ImageGrid:
    ys, xs = np.mgrid[0:size, 0:size]
    return ImageGrid(np.where(((ys // block) + (xs // block)) % 2 == 0, low, high))


SCENES = {"texture": texture}


def scene(name: str, size: int = 256, seed: int = 0) -> ImageGrid:
    """Build a named procedural scene (``texture``)."""
    try:
        return SCENES[name](size, seed)
    except KeyError:
        raise ValueError(f"unknown synthetic scene {name!r}; known: {sorted(SCENES)}") from None
