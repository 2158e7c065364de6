"""Registration quality metrics."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .imaging import ImageLike, as_array
from .transforms import Correspondence, TransformModel, apply_array


class MetricError(ValueError):
    pass


def nccc(a: ImageLike, b: ImageLike, mask=None) -> float:
    """Pearson correlation of the two images over ``mask``."""
    aa, bb = as_array(a), as_array(b)
    if aa.shape != bb.shape:
        raise MetricError(f"image shapes differ: {aa.shape} vs {bb.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        aa, bb = aa[m], bb[m]
    aa = aa.ravel()
    bb = bb.ravel()
    if aa.size == 0:
        raise MetricError("empty overlap")
    da = aa - aa.mean()
    db = bb - bb.mean()
    saa = float(np.dot(da, da))
    sbb = float(np.dot(db, db))
    if saa == 0 and sbb == 0:
        raise MetricError("both images are constant over the overlap; NCCC is undefined")
    if saa == 0 or sbb == 0:
        return 0.0
    return float(np.clip(np.dot(da, db) / np.sqrt(saa * sbb), -1.0, 1.0))


def nccc_display(value: float) -> float:
    """Clamp to the [0, 1] range used in reports."""
    return max(float(value), 0.0)


def rmse_checkpoints(t: TransformModel, checks: Sequence[Correspondence]) -> float:
    if len(checks) == 0:
        raise MetricError("empty checkpoint list")
    src = np.array([c.src for c in checks], dtype=np.float64).reshape(-1, 2)
    dst = np.array([c.dst for c in checks], dtype=np.float64).reshape(-1, 2)
    x, y = apply_array(t, src[:, 0], src[:, 1])
    return float(np.sqrt(np.mean((x - dst[:, 0]) ** 2 + (y - dst[:, 1]) ** 2)))


def runtime_class(seconds: float) -> str:
    """``low`` under 30 s, ``medium`` for 30-60 s inclusive, ``high`` above 60 s."""
    if seconds < 0:
        raise MetricError(f"runtime must be >= 0, got {seconds}")
    if seconds < 30:
        return "low"
    if seconds <= 60:
        return "medium"
    return "high"


def checkpoint_grid(truth: TransformModel, width: int, height: int, n: int = 5, inset: float = 0.1):
    """Regular ``n x n`` grid over the master frame paired with its slave positions.

    Each checkpoint is ``Correspondence(src=truth(p), dst=p)`` so a recovered
    slave-to-master transform ``T`` is scored by ``|T(src) - dst|``. The grid
    spans the central ``1 - 2 * inset`` of each axis.
    """
    gx = np.linspace(inset * (width - 1), (1 - inset) * (width - 1), n)
    gy = np.linspace(inset * (height - 1), (1 - inset) * (height - 1), n)
    xs, ys = np.meshgrid(gx, gy)
    xs, ys = xs.ravel(), ys.ravel()
    sx, sy = apply_array(truth, xs, ys)
    return [Correspondence((float(a), float(b)), (float(c), float(d))) for a, b, c, d in zip(sx, sy, xs, ys)]
