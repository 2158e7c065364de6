"""Point-set registration by L2 distance between Gaussian mixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import ImageLike, as_array
from .transforms import TransformError, TransformModel
from .wavelet import wavelet_control_points


class PointSetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointSet:
    """Uniformly weighted isotropic Gaussian mixture centred on ``points``."""

    points: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.shape[0] == 0:
            raise PointSetError("point set is empty")
        if not self.sigma > 0:
            raise PointSetError(f"sigma must be > 0, got {self.sigma}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def with_sigma(self, sigma: float) -> "PointSet":
        return PointSet(self.points, sigma)


def _cross(a: np.ndarray, b: np.ndarray, sigma: float):
    """Mean of the combined-variance kernel over all pairs, and the pair differences."""
    d = a[:, None, :] - b[None, :, :]
    k = np.exp(-(d**2).sum(axis=2) / (4.0 * sigma * sigma)) / (4.0 * math.pi * sigma * sigma)
    return k, d


def _l2(y: np.ndarray, b: np.ndarray, sigma: float, grad: bool = False):
    n, m = len(y), len(b)
    kyy, dyy = _cross(y, y, sigma)
    kyb, dyb = _cross(y, b, sigma)
    kbb, _ = _cross(b, b, sigma)
    value = kyy.sum() / (n * n) - 2.0 * kyb.sum() / (n * m) + kbb.sum() / (m * m)
    if not grad:
        return value
    # d/dy K(y - z) = -(y - z) / (2 sigma^2) K
    s2 = 2.0 * sigma * sigma
    g_self = -2.0 / (n * n) * (kyy[:, :, None] * dyy).sum(axis=1) / s2
    g_cross = 2.0 / (n * m) * (kyb[:, :, None] * dyb).sum(axis=1) / s2
    return value, g_self + g_cross


def gmm_l2_distance(a: PointSet, b: PointSet) -> float:
    """Closed-form integral of ``(f - g)^2`` for the two mixtures (shared sigma)."""
    if not math.isclose(a.sigma, b.sigma):
        raise PointSetError(f"point sets use different sigma ({a.sigma} vs {b.sigma})")
    return max(float(_l2(a.points, b.points, a.sigma)), 0.0)


def gmm_l2_gradient(a: PointSet, b: PointSet) -> np.ndarray:
    """Gradient of ``gmm_l2_distance`` with respect to the points of ``a``."""
    return _l2(a.points, b.points, a.sigma, grad=True)[1]


# ---------------------------------------------------------------------------
# Registration


@dataclass(frozen=True)
class PointSetConfig:
    model: str = "rigid"
    sigma_hi: float | None = None  # None: a quarter of the point-cloud diagonal
    sigma_lo: float = 2.0
    decay: float = 0.7
    steps: int = 100


class _Param:
    """Transform parameterisation about the centroid ``c`` of the moving set.

    Rigid: ``(tx, ty, theta)``; affine: ``(tx, ty, a11 - 1, a12, a21, a22 - 1)``.
    Non-translation parameters are scaled by the RMS radius so that all
    coordinates move points by comparable amounts.
    """

    def __init__(self, model: str, pts: np.ndarray):
        self.model = model
        self.c = pts.mean(axis=0)
        self.q = pts - self.c
        self.r = max(math.sqrt((self.q**2).sum(axis=1).mean()), 1e-9)
        self.n = 3 if model == "rigid" else 6

    def matrix(self, p):
        if self.model == "rigid":
            th = p[2] / self.r
            return np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        return np.eye(2) + np.array([[p[2], p[3]], [p[4], p[5]]]) / self.r

    def points(self, p):
        return self.q @ self.matrix(p).T + self.c + p[:2]

    def chain(self, p, gy):
        """Parameter gradient from the gradient with respect to the moved points."""
        g = np.empty(self.n)
        g[:2] = gy.sum(axis=0)
        if self.model == "rigid":
            th = p[2] / self.r
            dr = np.array([[-math.sin(th), -math.cos(th)], [math.cos(th), -math.sin(th)]])
            g[2] = (gy * (self.q @ dr.T)).sum() / self.r
        else:
            ga = gy.T @ self.q / self.r
            g[2:] = ga.ravel()
        return g

    def model_of(self, p) -> TransformModel:
        a = self.matrix(p)
        t = self.c + p[:2] - a @ self.c
        return TransformModel("affine", [a[0, 0], a[0, 1], t[0], a[1, 0], a[1, 1], t[1]])


def _descend(par: _Param, p, b, sigma, steps):
    def f(x):
        return _l2(par.points(x), b, sigma)

    value = f(p)
    step = sigma
    for _ in range(steps):
        _, gy = _l2(par.points(p), b, sigma, grad=True)
        g = par.chain(p, gy)
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        d = -g / gn
        slope = -gn
        t = step
        while t > 1e-6 * sigma:
            cand = p + t * d
            fc = f(cand)
            if fc <= value + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        p, value = cand, fc
        step = min(2.0 * t, 4.0 * sigma)
    return p, value


def sigma_schedule(a: np.ndarray, b: np.ndarray, cfg: PointSetConfig) -> list[float]:
    if cfg.sigma_lo <= 0 or not 0 < cfg.decay < 1:
        raise PointSetError("sigma_lo must be > 0 and decay in (0, 1)")
    if cfg.sigma_hi is None:
        both = np.vstack([a, b])
        diag = float(np.hypot(*(both.max(axis=0) - both.min(axis=0))))
        hi = diag / 4.0
    else:
        hi = cfg.sigma_hi
    out = []
    s = hi
    while s > cfg.sigma_lo:
        out.append(s)
        s *= cfg.decay
    out.append(cfg.sigma_lo)
    return out


def register_pointset(a: PointSet, b: PointSet, cfg: PointSetConfig = PointSetConfig()):
    """Transform mapping the points of ``a`` onto ``b`` (returned as an affine model).

    Gradient descent on the mixture L2 distance, annealed from ``sigma_hi``
    down to ``sigma_lo``. Returns ``(model, objective at sigma_lo)``.
    """
    if cfg.model not in ("rigid", "affine"):
        raise PointSetError(f"point-set model must be rigid or affine, got {cfg.model!r}")
    if len(a) < 3 or len(b) < 3:
        raise PointSetError(f"need at least 3 points per set, got {len(a)} and {len(b)}")
    if cfg.model == "affine":
        q = a.points - a.points.mean(axis=0)
        sv = np.linalg.svd(q, compute_uv=False)
        if sv[1] <= 1e-9 * max(sv[0], 1.0):
            raise TransformError("affine point-set registration needs non-collinear points")
    par = _Param(cfg.model, a.points)
    p = np.zeros(par.n)
    value = None
    for sigma in sigma_schedule(a.points, b.points, cfg):
        p, value = _descend(par, p, b.points, sigma, cfg.steps)
    return par.model_of(p), float(value)


# ---------------------------------------------------------------------------
# Control points


@dataclass(frozen=True)
class ExtractConfig:
    detector: str = "dtcwt"  # haar | dtcwt | harris
    levels: int = 1
    threshold_percentile: float = 80.0
    max_points: int = 200
    min_ncc: float | None = 0.7
    window: int = 11
    sigma: float = 2.0


def harris_points(img: ImageLike, max_points: int = 200, sigma: float = 1.5, k: float = 0.04):
    """Harris corners: 3x3 maxima of the corner response, strongest first."""
    arr = as_array(img)
    gx = ndimage.sobel(arr, axis=1)
    gy = ndimage.sobel(arr, axis=0)
    sxx = ndimage.gaussian_filter(gx * gx, sigma)
    syy = ndimage.gaussian_filter(gy * gy, sigma)
    sxy = ndimage.gaussian_filter(gx * gy, sigma)
    r = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    peak = r.max()
    if peak <= 0:
        return np.zeros((0, 2))
    mx = ndimage.maximum_filter(r, size=3, mode="constant", cval=-np.inf)
    keep = (r == mx) & (r > 0.01 * peak)
    keep[:2, :] = keep[-2:, :] = False
    keep[:, :2] = keep[:, -2:] = False
    ys, xs = np.nonzero(keep)
    order = np.lexsort((xs, ys, -r[ys, xs]))[:max_points]
    return np.column_stack([xs[order], ys[order]]).astype(np.float64)


def control_points(img: ImageLike, cfg: ExtractConfig) -> np.ndarray:
    if cfg.detector == "harris":
        return harris_points(img, cfg.max_points)
    if cfg.detector not in ("haar", "dtcwt"):
        raise PointSetError(f"unknown control point detector {cfg.detector!r}")
    cps = wavelet_control_points(img, cfg.levels, cfg.threshold_percentile, cfg.detector)
    return np.array([[c.x, c.y] for c in cps[: cfg.max_points]], dtype=np.float64).reshape(-1, 2)


def _patches(arr: np.ndarray, pts: np.ndarray, half: int):
    """Zero-mean unit-norm patches around rounded points (symmetric padding at the border).

    Rows for flat patches are NaN.
    """
    h, w = arr.shape
    size = 2 * half + 1
    padded = np.pad(arr, half, mode="symmetric")
    out = np.full((len(pts), size * size), np.nan)
    for i, (x, y) in enumerate(np.rint(pts).astype(int)):
        x = min(max(x, 0), w - 1)
        y = min(max(y, 0), h - 1)
        p = padded[y : y + size, x : x + size].ravel()
        p = p - p.mean()
        n = np.linalg.norm(p)
        if n > 0:
            out[i] = p / n
    return out


def prune_by_ncc(master: ImageLike, slave: ImageLike, pm: np.ndarray, ps: np.ndarray,
                 min_ncc: float, window: int = 11):
    """Greedy one-to-one pairing of slave and master points by patch NCC.

    Pairs are taken in order of decreasing NCC while both points are still
    free and NCC >= ``min_ncc``. Returns index arrays ``(slave_idx, master_idx)``
    in slave order.
    """
    half = window // 2
    a = _patches(as_array(slave), ps, half)
    b = _patches(as_array(master), pm, half)
    ncc = np.nan_to_num(a @ b.T, nan=-np.inf)
    si, mi = np.nonzero(ncc >= min_ncc)
    order = np.lexsort((mi, si, -ncc[si, mi]))
    used_s, used_m, pairs = set(), set(), []
    for k in order:
        s, m = int(si[k]), int(mi[k])
        if s in used_s or m in used_m:
            continue
        used_s.add(s)
        used_m.add(m)
        pairs.append((s, m))
    pairs.sort()
    idx = np.array(pairs, dtype=np.intp).reshape(-1, 2)
    return idx[:, 0], idx[:, 1]


def extract_pointsets(master: ImageLike, slave: ImageLike, cfg: ExtractConfig = ExtractConfig()):
    """Control points on both images, optionally pruned to NCC-paired correspondences.

    Returns ``(master_set, slave_set)``. With pruning the two sets have equal
    length and row ``i`` of each forms a pair.
    """
    pm = control_points(master, cfg)
    ps = control_points(slave, cfg)
    if cfg.min_ncc is not None and len(pm) and len(ps):
        s_idx, m_idx = prune_by_ncc(master, slave, pm, ps, cfg.min_ncc, cfg.window)
        pm, ps = pm[m_idx], ps[s_idx]
    if len(pm) < 3 or len(ps) < 3:
        raise PointSetError(
            f"too few control points survived (master {len(pm)}, slave {len(ps)}; need 3)"
        )
    return PointSet(pm, cfg.sigma), PointSet(ps, cfg.sigma)


def register_images(master: ImageLike, slave: ImageLike, ext: ExtractConfig, reg: PointSetConfig):
    """Slave-to-master transform from extracted point sets."""
    m, s = extract_pointsets(master, slave, ext)
    model, _ = register_pointset(s, m, reg)
    return model


def read_points(path) -> np.ndarray:
    """Read ``x,y`` rows; a header naming ``x`` and ``y`` may carry extra columns."""
    rows = []
    cols = (0, 1)
    width = 2
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        names = [p.lower() for p in parts]
        if not rows and "x" in names and "y" in names:
            cols, width = (names.index("x"), names.index("y")), len(parts)
            continue
        if len(parts) != width:
            raise PointSetError(f"{path}:{n}: expected {width} columns, got {line!r}")
        try:
            rows.append((float(parts[cols[0]]), float(parts[cols[1]])))
        except ValueError:
            raise PointSetError(f"{path}:{n}: non-numeric coordinate in {line!r}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def write_points(path, pts) -> None:
    lines = ["x,y"] + [f"{x:.17g},{y:.17g}" for x, y in np.asarray(pts).reshape(-1, 2)]
    Path(path).write_text("\n".join(lines) + "\n")
