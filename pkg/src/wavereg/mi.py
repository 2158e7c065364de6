"""Mutual-information registration with an optional Haar-LL or Gaussian pyramid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .imaging import ImageGrid, ImageLike, as_array, sample_bilinear
from .transforms import TransformModel, invert
from .wavelet import dwt_haar

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MODELS = ("translation", "similarity", "affine")
PYRAMIDS = ("none", "gaussian", "wavelet_ll")


class MIError(ValueError):
    pass


@dataclass(frozen=True)
class JointHistogram:
    counts: np.ndarray

    @property
    def bins(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def marginals(self):
        return self.counts.sum(axis=1), self.counts.sum(axis=0)

    def entropies(self):
        """``(H(A), H(B), H(A,B))`` in nats."""
        ca, cb = self.marginals()
        return _entropy(ca), _entropy(cb), _entropy(self.counts)

    def mutual_information(self) -> float:
        ha, hb, hab = self.entropies()
        return ha + hb - hab


def _entropy(counts: np.ndarray) -> float:
    c = counts[counts > 0]
    total = c.sum()
    if total <= 0:
        return 0.0
    p = c / total
    return float(-(p * np.log(p)).sum())


def _bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.intp)
    idx = ((values - lo) * (bins / (hi - lo))).astype(np.intp)
    return np.minimum(idx, bins - 1)


def joint_histogram(a: np.ndarray, b: np.ndarray, bins: int = 64) -> JointHistogram:
    """Joint histogram of paired samples, each linearly binned over its own min-max."""
    if bins < 2:
        raise MIError(f"bins must be >= 2, got {bins}")
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0:
        raise MIError("empty overlap")
    ia = _bin_index(a, bins)
    ib = _bin_index(b, bins)
    counts = np.bincount(ia * bins + ib, minlength=bins * bins).reshape(bins, bins)
    return JointHistogram(counts.astype(np.float64))


def mutual_information(a: ImageLike, b: ImageLike, mask=None, bins: int = 64) -> float:
    """MI in nats over the valid overlap (``mask`` True), 64-bin linear binning by default."""
    aa, bb = as_array(a), as_array(b)
    if aa.shape != bb.shape:
        raise MIError(f"image shapes differ: {aa.shape} vs {bb.shape}")
    if mask is None:
        mask = np.ones(aa.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MIError("empty overlap")
    return joint_histogram(aa[mask], bb[mask], bins).mutual_information()


def entropy(img: ImageLike, mask=None, bins: int = 64) -> float:
    arr = as_array(img)
    vals = arr[mask] if mask is not None else arr.ravel()
    return _entropy(np.bincount(_bin_index(vals, bins), minlength=bins).astype(float))


# ---------------------------------------------------------------------------
# Pyramids


def build_pyramid(img: ImageLike, levels: int, mode: str = "wavelet_ll") -> list[ImageGrid]:
    """Level 0 is the input; each further level halves the resolution.

    ``gaussian`` blurs with sigma 1 then keeps every second sample;
    ``wavelet_ll`` keeps the Haar LL band divided by 2 so intensities keep
    their range.
    """
    if mode not in ("gaussian", "wavelet_ll"):
        raise MIError(f"unknown pyramid mode {mode!r}")
    if levels < 1:
        raise MIError("levels must be >= 1")
    arr = as_array(img)
    h, w = arr.shape
    for _ in range(levels - 1):
        h, w = (h + 1) // 2, (w + 1) // 2
    if min(h, w) < 4:
        raise MIError(f"{levels} pyramid levels too many for a {arr.shape[1]}x{arr.shape[0]} image")
    depth = img.source_depth if isinstance(img, ImageGrid) else 8
    out = [ImageGrid(arr, depth)]
    cur = arr
    for _ in range(levels - 1):
        if mode == "gaussian":
            cur = ndimage.gaussian_filter(cur, 1.0, mode="reflect")[::2, ::2]
        else:
            cur = dwt_haar(cur, 1).approximation / 2.0
        out.append(ImageGrid(cur, depth))
    return out


def pyramid_frame(level: int, mode: str):
    """``(scale, offset)`` mapping level pixel ``i`` to full-resolution ``scale * i + offset``."""
    s = 2.0**level
    if mode == "wavelet_ll":
        return s, (s - 1.0) / 2.0
    return s, 0.0


# ---------------------------------------------------------------------------
# Optimiser


@dataclass(frozen=True)
class MIConfig:
    bins: int = 64
    levels: int = 3
    pyramid: str = "wavelet_ll"
    model: str = "similarity"
    max_sweeps: int = 50
    tol_translation: float = 1e-3
    tol_angle: float = 1e-4
    tol_scale: float = 1e-4
    step_translation: float = 2.0
    step_angle: float = 0.05
    step_scale: float = 0.02
    max_expansions: int = 12
    min_overlap: float = 0.5
    divergence_tol: float = 0.1


@dataclass
class MIOptimizerState:
    params: np.ndarray
    value: float
    iteration: int = 0
    step_scales: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: list = field(default_factory=list)


class MIResult(NamedTuple):
    transform: TransformModel
    mi: float
    level_history: list


def _n_params(model: str) -> int:
    return {"translation": 2, "similarity": 4, "affine": 6}[model]


def params_to_pull(params: np.ndarray, model: str, centre) -> TransformModel:
    """Master-to-slave sampling map ``p -> A (p - c) + c + t`` for a parameter vector.

    Parameters: ``tx, ty`` then ``angle, log scale`` (similarity) or
    ``angle, log sx, log sy, shear`` (affine).
    """
    cx, cy = centre
    tx, ty = params[0], params[1]
    if model == "translation":
        return TransformModel("translation", [tx, ty])
    c, s = math.cos(params[2]), math.sin(params[2])
    if model == "similarity":
        k = math.exp(params[3])
        a = np.array([[k * c, -k * s], [k * s, k * c]])
    else:
        sx, sy, sh = math.exp(params[3]), math.exp(params[4]), params[5]
        a = np.array([[c, -s], [s, c]]) @ np.array([[sx, sh], [0.0, sy]])
    off = np.array([cx, cy]) - a @ np.array([cx, cy]) + np.array([tx, ty])
    if model == "similarity":
        return TransformModel("similarity", [a[0, 0], a[1, 0], off[0], off[1]])
    return TransformModel("affine", [a[0, 0], a[0, 1], off[0], a[1, 0], a[1, 1], off[1]])


class _LevelObjective:
    def __init__(self, master: np.ndarray, slave: np.ndarray, frame, model, centre, cfg: MIConfig):
        self.master = master
        self.slave = slave
        self.model = model
        self.centre = centre
        self.cfg = cfg
        s, o = frame
        self.s, self.o = s, o
        ys, xs = np.mgrid[0 : master.shape[0], 0 : master.shape[1]].astype(np.float64)
        self.px = (s * xs + o).ravel()
        self.py = (s * ys + o).ravel()
        self.mflat = master.ravel()
        self.evaluations = 0

    def sample(self, params):
        # A sample counts as overlapping when it falls inside the slave's pixel
        # footprint; the outer half pixel is clamped. Dropping the last row and
        # column for sub-pixel moves would otherwise bias MI away from identity.
        pull = params_to_pull(params, self.model, self.centre)
        qx, qy = pull(self.px, self.py)
        h, w = self.slave.shape
        x = (qx - self.o) / self.s
        y = (qy - self.o) / self.s
        valid = (x >= -0.5) & (x <= w - 0.5) & (y >= -0.5) & (y <= h - 0.5)
        values, _ = sample_bilinear(self.slave, np.clip(x, 0, w - 1), np.clip(y, 0, h - 1))
        return values, valid

    def __call__(self, params) -> float:
        self.evaluations += 1
        values, valid = self.sample(params)
        if valid.mean() < self.cfg.min_overlap:
            return -np.inf
        return joint_histogram(self.mflat[valid], values[valid], self.cfg.bins).mutual_information()


def _line_search(f, x, f0, i, step, tol, max_expand):
    """Maximise ``f`` along coordinate ``i``: bracket, then golden-section refine."""

    def at(t):
        y = x.copy()
        y[i] = t
        return f(y)

    x0 = x[i]
    best_t, best_f = x0, f0
    fp, fm = at(x0 + step), at(x0 - step)
    for t, v in ((x0 + step, fp), (x0 - step, fm)):
        if v > best_f:
            best_t, best_f = t, v
    if fp <= f0 and fm <= f0:
        lo, hi = x0 - step, x0 + step
    else:
        d = 1.0 if fp > fm else -1.0
        a, b, fb = x0, x0 + d * step, max(fp, fm)
        inc = step
        for _ in range(max_expand):
            inc *= 1.0 / GOLDEN
            c = b + d * inc
            fc = at(c)
            if fc > best_f:
                best_t, best_f = c, fc
            if fc <= fb:
                break
            a, b, fb = b, c, fc
        else:
            return best_t, best_f
        lo, hi = min(a, c), max(a, c)

    c1 = hi - GOLDEN * (hi - lo)
    c2 = lo + GOLDEN * (hi - lo)
    f1, f2 = at(c1), at(c2)
    while hi - lo > tol:
        if f1 >= f2:
            hi, c2, f2 = c2, c1, f1
            c1 = hi - GOLDEN * (hi - lo)
            f1 = at(c1)
        else:
            lo, c1, f1 = c1, c2, f2
            c2 = lo + GOLDEN * (hi - lo)
            f2 = at(c2)
        for t, v in ((c1, f1), (c2, f2)):
            if v > best_f:
                best_t, best_f = t, v
    return best_t, best_f


def _optimise_level(obj: _LevelObjective, params: np.ndarray, cfg: MIConfig):
    n = params.size
    steps = np.empty(n)
    tols = np.empty(n)
    steps[:2] = cfg.step_translation * obj.s
    tols[:2] = cfg.tol_translation * obj.s
    if n > 2:
        steps[2], tols[2] = cfg.step_angle, cfg.tol_angle
        steps[3:] = cfg.step_scale
        tols[3:] = cfg.tol_scale
    state = MIOptimizerState(params.copy(), obj(params), 0, steps)
    if not np.isfinite(state.value):
        raise MIError("empty overlap at the start of a pyramid level")
    state.history.append(state.value)
    for sweep in range(cfg.max_sweeps):
        moved = np.zeros(n)
        for i in range(n):
            t, v = _line_search(obj, state.params, state.value, i, steps[i], tols[i], cfg.max_expansions)
            if v > state.value:
                moved[i] = abs(t - state.params[i])
                state.params[i] = t
                state.value = v
                state.history.append(v)
        state.iteration = sweep + 1
        if np.all(moved < tols):
            break
    return state


def register_mi(master: ImageLike, slave: ImageLike, cfg: MIConfig = MIConfig()) -> MIResult:
    """Maximise MI over ``cfg.model`` parameters, coarse to fine.

    Returns the transform mapping slave pixel coordinates to master pixel
    coordinates, the final MI (nats) and the accepted-step MI history per
    level (coarsest first).
    """
    if cfg.model not in MODELS:
        raise MIError(f"MI model must be one of {MODELS}, got {cfg.model!r}")
    if cfg.pyramid not in PYRAMIDS:
        raise MIError(f"pyramid must be one of {PYRAMIDS}, got {cfg.pyramid!r}")
    m = as_array(master)
    s = as_array(slave)
    levels = 1 if cfg.pyramid == "none" else cfg.levels
    if levels > 1:
        mp = build_pyramid(m, levels, cfg.pyramid)
        sp = build_pyramid(s, levels, cfg.pyramid)
    else:
        mp, sp = [ImageGrid(m)], [ImageGrid(s)]
    centre = ((m.shape[1] - 1) / 2.0, (m.shape[0] - 1) / 2.0)
    params = np.zeros(_n_params(cfg.model))
    start = params.copy()
    history = []
    value = -np.inf
    for level in range(levels - 1, -1, -1):
        frame = pyramid_frame(level, cfg.pyramid) if levels > 1 else (1.0, 0.0)
        obj = _LevelObjective(mp[level].samples, sp[level].samples, frame, cfg.model, centre, cfg)
        if level < levels - 1:
            here, origin = obj(params), obj(start)
            if here < origin - cfg.divergence_tol:
                raise MIError(
                    f"optimisation diverged: MI {here:.4f} at level {level} handoff is below "
                    f"the starting estimate {origin:.4f}"
                )
        state = _optimise_level(obj, params, cfg)
        params = state.params
        value = state.value
        history.append(state.history)
    pull = params_to_pull(params, cfg.model, centre)
    return MIResult(invert(pull), float(value), history)
