"""Transform models, least-squares fitting and RANSAC.

Coefficient layouts (mapping source ``(x, y)`` to target ``(x', y')``):

* ``translation``  ``[tx, ty]``
* ``similarity``   ``[a, b, tx, ty]`` with ``x' = a x - b y + tx``, ``y' = b x + a y + ty``
* ``affine``       ``[a11, a12, tx, a21, a22, ty]`` (2x3 matrix, row-major)
* ``polynomial2``  six terms ``1, x, y, x^2, xy, y^2`` for ``x'`` then for ``y'``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

KINDS = ("translation", "similarity", "affine", "polynomial2")
N_COEFFS = {"translation": 2, "similarity": 4, "affine": 6, "polynomial2": 12}
MIN_PAIRS = {"translation": 1, "similarity": 2, "affine": 3, "polynomial2": 6}
_ROWS = {"translation": 1, "similarity": 1, "affine": 2, "polynomial2": 2}


class TransformError(ValueError):
    """Invalid transform, unsupported operation, or degenerate fit."""


@dataclass(frozen=True, eq=False)
class TransformModel:
    kind: str
    coefficients: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TransformError(f"unknown transform kind {self.kind!r}; expected one of {KINDS}")
        coeffs = np.array(self.coefficients, dtype=np.float64).ravel()
        if coeffs.size != N_COEFFS[self.kind]:
            raise TransformError(
                f"{self.kind} needs {N_COEFFS[self.kind]} coefficients, got {coeffs.size}"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def identity(cls, kind: str = "affine") -> "TransformModel":
        return cls(kind, _IDENTITY[kind])

    @classmethod
    def from_matrix(cls, matrix) -> "TransformModel":
        m = np.asarray(matrix, dtype=np.float64)
        return cls("affine", m[:2, :3].ravel())

    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 matrix (not defined for ``polynomial2``)."""
        c = self.coefficients
        if self.kind == "translation":
            return np.array([[1.0, 0.0, c[0]], [0.0, 1.0, c[1]], [0.0, 0.0, 1.0]])
        if self.kind == "similarity":
            a, b, tx, ty = c
            return np.array([[a, -b, tx], [b, a, ty], [0.0, 0.0, 1.0]])
        if self.kind == "affine":
            return np.vstack([c.reshape(2, 3), [0.0, 0.0, 1.0]])
        raise TransformError("polynomial2 has no matrix form")

    def __call__(self, x, y):
        return apply_array(self, x, y)

    def __eq__(self, other):
        if not isinstance(other, TransformModel):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.coefficients, other.coefficients)

    def __repr__(self):
        vals = ", ".join(f"{v:.6g}" for v in self.coefficients)
        return f"TransformModel({self.kind!r}, [{vals}])"


_IDENTITY = {
    "translation": [0.0, 0.0],
    "similarity": [1.0, 0.0, 0.0, 0.0],
    "affine": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    "polynomial2": [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
}


class Correspondence(NamedTuple):
    src: tuple
    dst: tuple
    weight: float = 1.0


def similarity_from_params(scale: float, angle: float, tx: float, ty: float) -> TransformModel:
    return TransformModel(
        "similarity", [scale * math.cos(angle), scale * math.sin(angle), tx, ty]
    )


def apply_array(t: TransformModel, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c = t.coefficients
    if t.kind == "translation":
        return x + c[0], y + c[1]
    if t.kind == "similarity":
        a, b, tx, ty = c
        return a * x - b * y + tx, b * x + a * y + ty
    if t.kind == "affine":
        return c[0] * x + c[1] * y + c[2], c[3] * x + c[4] * y + c[5]
    terms = (1.0, x, y, x * x, x * y, y * y)
    xo = sum(ci * ti for ci, ti in zip(c[:6], terms))
    yo = sum(ci * ti for ci, ti in zip(c[6:], terms))
    return xo + np.zeros_like(x), yo + np.zeros_like(y)


def apply(t: TransformModel, p) -> tuple[float, float]:
    xo, yo = apply_array(t, p[0], p[1])
    return float(xo), float(yo)


def invert(t: TransformModel) -> TransformModel:
    if t.kind == "translation":
        return TransformModel("translation", -t.coefficients)
    if t.kind == "polynomial2":
        raise TransformError("polynomial2 is not closed under inversion; invert is unsupported")
    m = t.matrix()
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-12:
        raise TransformError(f"transform is not invertible (determinant {det:.3g})")
    inv = np.linalg.inv(m)
    if t.kind == "similarity":
        return TransformModel("similarity", [inv[0, 0], inv[1, 0], inv[0, 2], inv[1, 2]])
    return TransformModel.from_matrix(inv)


def compose(outer: TransformModel, inner: TransformModel) -> TransformModel:
    """``outer . inner``: apply ``inner`` first. Kinds are promoted to the more general one."""
    if "polynomial2" in (outer.kind, inner.kind):
        raise TransformError("composition involving polynomial2 is unsupported")
    m = outer.matrix() @ inner.matrix()
    kind = KINDS[max(KINDS.index(outer.kind), KINDS.index(inner.kind))]
    if kind == "translation":
        return TransformModel(kind, [m[0, 2], m[1, 2]])
    if kind == "similarity":
        return TransformModel(kind, [m[0, 0], m[1, 0], m[0, 2], m[1, 2]])
    return TransformModel.from_matrix(m)


def as_affine(t: TransformModel) -> TransformModel:
    if t.kind == "polynomial2":
        c = t.coefficients
        if np.any(c[3:6]) or np.any(c[9:12]):
            raise TransformError("polynomial2 with quadratic terms is not affine")
        return TransformModel("affine", [c[1], c[2], c[0], c[7], c[8], c[6]])
    return TransformModel.from_matrix(t.matrix())


# ---------------------------------------------------------------------------
# Least squares


def _design(kind: str, x: np.ndarray, y: np.ndarray):
    """Design matrix ``A`` with ``A @ coeffs`` = interleaved ``[x'0, y'0, x'1, ...]``."""
    n = x.size
    one = np.ones(n)
    zero = np.zeros(n)
    if kind == "translation":
        rows_x = [one, zero]
        rows_y = [zero, one]
    elif kind == "similarity":
        rows_x = [x, -y, one, zero]
        rows_y = [y, x, zero, one]
    elif kind == "affine":
        rows_x = [x, y, one, zero, zero, zero]
        rows_y = [zero, zero, zero, x, y, one]
    else:
        terms = [one, x, y, x * x, x * y, y * y]
        rows_x = terms + [zero] * 6
        rows_y = [zero] * 6 + terms
    a = np.empty((2 * n, N_COEFFS[kind]))
    a[0::2] = np.column_stack(rows_x)
    a[1::2] = np.column_stack(rows_y)
    return a


def _unpack(pairs):
    arr = np.array([[p[0][0], p[0][1], p[1][0], p[1][1], p[2] if len(p) > 2 else 1.0] for p in pairs],
                   dtype=np.float64).reshape(-1, 5)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4]


def fit_arrays(kind: str, src: np.ndarray, dst: np.ndarray, weights=None) -> TransformModel:
    """Weighted least-squares fit from ``(N, 2)`` source/target arrays."""
    if kind not in KINDS:
        raise TransformError(f"unknown transform kind {kind!r}")
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = src.shape[0]
    if n < MIN_PAIRS[kind]:
        raise TransformError(f"{kind} needs at least {MIN_PAIRS[kind]} pairs, got {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise TransformError("correspondence weights must be non-negative")
    if kind == "polynomial2":
        # condition the quadratic terms
        centre = src.mean(axis=0)
        spread = max(float(np.abs(src - centre).max()), 1.0)
        coeffs = _solve(kind, (src - centre) / spread, dst, w)
        return _denormalise_poly(coeffs, centre, spread)
    return TransformModel(kind, _solve(kind, src, dst, w))


def _solve(kind, src, dst, w):
    a = _design(kind, src[:, 0], src[:, 1])
    # translation coefficients are offsets, so fit the displacement
    b = (dst - src).ravel() if kind == "translation" else dst.ravel()
    sw = np.sqrt(np.repeat(w, 2))
    a = a * sw[:, None]
    b = b * sw
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    if diag.size < a.shape[1] or diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise TransformError(f"rank-deficient configuration for {kind} fit")
    return np.linalg.solve(r, q.T @ b)


def _denormalise_poly(c, centre, s):
    """Re-express polynomial coefficients fitted in ``u = (x - cx)/s`` coordinates."""
    cx, cy = centre
    out = []
    for k in (c[:6], c[6:]):
        a0, a1, a2, a3, a4, a5 = k
        # u = (x-cx)/s, v = (y-cy)/s expanded into 1, x, y, x^2, xy, y^2
        one = a0 - a1 * cx / s - a2 * cy / s + a3 * cx * cx / s**2 + a4 * cx * cy / s**2 + a5 * cy * cy / s**2
        x = a1 / s - 2 * a3 * cx / s**2 - a4 * cy / s**2
        y = a2 / s - a4 * cx / s**2 - 2 * a5 * cy / s**2
        out += [one, x, y, a3 / s**2, a4 / s**2, a5 / s**2]
    return TransformModel("polynomial2", out)


def fit_least_squares(pairs: Sequence[Correspondence], kind: str) -> TransformModel:
    """Weighted least-squares transform of ``kind`` from correspondences.

    Raises ``TransformError`` on too few pairs or a rank-deficient design.
    """
    sx, sy, dx, dy, w = _unpack(pairs)
    return fit_arrays(kind, np.column_stack([sx, sy]), np.column_stack([dx, dy]), w)


def residuals(t: TransformModel, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    px, py = apply_array(t, src[:, 0], src[:, 1])
    return np.hypot(px - dst[:, 0], py - dst[:, 1])


# ---------------------------------------------------------------------------
# RANSAC


class RansacResult(NamedTuple):
    model: TransformModel
    inliers: np.ndarray


def ransac_fit(
    pairs: Sequence[Correspondence],
    kind: str,
    inlier_tol: float = 2.0,
    iterations: int = 500,
    seed: int = 0,
) -> RansacResult:
    """Random-sample consensus fit.

    Each iteration fits an exact model to a seeded minimal sample and counts
    pairs with reprojection error <= ``inlier_tol``. The best sample (most
    inliers, then lowest inlier RMSE) is refit by least squares on its
    inliers. ``inliers`` holds the indices of that best consensus set.
    """
    sx, sy, dx, dy, w = _unpack(pairs)
    src = np.column_stack([sx, sy])
    dst = np.column_stack([dx, dy])
    return ransac_arrays(src, dst, kind, inlier_tol, iterations, seed, w)


def ransac_arrays(src, dst, kind, inlier_tol=2.0, iterations=500, seed=0, weights=None):
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = src.shape[0]
    k = MIN_PAIRS.get(kind)
    if k is None:
        raise TransformError(f"unknown transform kind {kind!r}")
    if n < k:
        raise TransformError(f"{kind} needs at least {k} pairs, got {n}")
    rng = np.random.default_rng(seed)
    best = None  # (count, rmse, inlier mask)
    for _ in range(int(iterations)):
        idx = rng.choice(n, size=k, replace=False)
        try:
            model = fit_arrays(kind, src[idx], dst[idx])
        except TransformError:
            continue
        err = residuals(model, src, dst)
        mask = err <= inlier_tol
        count = int(mask.sum())
        if count < k:
            continue
        rmse = float(np.sqrt(np.mean(err[mask] ** 2)))
        if best is None or count > best[0] or (count == best[0] and rmse < best[1]):
            best = (count, rmse, mask)
    if best is None:
        raise TransformError(f"RANSAC found no {kind} model with at least {k} inliers")
    inliers = np.flatnonzero(best[2])
    w = None if weights is None else np.asarray(weights)[inliers]
    model = fit_arrays(kind, src[inliers], dst[inliers], w)
    return RansacResult(model, inliers)


# ---------------------------------------------------------------------------
# Text format


def format_transform(t: TransformModel) -> str:
    rows = np.asarray(t.coefficients).reshape(_ROWS[t.kind], -1)
    lines = [t.kind] + [" ".join(f"{v:.17g}" for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def parse_transform(text: str) -> TransformModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TransformError("empty transform file")
    kind = lines[0]
    if kind not in KINDS:
        raise TransformError(f"unknown transform kind {kind!r}")
    try:
        values = [float(tok) for ln in lines[1:] for tok in ln.split()]
    except ValueError as exc:
        raise TransformError(f"malformed coefficient in transform file: {exc}") from exc
    return TransformModel(kind, values)


def write_transform(path, t: TransformModel) -> None:
    Path(path).write_text(format_transform(t))


def read_transform(path) -> TransformModel:
    return parse_transform(Path(path).read_text())
