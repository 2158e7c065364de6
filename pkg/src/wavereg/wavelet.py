"""Haar DWT, dual-tree complex wavelet transform and modulus-maxima control points."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .imaging import ImageGrid, ImageLike, as_array, sample_bilinear

SQRT_HALF = np.sqrt(0.5)


class WaveletError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Filter tables
#
# Level 1 of the DT-CWT uses the 9/7 near-symmetric biorthogonal pair,
# scaled to unit DC gain.
BIORT_H0 = np.array([
    0.0267487574108101, -0.0168641184428747, -0.0782232665289905,
    0.2668641184428729, 0.6029490182363593, 0.2668641184428769,
    -0.0782232665289884, -0.0168641184428753, 0.0267487574108096,
])
BIORT_H1 = np.array([
    0.0456358815571251, -0.0287717631142493, -0.2956358815571280,
    0.5575435262285023, -0.2956358815571233, -0.0287717631142531,
    0.0456358815571261,
])

# Levels >= 2 use the 14-tap quarter-shift low-pass H_L. Tree a low-pass is
# H_L, tree b its reverse; each
# high-pass is the alternating flip of its own tree's low-pass.
QSHIFT_HL = np.array([
    0.0032531427636532, -0.0038832119991585, 0.0346603468448535,
    -0.0388728012688278, -0.1172038876991153, 0.2752953846688820,
    0.7561456438925225, 0.5688104207121227, 0.0118660920337970,
    -0.1067118046866654, 0.0238253847949203, 0.0170252238815540,
    -0.0054394759372741, -0.0045568956284755,
])
# The published table leaves an alternating sum of about -9e-7, which leaks
# DC into the high-pass. Remove it with the smallest alternating correction
# (about 7e-8 per tap) so constant images give zero detail.
_ALT = (-1.0) ** np.arange(QSHIFT_HL.size)
QSHIFT_HL = QSHIFT_HL - _ALT * (QSHIFT_HL @ _ALT) / QSHIFT_HL.size
QSHIFT_H0A = QSHIFT_HL.copy()
QSHIFT_H0B = QSHIFT_HL[::-1].copy()
QSHIFT_H1A = QSHIFT_H0B * (-1.0) ** np.arange(QSHIFT_HL.size)
QSHIFT_H1B = QSHIFT_H1A[::-1].copy()

# nominal orientation (degrees) of each of the six complex subbands
ORIENTATIONS = (15, 45, 75, 105, 135, 165)


# ---------------------------------------------------------------------------
# Haar


@dataclass(frozen=True)
class WaveletDecomposition:
    """Multilevel orthonormal Haar analysis.

    ``details[k]`` holds ``(LH, HL, HH)`` for level ``k + 1`` (finest first);
    ``approximation`` is the deepest LL band. ``shapes[k]`` is the unpadded
    shape of the level ``k + 1`` input, used by the inverse to crop padding.
    HL is the horizontal (along-x) difference band and LH the vertical one.
    """

    details: list
    approximation: np.ndarray
    shapes: list

    @property
    def levels(self) -> int:
        return len(self.details)

    def modulus(self, level: int) -> np.ndarray:
        lh, hl, hh = self.details[level - 1]
        return np.sqrt(lh * lh + hl * hl + hh * hh)


def _pad_even(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return np.pad(x, ((0, h % 2), (0, w % 2)), mode="symmetric")


def _haar_step(x: np.ndarray):
    x = _pad_even(x)
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 2
    hl = (a - b + c - d) / 2
    lh = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    return ll, lh, hl, hh


def _check_haar_depth(shape, levels):
    if levels < 1:
        raise WaveletError(f"levels must be >= 1, got {levels}")
    h, w = shape
    for level in range(levels):
        if min(h, w) < 2:
            raise WaveletError(
                f"{levels} levels too deep for a {shape[1]}x{shape[0]} image (fails at level {level + 1})"
            )
        h, w = (h + 1) // 2, (w + 1) // 2


def dwt_haar(img: ImageLike, levels: int) -> WaveletDecomposition:
    """Separable orthonormal 2-D Haar analysis; odd sizes are padded by edge symmetry."""
    x = as_array(img)
    _check_haar_depth(x.shape, levels)
    details, shapes = [], []
    for _ in range(levels):
        shapes.append(x.shape)
        x, lh, hl, hh = _haar_step(x)
        details.append((lh, hl, hh))
    return WaveletDecomposition(details, x, shapes)


def idwt_haar(dec: WaveletDecomposition) -> ImageGrid:
    x = np.asarray(dec.approximation, dtype=np.float64)
    for level in range(dec.levels - 1, -1, -1):
        lh, hl, hh = (np.asarray(b, dtype=np.float64) for b in dec.details[level])
        if not (x.shape == lh.shape == hl.shape == hh.shape):
            raise WaveletError(
                f"inconsistent subband shapes at level {level + 1}: "
                f"LL {x.shape}, LH {lh.shape}, HL {hl.shape}, HH {hh.shape}"
            )
        h, w = dec.shapes[level]
        if (h + 1) // 2 != x.shape[0] or (w + 1) // 2 != x.shape[1]:
            raise WaveletError(f"subband shape {x.shape} does not match recorded size {w}x{h}")
        out = np.empty((2 * x.shape[0], 2 * x.shape[1]))
        out[0::2, 0::2] = (x + hl + lh + hh) / 2
        out[0::2, 1::2] = (x - hl + lh - hh) / 2
        out[1::2, 0::2] = (x + hl - lh - hh) / 2
        out[1::2, 1::2] = (x - hl - lh + hh) / 2
        x = out[:h, :w]
    return ImageGrid(x)


# ---------------------------------------------------------------------------
# Dual-tree complex wavelet transform


def _reflect(x: np.ndarray, minx: float, maxx: float) -> np.ndarray:
    """Reflect integer positions about ``minx``/``maxx`` (half-sample symmetry)."""
    rng = maxx - minx
    rng2 = 2 * rng
    mod = np.fmod(x - minx, rng2)
    mod = np.where(mod < 0, mod + rng2, mod)
    out = np.where(mod >= rng, rng2 - mod, mod) + minx
    return np.rint(out).astype(np.intp)


def _convolve_valid(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Column-wise 'valid' convolution of ``x`` with the 1-D filter ``h``."""
    m = h.size
    rows = x.shape[0] - m + 1
    out = np.zeros((rows,) + x.shape[1:])
    for k in range(m):
        out += h[k] * x[m - 1 - k : m - 1 - k + rows]
    return out


def _colfilter(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Undecimated column filtering with symmetric extension (odd-length ``h``)."""
    r = x.shape[0]
    m2 = h.size // 2
    xe = _reflect(np.arange(-m2, r + m2), -0.5, r - 0.5)
    return _convolve_valid(x[xe], h)


def _coldfilt(x: np.ndarray, ha: np.ndarray, hb: np.ndarray) -> np.ndarray:
    """Decimating column filter for the Q-shift stages.

    ``ha`` and ``hb`` are the two trees' filters; their outputs are
    interleaved in the result, which has half the input rows.
    """
    r, c = x.shape
    if r % 4:
        raise WaveletError("rows must be a multiple of 4 for decimated filtering")
    m = ha.size
    xe = _reflect(np.arange(-m, r + m), -0.5, r - 0.5)
    hao, hae = ha[0::2], ha[1::2]
    hbo, hbe = hb[0::2], hb[1::2]
    t = np.arange(5, r + 2 * m - 2, 4)
    r2 = r // 2
    y = np.zeros((r2, c))
    if np.sum(ha * hb) > 0:
        s1, s2 = slice(0, r2, 2), slice(1, r2, 2)
    else:
        s2, s1 = slice(0, r2, 2), slice(1, r2, 2)
    y[s1] = _convolve_valid(x[xe[t - 1]], hao) + _convolve_valid(x[xe[t - 3]], hae)
    y[s2] = _convolve_valid(x[xe[t]], hbo) + _convolve_valid(x[xe[t - 2]], hbe)
    return y


def _q2c(y: np.ndarray) -> np.ndarray:
    """Combine 2x2 blocks of the four real tree outputs into two complex subbands."""
    a = y[0::2, 0::2]
    b = y[0::2, 1::2]
    c = y[1::2, 0::2]
    d = y[1::2, 1::2]
    p = (a + 1j * b) * SQRT_HALF
    q = (d - 1j * c) * SQRT_HALF
    return np.stack([p - q, p + q], axis=-1)


class _Axis(NamedTuple):
    scale: float
    offset: float


@dataclass(frozen=True)
class ComplexDecomposition:
    """Multilevel DT-CWT output.

    ``highpasses[k]`` is an ``(h, w, 6)`` complex array for level ``k + 1``,
    bands ordered by ``ORIENTATIONS``. ``lowpass`` is the deepest real
    low-pass grid with the two trees interleaved; ``lowpass_trees`` splits it.
    ``frames[k]`` maps subband indices back to image coordinates:
    ``x = sx * col + ox`` and ``y = sy * row + oy``.
    """

    highpasses: list
    lowpass: np.ndarray
    frames: list = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.highpasses)

    @property
    def lowpass_trees(self):
        return self.lowpass[0::2, 0::2], self.lowpass[1::2, 1::2]

    def magnitude(self, level: int) -> np.ndarray:
        """Per-coefficient modulus over all six bands at ``level`` (1-based)."""
        return np.sqrt(np.sum(np.abs(self.highpasses[level - 1]) ** 2, axis=-1))

    def to_image(self, level: int, row, col):
        (sy, oy), (sx, ox) = self.frames[level - 1]
        return sx * np.asarray(col) + ox, sy * np.asarray(row) + oy

    def to_subband(self, level: int, x, y):
        (sy, oy), (sx, ox) = self.frames[level - 1]
        return (np.asarray(x) - ox) / sx, (np.asarray(y) - oy) / sy

    def sample(self, level: int, x, y, band=None) -> np.ndarray:
        """Bilinear samples of band magnitudes at image coordinates (clamped to the grid).

        With ``band=None`` returns an ``(n, 6)`` array, otherwise ``(n,)``.
        """
        cx, cy = self.to_subband(level, np.atleast_1d(x), np.atleast_1d(y))
        mags = np.abs(self.highpasses[level - 1])
        h, w = mags.shape[:2]
        cx = np.clip(cx, 0, w - 1)
        cy = np.clip(cy, 0, h - 1)
        bands = range(6) if band is None else [band]
        cols = [sample_bilinear(mags[:, :, b], cx, cy)[0] for b in bands]
        return np.column_stack(cols) if band is None else cols[0]


def _check_dtcwt_depth(shape, levels):
    if levels < 1:
        raise WaveletError(f"levels must be >= 1, got {levels}")
    need = 2 ** (levels + 1)
    if min(shape) < need:
        raise WaveletError(
            f"image {shape[1]}x{shape[0]} too small for {levels} DT-CWT levels (needs >= {need} px per side)"
        )


def dtcwt(img: ImageLike, levels: int) -> ComplexDecomposition:
    """Forward 2-D dual-tree complex wavelet transform.

    Level 1 filters undecimated with the biorthogonal pair, deeper levels use
    decimating Q-shift filtering; each level yields six oriented complex
    subbands whose magnitudes are close to shift invariant.
    """
    x = as_array(img).astype(np.float64)
    _check_dtcwt_depth(x.shape, levels)
    h, w = x.shape
    if h % 2:
        x = np.vstack([x, x[-1:]])
    if w % 2:
        x = np.hstack([x, x[:, -1:]])

    lo = _colfilter(x, BIORT_H0)
    hi = _colfilter(x, BIORT_H1)
    lolo = _colfilter(lo.T, BIORT_H0).T
    band = np.zeros((lolo.shape[0] // 2, lolo.shape[1] // 2, 6), dtype=complex)
    band[:, :, [0, 5]] = _q2c(_colfilter(hi.T, BIORT_H0).T)
    band[:, :, [2, 3]] = _q2c(_colfilter(lo.T, BIORT_H1).T)
    band[:, :, [1, 4]] = _q2c(_colfilter(hi.T, BIORT_H1).T)
    highpasses = [band]
    frames = [(_Axis(2.0, 0.5), _Axis(2.0, 0.5))]
    ly, lx = _Axis(1.0, 0.0), _Axis(1.0, 0.0)

    for _ in range(1, levels):
        r, c = lolo.shape
        if r % 4:
            lolo = np.vstack([lolo[:1], lolo, lolo[-1:]])
            ly = _Axis(ly.scale, ly.offset - ly.scale)
        if c % 4:
            lolo = np.hstack([lolo[:, :1], lolo, lolo[:, -1:]])
            lx = _Axis(lx.scale, lx.offset - lx.scale)
        lo = _coldfilt(lolo, QSHIFT_H0B, QSHIFT_H0A)
        hi = _coldfilt(lolo, QSHIFT_H1B, QSHIFT_H1A)
        lolo = _coldfilt(lo.T, QSHIFT_H0B, QSHIFT_H0A).T
        band = np.zeros((lolo.shape[0] // 2, lolo.shape[1] // 2, 6), dtype=complex)
        band[:, :, [0, 5]] = _q2c(_coldfilt(hi.T, QSHIFT_H0B, QSHIFT_H0A).T)
        band[:, :, [2, 3]] = _q2c(_coldfilt(lo.T, QSHIFT_H1B, QSHIFT_H1A).T)
        band[:, :, [1, 4]] = _q2c(_coldfilt(hi.T, QSHIFT_H1B, QSHIFT_H1A).T)
        highpasses.append(band)
        ly = _Axis(2 * ly.scale, ly.offset + 0.5 * ly.scale)
        lx = _Axis(2 * lx.scale, lx.offset + 0.5 * lx.scale)
        frames.append((_Axis(2 * ly.scale, ly.offset + 0.5 * ly.scale),
                       _Axis(2 * lx.scale, lx.offset + 0.5 * lx.scale)))
    return ComplexDecomposition(highpasses, lolo, frames)


def aggregate_magnitude(img: ImageLike, levels: int, kind: str = "haar") -> np.ndarray:
    """Per-level sum of detail modulus (Haar) or six-band modulus (DT-CWT)."""
    if kind == "haar":
        dec = dwt_haar(img, levels)
    elif kind == "dtcwt":
        dec = dtcwt(img, levels)
    else:
        raise WaveletError(f"unknown transform {kind!r}")
    return np.array([dec.modulus(k).sum() if kind == "haar" else dec.magnitude(k).sum()
                     for k in range(1, levels + 1)])


# ---------------------------------------------------------------------------
# Control points


class ControlPoint(NamedTuple):
    x: float
    y: float
    modulus: float
    level: int


def _strict_local_maxima(m: np.ndarray) -> np.ndarray:
    padded = np.pad(m, 1, mode="constant", constant_values=-np.inf)
    h, w = m.shape
    centre = padded[1:-1, 1:-1]
    is_max = np.ones_like(m, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_max &= centre > padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return is_max


def wavelet_control_points(
    img: ImageLike,
    levels: int = 2,
    threshold_percentile: float = 95.0,
    transform: str = "haar",
) -> list[ControlPoint]:
    """Local modulus maxima of the wavelet detail bands at level ``levels``.

    The modulus is ``sqrt(LH^2 + HL^2 + HH^2)`` for Haar (or the six-band
    modulus with ``transform="dtcwt"``). Coefficients that are strict
    8-neighbourhood maxima and exceed the given percentile of all moduli at
    that level become control points at their coefficient centre in image
    coordinates. Sorted by modulus descending, then ``y``, then ``x``.
    """
    if not 0 < threshold_percentile < 100:
        raise WaveletError(f"threshold_percentile must lie in (0, 100), got {threshold_percentile}")
    arr = as_array(img)
    h, w = arr.shape
    level = int(levels)
    if transform == "haar":
        mod = dwt_haar(arr, level).modulus(level)
        scale = 2.0 ** level
        to_xy = lambda r, c: (scale * c + (scale - 1) / 2, scale * r + (scale - 1) / 2)  # noqa: E731
    elif transform == "dtcwt":
        dec = dtcwt(arr, level)
        mod = dec.magnitude(level)
        to_xy = lambda r, c: dec.to_image(level, r, c)  # noqa: E731
    else:
        raise WaveletError(f"unknown transform {transform!r}")

    threshold = np.percentile(mod, threshold_percentile)
    keep = _strict_local_maxima(mod) & (mod > threshold) & (mod > 0)
    rows, cols = np.nonzero(keep)
    xs, ys = to_xy(rows, cols)
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    vals = mod[rows, cols]
    order = np.lexsort((xs, ys, -vals))
    return [ControlPoint(float(xs[i]), float(ys[i]), float(vals[i]), level) for i in order]
