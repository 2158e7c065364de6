"""Scale-invariant keypoints, gradient descriptors, matching and DT-CWT enhancement.

Detection uses a Gaussian scale space with ``layers`` intervals
per octave, difference-of-Gaussian extrema over 3x3x3 neighbourhoods,
quadratic sub-pixel refinement, contrast rejection and the Hessian
eigenvalue-ratio edge test. The wavelet stage scores keypoints by DT-CWT
subband magnitude and attaches a 12-value orientation signature used as a
second matching cue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage

from .imaging import ImageLike, as_array, sample_bilinear
from .transforms import TransformModel, ransac_arrays
from .wavelet import ComplexDecomposition, dtcwt

TWO_PI = 2.0 * math.pi


class SiftError(ValueError):
    pass


@dataclass(frozen=True)
class SiftConfig:
    layers: int = 3
    sigma0: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    ratio_max: float = 0.8
    border: int = 8
    upsample: bool = True
    keep_fraction: float = 0.6
    alpha: float = 0.7
    dtcwt_levels: int = 4
    ransac_tol: float = 2.0
    ransac_iterations: int = 500


class Keypoint(NamedTuple):
    x: float
    y: float
    sigma: float
    orientation: float
    response: float
    octave: int
    layer: int


@dataclass(frozen=True, eq=False)
class Descriptor:
    values: np.ndarray
    wavelet_signature: Optional[np.ndarray] = None


class Match(NamedTuple):
    source_index: int
    target_index: int
    distance: float
    ratio: float


# ---------------------------------------------------------------------------
# Scale space


class ScaleSpace:
    """Gaussian and DoG pyramids of one image, intensities normalised to [0, 1]."""

    def __init__(self, img: ImageLike, cfg: SiftConfig = SiftConfig()):
        arr = as_array(img)
        h, w = arr.shape
        if min(h, w) < 32:
            raise SiftError(f"image {w}x{h} too small for keypoint detection (min side 32)")
        self.cfg = cfg
        self.shape = arr.shape
        lo, hi = float(arr.min()), float(arr.max())
        self.flat = hi - lo <= 0
        norm = np.zeros_like(arr) if self.flat else (arr - lo) / (hi - lo)

        self.base_scale = 2.0 if cfg.upsample else 1.0
        if cfg.upsample:
            ys, xs = np.mgrid[0 : 2 * h - 1, 0 : 2 * w - 1] / 2.0
            base, _ = sample_bilinear(norm, xs.ravel(), ys.ravel())
            base = base.reshape(2 * h - 1, 2 * w - 1)
            assumed = 1.0
        else:
            base = norm
            assumed = 0.5
        s = cfg.layers
        base = ndimage.gaussian_filter(base, math.sqrt(max(cfg.sigma0**2 - assumed**2, 0.01)), mode="nearest")
        n_oct = max(1, int(math.floor(math.log2(min(base.shape)))) - 3)
        k = 2.0 ** (1.0 / s)
        incr = [0.0] + [
            cfg.sigma0 * math.sqrt(k ** (2 * i) - k ** (2 * (i - 1))) for i in range(1, s + 3)
        ]
        self.gauss, self.dog = [], []
        img_o = base
        for o in range(n_oct):
            layers = [img_o]
            for i in range(1, s + 3):
                layers.append(ndimage.gaussian_filter(layers[-1], incr[i], mode="nearest"))
            g = np.stack(layers)
            self.gauss.append(g)
            self.dog.append(g[1:] - g[:-1])
            img_o = g[s][::2, ::2]
            if min(img_o.shape) < 8:
                break
        self._grad = {}

    def octave_factor(self, octave: int) -> float:
        """Image pixels per octave pixel."""
        return 2.0**octave / self.base_scale

    def gradients(self, octave: int, layer: int):
        key = (octave, layer)
        if key not in self._grad:
            g = self.gauss[octave][layer]
            dx = np.zeros_like(g)
            dy = np.zeros_like(g)
            dx[:, 1:-1] = (g[:, 2:] - g[:, :-2]) / 2
            dy[1:-1, :] = (g[2:, :] - g[:-2, :]) / 2
            self._grad[key] = (np.hypot(dx, dy), np.arctan2(dy, dx) % TWO_PI)
        return self._grad[key]


def _refine(dog: np.ndarray, layer: int, r: int, c: int, cfg: SiftConfig):
    """Quadratic refinement of a DoG extremum; ``None`` when rejected."""
    n_layers, h, w = dog.shape
    for _ in range(5):
        d = dog
        g = np.array([
            (d[layer, r, c + 1] - d[layer, r, c - 1]) / 2,
            (d[layer, r + 1, c] - d[layer, r - 1, c]) / 2,
            (d[layer + 1, r, c] - d[layer - 1, r, c]) / 2,
        ])
        v2 = 2 * d[layer, r, c]
        dxx = d[layer, r, c + 1] + d[layer, r, c - 1] - v2
        dyy = d[layer, r + 1, c] + d[layer, r - 1, c] - v2
        dss = d[layer + 1, r, c] + d[layer - 1, r, c] - v2
        dxy = (d[layer, r + 1, c + 1] - d[layer, r + 1, c - 1] - d[layer, r - 1, c + 1] + d[layer, r - 1, c - 1]) / 4
        dxs = (d[layer + 1, r, c + 1] - d[layer + 1, r, c - 1] - d[layer - 1, r, c + 1] + d[layer - 1, r, c - 1]) / 4
        dys = (d[layer + 1, r + 1, c] - d[layer + 1, r - 1, c] - d[layer - 1, r + 1, c] + d[layer - 1, r - 1, c]) / 4
        hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            off = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(off) < 0.5):
            break
        c += int(round(off[0]))
        r += int(round(off[1]))
        layer += int(round(off[2]))
        if not (1 <= layer < n_layers - 1 and 1 <= r < h - 1 and 1 <= c < w - 1):
            return None
    else:
        return None
    value = d[layer, r, c] + 0.5 * float(g @ off)
    if abs(value) < cfg.contrast_threshold:
        return None
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    ratio = cfg.edge_ratio
    if det <= 0 or tr * tr * ratio >= (ratio + 1) ** 2 * det:
        return None
    return c + off[0], r + off[1], layer, off[2], abs(value)


def _orientations(space: ScaleSpace, octave: int, layer: int, xo: float, yo: float, sigma_o: float):
    mag, ang = space.gradients(octave, layer)
    h, w = mag.shape
    radius = int(round(3 * 1.5 * sigma_o))
    ci, ri = int(round(xo)), int(round(yo))
    r0, r1 = max(ri - radius, 1), min(ri + radius, h - 2)
    c0, c1 = max(ci - radius, 1), min(ci + radius, w - 2)
    if r0 > r1 or c0 > c1:
        return []
    ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    weight = np.exp(-((xs - ci) ** 2 + (ys - ri) ** 2) / (2 * (1.5 * sigma_o) ** 2))
    nbins = 36
    bins = np.floor(ang[r0 : r1 + 1, c0 : c1 + 1] * nbins / TWO_PI).astype(int) % nbins
    hist = np.bincount(bins.ravel(), (weight * mag[r0 : r1 + 1, c0 : c1 + 1]).ravel(), nbins)
    hist = (
        6 * hist
        + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
        + np.roll(hist, 2)
        + np.roll(hist, -2)
    ) / 16
    peak = hist.max()
    if peak <= 0:
        return []
    left, right = np.roll(hist, 1), np.roll(hist, -1)
    out = []
    for b in np.flatnonzero((hist > left) & (hist > right) & (hist >= 0.8 * peak)):
        denom = left[b] - 2 * hist[b] + right[b]
        shift = 0.5 * (left[b] - right[b]) / denom if denom != 0 else 0.0
        out.append(((b + 0.5 + shift) * TWO_PI / nbins) % TWO_PI)
    return out


def detect_keypoints(img: ImageLike, cfg: SiftConfig = SiftConfig(), space: ScaleSpace | None = None):
    """Detect oriented scale-invariant keypoints.

    Ordered by response descending, then ``y``, ``x``, ``sigma`` ascending.
    Keypoints closer than ``cfg.border`` pixels to the image edge are dropped.
    """
    if space is None:
        space = ScaleSpace(img, cfg)
    if space.flat:
        return []
    h, w = space.shape
    s = cfg.layers
    prefilter = 0.5 * cfg.contrast_threshold
    kps = []
    for octave, dog in enumerate(space.dog):
        mx = ndimage.maximum_filter(dog, size=3, mode="nearest")
        mn = ndimage.minimum_filter(dog, size=3, mode="nearest")
        cand = ((dog == mx) & (dog > prefilter)) | ((dog == mn) & (dog < -prefilter))
        cand[0] = cand[-1] = False
        cand[:, :1] = cand[:, -1:] = False
        cand[:, :, :1] = cand[:, :, -1:] = False
        factor = space.octave_factor(octave)
        for layer, r, c in zip(*np.nonzero(cand)):
            found = _refine(dog, int(layer), int(r), int(c), cfg)
            if found is None:
                continue
            xo, yo, lay, ds, resp = found
            x, y = xo * factor, yo * factor
            if not (cfg.border <= x <= w - 1 - cfg.border and cfg.border <= y <= h - 1 - cfg.border):
                continue
            sigma_o = cfg.sigma0 * 2.0 ** ((lay + ds) / s)
            for theta in _orientations(space, octave, lay, xo, yo, sigma_o):
                kps.append(Keypoint(float(x), float(y), float(sigma_o * factor), float(theta),
                                    float(resp), octave, int(lay)))
    kps = sorted(set(kps), key=lambda k: (-k.response, k.y, k.x, k.sigma, k.orientation))
    return kps


# ---------------------------------------------------------------------------
# Descriptors

_D = 4
_NBINS = 8


def _descriptor(space: ScaleSpace, kp: Keypoint) -> np.ndarray:
    factor = space.octave_factor(kp.octave)
    mag, ang = space.gradients(kp.octave, kp.layer)
    h, w = mag.shape
    xo, yo = kp.x / factor, kp.y / factor
    sigma_o = kp.sigma / factor
    hist_width = 3.0 * sigma_o
    radius = int(round(hist_width * math.sqrt(2) * (_D + 1) * 0.5))
    ci, ri = int(round(xo)), int(round(yo))
    r0, r1 = max(ri - radius, 1), min(ri + radius, h - 2)
    c0, c1 = max(ci - radius, 1), min(ci + radius, w - 2)
    if r0 > r1 or c0 > c1:
        raise SiftError(f"keypoint ({kp.x:.1f}, {kp.y:.1f}) patch lies outside the image")
    ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    dx = (xs - xo).ravel()
    dy = (ys - yo).ravel()
    cos_t, sin_t = math.cos(kp.orientation), math.sin(kp.orientation)
    u = (cos_t * dx + sin_t * dy) / hist_width
    v = (-sin_t * dx + cos_t * dy) / hist_width
    rbin = v + _D / 2 - 0.5
    cbin = u + _D / 2 - 0.5
    keep = (rbin > -1) & (rbin < _D) & (cbin > -1) & (cbin < _D)
    m = mag[r0 : r1 + 1, c0 : c1 + 1].ravel()[keep]
    a = ang[r0 : r1 + 1, c0 : c1 + 1].ravel()[keep]
    rbin, cbin, u, v = rbin[keep], cbin[keep], u[keep], v[keep]
    weight = m * np.exp(-(u * u + v * v) / (2 * (0.5 * _D) ** 2))
    obin = ((a - kp.orientation) % TWO_PI) * _NBINS / TWO_PI

    r_fl, c_fl, o_fl = np.floor(rbin), np.floor(cbin), np.floor(obin)
    fr, fc, fo = rbin - r_fl, cbin - c_fl, obin - o_fl
    r_i, c_i, o_i = r_fl.astype(int), c_fl.astype(int), o_fl.astype(int)
    hist = np.zeros((_D + 2, _D + 2, _NBINS))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(hist, (r_i + dr + 1, c_i + dc + 1, (o_i + do) % _NBINS), weight * wr * wc * wo)
    vec = hist[1:-1, 1:-1].ravel()
    return _normalise_descriptor(vec)


def _normalise_descriptor(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return np.full(vec.size, 1.0 / math.sqrt(vec.size))
    vec = np.minimum(vec / norm, 0.2)
    return vec / np.linalg.norm(vec)


def compute_descriptors(
    img: ImageLike,
    kps: Sequence[Keypoint],
    cfg: SiftConfig = SiftConfig(),
    space: ScaleSpace | None = None,
) -> list[Descriptor]:
    """128-bin gradient descriptors (4x4 cells x 8 orientations) in the keypoint frame."""
    if space is None:
        space = ScaleSpace(img, cfg)
    return [Descriptor(_descriptor(space, kp)) for kp in kps]


# ---------------------------------------------------------------------------
# Wavelet enhancement


def _kp_level(sigma: float, levels: int) -> int:
    return int(min(max(round(math.log2(max(sigma, 1e-12))), 1), levels))


def keypoint_scores(kps: Sequence[Keypoint], dec: ComplexDecomposition) -> np.ndarray:
    """Total six-band DT-CWT magnitude at each keypoint, at the level nearest log2(sigma)."""
    scores = np.empty(len(kps))
    for i, kp in enumerate(kps):
        level = _kp_level(kp.sigma, dec.levels)
        scores[i] = dec.sample(level, kp.x, kp.y).sum()
    return scores


def enhance_keypoints(kps: Sequence[Keypoint], dec: ComplexDecomposition, keep_fraction: float = 0.6):
    """Keep the ``keep_fraction`` best keypoints by DT-CWT magnitude, in their original order.

    Ties in score are broken by higher detector response.
    """
    if not 0 < keep_fraction <= 1:
        raise SiftError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    kps = list(kps)
    if not kps or keep_fraction == 1:
        return kps
    scores = keypoint_scores(kps, dec)
    n_keep = max(1, int(math.floor(keep_fraction * len(kps) + 0.5)))
    responses = np.array([kp.response for kp in kps])
    order = np.lexsort((np.arange(len(kps)), -responses, -scores))
    chosen = np.sort(order[:n_keep])
    return [kps[i] for i in chosen]


def _steer(values: np.ndarray, angle: float) -> np.ndarray:
    """Circularly resample six orientation bins (30 degrees apart) by ``angle``."""
    shift = (angle % math.pi) / (math.pi / 6)
    idx = (np.arange(6) + shift) % 6
    lo = np.floor(idx).astype(int)
    frac = idx - lo
    return values[..., lo] * (1 - frac) + values[..., (lo + 1) % 6] * frac


def wavelet_signature(kp: Keypoint, dec: ComplexDecomposition) -> np.ndarray:
    """Mean band magnitudes over an 8x8 neighbourhood at two levels, steered to the keypoint.

    The sampling grid has spacing ``sigma`` and is rotated with the keypoint
    orientation; band order is rotated by the same angle so the 12 values are
    approximately rotation invariant. Unit Euclidean norm.
    """
    level = min(_kp_level(kp.sigma, dec.levels), dec.levels - 1) if dec.levels > 1 else 1
    offs = (np.arange(8) - 3.5) * kp.sigma
    gu, gv = np.meshgrid(offs, offs)
    c, s = math.cos(kp.orientation), math.sin(kp.orientation)
    xs = kp.x + c * gu.ravel() - s * gv.ravel()
    ys = kp.y + s * gu.ravel() + c * gv.ravel()
    parts = []
    for lev in (level, min(level + 1, dec.levels)):
        mean = dec.sample(lev, xs, ys).mean(axis=0)
        parts.append(_steer(mean, BAND_SIGN * kp.orientation))
    sig = np.concatenate(parts)
    norm = np.linalg.norm(sig)
    if norm <= 0:
        return np.full(12, 1.0 / math.sqrt(12))
    return sig / norm


# Band nominal angle is about 90 degrees minus the gradient angle (y down), so
# the band index runs against keypoint orientation; see test_wavelet gratings.
BAND_SIGN = -1.0


def attach_signatures(descs: Sequence[Descriptor], kps: Sequence[Keypoint], dec: ComplexDecomposition):
    return [replace(d, wavelet_signature=wavelet_signature(kp, dec)) for d, kp in zip(descs, kps)]


# ---------------------------------------------------------------------------
# Matching


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


def match_descriptors(
    a: Sequence[Descriptor],
    b: Sequence[Descriptor],
    alpha: float = 1.0,
    ratio_max: float = 0.8,
) -> list[Match]:
    """Mutual nearest neighbours passing the ratio test.

    Distance is ``alpha * |values| + (1 - alpha) * |signature|`` (Euclidean).
    With a single candidate on the target side the ratio is defined as 0.
    """
    if not 0 <= alpha <= 1:
        raise SiftError(f"alpha must lie in [0, 1], got {alpha}")
    if not a or not b:
        return []
    va = np.stack([d.values for d in a])
    vb = np.stack([d.values for d in b])
    dist = _pairwise(va, vb)
    if alpha < 1:
        if any(d.wavelet_signature is None for d in a) or any(d.wavelet_signature is None for d in b):
            raise SiftError("alpha < 1 requires wavelet signatures on both descriptor sets")
        sa = np.stack([d.wavelet_signature for d in a])
        sb = np.stack([d.wavelet_signature for d in b])
        dist = alpha * dist + (1 - alpha) * _pairwise(sa, sb)

    best_b = np.argmin(dist, axis=1)
    best_a = np.argmin(dist, axis=0)
    matches = []
    for i, j in enumerate(best_b):
        if best_a[j] != i:
            continue
        d1 = float(dist[i, j])
        if len(b) == 1:
            ratio = 0.0
        else:
            row = dist[i].copy()
            row[j] = np.inf
            d2 = float(row.min())
            ratio = d1 / d2 if d2 > 0 else 1.0
        if len(b) == 1 or ratio < ratio_max:
            matches.append(Match(i, int(j), d1, ratio))
    return matches


# ---------------------------------------------------------------------------
# Registration


class SiftResult(NamedTuple):
    transform: TransformModel
    matches: list
    inliers: np.ndarray
    n_master: int
    n_slave: int


def describe(img: ImageLike, cfg: SiftConfig, enhance: bool):
    space = ScaleSpace(img, cfg)
    kps = detect_keypoints(img, cfg, space)
    dec = None
    if enhance:
        dec = dtcwt(img, cfg.dtcwt_levels)
        kps = enhance_keypoints(kps, dec, cfg.keep_fraction)
    descs = compute_descriptors(img, kps, cfg, space)
    if enhance:
        descs = attach_signatures(descs, kps, dec)
    return kps, descs


def register_sift(
    master: ImageLike,
    slave: ImageLike,
    kind: str = "affine",
    cfg: SiftConfig = SiftConfig(),
    enhance: bool = False,
    seed: int = 0,
) -> SiftResult:
    """Feature-based registration; the returned transform maps slave to master pixels."""
    kps_m, desc_m = describe(master, cfg, enhance)
    kps_s, desc_s = describe(slave, cfg, enhance)
    alpha = cfg.alpha if enhance else 1.0
    matches = match_descriptors(desc_s, desc_m, alpha, cfg.ratio_max)
    if not matches:
        raise SiftError("no descriptor matches survived the ratio test")
    src = np.array([[kps_s[m.source_index].x, kps_s[m.source_index].y] for m in matches])
    dst = np.array([[kps_m[m.target_index].x, kps_m[m.target_index].y] for m in matches])
    fit = ransac_arrays(src, dst, kind, cfg.ransac_tol, cfg.ransac_iterations, seed)
    return SiftResult(fit.model, matches, fit.inliers, len(kps_m), len(kps_s))
