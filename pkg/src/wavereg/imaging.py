"""Image container, PGM I/O, bilinear resampling, degradation and synthetic pairs.

Coordinate convention used throughout the package: pixel centres sit at
integer coordinates, origin top-left, ``x`` to the right (column index) and
``y`` downward (row index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .transforms import TransformModel, apply_array, compose, invert


class ImageError(ValueError):
    """Raised for malformed images, files or resampling requests."""


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Immutable real-valued raster.

    ``samples`` is a 2-D float64 array indexed ``[y, x]``. ``source_depth`` is
    the bit depth of the file the image came from (8 or 16); intensities are
    kept on the original ``[0, maxval]`` scale but never quantised.
    """

    samples: np.ndarray
    source_depth: int = 8

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageError(f"expected a non-empty 2-D raster, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image samples must be finite")
        if self.source_depth not in (8, 16):
            raise ImageError(f"source_depth must be 8 or 16, got {self.source_depth}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    @property
    def maxval(self) -> int:
        return 255 if self.source_depth == 8 else 65535

    def __eq__(self, other):
        if not isinstance(other, ImageGrid):
            return NotImplemented
        return self.source_depth == other.source_depth and np.array_equal(
            self.samples, other.samples
        )

    def __repr__(self):
        return f"ImageGrid({self.width}x{self.height}, depth={self.source_depth})"


ImageLike = Union[ImageGrid, np.ndarray]


def as_array(img: ImageLike) -> np.ndarray:
    if isinstance(img, ImageGrid):
        return img.samples
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ImageError(f"expected a 2-D raster, got shape {arr.shape}")
    return arr


def _like(img: ImageLike, samples: np.ndarray) -> ImageGrid:
    depth = img.source_depth if isinstance(img, ImageGrid) else 8
    return ImageGrid(samples, depth)


# ---------------------------------------------------------------------------
# PGM I/O


def _pgm_tokens(data: bytes, count: int, start: int = 0):
    """Read ``count`` whitespace separated header tokens, skipping comments."""
    tokens = []
    pos = start
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise ImageError("malformed PGM header: unexpected end of file")
        end = pos
        while end < n and not data[end : end + 1].isspace() and data[end : end + 1] != b"#":
            end += 1
        tokens.append(data[pos:end])
        pos = end
    return tokens, pos


def load_pgm(path) -> ImageGrid:
    """Load a P2 (ASCII) or P5 (binary) portable graymap."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageError(f"unsupported magic number {magic!r} in {path}")
    tokens, pos = _pgm_tokens(data, 3, start=2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageError(f"malformed PGM header in {path}: {tokens!r}") from exc
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise ImageError(f"malformed PGM header in {path}: {width}x{height} maxval {maxval}")
    count = width * height
    depth = 8 if maxval < 256 else 16

    if magic == b"P2":
        body = data[pos:].split()
        if len(body) != count:
            raise ImageError(f"sample count mismatch in {path}: expected {count}, found {len(body)}")
        try:
            samples = np.array([int(v) for v in body], dtype=np.float64)
        except ValueError as exc:
            raise ImageError(f"non-integer sample in {path}") from exc
    else:
        # exactly one whitespace byte separates header and raster
        body = data[pos + 1 :]
        itemsize = 1 if maxval < 256 else 2
        if len(body) < count * itemsize:
            raise ImageError(
                f"sample count mismatch in {path}: expected {count}, found {len(body) // itemsize}"
            )
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        samples = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    if samples.max(initial=0) > maxval:
        raise ImageError(f"sample exceeds maxval {maxval} in {path}")
    return ImageGrid(samples.reshape(height, width), depth)


def quantize(img: ImageLike, maxval: int = 255) -> np.ndarray:
    """Clamp and round to unsigned integers in ``[0, maxval]``."""
    arr = np.clip(np.rint(as_array(img)), 0, maxval)
    return arr.astype(np.uint8 if maxval < 256 else np.uint16)


def save_pgm(path, img: ImageLike) -> None:
    """Write an 8-bit binary (P5) graymap; samples are clamped and rounded."""
    arr = quantize(img, 255)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def save_mask_pgm(path, mask: np.ndarray) -> None:
    save_pgm(path, np.where(np.asarray(mask, dtype=bool), 255.0, 0.0))


# ---------------------------------------------------------------------------
# Resampling


def interpolate_bilinear(img: ImageLike, x: float, y: float) -> float:
    """Bilinear intensity at a real-valued position inside the raster."""
    arr = as_array(img)
    h, w = arr.shape
    if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
        raise ImageError(f"coordinate ({x}, {y}) outside image of size {w}x{h}")
    value, _ = sample_bilinear(arr, np.array([x], float), np.array([y], float))
    return float(value[0])


def sample_bilinear(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Vectorised bilinear sampling.

    Returns ``(values, valid)``; positions outside ``[0, w-1] x [0, h-1]`` get
    value 0 and ``valid`` False.
    """
    h, w = arr.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(valid, xs, 0.0)
    yc = np.where(valid, ys, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    top = arr[y0, x0] * (1 - fx) + arr[y0, x1] * fx
    bottom = arr[y1, x0] * (1 - fx) + arr[y1, x1] * fx
    values = top * (1 - fy) + bottom * fy
    return np.where(valid, values, 0.0), valid


def warp(img: ImageLike, t: TransformModel, out_width: int, out_height: int):
    """Resample ``img`` into an output frame where ``t`` maps source to output.

    Inverse mapping: output pixel ``p`` takes the bilinear value of the source
    at ``t^-1(p)``. Returns ``(ImageGrid, mask)``; ``mask`` is False where the
    preimage fell outside the source, and those pixels hold 0.
    """
    return resample(img, invert(t), out_width, out_height)


def resample(img: ImageLike, pull: TransformModel, out_width: int, out_height: int):
    """Output pixel ``p`` takes the source value at ``pull(p)``; see ``warp``."""
    arr = as_array(img)
    ys, xs = np.mgrid[0:out_height, 0:out_width].astype(np.float64)
    sx, sy = apply_array(pull, xs.ravel(), ys.ravel())
    values, valid = sample_bilinear(arr, sx, sy)
    shape = (out_height, out_width)
    return _like(img, values.reshape(shape)), valid.reshape(shape)


def degrade(img: ImageLike, factor: int) -> ImageGrid:
    """Block-mean downsampling; trailing rows/columns that do not fill a block are dropped."""
    if int(factor) != factor or factor < 1:
        raise ImageError(f"degrade factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    arr = as_array(img)
    h, w = arr.shape
    if h < factor or w < factor:
        raise ImageError(f"image {w}x{h} smaller than degrade factor {factor}")
    if factor == 1:
        return _like(img, arr)
    hh, ww = h // factor, w // factor
    blocks = arr[: hh * factor, : ww * factor].reshape(hh, factor, ww, factor)
    return _like(img, blocks.mean(axis=(1, 3)))


def degrade_transform(factor: int) -> TransformModel:
    """Map from full-resolution coordinates to the block-mean grid of ``degrade``."""
    f = float(factor)
    off = -(f - 1.0) / 2.0 / f
    return TransformModel("affine", [1.0 / f, 0.0, off, 0.0, 1.0 / f, off])


def gamma_remap(img: ImageLike, gamma: float) -> ImageGrid:
    """Monotone remap ``v -> maxval * (v / maxval) ** gamma`` on the clipped range."""
    if gamma <= 0:
        raise ImageError("gamma must be positive")
    arr = as_array(img)
    top = float(img.maxval) if isinstance(img, ImageGrid) else 255.0
    if gamma == 1.0:
        return _like(img, arr)
    return _like(img, top * (np.clip(arr, 0.0, top) / top) ** gamma)


# ---------------------------------------------------------------------------
# Synthetic pairs


@dataclass(frozen=True)
class SyntheticPairSpec:
    """Recipe for a ground-truth registration pair.

    ``ground_truth`` maps full-resolution master coordinates to
    full-resolution slave coordinates.
    """

    ground_truth: TransformModel = field(default_factory=lambda: TransformModel.identity("affine"))
    noise_sigma: float = 0.0
    intensity_gamma: float = 1.0
    degrade_factor: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ImageError("noise_sigma must be >= 0")
        if self.intensity_gamma <= 0:
            raise ImageError("intensity_gamma must be > 0")
        if int(self.degrade_factor) != self.degrade_factor or self.degrade_factor < 1:
            raise ImageError("degrade_factor must be an integer >= 1")


MIN_OVERLAP = 0.5


def make_synthetic_pair(img: ImageLike, spec: SyntheticPairSpec):
    """Build ``(master, slave, truth)`` from a base image.

    The slave is the base image warped by the ground truth, gamma remapped,
    corrupted with seeded Gaussian noise and block-mean degraded. The master is
    the base image degraded by the same factor so both share one resolution.
    ``truth`` is expressed in the degraded frames and maps master pixel
    coordinates to slave pixel coordinates.
    """
    arr = as_array(img)
    h, w = arr.shape
    warped, mask = warp(img, spec.ground_truth, w, h)
    if mask.mean() < MIN_OVERLAP:
        raise ImageError(f"warped overlap {mask.mean():.1%} is below {MIN_OVERLAP:.0%}")
    slave = as_array(gamma_remap(warped, spec.intensity_gamma))
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        slave = slave + rng.normal(0.0, spec.noise_sigma, size=slave.shape)
    f = int(spec.degrade_factor)
    master_out = degrade(_like(img, arr), f)
    slave_out = degrade(_like(img, slave), f)
    d = degrade_transform(f)
    truth = compose(d, compose(spec.ground_truth, invert(d)))
    return master_out, slave_out, truth


def slave_validity(img: ImageLike, spec: SyntheticPairSpec) -> np.ndarray:
    """Pixels of the synthetic slave whose whole footprint came from real image content."""
    h, w = as_array(img).shape
    _, mask = warp(np.ones((h, w)), spec.ground_truth, w, h)
    cover = as_array(degrade(mask.astype(np.float64), int(spec.degrade_factor)))
    return cover > 1.0 - 1e-12
