"""Flat ``key = value`` configuration layered over built-in defaults."""

from __future__ import annotations

from pathlib import Path

from .mi import MIConfig
from .pointset import ExtractConfig, PointSetConfig
from .sift import SiftConfig


class ConfigError(ValueError):
    pass


# key -> default; the type of the default decides how text values parse.
# None defaults parse as floats, with "auto" meaning None.
DEFAULTS = {
    "seed": 0,
    "sift.layers": 3,
    "sift.sigma0": 1.6,
    "sift.contrast_threshold": 0.03,
    "sift.edge_ratio": 10.0,
    "sift.ratio_max": 0.8,
    "sift.border": 8,
    "sift.upsample": True,
    "sift.keep_fraction": 0.6,
    "sift.alpha": 0.7,
    "sift.dtcwt_levels": 4,
    "ransac.tol": 2.0,
    "ransac.iterations": 500,
    "mi.bins": 64,
    "mi.levels": 3,
    "mi.pyramid": "wavelet_ll",
    "mi.model": "similarity",
    "mi.max_sweeps": 50,
    "mi.tol_translation": 1e-3,
    "mi.tol_angle": 1e-4,
    "mi.tol_scale": 1e-4,
    "mi.step_translation": 2.0,
    "mi.step_angle": 0.05,
    "mi.step_scale": 0.02,
    "mi.min_overlap": 0.5,
    "mi.divergence_tol": 0.1,
    "pointset.model": "rigid",
    "pointset.sigma_hi": None,
    "pointset.sigma_lo": 2.0,
    "pointset.decay": 0.7,
    "pointset.steps": 100,
    "pointset.kernel_sigma": 2.0,
    "pointset.baseline_detector": "harris",
    "pointset.detector": "dtcwt",
    "pointset.max_points": 200,
    "pointset.min_ncc": 0.7,
    "pointset.window": 11,
    "pointset.levels": 1,
    "pointset.threshold_percentile": 80.0,
    "wavelet.levels": 2,
    "wavelet.threshold_percentile": 95.0,
}

CHOICES = {
    "mi.pyramid": ("none", "gaussian", "wavelet_ll"),
    "mi.model": ("translation", "similarity", "affine"),
    "pointset.model": ("rigid", "affine"),
    "pointset.baseline_detector": ("harris", "haar", "dtcwt"),
    "pointset.detector": ("harris", "haar", "dtcwt"),
}


def parse_value(key: str, text: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            value = low in ("true", "1", "yes")
        elif isinstance(default, int):
            value = int(text)
        elif isinstance(default, float):
            value = float(text)
        elif default is None:
            value = None if text.lower() in ("auto", "none") else float(text)
        else:
            value = text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key} must be one of {'|'.join(CHOICES[key])}, got {value!r}")
    return value


def parse_lines(lines, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Errors name the line."""
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(f"{source}:{n}: {e}") from None
    return out


class Config(dict):
    """All tunables, defaults first, overrides applied with validation."""

    def __init__(self, overrides: dict | None = None):
        super().__init__(DEFAULTS)
        for k, v in (overrides or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
            value = parse_value(key, value)
        elif key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{key} must be one of {'|'.join(CHOICES[key])}, got {value!r}")
        self[key] = value

    @classmethod
    def from_file(cls, path) -> "Config":
        p = Path(path)
        return cls(parse_lines(p.read_text().splitlines(), str(p)))

    def sift(self) -> SiftConfig:
        return SiftConfig(
            layers=self["sift.layers"],
            sigma0=self["sift.sigma0"],
            contrast_threshold=self["sift.contrast_threshold"],
            edge_ratio=self["sift.edge_ratio"],
            ratio_max=self["sift.ratio_max"],
            border=self["sift.border"],
            upsample=self["sift.upsample"],
            keep_fraction=self["sift.keep_fraction"],
            alpha=self["sift.alpha"],
            dtcwt_levels=self["sift.dtcwt_levels"],
            ransac_tol=self["ransac.tol"],
            ransac_iterations=self["ransac.iterations"],
        )

    def mi(self, model: str | None = None, enhance: str = "dwt") -> MIConfig:
        """``enhance="none"`` forces a single level; otherwise ``mi.pyramid`` applies."""
        pyramid = self["mi.pyramid"]
        if enhance == "none":
            pyramid = "none"
        elif pyramid == "none":
            pyramid = "wavelet_ll"
        return MIConfig(
            bins=self["mi.bins"],
            levels=self["mi.levels"],
            pyramid=pyramid,
            model=model or self["mi.model"],
            max_sweeps=self["mi.max_sweeps"],
            tol_translation=self["mi.tol_translation"],
            tol_angle=self["mi.tol_angle"],
            tol_scale=self["mi.tol_scale"],
            step_translation=self["mi.step_translation"],
            step_angle=self["mi.step_angle"],
            step_scale=self["mi.step_scale"],
            min_overlap=self["mi.min_overlap"],
            divergence_tol=self["mi.divergence_tol"],
        )

    def pointset(self, model: str | None = None) -> PointSetConfig:
        return PointSetConfig(
            model=model or self["pointset.model"],
            sigma_hi=self["pointset.sigma_hi"],
            sigma_lo=self["pointset.sigma_lo"],
            decay=self["pointset.decay"],
            steps=self["pointset.steps"],
        )

    def extract(self, enhance: str = "dtcwt") -> ExtractConfig:
        """Baseline: ``pointset.baseline_detector`` without pruning. Enhanced:
        ``pointset.detector`` plus NCC pruning at ``pointset.min_ncc``."""
        enhanced = enhance != "none"
        return ExtractConfig(
            detector=self["pointset.detector"] if enhanced else self["pointset.baseline_detector"],
            levels=self["pointset.levels"],
            threshold_percentile=self["pointset.threshold_percentile"],
            max_points=self["pointset.max_points"],
            min_ncc=self["pointset.min_ncc"] if enhanced else None,
            window=self["pointset.window"],
            sigma=self["pointset.kernel_sigma"],
        )
