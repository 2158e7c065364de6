"""One entry point for the three registration methods and their enhancements."""

from __future__ import annotations

from .config import Config
from .imaging import ImageLike
from .mi import register_mi
from .pointset import register_images
from .sift import register_sift
from .transforms import TransformModel

METHODS = ("sift", "mi", "pointset")
ENHANCEMENTS = {"sift": ("none", "dtcwt"), "mi": ("none", "dwt"), "pointset": ("none", "dtcwt")}
MODELS = {
    "sift": ("translation", "similarity", "affine", "polynomial2"),
    "mi": ("translation", "similarity", "affine"),
    "pointset": ("rigid", "affine"),
}
NOTES = {("pointset", "dtcwt"): "contourlet->dtcwt modulus maxima + ncc pruning"}


class UsageError(ValueError):
    pass


def validate(method: str, enhance: str, model: str) -> None:
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; valid: {'|'.join(METHODS)}")
    if enhance not in ENHANCEMENTS[method]:
        raise UsageError(
            f"method {method} does not accept enhancement {enhance!r}; valid: {'|'.join(ENHANCEMENTS[method])}"
        )
    if model not in MODELS[method]:
        raise UsageError(f"method {method} does not support model {model!r}; valid: {'|'.join(MODELS[method])}")


def register(
    method: str,
    enhance: str,
    master: ImageLike,
    slave: ImageLike,
    model: str,
    cfg: Config | None = None,
    seed: int | None = None,
) -> TransformModel:
    """Transform mapping slave pixel coordinates to master pixel coordinates."""
    validate(method, enhance, model)
    cfg = cfg or Config()
    seed = cfg["seed"] if seed is None else seed
    if method == "sift":
        return register_sift(master, slave, model, cfg.sift(), enhance == "dtcwt", seed).transform
    if method == "mi":
        return register_mi(master, slave, cfg.mi(model, enhance)).transform
    return register_images(master, slave, cfg.extract(enhance), cfg.pointset(model))
