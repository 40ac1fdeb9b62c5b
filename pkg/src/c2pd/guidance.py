"""Producers of guidance grids from RGB images, oracle depth, or files.

These stand in for a learned feature extractor: each source yields a
single-channel magnitude grid whose value trends steer the deformation
operators (the gradient stage consumes its absolute gradients).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ValidationError
from .grid import ensure_grid

# ITU-R BT.601 luminance weights
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

GUIDANCE_SOURCES = ("grayscale-gradient", "gt-oracle", "file")


@dataclass(frozen=True)
class GuidanceSource:
    """Which producer fills the pipeline's guidance grid."""

    tag: str
    path: str | None = None

    def __post_init__(self) -> None:
        if self.tag not in GUIDANCE_SOURCES:
            raise ValidationError(
                f"unknown guidance source {self.tag!r}; expected one of {GUIDANCE_SOURCES}")
        if self.tag == "file" and not self.path:
            raise ValidationError("guidance source 'file' requires a path")


def ensure_rgb(img, name: str = "rgb") -> np.ndarray:
    """Validate an (H, W, 3) float64 image with channels in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatchError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(f"{name} channels must be finite and within [0, 1]")
    return arr


def guidance_from_rgb(img) -> np.ndarray:
    """BT.601 luminance of an RGB image, one guidance value per pixel."""
    arr = ensure_rgb(img)
    return LUMA_R * arr[:, :, 0] + LUMA_G * arr[:, :, 1] + LUMA_B * arr[:, :, 2]


def guidance_from_gt(gt) -> np.ndarray:
    """Min-max normalized ground-truth depth; the oracle upper-bound guide.

    A constant grid has no trend to expose and maps to all zeros.
    """
    gt = ensure_grid(gt, "gt")
    lo, hi = gt.min(), gt.max()
    if hi == lo:
        return np.zeros_like(gt)
    return (gt - lo) / (hi - lo)


def load_guidance(path) -> np.ndarray:
    """Read a guidance grid verbatim from a float-map file."""
    from .fileio import read_pfm

    return ensure_grid(read_pfm(path), "guidance")
