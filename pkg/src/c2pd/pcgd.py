"""Gradient-domain deformation with reconstruction by summation.

The depth grid is forward-differenced along both axes.  Each axis gradient
is split into its positive and negative parts, both parts are deformed by
the shared windowed operator under the absolute guidance gradient, signs
are restored, the processed gradient is re-integrated from the original
first row/column, and the two directional reconstructions are averaged.

Working on gradients lets the operator move edges instead of blending
values across them; sign separation presents non-negative inputs to the
shared network for both directions of change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capo import CapoParams, capo_apply, capo_backward
from .errors import GridSizeError, NumericError, ShapeMismatchError, ValidationError
from .grid import WindowSpec, ensure_grid, ensure_same_shape

AXES = ("horizontal", "vertical")


@dataclass(frozen=True)
class GradientField:
    """Sign-separated forward differences of a grid along one axis.

    ``positive + negative`` reproduces the raw forward difference exactly.
    The field keeps the source grid's shape, with the final column (or row)
    fixed at zero; that entry never feeds integration.  ``anchor`` is the
    source's first column (horizontal) or first row (vertical), the
    integration constant needed to invert differentiation.
    """

    axis: str
    positive: np.ndarray
    negative: np.ndarray
    anchor: np.ndarray

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ValidationError(f"axis must be one of {AXES}, got {self.axis!r}")


def _forward_diff_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise forward difference, final column zero."""
    d = np.zeros_like(a)
    d[:, :-1] = a[:, 1:] - a[:, :-1]
    return d


def differentiate(grid, axis: str) -> GradientField:
    """Forward-difference a grid along ``axis`` and split gradient signs."""
    grid = ensure_grid(grid)
    if axis not in AXES:
        raise ValidationError(f"axis must be one of {AXES}, got {axis!r}")
    extent = grid.shape[1] if axis == "horizontal" else grid.shape[0]
    if extent < 2:
        raise GridSizeError(f"{axis} differentiation needs extent >= 2, got {extent}")
    if axis == "horizontal":
        d = _forward_diff_rows(grid)
        anchor = grid[:, 0].copy()
    else:
        d = _forward_diff_rows(grid.T).T
        anchor = grid[0, :].copy()
    return GradientField(axis=axis, positive=np.maximum(d, 0.0),
                         negative=np.minimum(d, 0.0), anchor=anchor)


def integrate(field: GradientField) -> np.ndarray:
    """Invert :func:`differentiate`: cumulative sum from the stored anchor."""
    pos = np.asarray(field.positive, dtype=np.float64)
    neg = np.asarray(field.negative, dtype=np.float64)
    ensure_same_shape(pos, neg, "sign streams")
    d = pos + neg
    if field.axis == "vertical":
        d = d.T
    anchor = np.asarray(field.anchor, dtype=np.float64)
    if anchor.shape != (d.shape[0],):
        raise ShapeMismatchError(f"anchor length {anchor.shape} does not match field {d.shape}")
    out = np.empty_like(d)
    out[:, 0] = anchor
    if d.shape[1] > 1:
        out[:, 1:] = anchor[:, None] + np.cumsum(d[:, :-1], axis=1)
    return out.T if field.axis == "vertical" else out


def guidance_gradient(guide, axis: str) -> np.ndarray:
    """Absolute forward difference of the guide, same stencil as the depth."""
    guide = ensure_grid(guide, "guide")
    if axis not in AXES:
        raise ValidationError(f"axis must be one of {AXES}, got {axis!r}")
    if axis == "horizontal":
        return np.abs(_forward_diff_rows(guide))
    return np.abs(_forward_diff_rows(guide.T)).T


def _validate_specs(params: CapoParams, spec_h: WindowSpec, spec_v: WindowSpec) -> None:
    if spec_v.shape != (spec_h.shape[1], spec_h.shape[0]):
        raise ValidationError(
            f"vertical window {spec_v.shape} is not the transpose of horizontal {spec_h.shape}")
    if spec_v.padding != spec_h.padding:
        raise ValidationError("horizontal and vertical windows must share a padding rule")
    if params.n != spec_h.n:
        raise ShapeMismatchError(f"params fit n={params.n} windows but spec has n={spec_h.n}")


def _axis_forward(depth: np.ndarray, guide: np.ndarray, params: CapoParams,
                  spec: WindowSpec) -> np.ndarray:
    """Reconstruction along the row axis of the given orientation."""
    d = _forward_diff_rows(depth)
    g = np.abs(_forward_diff_rows(guide))
    proc_pos = capo_apply(np.maximum(d, 0.0), g, params, spec)
    proc_neg = capo_apply(np.maximum(-d, 0.0), g, params, spec)
    proc = proc_pos - proc_neg  # restore the negative stream's direction
    out = np.empty_like(depth)
    out[:, 0] = depth[:, 0]
    out[:, 1:] = depth[:, :1] + np.cumsum(proc[:, :-1], axis=1)
    return out


def pcgd_apply(depth, guide, params: CapoParams, spec_h: WindowSpec,
               spec_v: WindowSpec) -> np.ndarray:
    """Deform ``depth`` in the gradient domain under ``guide``.

    Both axes run the same shared-parameter operator; the vertical pass
    reuses the horizontal kernel on transposed grids, which makes the
    output exactly transpose-equivariant.  A single-row (or single-column)
    grid has no gradient along that axis and contributes its input
    unchanged.  Output is the mean of the two directional reconstructions.
    """
    depth = ensure_grid(depth, "depth")
    guide = ensure_grid(guide, "guide")
    ensure_same_shape(depth, guide, "depth and guide")
    _validate_specs(params, spec_h, spec_v)
    h, w = depth.shape
    horiz = _axis_forward(depth, guide, params, spec_h) if w >= 2 else depth.copy()
    vert = _axis_forward(depth.T, guide.T, params, spec_h).T if h >= 2 else depth.copy()
    out = 0.5 * (horiz + vert)
    if not np.isfinite(out).all():
        raise NumericError("gradient deformation produced non-finite values")
    return out


def _axis_backward(depth: np.ndarray, guide: np.ndarray, params: CapoParams,
                   spec: WindowSpec, d_out: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    d = _forward_diff_rows(depth)
    g_raw = _forward_diff_rows(guide)
    g = np.abs(g_raw)

    # integration: out[:, j] = depth[:, 0] + sum_{i<j} proc[:, i]
    d_anchor = d_out.sum(axis=1)
    rev = np.cumsum(d_out[:, ::-1], axis=1)[:, ::-1]      # rev[:, i] = sum_{j>=i}
    d_proc = np.zeros_like(d_out)
    d_proc[:, :-1] = rev[:, 1:]

    ds_pos, dg_pos, dp_pos = capo_backward(np.maximum(d, 0.0), g, params, spec, d_proc)
    ds_neg, dg_neg, dp_neg = capo_backward(np.maximum(-d, 0.0), g, params, spec, -d_proc)

    # sign split: at d == 0 the gradient flows to the positive stream
    d_d = np.where(d >= 0.0, ds_pos, -ds_neg)
    d_g_raw = (dg_pos + dg_neg) * np.sign(g_raw)

    d_depth = np.zeros_like(depth)
    d_depth[:, 1:] += d_d[:, :-1]                          # final diff column is constant 0
    d_depth[:, :-1] -= d_d[:, :-1]
    d_depth[:, 0] += d_anchor
    d_guide = np.zeros_like(guide)
    d_guide[:, 1:] += d_g_raw[:, :-1]
    d_guide[:, :-1] -= d_g_raw[:, :-1]
    d_params = [a + b for a, b in zip(dp_pos, dp_neg)]
    return d_depth, d_guide, d_params


def pcgd_backward(depth, guide, params: CapoParams, spec_h: WindowSpec,
                  spec_v: WindowSpec, upstream
                  ) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Exact reverse-mode gradients of :func:`pcgd_apply`.

    Parameter gradients accumulate over all four stream applications
    (two axes times two gradient signs).
    """
    depth = ensure_grid(depth, "depth")
    guide = ensure_grid(guide, "guide")
    ensure_same_shape(depth, guide, "depth and guide")
    _validate_specs(params, spec_h, spec_v)
    upstream = np.asarray(upstream, dtype=np.float64)
    ensure_same_shape(depth, upstream, "depth and upstream gradient")
    h, w = depth.shape
    d_half = 0.5 * upstream

    zero_params = [np.zeros_like(a) for a in params.arrays()]
    if w >= 2:
        dd_h, dg_h, dp_h = _axis_backward(depth, guide, params, spec_h, d_half)
    else:
        dd_h, dg_h, dp_h = d_half.copy(), np.zeros_like(guide), zero_params
    if h >= 2:
        dd_v, dg_v, dp_v = _axis_backward(depth.T, guide.T, params, spec_h, d_half.T)
        dd_v, dg_v = dd_v.T, dg_v.T
    else:
        dd_v, dg_v, dp_v = d_half.copy(), np.zeros_like(guide), zero_params

    d_depth = dd_h + dd_v
    d_guide = dg_h + dg_v
    d_params = [a + b for a, b in zip(dp_h, dp_v)]
    return d_depth, d_guide, d_params
