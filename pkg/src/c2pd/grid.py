"""Dense 2-D grids, window extraction, and deterministic accumulation.

Grids are plain float64 ``numpy`` arrays of shape ``(height, width)``,
treated as immutable values: no public operation mutates its inputs, and
every operation returns a fresh array.  Depth grids hold centimeters;
guidance grids hold unitless magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GridSizeError, NumericError, ShapeMismatchError, ValidationError

# Window geometry.  1x4 / 4x1 windows trail their anchor (the anchor is the
# last of four adjacent positions); 3x3 windows are centered on it.  Offset
# order fixes the value ordering inside a window and is part of the stable
# contract: ascending coordinates for the 1-D shapes, row-major for 3x3.
_OFFSETS: dict[tuple[int, int], tuple[tuple[int, int], ...]] = {
    (1, 4): ((0, -3), (0, -2), (0, -1), (0, 0)),
    (4, 1): ((-3, 0), (-2, 0), (-1, 0), (0, 0)),
    (3, 3): tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)),
}

PADDINGS = ("replicate", "circular")


@dataclass(frozen=True)
class WindowSpec:
    """Shape and boundary rule of the sliding windows an operator uses."""

    shape: tuple[int, int]
    padding: str = "replicate"

    def __post_init__(self) -> None:
        shape = (int(self.shape[0]), int(self.shape[1]))
        object.__setattr__(self, "shape", shape)
        if shape not in _OFFSETS:
            raise ValidationError(f"unsupported window shape {shape}; expected 1x4, 4x1 or 3x3")
        if self.padding not in PADDINGS:
            raise ValidationError(f"unknown padding {self.padding!r}; expected one of {PADDINGS}")

    @property
    def n(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def offsets(self) -> tuple[tuple[int, int], ...]:
        return _OFFSETS[self.shape]

    @property
    def name(self) -> str:
        return f"{self.shape[0]}x{self.shape[1]}"

    def transposed(self) -> "WindowSpec":
        return WindowSpec((self.shape[1], self.shape[0]), self.padding)

    @classmethod
    def parse(cls, name: str, padding: str = "replicate") -> "WindowSpec":
        parts = name.lower().split("x")
        if len(parts) != 2:
            raise ValidationError(f"cannot parse window shape {name!r}")
        try:
            shape = (int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ValidationError(f"cannot parse window shape {name!r}") from exc
        return cls(shape, padding)


@dataclass(frozen=True)
class WindowSet:
    """All windows over a (stream, guide) grid pair.

    ``coords[t, k]`` is the k-th grid coordinate of the window anchored at
    the t-th position (anchors enumerated row-major).  ``values[t]`` holds
    the 2n sampled values: stream values in coordinate order, then guide
    values in the same order.
    """

    spec: WindowSpec
    coords: np.ndarray  # (anchors, n, 2) int64
    values: np.ndarray  # (anchors, 2n) float64


def ensure_grid(values, name: str = "grid") -> np.ndarray:
    """Validate and return ``values`` as a float64 2-D array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise GridSizeError(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite values")
    return arr


def ensure_same_shape(a: np.ndarray, b: np.ndarray, what: str = "grids") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} disagree on dimensions: {a.shape} vs {b.shape}")


def make_grid(height: int, width: int, fill: float) -> np.ndarray:
    """Constant grid of the given size."""
    if height < 1 or width < 1:
        raise GridSizeError(f"grid dimensions must be >= 1, got {height}x{width}")
    fill = float(fill)
    if not np.isfinite(fill):
        raise NumericError(f"fill value must be finite, got {fill}")
    return np.full((int(height), int(width)), fill, dtype=np.float64)


def transpose(grid) -> np.ndarray:
    """Swap rows and columns; applying twice is the identity."""
    return ensure_grid(grid).T.copy()


def stable_sum(values) -> float:
    """Left-to-right sequential sum in index order.

    The accumulation order is fixed as ((v0 + v1) + v2) + ..., so the result
    is bit-identical across runs regardless of any internal parallelism in
    the callers that rely on this contract.  Empty input sums to 0.0.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size and not np.isfinite(arr).all():
        raise NumericError("stable_sum requires finite inputs")
    total = 0.0
    for v in arr.tolist():
        total += v
    return total


@lru_cache(maxsize=64)
def _window_index_cache(height: int, width: int, shape: tuple[int, int], padding: str
                        ) -> tuple[np.ndarray, np.ndarray]:
    off = np.asarray(_OFFSETS[shape], dtype=np.int64)
    rows = np.arange(height, dtype=np.int64)[:, None, None] + off[None, None, :, 0]
    cols = np.arange(width, dtype=np.int64)[None, :, None] + off[None, None, :, 1]
    rows = np.broadcast_to(rows, (height, width, off.shape[0]))
    cols = np.broadcast_to(cols, (height, width, off.shape[0]))
    if padding == "replicate":
        rows = np.clip(rows, 0, height - 1)
        cols = np.clip(cols, 0, width - 1)
    else:
        rows = np.mod(rows, height)
        cols = np.mod(cols, width)
    coords = np.stack([rows, cols], axis=-1).reshape(height * width, -1, 2)
    flat = (rows * width + cols).reshape(height * width, -1)
    coords.setflags(write=False)
    flat.setflags(write=False)
    return coords, flat


def window_coords(height: int, width: int, spec: WindowSpec) -> np.ndarray:
    """Per-anchor window coordinates, shape (height*width, n, 2)."""
    return _window_index_cache(height, width, spec.shape, spec.padding)[0]


def window_indices(height: int, width: int, spec: WindowSpec) -> np.ndarray:
    """Per-anchor flat grid indices, shape (height*width, n).

    Anchors are enumerated row-major over the grid; the flattened (anchor,
    slot) order is the ascending-anchor accumulation order used by the
    overlap scatter (see the stable_sum contract).
    """
    return _window_index_cache(height, width, spec.shape, spec.padding)[1]


def extract_windows(stream, guide, spec: WindowSpec) -> WindowSet:
    """Sample every window of ``spec`` over a stream grid and its guide."""
    stream = ensure_grid(stream, "stream")
    guide = ensure_grid(guide, "guide")
    ensure_same_shape(stream, guide, "stream and guide")
    h, w = stream.shape
    coords = window_coords(h, w, spec)
    idx = window_indices(h, w, spec)
    values = np.concatenate([stream.ravel()[idx], guide.ravel()[idx]], axis=1)
    return WindowSet(spec=spec, coords=coords, values=values)
