"""Volume-conserving windowed deformation of a value stream under guidance.

For every window anchored at a grid position, a small shared network looks
at the 2n window values (n from the stream being deformed, n from the
guide) and proposes n raw per-position variations.  Mean-centering makes
each window's variations sum to zero, so a window redistributes value
without creating or destroying any.  Overlapping windows each deposit
their variation for a position, and the average of the n overlapping
contributions is added to the stream.

With circular padding every cell sits in exactly n windows and the total
grid sum is conserved to roundoff; replicate padding trades exact
conservation at the boundary for edge continuity and is the default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, NumericError, ValidationError
from .grid import WindowSpec, ensure_grid, ensure_same_shape, window_indices

DEFAULT_HIDDEN = (32, 32)


@dataclass(frozen=True)
class CapoParams:
    """Parameters of the variation-fitting network.

    ``layers`` is a tuple of (weight, bias) pairs; weights are (out, in)
    row-major float64.  The first layer consumes the 2n window values, the
    last emits n raw variations, and a tanh nonlinearity is applied after
    every layer except the last.  One CapoParams value may be shared by
    any number of concurrent forward/backward calls.
    """

    n: int
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self) -> None:
        n = int(self.n)
        if n < 1:
            raise ValidationError(f"window cardinality must be >= 1, got {n}")
        norm = []
        prev = 2 * n
        for i, (w, b) in enumerate(self.layers):
            # private copies: freezing must never flip a caller's array read-only
            w = np.array(w, dtype=np.float64, order="C")
            b = np.array(b, dtype=np.float64, order="C")
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValidationError(f"layer {i}: weight {w.shape} / bias {b.shape} malformed")
            if w.shape[1] != prev:
                raise ValidationError(f"layer {i}: expected input width {prev}, got {w.shape[1]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValidationError(f"layer {i}: non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            norm.append((w, b))
            prev = w.shape[0]
        if not norm:
            raise ValidationError("at least one layer is required")
        if prev != n:
            raise ValidationError(f"last layer must output {n} variations, got {prev}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "layers", tuple(norm))

    @classmethod
    def init(cls, n: int, hidden: tuple[int, ...] = DEFAULT_HIDDEN,
             rng: np.random.Generator | int = 0) -> "CapoParams":
        """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        dims = (2 * n, *hidden, n)
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            layers.append((w, np.zeros(fan_out)))
        return cls(n=n, layers=tuple(layers))

    @classmethod
    def zero(cls, n: int, hidden: tuple[int, ...] = DEFAULT_HIDDEN) -> "CapoParams":
        """All-zero network; turns the deformation into the identity map."""
        dims = (2 * n, *hidden, n)
        layers = tuple((np.zeros((fan_out, fan_in)), np.zeros(fan_out))
                       for fan_in, fan_out in zip(dims[:-1], dims[1:]))
        return cls(n=n, layers=layers)

    def arrays(self) -> list[np.ndarray]:
        """Flat [w0, b0, w1, b1, ...] view used by the optimizer."""
        out: list[np.ndarray] = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, n: int, arrays: list[np.ndarray]) -> "CapoParams":
        if len(arrays) % 2 != 0:
            raise ValidationError("expected an even number of arrays (weight/bias pairs)")
        layers = tuple((arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2))
        return cls(n=n, layers=layers)


@dataclass(frozen=True)
class VariationVector:
    """Raw and mean-centered target variations for one window."""

    raw: np.ndarray
    normalized: np.ndarray


def _mlp_forward(x: np.ndarray, layers) -> list[np.ndarray]:
    """Activations per layer; tanh on all but the last layer's output."""
    acts = [x]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w.T + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def _mlp_backward(acts: list[np.ndarray], layers, d_out: np.ndarray
                  ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gradients of a batched forward pass; returns (d_input, [dw0, db0, ...])."""
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(layers))
    delta = d_out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ w
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)  # tanh' through layer i-1's output
    return delta, grads


def interaction(window_values, params: CapoParams) -> np.ndarray:
    """Raw per-position variations for one window (or a batch of windows).

    A deterministic, infinitely differentiable function of the 2n window
    values (stream first, then guide) and the parameters.
    """
    x = np.asarray(window_values, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != 2 * params.n:
        raise ShapeMismatchError(
            f"window values must have length {2 * params.n}, got shape {np.shape(window_values)}")
    raw = _mlp_forward(x, params.layers)[-1]
    return raw[0] if single else raw


def conserve(raw) -> np.ndarray:
    """Mean-center raw variations so each window redistributes, never adds.

    Accepts one vector or a batch (variations along the last axis).
    """
    arr = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NumericError("variations must be finite")
    return arr - arr.mean(axis=-1, keepdims=True)


def fit_variations(window_values, params: CapoParams) -> VariationVector:
    """Interaction plus conservation for a single window."""
    raw = interaction(window_values, params)
    return VariationVector(raw=raw, normalized=conserve(raw))


def _validate_apply_args(stream, guide, params: CapoParams, spec: WindowSpec):
    stream = ensure_grid(stream, "stream")
    guide = ensure_grid(guide, "guide")
    ensure_same_shape(stream, guide, "stream and guide")
    if params.n != spec.n:
        raise ShapeMismatchError(f"params fit n={params.n} windows but spec has n={spec.n}")
    return stream, guide


def capo_apply(stream, guide, params: CapoParams, spec: WindowSpec) -> np.ndarray:
    """Deform ``stream`` under ``guide``: out = stream + overlap-averaged variations.

    Every window deposits its mean-centered variation at the window's own
    coordinates; each cell accumulates its n overlapping deposits in
    ascending anchor order and receives their 1/n-scaled sum.
    """
    stream, guide = _validate_apply_args(stream, guide, params, spec)
    h, w = stream.shape
    idx = window_indices(h, w, spec)
    x = np.concatenate([stream.ravel()[idx], guide.ravel()[idx]], axis=1)
    raw = _mlp_forward(x, params.layers)[-1]
    var = conserve(raw)
    acc = np.zeros(h * w)
    np.add.at(acc, idx.reshape(-1), var.reshape(-1))
    out = stream + acc.reshape(h, w) / spec.n
    if not np.isfinite(out).all():
        raise NumericError("deformation produced non-finite values")
    return out


def capo_backward(stream, guide, params: CapoParams, spec: WindowSpec, upstream
                  ) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Exact reverse-mode gradients of :func:`capo_apply`.

    Returns (d_stream, d_guide, d_params) where d_params is a flat list
    aligned with ``params.arrays()``.
    """
    stream, guide = _validate_apply_args(stream, guide, params, spec)
    upstream = np.asarray(upstream, dtype=np.float64)
    ensure_same_shape(stream, upstream, "stream and upstream gradient")
    h, w = stream.shape
    n = spec.n
    idx = window_indices(h, w, spec)
    x = np.concatenate([stream.ravel()[idx], guide.ravel()[idx]], axis=1)
    acts = _mlp_forward(x, params.layers)

    d_var = upstream.ravel()[idx] / n                     # gather per-slot upstream
    d_raw = d_var - d_var.mean(axis=1, keepdims=True)     # mean-centering is symmetric
    d_x, d_params = _mlp_backward(acts, params.layers, d_raw)

    d_stream = upstream.copy()
    flat = np.zeros(h * w)
    np.add.at(flat, idx.reshape(-1), d_x[:, :n].reshape(-1))
    d_stream += flat.reshape(h, w)
    flat = np.zeros(h * w)
    np.add.at(flat, idx.reshape(-1), d_x[:, n:].reshape(-1))
    d_guide = flat.reshape(h, w)
    return d_stream, d_guide, d_params
