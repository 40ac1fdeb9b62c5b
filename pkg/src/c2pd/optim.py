"""L1 objective, Adam updates, gradient verification, and toy training.

The toy loop trains both deformation stages jointly by reverse-mode
differentiation through the full pipeline on synthetic piecewise-constant
scenes: axis-aligned rectangles at random depths between 20 and 200 cm,
the kind of step discontinuity that blurs most under bicubic upsampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .capo import CapoParams, capo_apply, capo_backward
from .errors import ShapeMismatchError, TrainingDiverged, ValidationError
from .grid import WindowSpec, ensure_grid, ensure_same_shape
from .guidance import guidance_from_gt, guidance_from_rgb
from .pcgd import pcgd_apply, pcgd_backward
from .resample import bicubic_down, bicubic_up, rmse_cm


@dataclass(frozen=True)
class LossReport:
    step: int
    l1: float
    rmse: float


@dataclass(frozen=True)
class OptimState:
    """Adam accumulators; one (m, v) pair per parameter array."""

    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]


def l1_loss(out, gt) -> tuple[float, np.ndarray]:
    """Mean absolute error and its subgradient (sign(0) = 0)."""
    out = ensure_grid(out, "out")
    gt = ensure_grid(gt, "gt")
    ensure_same_shape(out, gt, "out and gt")
    diff = out - gt
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


def init_adam(params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> OptimState:
    m = tuple(np.zeros_like(p) for p in params)
    v = tuple(np.zeros_like(p) for p in params)
    return OptimState(step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps, m=m, v=v)


def adam_step(params, grads, state: OptimState) -> tuple[list[np.ndarray], OptimState]:
    """One bias-corrected Adam update; deterministic, returns fresh arrays."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ShapeMismatchError("params, grads and optimizer state disagree in length")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    next_state = OptimState(step=t, lr=state.lr, beta1=b1, beta2=b2, eps=state.eps,
                            m=tuple(new_m), v=tuple(new_v))
    return new_params, next_state


def grad_check(forward, vjp, inputs, masks=None, eps: float = 1e-6,
               probe_seed: int = 0) -> float:
    """Max masked relative error of analytic gradients vs central differences.

    ``forward(xs)`` maps a list of arrays to an output grid; ``vjp(xs, u)``
    returns one gradient array per input.  ``masks`` (same structure as
    ``inputs``, True = check) excludes elements whose perturbation would
    cross a non-smooth point.  Errors are |a - n| / max(|a|, |n|, 1).
    """
    xs = [np.array(x, dtype=np.float64) for x in inputs]
    if masks is None:
        masks = [None] * len(xs)
    probe_shape = forward(xs).shape
    probe = np.random.default_rng(probe_seed).choice([-1.0, 1.0], size=probe_shape)
    analytic = vjp(xs, probe)

    def objective() -> float:
        return float(np.vdot(forward(xs), probe))

    worst = 0.0
    for x, a, mask in zip(xs, analytic, masks):
        a = np.asarray(a, dtype=np.float64)
        if a.shape != x.shape:
            raise ShapeMismatchError(f"vjp shape {a.shape} != input shape {x.shape}")
        for j in np.ndindex(x.shape):
            if mask is not None and not mask[j]:
                continue
            orig = x[j]
            x[j] = orig + eps
            f_plus = objective()
            x[j] = orig - eps
            f_minus = objective()
            x[j] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            err = abs(a[j] - numeric) / max(abs(a[j]), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst


@dataclass(frozen=True)
class TrainConfig:
    """Dataset spec plus architecture and optimizer settings for the toy loop."""

    scene_size: int = 48
    scale: int = 4
    depth_range: tuple[float, float] = (20.0, 200.0)
    rect_count: tuple[int, int] = (1, 4)
    guidance: str = "gt-oracle"          # or "grayscale-gradient"
    iso_enabled: bool = True
    iso_window: str = "3x3"
    pcgd_window: str = "1x4"
    pcgd_repeat: int = 1
    padding: str = "replicate"
    hidden: tuple[int, ...] = (32, 32)
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_accum: int = 1
    num_scenes: int = 0                  # 0 = a fresh random scene every step
    augment: bool = True

    def __post_init__(self) -> None:
        if self.guidance not in ("gt-oracle", "grayscale-gradient"):
            raise ValidationError(f"unsupported training guidance {self.guidance!r}")
        if self.scene_size % self.scale:
            raise ValidationError("scene size must be divisible by the scale factor")
        if self.grad_accum < 1:
            raise ValidationError("grad_accum must be >= 1")

    @property
    def iso_spec(self) -> WindowSpec:
        return WindowSpec.parse(self.iso_window, self.padding)

    @property
    def pcgd_spec_h(self) -> WindowSpec:
        return WindowSpec.parse(self.pcgd_window, self.padding)

    @property
    def pcgd_spec_v(self) -> WindowSpec:
        return self.pcgd_spec_h.transposed()


@dataclass
class TrainResult:
    iso_params: CapoParams | None
    pcgd_params: CapoParams
    history: list[LossReport] = field(default_factory=list)


def make_scene(rng: np.random.Generator, size: int = 48,
               depth_range: tuple[float, float] = (20.0, 200.0),
               rect_count: tuple[int, int] = (1, 4)) -> tuple[np.ndarray, np.ndarray]:
    """One synthetic scene: depth rectangles plus an aligned random-color image."""
    lo, hi = depth_range
    gt = np.full((size, size), rng.uniform(lo, hi))
    rgb = np.empty((size, size, 3))
    rgb[:] = rng.uniform(0.05, 0.95, size=3)
    for _ in range(int(rng.integers(rect_count[0], rect_count[1] + 1))):
        rh = int(rng.integers(max(2, size // 8), size // 2 + 1))
        rw = int(rng.integers(max(2, size // 8), size // 2 + 1))
        r0 = int(rng.integers(0, size - rh + 1))
        c0 = int(rng.integers(0, size - rw + 1))
        gt[r0:r0 + rh, c0:c0 + rw] = rng.uniform(lo, hi)
        rgb[r0:r0 + rh, c0:c0 + rw] = rng.uniform(0.05, 0.95, size=3)
    return gt, rgb


def _augment(rng: np.random.Generator, gt: np.ndarray, rgb: np.ndarray
             ) -> tuple[np.ndarray, np.ndarray]:
    k = int(rng.integers(4))
    gt = np.rot90(gt, k).copy()
    rgb = np.rot90(rgb, k).copy()
    if rng.integers(2):
        gt, rgb = gt[:, ::-1].copy(), rgb[:, ::-1].copy()
    if rng.integers(2):
        gt, rgb = gt[::-1, :].copy(), rgb[::-1, :].copy()
    return gt, rgb


def _scene_guidance(cfg: TrainConfig, gt: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    if cfg.guidance == "gt-oracle":
        return guidance_from_gt(gt)
    return guidance_from_rgb(rgb)


def _forward_backward(cfg: TrainConfig, iso: CapoParams | None, pcgd: CapoParams,
                      up: np.ndarray, guide: np.ndarray, gt: np.ndarray
                      ) -> tuple[float, float, list[np.ndarray]]:
    """One scene's loss, rmse, and parameter gradients (iso first, then pcgd)."""
    depth = capo_apply(up, guide, iso, cfg.iso_spec) if iso is not None else up
    states = [depth]
    for _ in range(cfg.pcgd_repeat):
        depth = pcgd_apply(depth, guide, pcgd, cfg.pcgd_spec_h, cfg.pcgd_spec_v)
        states.append(depth)

    loss, d_depth = l1_loss(states[-1], gt)
    d_pcgd = [np.zeros_like(a) for a in pcgd.arrays()]
    for i in range(cfg.pcgd_repeat - 1, -1, -1):
        d_depth, _, dp = pcgd_backward(states[i], guide, pcgd,
                                       cfg.pcgd_spec_h, cfg.pcgd_spec_v, d_depth)
        d_pcgd = [a + b for a, b in zip(d_pcgd, dp)]
    d_iso: list[np.ndarray] = []
    if iso is not None:
        _, _, d_iso = capo_backward(up, guide, iso, cfg.iso_spec, d_depth)
    return loss, rmse_cm(states[-1], gt), d_iso + d_pcgd


def train_toy(cfg: TrainConfig, steps: int) -> TrainResult:
    """Train both stages with Adam on synthetic scenes; fixed seed, fixed history.

    Raises :class:`TrainingDiverged` if the objective becomes non-finite.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    iso = CapoParams.init(cfg.iso_spec.n, cfg.hidden, rng) if cfg.iso_enabled else None
    pcgd = CapoParams.init(cfg.pcgd_spec_h.n, cfg.hidden, rng)

    pool = None
    if cfg.num_scenes > 0:
        pool = [make_scene(rng, cfg.scene_size, cfg.depth_range, cfg.rect_count)
                for _ in range(cfg.num_scenes)]

    n_iso = len(iso.arrays()) if iso is not None else 0
    arrays = (iso.arrays() if iso is not None else []) + pcgd.arrays()
    state = init_adam(arrays, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    history: list[LossReport] = []
    for step in range(1, steps + 1):
        grads = [np.zeros_like(a) for a in arrays]
        loss_sum = 0.0
        rmse_sum = 0.0
        for k in range(cfg.grad_accum):
            if pool is not None:
                gt, rgb = pool[((step - 1) * cfg.grad_accum + k) % len(pool)]
            else:
                gt, rgb = make_scene(rng, cfg.scene_size, cfg.depth_range, cfg.rect_count)
            if cfg.augment:
                gt, rgb = _augment(rng, gt, rgb)
            guide = _scene_guidance(cfg, gt, rgb)
            up = bicubic_up(bicubic_down(gt, cfg.scale), cfg.scale)
            loss, rmse, scene_grads = _forward_backward(cfg, iso, pcgd, up, guide, gt)
            loss_sum += loss
            rmse_sum += rmse
            grads = [a + b for a, b in zip(grads, scene_grads)]
        loss_mean = loss_sum / cfg.grad_accum
        if not np.isfinite(loss_mean):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        grads = [g / cfg.grad_accum for g in grads]
        arrays, state = adam_step(arrays, grads, state)
        if iso is not None:
            iso = CapoParams.from_arrays(cfg.iso_spec.n, arrays[:n_iso])
        pcgd = CapoParams.from_arrays(cfg.pcgd_spec_h.n, arrays[n_iso:])
        history.append(LossReport(step=step, l1=loss_mean, rmse=rmse_sum / cfg.grad_accum))
    return TrainResult(iso_params=iso, pcgd_params=pcgd, history=history)


def eval_heldout(cfg: TrainConfig, iso: CapoParams | None, pcgd: CapoParams,
                 n_scenes: int = 16, seed: int = 9001) -> tuple[float, float]:
    """Mean RMSE of the trained pipeline vs the bicubic baseline on fresh scenes."""
    rng = np.random.default_rng(seed)
    model_total = 0.0
    baseline_total = 0.0
    for _ in range(n_scenes):
        gt, rgb = make_scene(rng, cfg.scene_size, cfg.depth_range, cfg.rect_count)
        guide = _scene_guidance(cfg, gt, rgb)
        up = bicubic_up(bicubic_down(gt, cfg.scale), cfg.scale)
        depth = capo_apply(up, guide, iso, cfg.iso_spec) if iso is not None else up
        for _ in range(cfg.pcgd_repeat):
            depth = pcgd_apply(depth, guide, pcgd, cfg.pcgd_spec_h, cfg.pcgd_spec_v)
        model_total += rmse_cm(depth, gt)
        baseline_total += rmse_cm(up, gt)
    return model_total / n_scenes, baseline_total / n_scenes
