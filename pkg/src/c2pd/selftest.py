"""Built-in invariant suite backing the CLI's selftest command.

Each check re-derives a contract from scratch at small scale: conservation
under circular padding, identity of the zero network, differentiation
round trips, locality radii, transpose equivariance, gradient checks, the
bicubic kernel's partition of unity, and file round trips.  The checks
deliberately call the public module-level operations so a regression in
any of them is caught here.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import capo as capo_mod
from . import fileio
from .capo import CapoParams
from .grid import WindowSpec, stable_sum, transpose
from .optim import grad_check
from .pcgd import differentiate, integrate, pcgd_apply, pcgd_backward
from .resample import BicubicKernel, bicubic_up


def _random_params(n: int, rng: np.random.Generator) -> CapoParams:
    return CapoParams.init(n, rng=rng)


def check_conservation() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(30):
        shape = [(1, 4), (4, 1), (3, 3)][trial % 3]
        spec = WindowSpec(shape, "circular")
        h, w = int(rng.integers(5, 17)), int(rng.integers(5, 17))
        stream = rng.uniform(0, 100, (h, w))
        guide = rng.uniform(0, 1, (h, w))
        out = capo_mod.capo_apply(stream, guide, _random_params(spec.n, rng), spec)
        drift = abs(stable_sum(out) - stable_sum(stream))
        worst = max(worst, drift / max(1.0, stable_sum(np.abs(stream))))
    return worst <= 1e-9, f"max relative sum drift {worst:.3g}"


def check_identity() -> tuple[bool, str]:
    rng = np.random.default_rng(12)
    depth = rng.uniform(0, 100, (32, 32))
    guide = rng.uniform(0, 1, (32, 32))
    zero4 = CapoParams.zero(4)
    err_capo = np.max(np.abs(capo_mod.capo_apply(depth, guide, zero4, WindowSpec((1, 4))) - depth))
    err_pcgd = np.max(np.abs(
        pcgd_apply(depth, guide, zero4, WindowSpec((1, 4)), WindowSpec((4, 1))) - depth))
    err = max(err_capo, err_pcgd)
    return err <= 1e-12, f"max abs deviation {err:.3g}"


def check_roundtrip() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(20):
        grid = rng.uniform(0, 1, (32, 32))
        for axis in ("horizontal", "vertical"):
            worst = max(worst, np.max(np.abs(integrate(differentiate(grid, axis)) - grid)))
    return worst <= 1e-12, f"max abs roundtrip error {worst:.3g}"


def check_locality() -> tuple[bool, str]:
    rng = np.random.default_rng(14)
    spec = WindowSpec((1, 4))
    params = _random_params(4, rng)
    stream = rng.uniform(0, 10, (1, 24))
    guide = rng.uniform(0, 1, (1, 24))
    base = capo_mod.capo_apply(stream, guide, params, spec)
    ok = True
    for p in range(24):
        bumped = stream.copy()
        bumped[0, p] += 1.0
        out = capo_mod.capo_apply(bumped, guide, params, spec)
        far = np.abs(np.arange(24) - p) > 3
        ok = ok and bool(np.all(out[0, far] == base[0, far]))
    return ok, "outputs beyond distance 3 bit-identical"


def check_transpose_equivariance() -> tuple[bool, str]:
    rng = np.random.default_rng(15)
    spec_h, spec_v = WindowSpec((1, 4)), WindowSpec((4, 1))
    worst = 0.0
    for _ in range(5):
        depth = rng.uniform(0, 100, (16, 16))
        guide = rng.uniform(0, 1, (16, 16))
        params = _random_params(4, rng)
        a = pcgd_apply(transpose(depth), transpose(guide), params, spec_h, spec_v)
        b = transpose(pcgd_apply(depth, guide, params, spec_h, spec_v))
        worst = max(worst, np.max(np.abs(a - b)))
    return worst <= 1e-9, f"max abs deviation {worst:.3g}"


def check_gradcheck_capo() -> tuple[bool, str]:
    rng = np.random.default_rng(16)
    spec = WindowSpec((1, 4))
    params = _random_params(4, rng)
    stream = rng.uniform(0, 1, (1, 8))
    guide = rng.uniform(0, 1, (1, 8))

    def forward(xs):
        p = CapoParams.from_arrays(4, xs[2:])
        return capo_mod.capo_apply(xs[0], xs[1], p, spec)

    def vjp(xs, upstream):
        p = CapoParams.from_arrays(4, xs[2:])
        ds, dg, dp = capo_mod.capo_backward(xs[0], xs[1], p, spec, upstream)
        return [ds, dg, *dp]

    err = grad_check(forward, vjp, [stream, guide, *params.arrays()])
    return err <= 1e-4, f"max rel gradient error {err:.3g}"


def check_gradcheck_pcgd() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    spec_h, spec_v = WindowSpec((1, 4)), WindowSpec((4, 1))
    params = _random_params(4, rng)
    depth = rng.uniform(0, 1, (6, 6))
    guide = rng.uniform(0, 1, (6, 6))

    def forward(xs):
        p = CapoParams.from_arrays(4, xs[2:])
        return pcgd_apply(xs[0], xs[1], p, spec_h, spec_v)

    def vjp(xs, upstream):
        p = CapoParams.from_arrays(4, xs[2:])
        dd, dg, dp = pcgd_backward(xs[0], xs[1], p, spec_h, spec_v, upstream)
        return [dd, dg, *dp]

    masks = [_sign_safe_mask(depth), _sign_safe_mask(guide)]
    masks += [None] * len(params.arrays())
    err = grad_check(forward, vjp, [depth, guide, *params.arrays()], masks=masks)
    return err <= 1e-4, f"max rel gradient error {err:.3g}"


def _sign_safe_mask(grid: np.ndarray, margin: float = 1e-5) -> np.ndarray:
    """Cells whose perturbation cannot flip an adjacent forward-difference sign."""
    h, w = grid.shape
    dh = np.zeros((h, w))
    dh[:, :-1] = grid[:, 1:] - grid[:, :-1]
    dv = np.zeros((h, w))
    dv[:-1, :] = grid[1:, :] - grid[:-1, :]
    ok = np.ones((h, w), dtype=bool)
    near_h = np.abs(dh) < margin
    near_v = np.abs(dv) < margin
    ok[:, :-1] &= ~near_h[:, :-1]
    ok[:, 1:] &= ~near_h[:, :-1]
    ok[:-1, :] &= ~near_v[:-1, :]
    ok[1:, :] &= ~near_v[:-1, :]
    return ok


def check_kernel_partition() -> tuple[bool, str]:
    kernel = BicubicKernel()
    rng = np.random.default_rng(18)
    phases = rng.uniform(0, 1, 200)
    drift = np.max(np.abs(kernel.weights(phases).sum(axis=-1) - 1.0))
    ref = np.array([-0.0625, 0.5625, 0.5625, -0.0625])
    half = np.max(np.abs(kernel.weights(0.5) - ref))
    ok = drift <= 1e-12 and half <= 1e-12
    return ok, f"partition drift {drift:.3g}, phase-0.5 deviation {half:.3g}"


def check_ramp_reproduction() -> tuple[bool, str]:
    row = np.arange(16, dtype=np.float64)[None, :] * 2.5 + 3.0
    up = bicubic_up(row, 4)
    s = (np.arange(up.shape[1]) + 0.5) / 4 - 0.5
    interior = (s >= 1.0) & (s <= 13.0)
    err = np.max(np.abs(up[0, interior] - (s[interior] * 2.5 + 3.0)))
    return err <= 1e-10, f"max abs ramp error {err:.3g}"


def check_io_roundtrip() -> tuple[bool, str]:
    rng = np.random.default_rng(19)
    with tempfile.TemporaryDirectory() as tmp:
        grid = rng.uniform(0, 500, (9, 7))
        pfm = Path(tmp) / "grid.pfm"
        fileio.write_pfm(grid, pfm)
        back = fileio.read_pfm(pfm)
        pfm_ok = np.array_equal(back, grid.astype(np.float32).astype(np.float64))

        params = CapoParams.init(4, rng=rng)
        ppath = Path(tmp) / "net.params"
        fileio.write_params(params, ppath)
        loaded = fileio.read_params(ppath)
        params_ok = all(np.array_equal(a, b)
                        for a, b in zip(params.arrays(), loaded.arrays()))
    return pfm_ok and params_ok, "bit-exact PFM and parameter round trips"


CHECKS = (
    ("conservation(circular)", check_conservation),
    ("identity(zero-network)", check_identity),
    ("roundtrip(diff-integrate)", check_roundtrip),
    ("locality(window-radius)", check_locality),
    ("transpose-equivariance", check_transpose_equivariance),
    ("gradcheck(value-op)", check_gradcheck_capo),
    ("gradcheck(gradient-op)", check_gradcheck_pcgd),
    ("bicubic(partition-of-unity)", check_kernel_partition),
    ("bicubic(linear-ramp)", check_ramp_reproduction),
    ("io(round-trips)", check_io_roundtrip),
)


def run_selftest(echo=print) -> bool:
    """Run every check, print one PASS/FAIL line each, return overall health."""
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok = all_ok and ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return all_ok
