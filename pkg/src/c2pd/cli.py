"""Command-line front end for degradation, inference, training, and checks.

Exit codes are a stable contract: 0 success, 2 input/config error,
3 numeric failure, 4 training divergence (selftest failures exit 1).
All randomness flows from --seed; outputs depend only on inputs, config,
and parameter files.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .errors import C2pdError, ConfigError, NumericError, TrainingDiverged
from . import fileio
from .capo import CapoParams, capo_apply, capo_backward
from .grid import WindowSpec
from .guidance import load_guidance
from .optim import TrainConfig, eval_heldout, grad_check, train_toy
from .pcgd import pcgd_apply, pcgd_backward
from .pipeline import load_pipeline_config, read_config_file, run_pipeline
from .resample import bicubic_down, mad_cm, rmse_cm
from .selftest import _sign_safe_mask, run_selftest

EXIT_OK = 0
EXIT_SELFTEST_FAIL = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_DIVERGED = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c2pd",
                                     description="Guided depth upsampling by continuity-constrained deformation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="bicubic-downsample a ground-truth depth map")
    p.add_argument("--gt", required=True)
    p.add_argument("--factor", required=True, type=int, choices=(1, 2, 4, 8, 16, 32))
    p.add_argument("--out", required=True)
    p.add_argument("--unit", default="cm", choices=("m", "cm"))

    p = sub.add_parser("infer", help="upsample a depth map through the pipeline")
    p.add_argument("--lr", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--guide", help="guidance grid (PFM)")
    group.add_argument("--rgb", help="guidance RGB image (PPM)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="optional ground truth for metrics")
    p.add_argument("--viz", help="optional PGM visualization path")
    p.add_argument("--log", help="optional metrics CSV to append to")
    p.add_argument("--unit", default="cm", choices=("m", "cm"))

    p = sub.add_parser("train", help="toy training loop on synthetic scenes")
    p.add_argument("--config")
    p.add_argument("--steps", required=True, type=int)
    p.add_argument("--seed", default=0, type=int)
    p.add_argument("--out-params", required=True,
                   help="prefix; writes <prefix>.iso.params and <prefix>.pcgd.params")
    p.add_argument("--log", help="CSV training history path")

    p = sub.add_parser("eval", help="compare a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--log", help="optional metrics CSV to append to")
    p.add_argument("--unit", default="cm", choices=("m", "cm"))

    p = sub.add_parser("grad-check", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", default=0, type=int)

    sub.add_parser("selftest", help="run the built-in invariant suite")
    return parser


def _threads_env_ok() -> bool:
    value = os.environ.get("C2PD_THREADS")
    if value is None:
        return True
    try:
        return int(value) >= 1
    except ValueError:
        return False


def cmd_degrade(args) -> int:
    gt = fileio.read_depth(args.gt, unit=args.unit)
    lr = bicubic_down(gt, args.factor)
    fileio.write_depth(lr, args.out)
    print(f"degraded {gt.shape[0]}x{gt.shape[1]} -> {lr.shape[0]}x{lr.shape[1]} (factor {args.factor})")
    return EXIT_OK


def cmd_infer(args) -> int:
    config = load_pipeline_config(args.config)
    lr = fileio.read_depth(args.lr, unit=args.unit)
    if config.guidance.tag == "grayscale-gradient":
        if args.rgb is None:
            raise ConfigError("guidance.source=grayscale-gradient requires --rgb")
        guide_input = fileio.read_rgb(args.rgb)
    else:
        guide_path = args.guide or config.guidance.path
        if guide_path is None:
            raise ConfigError(f"guidance.source={config.guidance.tag} requires --guide "
                              "or guidance.path")
        guide_input = load_guidance(guide_path)
    out = run_pipeline(lr, guide_input, config)
    fileio.write_depth(out, args.out)
    if args.viz:
        fileio.write_pgm(out, args.viz)
    if args.gt:
        gt = fileio.read_depth(args.gt, unit=args.unit)
        rmse = rmse_cm(out, gt)
        mad = mad_cm(out, gt)
        print(f"rmse_cm={rmse!r} mad_cm={mad!r}")
        if args.log:
            fileio.append_metrics_csv(args.log, args.out, rmse, mad)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    overrides: dict = {"seed": args.seed}
    if args.config:
        cf = read_config_file(args.config)  # architecture only; params paths are outputs here
        overrides.update(
            scale=cf.scale,
            iso_enabled=cf.iso_enabled,
            iso_window=cf.iso_window,
            pcgd_window=cf.pcgd_window,
            pcgd_repeat=max(cf.pcgd_repeat, 1),
            padding=cf.padding,
            guidance="gt-oracle" if cf.guidance_source == "gt-oracle" else "grayscale-gradient",
        )
    return TrainConfig(**overrides)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    result = train_toy(cfg, steps=args.steps)
    prefix = Path(args.out_params)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if result.iso_params is not None:
        iso_path = prefix.with_name(prefix.name + ".iso.params")
        fileio.write_params(result.iso_params, iso_path)
        written.append(str(iso_path))
    pcgd_path = prefix.with_name(prefix.name + ".pcgd.params")
    fileio.write_params(result.pcgd_params, pcgd_path)
    written.append(str(pcgd_path))
    if args.log:
        fileio.write_history_csv(args.log, result.history)
    model_rmse, baseline_rmse = eval_heldout(cfg, result.iso_params, result.pcgd_params)
    last = result.history[-1]
    print(f"trained {args.steps} steps; final l1={last.l1!r} rmse={last.rmse!r}")
    print(f"held-out rmse_cm={model_rmse!r} baseline_rmse_cm={baseline_rmse!r}")
    print("wrote " + " ".join(written))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = fileio.read_depth(args.pred, unit=args.unit)
    gt = fileio.read_depth(args.gt, unit=args.unit)
    rmse = rmse_cm(pred, gt)
    mad = mad_cm(pred, gt)
    print(f"rmse_cm={rmse!r} mad_cm={mad!r}")
    if args.log:
        fileio.append_metrics_csv(args.log, args.pred, rmse, mad)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    spec_h, spec_v = WindowSpec((1, 4)), WindowSpec((4, 1))
    params = CapoParams.init(4, rng=rng)
    stream = rng.uniform(0, 1, (1, 8))
    guide = rng.uniform(0, 1, (1, 8))

    def capo_fwd(xs):
        return capo_apply(xs[0], xs[1], CapoParams.from_arrays(4, xs[2:]), spec_h)

    def capo_vjp(xs, upstream):
        ds, dg, dp = capo_backward(xs[0], xs[1], CapoParams.from_arrays(4, xs[2:]),
                                   spec_h, upstream)
        return [ds, dg, *dp]

    err_capo = grad_check(capo_fwd, capo_vjp, [stream, guide, *params.arrays()])

    depth = rng.uniform(0, 1, (8, 8))
    guide2 = rng.uniform(0, 1, (8, 8))

    def pcgd_fwd(xs):
        return pcgd_apply(xs[0], xs[1], CapoParams.from_arrays(4, xs[2:]), spec_h, spec_v)

    def pcgd_vjp(xs, upstream):
        dd, dg, dp = pcgd_backward(xs[0], xs[1], CapoParams.from_arrays(4, xs[2:]),
                                   spec_h, spec_v, upstream)
        return [dd, dg, *dp]

    masks = [_sign_safe_mask(depth), _sign_safe_mask(guide2)] + [None] * len(params.arrays())
    err_pcgd = grad_check(pcgd_fwd, pcgd_vjp, [depth, guide2, *params.arrays()], masks=masks)

    print(f"capo max rel error {err_capo!r}")
    print(f"pcgd max rel error {err_pcgd!r}")
    if max(err_capo, err_pcgd) > 1e-4:
        raise NumericError("gradient check exceeded the 1e-4 ceiling")
    return EXIT_OK


def cmd_selftest(_args) -> int:
    return EXIT_OK if run_selftest() else EXIT_SELFTEST_FAIL


_COMMANDS = {
    "degrade": cmd_degrade,
    "infer": cmd_infer,
    "train": cmd_train,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    if not _threads_env_ok():
        print(f"C2PD_THREADS must be a positive integer, got "
              f"{os.environ.get('C2PD_THREADS')!r}", file=sys.stderr)
        return EXIT_INPUT
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (C2pdError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
