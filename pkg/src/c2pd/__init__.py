"""Guided depth upsampling by continuity-constrained deformation.

A low-resolution depth map is bicubically upsampled, then reshaped like a
continuous material: a volume-conserving windowed operator redistributes
values (and, in a second stage, sign-separated gradients) under a
cross-modal guidance grid, with exact reverse-mode gradients throughout.
"""

import os as _os

# Honor the C2PD_THREADS cap before any BLAS pools are spun up.
_threads = _os.environ.get("C2PD_THREADS")
if _threads:
    for _key in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_key, _threads)
del _os, _threads

from .errors import (C2pdError, ConfigError, FormatError, GridSizeError,  # noqa: E402
                     NumericError, ShapeMismatchError, TrainingDiverged, ValidationError)
from .grid import (WindowSet, WindowSpec, extract_windows, make_grid,  # noqa: E402
                   stable_sum, transpose)
from .capo import (CapoParams, VariationVector, capo_apply, capo_backward,  # noqa: E402
                   conserve, fit_variations, interaction)
from .pcgd import (GradientField, differentiate, guidance_gradient, integrate,  # noqa: E402
                   pcgd_apply, pcgd_backward)
from .guidance import (GuidanceSource, guidance_from_gt, guidance_from_rgb,  # noqa: E402
                       load_guidance)
from .resample import (BicubicKernel, bicubic_down, bicubic_up, mad_cm,  # noqa: E402
                       rmse_cm)
from .fileio import (read_depth, read_params, read_pfm, read_rgb,  # noqa: E402
                     write_depth, write_params, write_pfm, write_pgm)
from .pipeline import (PipelineConfig, load_pipeline_config,  # noqa: E402
                       predict_residual_rmse, run_pipeline)
from .optim import (LossReport, OptimState, TrainConfig, TrainResult,  # noqa: E402
                    adam_step, eval_heldout, grad_check, init_adam, l1_loss,
                    train_toy)

__version__ = "0.1.0"

__all__ = [
    "C2pdError", "ConfigError", "FormatError", "GridSizeError", "NumericError",
    "ShapeMismatchError", "TrainingDiverged", "ValidationError",
    "WindowSet", "WindowSpec", "extract_windows", "make_grid", "stable_sum", "transpose",
    "CapoParams", "VariationVector", "capo_apply", "capo_backward", "conserve",
    "fit_variations", "interaction",
    "GradientField", "differentiate", "guidance_gradient", "integrate",
    "pcgd_apply", "pcgd_backward",
    "GuidanceSource", "guidance_from_gt", "guidance_from_rgb", "load_guidance",
    "BicubicKernel", "bicubic_down", "bicubic_up", "mad_cm", "rmse_cm",
    "read_depth", "read_params", "read_pfm", "read_rgb",
    "write_depth", "write_params", "write_pfm", "write_pgm",
    "PipelineConfig", "load_pipeline_config", "predict_residual_rmse", "run_pipeline",
    "LossReport", "OptimState", "TrainConfig", "TrainResult",
    "adam_step", "eval_heldout", "grad_check", "init_adam", "l1_loss", "train_toy",
    "__version__",
]
