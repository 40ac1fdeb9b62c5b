"""Pipeline staging: upsample, value-domain deformation, gradient-domain deformation.

All deformation happens at the target resolution: the low-resolution depth
is bicubically upsampled first, the isovolumetric stage reshapes its
values directly under the guidance grid, and the gradient stage then runs
zero or more times on its forward differences.  With both stages disabled
the pipeline is exactly bicubic upsampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .capo import CapoParams, capo_apply
from .errors import ConfigError, NumericError, ShapeMismatchError
from .fileio import read_params
from .grid import WindowSpec, ensure_grid
from .guidance import GuidanceSource, guidance_from_gt, guidance_from_rgb
from .pcgd import pcgd_apply
from .resample import bicubic_up, rmse_cm

MAX_PCGD_REPEAT = 8

CONFIG_KEYS = ("scale", "iso.enabled", "iso.window", "iso.params_path",
               "pcgd.repeat", "pcgd.window", "pcgd.params_path",
               "guidance.source", "guidance.path", "padding")

_DEFAULTS = {
    "scale": "4",
    "iso.enabled": "true",
    "iso.window": "3x3",
    "pcgd.repeat": "1",
    "pcgd.window": "1x4",
    "guidance.source": "grayscale-gradient",
    "padding": "replicate",
}


@dataclass(frozen=True)
class ConfigFile:
    """Raw key=value configuration; parameter paths not yet loaded."""

    scale: int
    iso_enabled: bool
    iso_window: str
    iso_params_path: str | None
    pcgd_repeat: int
    pcgd_window: str
    pcgd_params_path: str | None
    guidance_source: str
    guidance_path: str | None
    padding: str
    base_dir: Path


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved pipeline settings with parameter sets already loaded."""

    scale: int = 4
    iso_enabled: bool = True
    iso_spec: WindowSpec = WindowSpec((3, 3))
    iso_params: CapoParams | None = None
    pcgd_repeat: int = 1
    pcgd_spec_h: WindowSpec = WindowSpec((1, 4))
    pcgd_params: CapoParams | None = None
    guidance: GuidanceSource = GuidanceSource("grayscale-gradient")

    def __post_init__(self) -> None:
        scale = int(self.scale)
        if scale < 2 or scale & (scale - 1):
            raise ConfigError(f"scale must be a power of two >= 2, got {scale}")
        if not 0 <= int(self.pcgd_repeat) <= MAX_PCGD_REPEAT:
            raise ConfigError(f"pcgd.repeat must be within [0, {MAX_PCGD_REPEAT}]")
        if self.iso_enabled and self.iso_params is None:
            raise ConfigError("iso stage is enabled but iso.params_path gave no parameters")
        if self.pcgd_repeat > 0 and self.pcgd_params is None:
            raise ConfigError("pcgd.repeat > 0 but pcgd.params_path gave no parameters")
        if self.iso_params is not None and self.iso_params.n != self.iso_spec.n:
            raise ConfigError(
                f"iso parameters fit n={self.iso_params.n}, window needs {self.iso_spec.n}")
        if self.pcgd_params is not None and self.pcgd_params.n != self.pcgd_spec_h.n:
            raise ConfigError(
                f"pcgd parameters fit n={self.pcgd_params.n}, window needs {self.pcgd_spec_h.n}")

    @property
    def pcgd_spec_v(self) -> WindowSpec:
        return self.pcgd_spec_h.transposed()


def _parse_bool(value: str, key: str) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {value!r}")


def parse_config_text(text: str, base_dir: str | Path = ".") -> ConfigFile:
    """Parse flat key=value configuration text (UTF-8, '#' comments).

    Unknown and duplicate keys are errors, catching typos early.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    merged = {**_DEFAULTS, **raw}
    try:
        scale = int(merged["scale"])
        repeat = int(merged["pcgd.repeat"])
    except ValueError as exc:
        raise ConfigError(f"non-integer numeric key: {exc}") from exc
    return ConfigFile(
        scale=scale,
        iso_enabled=_parse_bool(merged["iso.enabled"], "iso.enabled"),
        iso_window=merged["iso.window"],
        iso_params_path=merged.get("iso.params_path"),
        pcgd_repeat=repeat,
        pcgd_window=merged["pcgd.window"],
        pcgd_params_path=merged.get("pcgd.params_path"),
        guidance_source=merged["guidance.source"],
        guidance_path=merged.get("guidance.path"),
        padding=merged["padding"],
        base_dir=Path(base_dir),
    )


def read_config_file(path) -> ConfigFile:
    """Read a configuration file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    return parse_config_text(text, base_dir=path.parent)


def resolve_config(cf: ConfigFile) -> PipelineConfig:
    """Load referenced parameter files and validate the assembled pipeline."""

    def load(key: str, rel_path: str | None) -> CapoParams | None:
        if rel_path is None:
            return None
        resolved = cf.base_dir / rel_path
        if not resolved.exists():
            raise ConfigError(f"{key}: parameter file {resolved} does not exist")
        return read_params(resolved)

    try:
        return PipelineConfig(
            scale=cf.scale,
            iso_enabled=cf.iso_enabled,
            iso_spec=WindowSpec.parse(cf.iso_window, cf.padding),
            iso_params=load("iso.params_path", cf.iso_params_path) if cf.iso_enabled else None,
            pcgd_repeat=cf.pcgd_repeat,
            pcgd_spec_h=WindowSpec.parse(cf.pcgd_window, cf.padding),
            pcgd_params=load("pcgd.params_path", cf.pcgd_params_path) if cf.pcgd_repeat > 0 else None,
            guidance=GuidanceSource(cf.guidance_source, cf.guidance_path),
        )
    except ConfigError:
        raise
    except Exception as exc:  # WindowSpec / GuidanceSource validation
        raise ConfigError(str(exc)) from exc


def load_pipeline_config(path) -> PipelineConfig:
    return resolve_config(read_config_file(path))


def resolve_guidance(rgb_or_guide, config: PipelineConfig) -> np.ndarray:
    """Turn the pipeline's second input into a guidance grid per the source tag."""
    tag = config.guidance.tag
    if tag == "grayscale-gradient":
        return guidance_from_rgb(rgb_or_guide)
    if tag == "gt-oracle":
        return guidance_from_gt(rgb_or_guide)
    return ensure_grid(rgb_or_guide, "guidance")


def apply_stages(up: np.ndarray, guide: np.ndarray, config: PipelineConfig) -> np.ndarray:
    """Run the deformation stages on an already-upsampled grid."""
    depth = up
    if config.iso_enabled:
        depth = capo_apply(depth, guide, config.iso_params, config.iso_spec)
    for _ in range(config.pcgd_repeat):
        depth = pcgd_apply(depth, guide, config.pcgd_params,
                           config.pcgd_spec_h, config.pcgd_spec_v)
    return depth


def run_pipeline(lr, rgb_or_guide, config: PipelineConfig) -> np.ndarray:
    """Upsample ``lr`` by the configured scale and deform it under guidance."""
    lr = ensure_grid(lr, "lr")
    guide = resolve_guidance(rgb_or_guide, config)
    expected = (lr.shape[0] * config.scale, lr.shape[1] * config.scale)
    if guide.shape != expected:
        raise ShapeMismatchError(
            f"guidance is {guide.shape} but lr x{config.scale} implies {expected}")
    out = apply_stages(bicubic_up(lr, config.scale), guide, config)
    if not np.isfinite(out).all():
        raise NumericError("pipeline produced non-finite values")
    return out


def predict_residual_rmse(out, gt) -> float:
    """RMSE between a prediction and the ground truth, in centimeters."""
    return rmse_cm(out, gt)
