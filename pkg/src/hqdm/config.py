"""
Configuration loader for hqdm runs
Reads [tool.hqdm] from pyproject.toml or a standalone TOML file, with defaults
"""
import logging
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from .distill.config import DistillConfig
from .errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "output_dir": "runs",
    "verbose_logging": False,
    # noise schedule
    "timesteps": 100,
    "beta_start": 1e-3,
    "beta_end": 0.2,
    # teacher
    "dataset_size": 512,
    "teacher_epochs": 40,
    "teacher_batch_size": 32,
    "teacher_lr": 2e-3,
    "teacher_dir": "runs/teacher",
    # distillation
    "w_bits": 4,
    "a_bits": 4,
    "scheme": "single_hadamard",  # plain, single_hadamard
    "hadamard_k_preferred": 5,
    "lora_rank": 4,
    "lora_scaling": 1.0,
    "lr_act_scale": 1e-3,
    "lr_w_scale": 1e-4,
    "lr_lora": 1e-3,
    "weight_decay": 0.0,
    "distill_epochs": 8,
    "distill_batch_size": 16,
    "samples_per_epoch": 32,
    "weight_scales_per_timestep": False,
    "n_calib": 32,
    "calib_method": "max",  # max, mse
    "input_source": "trajectory",  # trajectory, forward_noise
    # sampling
    "sampling_steps": 20,
    "n_samples": 16,
    # analysis
    "analysis_layers": [],
    "analysis_timesteps": [],
    "analysis_samples": 8,
    "analysis_bits": [4, 8],
    # bench
    "bench_dims": [256, 1024],
    "bench_bits": [4, 8],
    "bench_rows": 64,
    "bench_reps": 20,
}

# config key -> DistillConfig field, where the names differ
_DISTILL_FIELDS = {
    "distill_epochs": "epochs",
    "distill_batch_size": "batch_size",
    "sampling_steps": "n_steps",
}
_DISTILL_SHARED = (
    "seed", "w_bits", "a_bits", "scheme", "hadamard_k_preferred", "lora_rank", "lora_scaling",
    "lr_act_scale", "lr_w_scale", "lr_lora", "weight_decay", "samples_per_epoch",
    "weight_scales_per_timestep", "n_calib", "calib_method", "input_source",
)

_STRING_LISTS = ("analysis_layers",)


def _check_value(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"Config '{key}' must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"Config '{key}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"Config '{key}' must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        kind = str if key in _STRING_LISTS else int
        if not isinstance(value, list) or not all(isinstance(v, kind) and not isinstance(v, bool) for v in value):
            raise ValidationError(f"Config '{key}' must be a list of {kind.__name__}, got {value!r}")
        return list(value)
    if not isinstance(value, str):
        raise ValidationError(f"Config '{key}' must be a string, got {value!r}")
    return value


class HqdmConfig:
    """Configuration management for hqdm"""

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self._config_data: Dict[str, Any] = dict(DEFAULTS)
        self._project_root = Path.cwd()
        if values:
            self.update(values)

    def update(self, values: Mapping[str, Any]) -> None:
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ValidationError(f"Unknown config key(s): {', '.join(unknown)}")
        for key, value in values.items():
            self._config_data[key] = _check_value(key, value)

    def load_config(self, project_root: Optional[Path] = None) -> None:
        """Load [tool.hqdm] from pyproject.toml if present"""
        self._project_root = Path(project_root or Path.cwd())
        pyproject_path = self._project_root / "pyproject.toml"
        if not pyproject_path.exists():
            logger.debug("No pyproject.toml found, using default configuration")
            return
        try:
            with open(pyproject_path, "rb") as f:
                pyproject_data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ValidationError(f"Could not parse {pyproject_path}: {e}")

        hqdm_config = pyproject_data.get("tool", {}).get("hqdm", {})
        if hqdm_config:
            self.update(hqdm_config)
            logger.debug(f"Loaded configuration from {pyproject_path}")
        else:
            logger.debug("No [tool.hqdm] section found, using defaults")

    def load_file(self, path: Path) -> None:
        """Standalone TOML run config; keys at top level or under [tool.hqdm]"""
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"Config file not found: {path}")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ValidationError(f"Could not parse {path}: {e}")
        if "tool" in data:
            data = data["tool"].get("hqdm", {})
        self.update(data)
        logger.info(f"✅ Loaded configuration from {path}")

    def apply_overrides(self, overrides: Mapping[str, Any]) -> None:
        """Command-line values win over file values; None means 'not given'"""
        self.update({key: value for key, value in overrides.items() if value is not None})

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._config_data)

    def distill_config(self, **changes) -> DistillConfig:
        values = {key: self._config_data[key] for key in _DISTILL_SHARED}
        values.update({field: self._config_data[key] for key, field in _DISTILL_FIELDS.items()})
        values.update(changes)
        return DistillConfig(**values)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self._project_root / p

    @property
    def project_root(self) -> Path:
        return self._project_root

    @property
    def seed(self) -> int:
        return self._config_data["seed"]

    @property
    def output_dir(self) -> Path:
        return self.resolve(self._config_data["output_dir"])

    @property
    def verbose_logging(self) -> bool:
        return self._config_data["verbose_logging"]

    @property
    def timesteps(self) -> int:
        return self._config_data["timesteps"]

    @property
    def beta_start(self) -> float:
        return self._config_data["beta_start"]

    @property
    def beta_end(self) -> float:
        return self._config_data["beta_end"]

    @property
    def dataset_size(self) -> int:
        return self._config_data["dataset_size"]

    @property
    def teacher_epochs(self) -> int:
        return self._config_data["teacher_epochs"]

    @property
    def teacher_batch_size(self) -> int:
        return self._config_data["teacher_batch_size"]

    @property
    def teacher_lr(self) -> float:
        return self._config_data["teacher_lr"]

    @property
    def teacher_dir(self) -> Path:
        return self.resolve(self._config_data["teacher_dir"])

    @property
    def sampling_steps(self) -> int:
        return self._config_data["sampling_steps"]

    @property
    def n_samples(self) -> int:
        return self._config_data["n_samples"]

    @property
    def analysis_layers(self) -> List[str]:
        return self._config_data["analysis_layers"]

    @property
    def analysis_timesteps(self) -> List[int]:
        return self._config_data["analysis_timesteps"]

    @property
    def analysis_samples(self) -> int:
        return self._config_data["analysis_samples"]

    @property
    def analysis_bits(self) -> List[int]:
        return self._config_data["analysis_bits"]

    @property
    def hadamard_k_preferred(self) -> int:
        return self._config_data["hadamard_k_preferred"]

    @property
    def bench_dims(self) -> List[int]:
        return self._config_data["bench_dims"]

    @property
    def bench_bits(self) -> List[int]:
        return self._config_data["bench_bits"]

    @property
    def bench_rows(self) -> int:
        return self._config_data["bench_rows"]

    @property
    def bench_reps(self) -> int:
        return self._config_data["bench_reps"]


def defaults_epilog() -> str:
    """All defaults, one per line, for --help"""
    width = max(len(key) for key in DEFAULTS)
    lines = ["Configuration keys ([tool.hqdm] in pyproject.toml or --config FILE) and defaults:"]
    for key, value in DEFAULTS.items():
        lines.append(f"  {key.ljust(width)}  {value!r}")
    return "\n".join(lines)
