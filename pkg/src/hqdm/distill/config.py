"""
Distillation hyper-parameters
"""
from dataclasses import asdict, dataclass, fields

from ..constants import DEFAULT_HADAMARD_K, MAX_BITS, MAX_HADAMARD_ORDER, MIN_BITS
from ..errors import ValidationError
from ..kernels.schemes import Scheme

CALIB_METHODS = ("max", "mse")
INPUT_SOURCES = ("trajectory", "forward_noise")


@dataclass(frozen=True)
class DistillConfig:
    w_bits: int = 4
    a_bits: int = 4
    scheme: str = Scheme.SINGLE_HADAMARD.value
    hadamard_k_preferred: int = DEFAULT_HADAMARD_K
    lora_rank: int = 4
    lora_scaling: float = 1.0
    lr_act_scale: float = 1e-3
    lr_w_scale: float = 1e-4
    lr_lora: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 8
    batch_size: int = 16
    samples_per_epoch: int = 32
    seed: int = 0
    weight_scales_per_timestep: bool = False
    n_steps: int = 20
    n_calib: int = 32
    calib_method: str = "max"
    input_source: str = "trajectory"
    quantize: bool = True

    def __post_init__(self):
        for name in ("w_bits", "a_bits"):
            bits = getattr(self, name)
            if not MIN_BITS <= bits <= MAX_BITS:
                raise ValidationError(f"{name} must be in [{MIN_BITS}, {MAX_BITS}], got {bits}")
        scheme = Scheme.parse(self.scheme)
        if scheme is Scheme.DOUBLE_HADAMARD:
            raise ValidationError("double_hadamard is a comparison scheme; distill with plain or single_hadamard")
        object.__setattr__(self, "scheme", scheme.value)
        if not 0 <= self.hadamard_k_preferred <= MAX_HADAMARD_ORDER:
            raise ValidationError(f"hadamard_k_preferred must be in [0, {MAX_HADAMARD_ORDER}]")
        for name in ("lr_act_scale", "lr_w_scale", "lr_lora"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        for name in ("batch_size", "samples_per_epoch", "n_steps", "n_calib"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.epochs < 0 or self.lora_rank < 0 or self.seed < 0:
            raise ValidationError("epochs, lora_rank and seed must be non-negative")
        if self.calib_method not in CALIB_METHODS:
            raise ValidationError(f"calib_method must be one of {CALIB_METHODS}, got '{self.calib_method}'")
        if self.input_source not in INPUT_SOURCES:
            raise ValidationError(f"input_source must be one of {INPUT_SOURCES}, got '{self.input_source}'")

    @property
    def scheme_enum(self) -> Scheme:
        return Scheme.parse(self.scheme)

    @property
    def label(self) -> str:
        return f"W{self.w_bits}A{self.a_bits}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DistillConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"Unknown distillation settings: {', '.join(unknown)}")
        return cls(**data)
