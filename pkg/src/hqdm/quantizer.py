"""
Symmetric uniform quantization with straight-through gradients and
timestep-indexed learnable scales
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import MAX_BITS, MIN_BITS, SCALE_FLOOR
from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuantParams:
    """N-bit symmetric integer range [-2^(N-1), 2^(N-1) - 1], one scale per tensor"""
    bits: int

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or not MIN_BITS <= self.bits <= MAX_BITS:
            raise ValidationError(f"Bit-width must be an integer in [{MIN_BITS}, {MAX_BITS}], got {self.bits}")

    @property
    def q_min(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def q_max(self) -> int:
        return (1 << (self.bits - 1)) - 1

    @property
    def levels(self) -> int:
        return self.q_max - self.q_min + 1


@dataclass
class ScaleTable:
    """Positive scales indexed by denoising timestep"""
    scales: np.ndarray
    learnable: bool = True

    def __post_init__(self):
        self.scales = np.array(self.scales, dtype=np.float64).reshape(-1)
        if self.scales.size == 0:
            raise ValidationError("ScaleTable needs at least one entry")
        if not np.all(np.isfinite(self.scales)) or np.any(self.scales <= 0):
            raise ValidationError("ScaleTable entries must be finite and strictly positive")

    @classmethod
    def constant(cls, length: int, value: float = 1.0, learnable: bool = True) -> "ScaleTable":
        return cls(np.full(length, float(value)), learnable=learnable)

    def __len__(self) -> int:
        return self.scales.size

    def __getitem__(self, t: int) -> float:
        return float(self.scales[self.check_index(t)])

    def check_index(self, t: int) -> int:
        if not 0 <= int(t) < self.scales.size:
            raise ValidationError(f"Timestep {t} outside scale table range [0, {self.scales.size})")
        return int(t)

    def set(self, t: int, value: float) -> None:
        if not value > 0 or not math.isfinite(value):
            raise ValidationError(f"Scale must be finite and positive, got {value}")
        self.scales[self.check_index(t)] = value

    def fill_from(self, calibrated: dict) -> None:
        """Set the calibrated entries and give every other timestep the nearest calibrated value"""
        if not calibrated:
            raise ValidationError("No calibrated timesteps to fill from")
        known = np.array(sorted(calibrated), dtype=np.int64)
        for t in range(self.scales.size):
            nearest = known[np.argmin(np.abs(known - t))]
            self.set(t, calibrated[int(nearest)])

    def project(self) -> None:
        """Keep every entry at or above the positivity floor after an optimizer step"""
        np.maximum(self.scales, SCALE_FLOOR, out=self.scales)


@dataclass
class QuantizedTensor:
    """Integer payload plus the single scale that dequantizes it"""
    ints: np.ndarray
    scale: float
    params: QuantParams = field(repr=False)

    def __post_init__(self):
        if self.ints.size and (self.ints.min() < self.params.q_min or self.ints.max() > self.params.q_max):
            raise ValidationError(f"Integer payload leaves [{self.params.q_min}, {self.params.q_max}]")

    @property
    def bits(self) -> int:
        return self.params.bits


def _check_scale(s: float) -> float:
    s = float(s)
    if not s > 0 or not math.isfinite(s):
        raise ValidationError(f"Quantization scale must be finite and positive, got {s}")
    return s


def quantize(x: np.ndarray, s: float, p: QuantParams) -> QuantizedTensor:
    """ints = clamp(round_half_to_even(x / s), q_min, q_max)"""
    s = _check_scale(s)
    ints = np.clip(np.rint(np.asarray(x, dtype=np.float64) / s), p.q_min, p.q_max).astype(np.int64)
    return QuantizedTensor(ints=ints, scale=s, params=p)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.scale * q.ints.astype(np.float64)


def fake_quant(x: np.ndarray, s: float, p: QuantParams) -> np.ndarray:
    return dequantize(quantize(x, s, p))


def quant_mse(x: np.ndarray, s: float, p: QuantParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean((fake_quant(x, s, p) - x) ** 2))


def max_abs(x: np.ndarray) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


def clip_mask(x: np.ndarray, s: float, p: QuantParams) -> np.ndarray:
    """True where q_min <= x/s <= q_max"""
    v = np.asarray(x, dtype=np.float64) / _check_scale(s)
    return (v >= p.q_min) & (v <= p.q_max)


def ste_backward_input(x: np.ndarray, s: float, p: QuantParams, upstream_grad: np.ndarray) -> np.ndarray:
    """Round passes the gradient, clamp masks it"""
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != np.shape(x):
        raise ValidationError(f"Gradient shape {upstream_grad.shape} does not match input {np.shape(x)}")
    return upstream_grad * clip_mask(x, s, p)


def lsq_grad_scale(numel: int, p: QuantParams) -> float:
    return 1.0 / math.sqrt(numel * p.q_max)


def ste_backward_scale(x: np.ndarray, s: float, p: QuantParams, upstream_grad: np.ndarray,
                       grad_scale: Optional[float] = None) -> float:
    """
    LSQ step-size gradient

    Per element the local derivative is round(x/s) - x/s inside the clip range
    and q_min / q_max where clipped; the sum against the upstream gradient is
    multiplied by grad_scale, which defaults to 1/sqrt(numel * q_max).
    """
    s = _check_scale(s)
    x = np.asarray(x, dtype=np.float64)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != x.shape:
        raise ValidationError(f"Gradient shape {upstream_grad.shape} does not match input {x.shape}")
    v = x / s
    local = np.where(v < p.q_min, float(p.q_min), np.where(v > p.q_max, float(p.q_max), np.rint(v) - v))
    if grad_scale is None:
        grad_scale = lsq_grad_scale(max(x.size, 1), p)
    return float(np.sum(upstream_grad * local)) * grad_scale


def rounding_offset(x: np.ndarray, s: float, p: QuantParams) -> np.ndarray:
    """round(x/s) - x/s on unclipped entries, 0 elsewhere"""
    v = np.asarray(x, dtype=np.float64) / _check_scale(s)
    return np.where(clip_mask(x, s, p), np.rint(v) - v, 0.0)


def ste_surrogate(x: np.ndarray, s: float, p: QuantParams, offset: np.ndarray) -> np.ndarray:
    """
    The differentiable function the straight-through gradients are exact for

    s * (clamp(x/s, q_min, q_max) + offset) with offset held constant; with
    offset = rounding_offset(x0, s0, p) it equals fake_quant at (x0, s0).
    Finite differences of this function check ste_backward_input and
    ste_backward_scale(grad_scale=1).
    """
    s = _check_scale(s)
    return s * (np.clip(np.asarray(x, dtype=np.float64) / s, p.q_min, p.q_max) + offset)


def init_scale(calib: np.ndarray, p: QuantParams) -> float:
    """max(|calib|) / q_max, floored at SCALE_FLOOR"""
    calib = np.asarray(calib, dtype=np.float64)
    if calib.size == 0:
        raise ValidationError("Cannot initialize a scale from an empty calibration tensor")
    return max(float(np.max(np.abs(calib))) / p.q_max, SCALE_FLOOR)


def search_scale(calib: np.ndarray, p: QuantParams, grid: int = 80,
                 shrink: Sequence[float] = (0.2, 1.0)) -> float:
    """Scale minimizing quantization MSE over a grid of shrunken max-abs scales"""
    base = init_scale(calib, p)
    best_scale, best_err = base, quant_mse(calib, base, p)
    for factor in np.linspace(shrink[0], shrink[1], grid):
        candidate = max(base * float(factor), SCALE_FLOOR)
        err = quant_mse(calib, candidate, p)
        if err < best_err:
            best_scale, best_err = candidate, err
    return best_scale
