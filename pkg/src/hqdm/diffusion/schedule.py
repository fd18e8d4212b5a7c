"""
Linear-beta noise schedule and closed-form forward noising
"""
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas_bar: np.ndarray

    @property
    def T(self) -> int:
        return self.betas.size

    def check_timestep(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0) or np.any(t >= self.T):
            raise ValidationError(f"Timestep(s) outside [0, {self.T}): {np.unique(t[(t < 0) | (t >= self.T)])}")
        return t

    def to_manifest(self) -> dict:
        return {"T": self.T, "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1])}


def make_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """beta_t ramps linearly from beta_start to beta_end; alpha_bar_t = prod(1 - beta_i)"""
    if T < 2:
        raise ValidationError(f"Schedule needs T >= 2, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValidationError(f"Need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas_bar = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alphas_bar.setflags(write=False)
    return NoiseSchedule(betas=betas, alphas_bar=alphas_bar)


def _per_sample(coef: np.ndarray, ndim: int) -> np.ndarray:
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim))


def forward_noise(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps; t is a scalar or one timestep per sample"""
    t = schedule.check_timestep(t)
    if np.shape(eps) != np.shape(x0):
        raise ValidationError(f"Noise shape {np.shape(eps)} does not match x0 {np.shape(x0)}")
    a = schedule.alphas_bar[t]
    return _per_sample(np.sqrt(a), np.ndim(x0)) * x0 + _per_sample(np.sqrt(1.0 - a), np.ndim(x0)) * eps
