"""
Low-rank adapters over frozen weights: W' = W + scaling * B @ A

Shapes follow Y = X @ W with W of shape (C_i, C_o): B is (C_i, r), A is (r, C_o).
Convolution kernels are adapted through their flattened (C_out, C_in*L*L) view.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ValidationError
from .utils.rng import as_generator

logger = logging.getLogger(__name__)


@dataclass
class LoraAdapter:
    A: np.ndarray
    B: np.ndarray
    scaling: float = 1.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        if self.A.ndim != 2 or self.B.ndim != 2 or self.B.shape[1] != self.A.shape[0]:
            raise ValidationError(f"LoRA factors do not chain: B {self.B.shape}, A {self.A.shape}")
        if 2 * self.rank > min(self.in_features, self.out_features):
            raise ValidationError(
                f"LoRA rank {self.rank} exceeds min({self.in_features}, {self.out_features})/2"
            )

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def in_features(self) -> int:
        return self.B.shape[0]

    @property
    def out_features(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.in_features, self.out_features

    @property
    def num_trainable(self) -> int:
        return self.rank * (self.in_features + self.out_features)

    def delta(self) -> np.ndarray:
        return self.scaling * (self.B @ self.A)


def max_rank(c_in: int, c_out: int) -> int:
    return min(c_in, c_out) // 2


def lora_init(c_in: int, c_out: int, r: int, seed=0, scaling: float = 1.0) -> LoraAdapter:
    """A = 0 and B ~ N(0, 1/r), so the adapted weight equals W until A is trained"""
    if not 1 <= r <= max_rank(c_in, c_out):
        raise ValidationError(f"LoRA rank {r} outside [1, {max_rank(c_in, c_out)}] for a {c_in}x{c_out} weight")
    rng = as_generator(seed)
    B = rng.normal(0.0, np.sqrt(1.0 / r), size=(c_in, r))
    A = np.zeros((r, c_out))
    return LoraAdapter(A=A, B=B, scaling=scaling)


def _check_weight(W: np.ndarray, adapter: LoraAdapter, what: str = "Weight") -> None:
    if np.shape(W) != adapter.shape:
        raise ValidationError(f"{what} shape {np.shape(W)} does not match adapter {adapter.shape}")


def lora_apply(W: np.ndarray, adapter: LoraAdapter) -> np.ndarray:
    _check_weight(W, adapter)
    return np.asarray(W, dtype=np.float64) + adapter.delta()


def lora_backward(W: np.ndarray, adapter: LoraAdapter, upstream_grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(dL/dA, dL/dB) from G = dL/dW'; the frozen W gets no gradient"""
    _check_weight(W, adapter)
    _check_weight(upstream_grad, adapter, "Gradient")
    grad_A = adapter.scaling * (adapter.B.T @ upstream_grad)
    grad_B = adapter.scaling * (upstream_grad @ adapter.A.T)
    return grad_A, grad_B
