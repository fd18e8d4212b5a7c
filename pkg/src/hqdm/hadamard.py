"""
Sylvester-Hadamard matrices, the fast Walsh-Hadamard transform and
block-diagonal plans for dimensions that are not a power of two
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .constants import DEFAULT_HADAMARD_K, MAX_HADAMARD_ORDER
from .errors import ValidationError

logger = logging.getLogger(__name__)


def normalization(k: int) -> float:
    """2^(-k/2), rounded once so that normalization(k) * 2^k == sqrt(2^k) bitwise"""
    value = math.ldexp(1.0, -(k // 2))
    if k % 2:
        value *= math.sqrt(0.5)
    return value


@dataclass(frozen=True)
class HadamardPlan:
    """m identical H_k blocks along a dimension of size m * 2^k; k == 0 is the identity"""
    k: int
    m: int

    def __post_init__(self):
        if not 0 <= self.k <= MAX_HADAMARD_ORDER:
            raise ValidationError(f"Hadamard order k={self.k} outside [0, {MAX_HADAMARD_ORDER}]")
        if self.m < 1:
            raise ValidationError(f"Block count must be positive, got {self.m}")

    @classmethod
    def identity(cls, dim: int) -> "HadamardPlan":
        return cls(k=0, m=dim)

    @property
    def block(self) -> int:
        return 1 << self.k

    @property
    def dim(self) -> int:
        return self.m * self.block

    @property
    def norm(self) -> float:
        return normalization(self.k)

    @property
    def is_identity(self) -> bool:
        return self.k == 0

    def matrix(self) -> np.ndarray:
        """Dense normalized block-diagonal matrix (dim x dim)"""
        return np.kron(np.eye(self.m), build_hadamard(self.k))

    def raw_matrix(self) -> np.ndarray:
        """Dense block-diagonal {0, +1, -1} int64 matrix"""
        return np.kron(np.eye(self.m, dtype=np.int64), build_hadamard_raw(self.k))


def _check_order(k: int) -> None:
    if not isinstance(k, (int, np.integer)) or not 0 <= k <= MAX_HADAMARD_ORDER:
        raise ValidationError(f"Hadamard order k={k} outside [0, {MAX_HADAMARD_ORDER}]")


@lru_cache(maxsize=None)
def _raw(k: int) -> np.ndarray:
    h = np.ones((1, 1), dtype=np.int64)
    for _ in range(k):
        h = np.block([[h, h], [h, -h]])
    h.setflags(write=False)
    return h


def build_hadamard_raw(k: int) -> np.ndarray:
    """Unnormalized Sylvester matrix with entries in {+1, -1}"""
    _check_order(k)
    return _raw(int(k)).copy()


def build_hadamard(k: int) -> np.ndarray:
    """Orthonormal Sylvester matrix H_k = 2^(-k/2) * H_k^raw (symmetric, H H^T = I)"""
    _check_order(k)
    return _raw(int(k)) * normalization(int(k))


def _order_of(plan_or_k: Union[HadamardPlan, int]) -> int:
    if isinstance(plan_or_k, HadamardPlan):
        return plan_or_k.k
    _check_order(plan_or_k)
    return int(plan_or_k)


def _butterfly(x: np.ndarray, k: int) -> np.ndarray:
    """Unnormalized in-order butterfly over the last axis: returns x @ H_k^raw"""
    n = 1 << k
    lead = x.shape[:-1]
    y = x
    h = 1
    while h < n:
        y = y.reshape(*lead, n // (2 * h), 2, h)
        a = y[..., 0, :]
        b = y[..., 1, :]
        y = np.stack((a + b, a - b), axis=-2)
        h *= 2
    return y.reshape(*lead, n)


def fwht(x: np.ndarray, plan_or_k: Union[HadamardPlan, int]) -> np.ndarray:
    """
    Normalized fast Walsh-Hadamard transform along the last axis

    Equals x @ build_hadamard(k) in O(k * 2^k) per row. Accepts a plan (its block
    order is used) or the order k directly.
    """
    k = _order_of(plan_or_k)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != (1 << k):
        raise ValidationError(f"fwht of order {k} needs last axis {1 << k}, got shape {x.shape}")
    return _butterfly(x, k) * normalization(k)


def fwht_raw(x: np.ndarray, plan_or_k: Union[HadamardPlan, int]) -> np.ndarray:
    """Integer butterfly: x @ H_k^raw along the last axis, exact in int64"""
    k = _order_of(plan_or_k)
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.integer):
        raise ValidationError(f"fwht_raw expects an integer array, got {x.dtype}")
    if x.ndim == 0 or x.shape[-1] != (1 << k):
        raise ValidationError(f"fwht_raw of order {k} needs last axis {1 << k}, got shape {x.shape}")
    return _butterfly(x.astype(np.int64), k)


def _segments(x: np.ndarray, plan: HadamardPlan) -> np.ndarray:
    if x.ndim == 0 or x.shape[-1] != plan.dim:
        raise ValidationError(f"Plan covers dimension {plan.dim}, got last axis of shape {x.shape}")
    return x.reshape(*x.shape[:-1], plan.m, plan.block)


def block_transform(x: np.ndarray, plan: HadamardPlan) -> np.ndarray:
    """Apply fwht independently to each of the plan's m contiguous segments of the last axis"""
    x = np.asarray(x, dtype=np.float64)
    segments = _segments(x, plan)
    if plan.is_identity:
        return x.copy()
    return fwht(segments, plan.k).reshape(x.shape)


def block_transform_raw(x: np.ndarray, plan: HadamardPlan) -> np.ndarray:
    """Integer counterpart of block_transform using H_k^raw (no normalization)"""
    x = np.asarray(x)
    segments = _segments(x, plan)
    if plan.is_identity:
        return x.astype(np.int64)
    return fwht_raw(segments, plan.k).reshape(x.shape)


def block_transform_axis(x: np.ndarray, plan: HadamardPlan, axis: int) -> np.ndarray:
    """block_transform along an arbitrary axis (used for H^T W on the input-channel axis)"""
    moved = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    return np.moveaxis(block_transform(moved, plan), -1, axis)


def _two_adic_order(n: int) -> int:
    return (n & -n).bit_length() - 1


def make_plan(dim: int, k_preferred: int = DEFAULT_HADAMARD_K) -> HadamardPlan:
    """
    Largest k <= k_preferred with 2^k dividing dim

    Odd dimensions (and dim == 1) degrade to the identity plan instead of failing.
    """
    if dim < 1:
        raise ValidationError(f"Plan dimension must be positive, got {dim}")
    k_preferred = max(0, min(int(k_preferred), MAX_HADAMARD_ORDER))
    k = min(k_preferred, _two_adic_order(int(dim)))
    if k == 0:
        logger.debug(f"Dimension {dim} has no usable power-of-two factor; using identity plan")
        return HadamardPlan.identity(dim)
    return HadamardPlan(k=k, m=dim >> k)
