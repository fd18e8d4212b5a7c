"""
Integer GEMM and convolution with int64 accumulators

Every product is preceded by a worst-case bound check in Python integers, so an
accumulator that could leave the int64 range raises instead of wrapping.
"""
import logging

import numpy as np

from ..constants import ACCUMULATOR_LIMIT
from ..errors import IntegerOverflowError, ValidationError
from .lowering import check_conv_shapes, im2col, output_size

logger = logging.getLogger(__name__)


def _max_abs(a: np.ndarray) -> int:
    return int(np.max(np.abs(a))) if a.size else 0


def accumulator_bound(a_max: int, b_max: int, inner: int) -> int:
    """Largest possible |partial sum| of an inner product of length `inner`"""
    return int(a_max) * int(b_max) * int(inner)


def check_accumulator(a_max: int, b_max: int, inner: int) -> None:
    bound = accumulator_bound(a_max, b_max, inner)
    if bound > ACCUMULATOR_LIMIT:
        raise IntegerOverflowError(
            f"Integer accumulator bound {bound} exceeds int64 "
            f"(|a| <= {a_max}, |b| <= {b_max}, inner dimension {inner})"
        )


def _as_int(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a)
    if not np.issubdtype(a.dtype, np.integer):
        raise ValidationError(f"{what} must be an integer array, got {a.dtype}")
    return a.astype(np.int64, copy=False)


def int_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = _as_int(a, "Left operand")
    b = _as_int(b, "Right operand")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"Integer GEMM shapes do not chain: {a.shape} x {b.shape}")
    check_accumulator(_max_abs(a), _max_abs(b), a.shape[1])
    return a @ b


def conv2d_int(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Integer convolution through im2col and int_matmul"""
    x = _as_int(x, "Activation")
    w = _as_int(w, "Kernel")
    check_conv_shapes(x.shape, w.shape)
    c_out, _, kh, kw = w.shape
    cols = im2col(x, kh, kw, stride, padding)
    acc = int_matmul(cols, w.reshape(c_out, -1).T)
    out_h = output_size(x.shape[2], kh, stride, padding)
    out_w = output_size(x.shape[3], kw, stride, padding)
    return acc.reshape(x.shape[0], out_h, out_w, c_out).transpose(0, 3, 1, 2)
