"""
Dense tensor helpers and the TensorFile binary container

Tensors are plain float64 numpy arrays in row-major (C) order. The container
stores them as little-endian 32-bit reals (version 1) or, for run-state blobs
that must resume bitwise, 64-bit reals (version 2).
"""
import logging
import math
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .constants import TENSOR_MAGIC, TENSOR_VERSION_F32, TENSOR_VERSION_F64
from .errors import TensorFormatError, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_PAYLOAD_DTYPES = {
    TENSOR_VERSION_F32: np.dtype("<f4"),
    TENSOR_VERSION_F64: np.dtype("<f8"),
}
_HEADER_SIZE = len(TENSOR_MAGIC) + 2


def as_tensor(data, copy: bool = True) -> np.ndarray:
    """Convert to a C-contiguous float64 array and reject non-finite values"""
    if copy:
        t = np.array(data, dtype=np.float64, order="C")
    else:
        t = np.ascontiguousarray(data, dtype=np.float64)
    check_finite(t)
    return t


def check_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        bad = int(np.size(t) - np.count_nonzero(np.isfinite(t)))
        raise ValidationError(f"{what} contains {bad} non-finite value(s)")
    return t


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    """Reshape without touching the flat row-major data sequence"""
    new_shape = tuple(int(d) for d in new_shape)
    if any(d < 1 for d in new_shape):
        raise ValidationError(f"Dimensions must be positive, got {new_shape}")
    if math.prod(new_shape) != t.size:
        raise ValidationError(
            f"Cannot reshape {t.shape} ({t.size} elements) to {new_shape} ({math.prod(new_shape)} elements)"
        )
    return np.ascontiguousarray(t).reshape(new_shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ValidationError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValidationError(f"Inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def relative_error(actual: np.ndarray, reference: np.ndarray) -> float:
    """||actual - reference||_2 / ||reference||_2, with 0/0 taken as 0"""
    num = float(np.linalg.norm(np.asarray(actual, dtype=np.float64) - reference))
    den = float(np.linalg.norm(reference))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def write_tensor(path: PathLike, t: np.ndarray, version: int = TENSOR_VERSION_F32) -> Path:
    """Write a tensor as a TensorFile: magic, version u8, rank u8, u32 dims, payload"""
    if version not in _PAYLOAD_DTYPES:
        raise ValidationError(f"Unknown TensorFile version {version}")
    t = np.asarray(t)
    check_finite(t, f"tensor written to {path}")
    if t.ndim > 255:
        raise ValidationError(f"Rank {t.ndim} does not fit the TensorFile header")
    if any(d < 1 or d >= 2 ** 32 for d in t.shape):
        raise ValidationError(f"Dimensions {t.shape} do not fit the TensorFile header")

    payload_dtype = _PAYLOAD_DTYPES[version]
    header = TENSOR_MAGIC + bytes((version, t.ndim)) + np.asarray(t.shape, dtype="<u4").tobytes()
    with np.errstate(over="ignore"):
        cast = np.ascontiguousarray(t, dtype=payload_dtype)
    check_finite(cast, f"tensor written to {path} as {payload_dtype.name}")
    payload = cast.tobytes()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
    logger.debug(f"Wrote {t.shape} tensor to {path}")
    return path


def read_tensor(path: PathLike) -> np.ndarray:
    """Read a TensorFile back into a float64 array"""
    path = Path(path)
    blob = path.read_bytes()

    if len(blob) < _HEADER_SIZE:
        raise TensorFormatError(f"{path}: file too short for a TensorFile header")
    if blob[:len(TENSOR_MAGIC)] != TENSOR_MAGIC:
        raise TensorFormatError(f"{path}: bad magic {blob[:len(TENSOR_MAGIC)]!r}")

    version, rank = blob[len(TENSOR_MAGIC)], blob[len(TENSOR_MAGIC) + 1]
    if version not in _PAYLOAD_DTYPES:
        raise TensorFormatError(f"{path}: unsupported TensorFile version {version}")

    dims_end = _HEADER_SIZE + 4 * rank
    if len(blob) < dims_end:
        raise TensorFormatError(f"{path}: truncated dimension table")
    shape = tuple(int(d) for d in np.frombuffer(blob, dtype="<u4", count=rank, offset=_HEADER_SIZE))
    if any(d == 0 for d in shape):
        raise TensorFormatError(f"{path}: zero-sized dimension in {shape}")

    payload_dtype = _PAYLOAD_DTYPES[version]
    expected = math.prod(shape) * payload_dtype.itemsize
    actual = len(blob) - dims_end
    if actual != expected:
        kind = "truncated" if actual < expected else "oversized"
        raise TensorFormatError(f"{path}: {kind} payload ({actual} bytes, expected {expected})")

    data = np.frombuffer(blob, dtype=payload_dtype, offset=dims_end).astype(np.float64)
    return data.reshape(shape)
