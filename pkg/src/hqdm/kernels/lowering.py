"""
im2col lowering of 2-D convolution to GEMM, with the adjoint col2im

Layouts: activations (B, C, H, W), kernels (C_out, C_in, L, L), columns
(B * H' * W', C_in * L * L) ordered like the flattened kernel.
"""
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ValidationError


def output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValidationError(f"Kernel {kernel} with stride {stride}, padding {padding} does not fit size {size}")
    return out


def check_conv_shapes(x_shape: Tuple[int, ...], w_shape: Tuple[int, ...]) -> None:
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ValidationError(f"Convolution expects 4-D input and kernel, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise ValidationError(f"Input has {x_shape[1]} channels, kernel expects {w_shape[1]}")


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Unfold (B, C, H, W) into (B*H'*W', C*kh*kw); preserves dtype so int payloads stay integer"""
    if x.ndim != 4:
        raise ValidationError(f"im2col expects (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    out_h = output_size(h, kh, stride, padding)
    out_w = output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows[:, :, :out_h, :out_w]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * out_h * out_w, c * kh * kw)


def col2im(cols: np.ndarray, x_shape: Tuple[int, int, int, int], kh: int, kw: int,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Adjoint of im2col: scatter-add column gradients back onto the input grid"""
    b, c, h, w = x_shape
    out_h = output_size(h, kh, stride, padding)
    out_w = output_size(w, kw, stride, padding)
    patches = cols.reshape(b, out_h, out_w, c, kh, kw)
    padded = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        return padded[:, :, padding:-padding, padding:-padding]
    return padded


def _fold_output(flat: np.ndarray, b: int, out_h: int, out_w: int) -> np.ndarray:
    return flat.reshape(b, out_h, out_w, -1).transpose(0, 3, 1, 2)


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Float convolution (cross-correlation) through im2col + GEMM"""
    check_conv_shapes(x.shape, w.shape)
    c_out, _, kh, kw = w.shape
    cols = im2col(x, kh, kw, stride, padding)
    out_h = output_size(x.shape[2], kh, stride, padding)
    out_w = output_size(x.shape[3], kw, stride, padding)
    return _fold_output(cols @ w.reshape(c_out, -1).T, x.shape[0], out_h, out_w)


def conv2d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray,
                    stride: int = 1, padding: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """(dL/dx, dL/dw) for y = conv2d(x, w)"""
    c_out, _, kh, kw = w.shape
    cols = im2col(x, kh, kw, stride, padding)
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grad_w = (g.T @ cols).reshape(w.shape)
    grad_cols = g @ w.reshape(c_out, -1)
    grad_x = col2im(grad_cols, x.shape, kh, kw, stride, padding)
    return grad_x, grad_w
