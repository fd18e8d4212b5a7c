"""
Quantized 2-D convolution with the Hadamard transform on the width axis

The activation (B, C_in, h, w) is viewed as a (B*C_in*h, w) matrix, transformed
block-wise along w, quantized, and brought back with H_raw in the integer
domain before an integer im2col convolution with the quantized kernel.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..constants import DEFAULT_HADAMARD_K
from ..errors import ValidationError
from ..hadamard import HadamardPlan, block_transform, block_transform_raw, make_plan
from ..lora import LoraAdapter, lora_apply, lora_backward
from ..quantizer import (
    QuantParams, ScaleTable, fake_quant, quantize,
    ste_backward_input, ste_backward_scale,
)
from .intmath import conv2d_int
from .linear import LayerGrads
from .lowering import check_conv_shapes, conv2d, conv2d_backward
from .schemes import Scheme

logger = logging.getLogger(__name__)


@dataclass
class QConvLayer:
    name: str
    weight: np.ndarray
    w_params: QuantParams
    a_params: QuantParams
    act_scales: ScaleTable
    w_scales: ScaleTable
    stride: int = 1
    padding: int = 0
    scheme: Scheme = Scheme.SINGLE_HADAMARD
    k_preferred: int = DEFAULT_HADAMARD_K
    # None means: derive the width plan from the activation at every call
    plan: Optional[HadamardPlan] = None
    bias: Optional[np.ndarray] = None
    lora: Optional[LoraAdapter] = None
    enabled: bool = True

    def __post_init__(self):
        self.scheme = Scheme.parse(self.scheme)
        if self.scheme is Scheme.DOUBLE_HADAMARD:
            raise ValidationError(
                f"{self.name}: double_hadamard has no convolution form (H^T W does not commute with strided conv)"
            )
        if self.weight.ndim != 4:
            raise ValidationError(f"{self.name}: kernel must be (C_out, C_in, L, L), got {self.weight.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ValidationError(f"{self.name}: invalid stride {self.stride} / padding {self.padding}")
        if self.lora is not None and self.lora.shape != self.flat_shape:
            raise ValidationError(f"{self.name}: adapter {self.lora.shape} does not match kernel view {self.flat_shape}")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ValidationError(f"{self.name}: bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def flat_shape(self):
        return self.weight.shape[0], int(np.prod(self.weight.shape[1:]))

    def plan_for(self, width: int) -> HadamardPlan:
        if self.plan is None:
            return make_plan(width, self.k_preferred)
        if self.plan.dim != width:
            raise ValidationError(f"{self.name}: plan covers width {self.plan.dim}, activation width is {width}")
        return self.plan

    def w_scale_index(self, t: int) -> int:
        return self.w_scales.check_index(t) if len(self.w_scales) > 1 else 0

    def w_scale_at(self, t: int) -> float:
        return self.w_scales[self.w_scale_index(t)]


@dataclass
class ConvCache:
    x_shape: tuple
    x_t: np.ndarray
    x_hat: np.ndarray
    w_eff: np.ndarray
    w_hat: np.ndarray
    s_a: Optional[float]
    s_w: Optional[float]
    plan: HadamardPlan
    timestep: int


def conv_weight_effective(layer: QConvLayer) -> np.ndarray:
    """Kernel plus the LoRA update applied on its flattened (C_out, C_in*L*L) view"""
    if layer.lora is None:
        return layer.weight.copy()
    flat = lora_apply(layer.weight.reshape(layer.flat_shape), layer.lora)
    return flat.reshape(layer.weight.shape)


def _check_input(layer: QConvLayer, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    check_conv_shapes(X.shape, layer.weight.shape)
    return X


def width_rows(X: np.ndarray) -> np.ndarray:
    """(B, C, h, w) -> (B*C*h, w)"""
    return X.reshape(-1, X.shape[-1])


def _transform(layer: QConvLayer, X: np.ndarray, plan: HadamardPlan) -> np.ndarray:
    if layer.scheme.transforms_activations:
        return block_transform(width_rows(X), plan).reshape(X.shape)
    return X


def _add_bias(layer: QConvLayer, y: np.ndarray) -> np.ndarray:
    return y + layer.bias[None, :, None, None] if layer.bias is not None else y


def qconv_forward_train(layer: QConvLayer, X: np.ndarray, t: int):
    X = _check_input(layer, X)
    layer.act_scales.check_index(t)
    plan = layer.plan_for(X.shape[-1])
    w_eff = conv_weight_effective(layer)

    if not layer.enabled:
        y = _add_bias(layer, conv2d(X, w_eff, layer.stride, layer.padding))
        return y, ConvCache(X.shape, X, X, w_eff, w_eff, None, None, plan, t)

    s_a = layer.act_scales[t]
    s_w = layer.w_scale_at(t)
    x_t = _transform(layer, X, plan)
    x_hat = _transform(layer, fake_quant(x_t, s_a, layer.a_params), plan)
    w_hat = fake_quant(w_eff, s_w, layer.w_params)
    y = _add_bias(layer, conv2d(x_hat, w_hat, layer.stride, layer.padding))
    return y, ConvCache(X.shape, x_t, x_hat, w_eff, w_hat, s_a, s_w, plan, t)


def qconv_backward(layer: QConvLayer, cache: ConvCache, grad_out: np.ndarray) -> LayerGrads:
    grad_x_hat, grad_w_hat = conv2d_backward(cache.x_hat, cache.w_hat, grad_out, layer.stride, layer.padding)

    grads = LayerGrads(dx=grad_x_hat, timestep=cache.timestep)
    grad_w_eff = grad_w_hat
    if layer.enabled:
        grad_w_eff = ste_backward_input(cache.w_eff, cache.s_w, layer.w_params, grad_w_hat)
        grads.w_scale = ste_backward_scale(cache.w_eff, cache.s_w, layer.w_params, grad_w_hat)
        grad_xq = _transform(layer, grad_x_hat, cache.plan)
        grads.act_scale = ste_backward_scale(cache.x_t, cache.s_a, layer.a_params, grad_xq)
        grads.dx = _transform(layer, ste_backward_input(cache.x_t, cache.s_a, layer.a_params, grad_xq), cache.plan)

    if layer.lora is not None:
        grads.lora_A, grads.lora_B = lora_backward(
            layer.weight.reshape(layer.flat_shape), layer.lora, grad_w_eff.reshape(layer.flat_shape)
        )
    return grads


def qconv_forward(layer: QConvLayer, X: np.ndarray, t: int) -> np.ndarray:
    """Float fake-quant reference path"""
    y, _ = qconv_forward_train(layer, X, t)
    return y


def qconv_forward_int_path(layer: QConvLayer, X: np.ndarray, t: int) -> np.ndarray:
    """
    S * S_W * 2^(-k/2) * Conv((X~H)_int @ H_raw, (W_c)_int)

    The inverse transform runs as an exact int64 butterfly on the width axis,
    then an overflow-checked integer convolution.
    """
    if not layer.enabled:
        return qconv_forward(layer, X, t)
    X = _check_input(layer, X)
    plan = layer.plan_for(X.shape[-1])
    s_a = layer.act_scales[t]
    s_w = layer.w_scale_at(t)

    qx = quantize(_transform(layer, X, plan), s_a, layer.a_params)
    qw = quantize(conv_weight_effective(layer), s_w, layer.w_params)

    if layer.scheme is Scheme.SINGLE_HADAMARD and not plan.is_identity:
        x_int = block_transform_raw(width_rows(qx.ints), plan).reshape(X.shape)
        norm = plan.norm
    else:
        x_int, norm = qx.ints, 1.0
    acc = conv2d_int(x_int, qw.ints, layer.stride, layer.padding)
    return _add_bias(layer, (s_a * s_w * norm) * acc.astype(np.float64))
