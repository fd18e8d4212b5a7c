"""
Quantized linear layer Y = X @ W' in three schemes

plain            quantize X and W'
single_hadamard  quantize XH online, apply H back in the integer domain, W' untouched
double_hadamard  quantize XH online and H^T W' offline (comparison baseline only)

Each scheme has a float fake-quant reference path and an integer execution
path; the straight-through training forward/backward lives here as well.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ValidationError
from ..hadamard import HadamardPlan, block_transform, block_transform_axis
from ..lora import LoraAdapter, lora_apply, lora_backward
from ..quantizer import (
    QuantParams, ScaleTable, dequantize, fake_quant, quantize,
    ste_backward_input, ste_backward_scale,
)
from .intmath import int_matmul
from .schemes import Scheme

logger = logging.getLogger(__name__)


@dataclass
class LayerGrads:
    """Gradients a quantized layer hands back; the frozen weight never appears here"""
    dx: np.ndarray
    timestep: int
    act_scale: Optional[float] = None
    w_scale: Optional[float] = None
    lora_A: Optional[np.ndarray] = None
    lora_B: Optional[np.ndarray] = None


@dataclass
class QLinearLayer:
    name: str
    weight: np.ndarray
    w_params: QuantParams
    a_params: QuantParams
    act_scales: ScaleTable
    w_scales: ScaleTable
    plan: HadamardPlan
    scheme: Scheme = Scheme.SINGLE_HADAMARD
    bias: Optional[np.ndarray] = None
    lora: Optional[LoraAdapter] = None
    enabled: bool = True

    def __post_init__(self):
        self.scheme = Scheme.parse(self.scheme)
        if self.weight.ndim != 2:
            raise ValidationError(f"{self.name}: linear weight must be 2-D, got {self.weight.shape}")
        if self.plan.dim != self.in_features:
            raise ValidationError(f"{self.name}: plan covers {self.plan.dim}, layer has {self.in_features} inputs")
        if self.lora is not None and self.lora.shape != self.weight.shape:
            raise ValidationError(f"{self.name}: adapter {self.lora.shape} does not match weight {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.out_features,):
            raise ValidationError(f"{self.name}: bias shape {self.bias.shape} != ({self.out_features},)")

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    @property
    def w_scale(self) -> float:
        return self.w_scales[0]

    def w_scale_index(self, t: int) -> int:
        """Weight scales are shared (one entry) unless the table is per-timestep"""
        return self.w_scales.check_index(t) if len(self.w_scales) > 1 else 0

    def w_scale_at(self, t: int) -> float:
        return self.w_scales[self.w_scale_index(t)]


@dataclass
class LinearCache:
    x_t: np.ndarray
    x_hat: np.ndarray
    w_eff: np.ndarray
    w_hat: np.ndarray
    s_a: Optional[float]
    s_w: Optional[float]
    timestep: int


def weight_effective(layer: QLinearLayer) -> np.ndarray:
    """W' = W + B A when an adapter is attached"""
    if layer.lora is None:
        return layer.weight.copy()
    return lora_apply(layer.weight, layer.lora)


def _check_input(layer: QLinearLayer, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layer.in_features:
        raise ValidationError(f"{layer.name}: expected input (T, {layer.in_features}), got {X.shape}")
    return X


def _transform(layer: QLinearLayer, x: np.ndarray) -> np.ndarray:
    if layer.scheme.transforms_activations:
        return block_transform(x, layer.plan)
    return x


def _add_bias(layer: QLinearLayer, y: np.ndarray) -> np.ndarray:
    return y + layer.bias if layer.bias is not None else y


def qlinear_forward_train(layer: QLinearLayer, X: np.ndarray, t: int):
    """Fake-quant forward returning (Y, cache) for qlinear_backward"""
    X = _check_input(layer, X)
    layer.act_scales.check_index(t)
    if layer.scheme is Scheme.DOUBLE_HADAMARD:
        raise ValidationError(f"{layer.name}: double_hadamard is a comparison scheme and cannot be trained")
    w_eff = weight_effective(layer)

    if not layer.enabled:
        y = _add_bias(layer, X @ w_eff)
        return y, LinearCache(X, X, w_eff, w_eff, None, None, t)

    s_a = layer.act_scales[t]
    s_w = layer.w_scale_at(t)
    x_t = _transform(layer, X)
    # H is symmetric and orthogonal, so the same transform inverts it
    x_hat = _transform(layer, fake_quant(x_t, s_a, layer.a_params))
    w_hat = fake_quant(w_eff, s_w, layer.w_params)
    y = _add_bias(layer, x_hat @ w_hat)
    return y, LinearCache(x_t, x_hat, w_eff, w_hat, s_a, s_w, t)


def qlinear_backward(layer: QLinearLayer, cache: LinearCache, grad_out: np.ndarray) -> LayerGrads:
    """Straight-through adjoint of qlinear_forward_train"""
    grad_x_hat = grad_out @ cache.w_hat.T
    grad_w_hat = cache.x_hat.T @ grad_out

    grads = LayerGrads(dx=grad_x_hat, timestep=cache.timestep)
    grad_w_eff = grad_w_hat
    if layer.enabled:
        grad_w_eff = ste_backward_input(cache.w_eff, cache.s_w, layer.w_params, grad_w_hat)
        grads.w_scale = ste_backward_scale(cache.w_eff, cache.s_w, layer.w_params, grad_w_hat)
        grad_xq = _transform(layer, grad_x_hat)
        grads.act_scale = ste_backward_scale(cache.x_t, cache.s_a, layer.a_params, grad_xq)
        grads.dx = _transform(layer, ste_backward_input(cache.x_t, cache.s_a, layer.a_params, grad_xq))

    if layer.lora is not None:
        grads.lora_A, grads.lora_B = lora_backward(layer.weight, layer.lora, grad_w_eff)
    return grads


def qlinear_forward(layer: QLinearLayer, X: np.ndarray, t: int) -> np.ndarray:
    """Float reference: dequantized operands multiplied in float64"""
    if layer.scheme is Scheme.DOUBLE_HADAMARD:
        return double_hadamard_linear(layer, X, t)
    y, _ = qlinear_forward_train(layer, X, t)
    return y


def qlinear_forward_int_path(layer: QLinearLayer, X: np.ndarray, t: int) -> np.ndarray:
    """
    Integer execution: S_XH * S_W * 2^(-k/2) * ((XH)_int @ H_raw @ W_int)

    Both GEMMs run on int64 with overflow checks; the real prefactor is applied
    once at the end.
    """
    if layer.scheme is Scheme.DOUBLE_HADAMARD:
        return double_hadamard_linear(layer, X, t, int_path=True)
    if not layer.enabled:
        return qlinear_forward(layer, X, t)
    X = _check_input(layer, X)
    s_a = layer.act_scales[t]
    s_w = layer.w_scale_at(t)

    qx = quantize(_transform(layer, X), s_a, layer.a_params)
    qw = quantize(weight_effective(layer), s_w, layer.w_params)

    if layer.scheme is Scheme.SINGLE_HADAMARD and not layer.plan.is_identity:
        inner = int_matmul(qx.ints, layer.plan.raw_matrix())
        norm = layer.plan.norm
    else:
        inner, norm = qx.ints, 1.0
    acc = int_matmul(inner, qw.ints)
    return _add_bias(layer, (s_a * s_w * norm) * acc.astype(np.float64))


def quantized_weight(layer: QLinearLayer, t: int = 0):
    """The weight integers the plain and single_hadamard schemes multiply with"""
    return quantize(weight_effective(layer), layer.w_scale_at(t), layer.w_params)


def transformed_weight(layer: QLinearLayer) -> np.ndarray:
    """H^T W' along the input-channel axis"""
    return block_transform_axis(weight_effective(layer), layer.plan, axis=0)


def double_weight_scale(layer: QLinearLayer, w_eff: np.ndarray, hw: np.ndarray, t: int) -> float:
    """Offline scale for H^T W': the layer's weight scale stretched by the max-abs growth"""
    s_w = layer.w_scale_at(t)
    w_max = float(np.max(np.abs(w_eff)))
    if w_max == 0.0:
        return s_w
    return s_w * (float(np.max(np.abs(hw))) / w_max)


def double_hadamard_linear(layer: QLinearLayer, X: np.ndarray, t: int, int_path: bool = False) -> np.ndarray:
    """S_XH * S_HW * (XH)_int @ (H^T W')_int"""
    X = _check_input(layer, X)
    s_a = layer.act_scales[t]
    qx = quantize(block_transform(X, layer.plan), s_a, layer.a_params)

    w_eff = weight_effective(layer)
    hw = block_transform_axis(w_eff, layer.plan, axis=0)
    qw = quantize(hw, double_weight_scale(layer, w_eff, hw, t), layer.w_params)

    if int_path:
        y = (qx.scale * qw.scale) * int_matmul(qx.ints, qw.ints).astype(np.float64)
    else:
        y = dequantize(qx) @ dequantize(qw)
    return _add_bias(layer, y)
