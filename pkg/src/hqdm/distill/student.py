"""
Quantized student: the teacher's graph with every convolution and linear layer
replaced by a fake-quant layer that carries timestep-wise activation scales,
a weight scale and a LoRA adapter over the frozen teacher weight
"""
import logging
from typing import Dict, Optional, Union

import numpy as np

from ..diffusion.model import CONV_LAYERS, KERNEL_SIZE, LAYER_ORDER, LINEAR_LAYERS, PADDING, ToyDenoiser
from ..errors import ValidationError
from ..hadamard import make_plan
from ..kernels.conv import (
    QConvLayer, conv_weight_effective, qconv_backward, qconv_forward_int_path, qconv_forward_train,
)
from ..kernels.linear import (
    LayerGrads, QLinearLayer, qlinear_backward, qlinear_forward_int_path, qlinear_forward_train,
    weight_effective,
)
from ..lora import LoraAdapter, lora_init, max_rank
from ..quantizer import QuantParams, ScaleTable
from ..utils.rng import as_generator
from .config import DistillConfig

logger = logging.getLogger(__name__)

QuantLayer = Union[QConvLayer, QLinearLayer]

# optimizer groups, each with its own learning rate
ACT_SCALE_GROUP = "act_scale"
W_SCALE_GROUP = "w_scale"
LORA_GROUP = "lora"


def _adapter(rows: int, cols: int, config: DistillConfig, rng) -> Optional[LoraAdapter]:
    rank = min(config.lora_rank, max_rank(rows, cols))
    if rank < 1:
        return None
    return lora_init(rows, cols, rank, seed=rng, scaling=config.lora_scaling)


def build_layer(name: str, params: Dict[str, np.ndarray], T: int, config: DistillConfig, rng=None) -> QuantLayer:
    """Quantized replacement for one teacher layer, scales at 1.0 until calibrated"""
    rng = as_generator(rng if rng is not None else config.seed)
    w_params, a_params = QuantParams(config.w_bits), QuantParams(config.a_bits)
    act_scales = ScaleTable.constant(T)
    w_scales = ScaleTable.constant(T if config.weight_scales_per_timestep else 1)
    weight = params[f"{name}.weight"].copy()
    bias = params[f"{name}.bias"].copy()

    if name in CONV_LAYERS:
        c_in, c_out, stride = CONV_LAYERS[name]
        return QConvLayer(
            name=name, weight=weight, w_params=w_params, a_params=a_params,
            act_scales=act_scales, w_scales=w_scales, stride=stride, padding=PADDING,
            scheme=config.scheme, k_preferred=config.hadamard_k_preferred, bias=bias,
            lora=_adapter(c_out, c_in * KERNEL_SIZE * KERNEL_SIZE, config, rng), enabled=config.quantize,
        )
    if name in LINEAR_LAYERS:
        c_in, c_out = LINEAR_LAYERS[name]
        return QLinearLayer(
            name=name, weight=weight, w_params=w_params, a_params=a_params,
            act_scales=act_scales, w_scales=w_scales, plan=make_plan(c_in, config.hadamard_k_preferred),
            scheme=config.scheme, bias=bias, lora=_adapter(c_in, c_out, config, rng), enabled=config.quantize,
        )
    raise ValidationError(f"Unknown layer '{name}'")


class QuantStudent:
    """Noise predictor whose layers run through QuantOps"""

    def __init__(self, base: ToyDenoiser, layers: Dict[str, QuantLayer], config: DistillConfig):
        missing = [name for name in LAYER_ORDER if name not in layers]
        if missing:
            raise ValidationError(f"Student is missing layers: {', '.join(missing)}")
        self.base = base
        self.layers = layers
        self.config = config
        self.int_path = False

    @classmethod
    def from_teacher(cls, teacher: ToyDenoiser, config: DistillConfig, rng=None) -> "QuantStudent":
        base = teacher.copy()
        rng = as_generator(rng if rng is not None else config.seed)
        layers = {name: build_layer(name, base.params, base.T, config, rng) for name in LAYER_ORDER}
        student = cls(base, layers, config)
        logger.debug(f"Built {config.label} {config.scheme} student with {student.num_trainable} trainable values")
        return student

    @property
    def T(self) -> int:
        return self.base.T

    @property
    def num_trainable(self) -> int:
        total = 0
        for layer in self.layers.values():
            total += len(layer.act_scales) + len(layer.w_scales)
            if layer.lora is not None:
                total += layer.lora.num_trainable
        return total

    def effective_weight(self, name: str) -> np.ndarray:
        layer = self.layers[name]
        return conv_weight_effective(layer) if isinstance(layer, QConvLayer) else weight_effective(layer)

    def set_enabled(self, enabled: bool) -> None:
        for layer in self.layers.values():
            layer.enabled = enabled

    def project_scales(self) -> None:
        for layer in self.layers.values():
            layer.act_scales.project()
            layer.w_scales.project()

    def forward(self, x: np.ndarray, t: int, ops: Optional["QuantOps"] = None):
        ops = ops if ops is not None else QuantOps(self, int_path=self.int_path)
        return self.base.forward(x, t, ops=ops)

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        out, _ = self.forward(x, t)
        return out


class QuantOps:
    """
    LayerOps over the student's quantized layers

    With track_grads the backward pass collects, per trainable array, the
    gradient (grads), the array itself (params, views into the scale tables)
    and its optimizer group (groups). Activation scales are keyed per timestep.
    """

    def __init__(self, student: QuantStudent, track_grads: bool = False, int_path: bool = False):
        self.student = student
        self.track_grads = track_grads
        self.int_path = int_path
        self.grads: Dict[str, np.ndarray] = {}
        self.params: Dict[str, np.ndarray] = {}
        self.groups: Dict[str, str] = {}

    @staticmethod
    def _timestep(t) -> int:
        steps = np.unique(np.asarray(t, dtype=np.int64))
        if steps.size != 1:
            raise ValidationError("The quantized student evaluates one timestep per batch")
        return int(steps[0])

    def linear(self, name, x, t):
        layer = self.student.layers[name]
        if self.int_path:
            return qlinear_forward_int_path(layer, x, self._timestep(t)), None
        return qlinear_forward_train(layer, x, self._timestep(t))

    def linear_backward(self, name, cache, grad):
        layer = self.student.layers[name]
        grads = qlinear_backward(layer, cache, grad)
        self._collect(layer, grads)
        return grads.dx

    def conv(self, name, x, t):
        layer = self.student.layers[name]
        if self.int_path:
            return qconv_forward_int_path(layer, x, self._timestep(t)), None
        return qconv_forward_train(layer, x, self._timestep(t))

    def conv_backward(self, name, cache, grad):
        layer = self.student.layers[name]
        grads = qconv_backward(layer, cache, grad)
        self._collect(layer, grads)
        return grads.dx

    def _add(self, key: str, param: np.ndarray, grad, group: str) -> None:
        grad = np.asarray(grad, dtype=np.float64).reshape(param.shape)
        if key in self.grads:
            self.grads[key] = self.grads[key] + grad
        else:
            self.grads[key] = grad
            self.params[key] = param
            self.groups[key] = group

    def _collect(self, layer: QuantLayer, grads: LayerGrads) -> None:
        if not self.track_grads:
            return
        t = grads.timestep
        if grads.act_scale is not None and layer.act_scales.learnable:
            self._add(f"{layer.name}.act_scale[{t}]", layer.act_scales.scales[t:t + 1], grads.act_scale, ACT_SCALE_GROUP)
        if grads.w_scale is not None and layer.w_scales.learnable:
            i = layer.w_scale_index(t)
            key = f"{layer.name}.w_scale" if len(layer.w_scales) == 1 else f"{layer.name}.w_scale[{i}]"
            self._add(key, layer.w_scales.scales[i:i + 1], grads.w_scale, W_SCALE_GROUP)
        if grads.lora_A is not None:
            self._add(f"{layer.name}.lora_A", layer.lora.A, grads.lora_A, LORA_GROUP)
            self._add(f"{layer.name}.lora_B", layer.lora.B, grads.lora_B, LORA_GROUP)
