"""
Small convolutional encoder-decoder noise predictor with a manual backward pass

The graph is fixed; the conv/linear layers themselves are delegated to a
LayerOps object so the same graph runs the float teacher (FloatOps) and the
quantized student (distill.student.QuantOps).
"""
import logging
from typing import Callable, Dict, Optional, Protocol, Tuple

import numpy as np

from ..errors import ValidationError
from ..kernels.lowering import conv2d, conv2d_backward
from ..utils.rng import as_generator
from .data import IMAGE_SIZE

logger = logging.getLogger(__name__)

KERNEL_SIZE = 3
PADDING = 1

# name -> (c_in, c_out, stride)
CONV_LAYERS = {
    "conv_in": (1, 16, 1),
    "down": (16, 32, 2),
    "mid": (32, 32, 1),
    "up": (32, 16, 1),
    "conv_out": (16, 1, 1),
}
# name -> (c_in, c_out), applied per spatial token of the 8x8 bottleneck
LINEAR_LAYERS = {
    "fc1": (32, 64),
    "fc2": (64, 32),
}
# per-timestep learned bias added after these convolutions
EMBED_STAGES = {"conv_in": 16, "down": 32, "mid": 32, "up": 16}

LAYER_ORDER = ("conv_in", "down", "mid", "fc1", "fc2", "up", "conv_out")

Recorder = Callable[[str, np.ndarray, object], None]


def silu(x: np.ndarray) -> np.ndarray:
    return x * (0.5 * (1.0 + np.tanh(0.5 * x)))


def silu_grad(x: np.ndarray) -> np.ndarray:
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return sig * (1.0 + x * (1.0 - sig))


def upsample2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(grad: np.ndarray) -> np.ndarray:
    b, c, h, w = grad.shape
    return grad.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class LayerOps(Protocol):
    def linear(self, name: str, x: np.ndarray, t) -> Tuple[np.ndarray, object]: ...

    def linear_backward(self, name: str, cache, grad: np.ndarray) -> np.ndarray: ...

    def conv(self, name: str, x: np.ndarray, t) -> Tuple[np.ndarray, object]: ...

    def conv_backward(self, name: str, cache, grad: np.ndarray) -> np.ndarray: ...


class FloatOps:
    """Full-precision layers reading the model's parameters; optionally accumulates their gradients"""

    def __init__(self, params: Dict[str, np.ndarray], track_grads: bool = False):
        self.params = params
        self.track_grads = track_grads
        self.grads: Dict[str, np.ndarray] = {}

    def _accumulate(self, name: str, grad: np.ndarray) -> None:
        if name in self.grads:
            self.grads[name] += grad
        else:
            self.grads[name] = grad.copy()

    def linear(self, name, x, t):
        return x @ self.params[f"{name}.weight"] + self.params[f"{name}.bias"], x

    def linear_backward(self, name, cache, grad):
        if self.track_grads:
            self._accumulate(f"{name}.weight", cache.T @ grad)
            self._accumulate(f"{name}.bias", grad.sum(axis=0))
        return grad @ self.params[f"{name}.weight"].T

    def conv(self, name, x, t):
        stride = CONV_LAYERS[name][2]
        y = conv2d(x, self.params[f"{name}.weight"], stride, PADDING) + self.params[f"{name}.bias"][None, :, None, None]
        return y, x

    def conv_backward(self, name, cache, grad):
        stride = CONV_LAYERS[name][2]
        grad_x, grad_w = conv2d_backward(cache, self.params[f"{name}.weight"], grad, stride, PADDING)
        if self.track_grads:
            self._accumulate(f"{name}.weight", grad_w)
            self._accumulate(f"{name}.bias", grad.sum(axis=(0, 2, 3)))
        return grad_x


class ToyDenoiser:
    """
    eps_theta(x_t, t) for 16x16 grayscale images

    conv_in (1->16) -> down (16->32, stride 2) -> mid (32->32) -> fc1/fc2 residual
    bottleneck over the 8x8 tokens -> nearest upsample -> up (32->16) + skip ->
    conv_out (16->1). SiLU after every stage, learned per-timestep stage biases.
    """

    def __init__(self, params: Dict[str, np.ndarray], T: int):
        self.params = params
        self.T = T
        self.loss_history = []
        self._check_params()

    @staticmethod
    def parameter_shapes(T: int) -> Dict[str, tuple]:
        shapes = {}
        for name, (c_in, c_out, _) in CONV_LAYERS.items():
            shapes[f"{name}.weight"] = (c_out, c_in, KERNEL_SIZE, KERNEL_SIZE)
            shapes[f"{name}.bias"] = (c_out,)
        for name, (c_in, c_out) in LINEAR_LAYERS.items():
            shapes[f"{name}.weight"] = (c_in, c_out)
            shapes[f"{name}.bias"] = (c_out,)
        for stage, channels in EMBED_STAGES.items():
            shapes[f"temb.{stage}"] = (T, channels)
        return shapes

    @classmethod
    def init(cls, T: int, seed=0) -> "ToyDenoiser":
        rng = as_generator(seed)
        params = {}
        for name, shape in cls.parameter_shapes(T).items():
            if name.endswith(".weight"):
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                gain = 2.0 if len(shape) == 4 else 1.0
                params[name] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
            else:
                params[name] = np.zeros(shape)
        # start the residual branch and the output head near zero
        params["fc2.weight"] *= 0.1
        params["conv_out.weight"] *= 0.1
        return cls(params, T)

    def _check_params(self) -> None:
        expected = self.parameter_shapes(self.T)
        missing = sorted(set(expected) - set(self.params))
        if missing:
            raise ValidationError(f"Model parameters missing: {', '.join(missing)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValidationError(f"Parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "ToyDenoiser":
        return ToyDenoiser({name: value.copy() for name, value in self.params.items()}, self.T)

    def _timesteps(self, t, batch: int) -> np.ndarray:
        t_vec = np.broadcast_to(np.asarray(t, dtype=np.int64), (batch,))
        if np.any(t_vec < 0) or np.any(t_vec >= self.T):
            raise ValidationError(f"Timestep outside [0, {self.T})")
        return t_vec

    def _embed(self, stage: str, t_vec: np.ndarray) -> np.ndarray:
        return self.params[f"temb.{stage}"][t_vec][:, :, None, None]

    def forward(self, x: np.ndarray, t, ops: Optional[LayerOps] = None,
                recorder: Optional[Recorder] = None) -> Tuple[np.ndarray, dict]:
        """Returns (eps prediction, tape for backward)"""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != (1, IMAGE_SIZE, IMAGE_SIZE):
            raise ValidationError(f"Expected input (B, 1, {IMAGE_SIZE}, {IMAGE_SIZE}), got {x.shape}")
        ops = ops if ops is not None else FloatOps(self.params)
        batch = x.shape[0]
        t_vec = self._timesteps(t, batch)
        tape = {"t": t_vec, "caches": {}, "outputs": {}}

        def run(kind: str, name: str, inp: np.ndarray) -> np.ndarray:
            if recorder is not None:
                recorder(name, inp, t)
            out, cache = (ops.conv if kind == "conv" else ops.linear)(name, inp, t)
            tape["caches"][name] = cache
            tape["outputs"][name] = out
            return out

        z1 = run("conv", "conv_in", x) + self._embed("conv_in", t_vec)
        a1 = silu(z1)
        z2 = run("conv", "down", a1) + self._embed("down", t_vec)
        a2 = silu(z2)
        z3 = run("conv", "mid", a2) + self._embed("mid", t_vec)
        a3 = silu(z3)

        side = a3.shape[-1]
        tok = a3.transpose(0, 2, 3, 1).reshape(batch * side * side, -1)
        u = run("linear", "fc1", tok)
        v = silu(u)
        tok2 = tok + run("linear", "fc2", v)
        a4 = tok2.reshape(batch, side, side, -1).transpose(0, 3, 1, 2)

        z5 = run("conv", "up", upsample2(a4)) + self._embed("up", t_vec)
        a5 = silu(z5) + a1
        out = run("conv", "conv_out", a5)

        tape.update(z1=z1, z2=z2, z3=z3, u=u, z5=z5, side=side, batch=batch)
        return out, tape

    def backward(self, tape: dict, grad_out: np.ndarray, ops: LayerOps) -> Dict[str, np.ndarray]:
        """Propagate dL/d(output) through the graph; layer gradients land in ops, stage-bias gradients are returned"""
        caches = tape["caches"]
        t_vec, batch, side = tape["t"], tape["batch"], tape["side"]
        emb_grads: Dict[str, np.ndarray] = {}

        def embed_grad(stage: str, grad_z: np.ndarray) -> None:
            g = np.zeros_like(self.params[f"temb.{stage}"])
            np.add.at(g, t_vec, grad_z.sum(axis=(2, 3)))
            emb_grads[f"temb.{stage}"] = g

        grad_a5 = ops.conv_backward("conv_out", caches["conv_out"], grad_out)
        grad_a1 = grad_a5.copy()
        grad_z5 = grad_a5 * silu_grad(tape["z5"])
        embed_grad("up", grad_z5)
        grad_a4 = upsample2_backward(ops.conv_backward("up", caches["up"], grad_z5))

        grad_tok2 = grad_a4.transpose(0, 2, 3, 1).reshape(batch * side * side, -1)
        grad_v = ops.linear_backward("fc2", caches["fc2"], grad_tok2)
        grad_u = grad_v * silu_grad(tape["u"])
        grad_tok = grad_tok2 + ops.linear_backward("fc1", caches["fc1"], grad_u)
        grad_a3 = grad_tok.reshape(batch, side, side, -1).transpose(0, 3, 1, 2)

        grad_z3 = grad_a3 * silu_grad(tape["z3"])
        embed_grad("mid", grad_z3)
        grad_a2 = ops.conv_backward("mid", caches["mid"], grad_z3)
        grad_z2 = grad_a2 * silu_grad(tape["z2"])
        embed_grad("down", grad_z2)
        grad_a1 = grad_a1 + ops.conv_backward("down", caches["down"], grad_z2)
        grad_z1 = grad_a1 * silu_grad(tape["z1"])
        embed_grad("conv_in", grad_z1)
        ops.conv_backward("conv_in", caches["conv_in"], grad_z1)
        return emb_grads

    def predict(self, x: np.ndarray, t) -> np.ndarray:
        out, _ = self.forward(x, t)
        return out


def first_nonfinite_layer(tape: dict) -> Optional[str]:
    """Name of the earliest layer (in execution order) whose output is not finite"""
    for name, out in tape["outputs"].items():
        if not np.all(np.isfinite(out)):
            return name
    return None
