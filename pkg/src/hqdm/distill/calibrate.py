"""
Data-free post-training calibration of a quantized student
"""
import logging

import numpy as np

from ..analysis import ActivationRecorder, capture_activations
from ..diffusion.model import ToyDenoiser
from ..diffusion.schedule import NoiseSchedule
from ..errors import ValidationError
from ..hadamard import block_transform
from ..kernels.conv import QConvLayer, width_rows
from ..quantizer import init_scale, search_scale
from ..utils.rng import stream
from .config import DistillConfig
from .student import QuantLayer, QuantStudent

logger = logging.getLogger(__name__)


def quantizer_input(layer: QuantLayer, x: np.ndarray) -> np.ndarray:
    """What the layer's activation quantizer sees for input x"""
    x = np.asarray(x, dtype=np.float64)
    if not layer.scheme.transforms_activations:
        return x
    if isinstance(layer, QConvLayer):
        return block_transform(width_rows(x), layer.plan_for(x.shape[-1]))
    return block_transform(x, layer.plan)


def calibrate_ptq(teacher: ToyDenoiser, schedule: NoiseSchedule, n_calib: int,
                  config: DistillConfig) -> QuantStudent:
    """
    Build a student and set every scale from the teacher's own DDIM trajectories

    Only noise seeds are consumed, no dataset. Timesteps the sampler does not
    visit take the scale of the nearest visited one.
    """
    if teacher is None:
        raise ValidationError("PTQ calibration needs a trained teacher")
    if n_calib < 1:
        raise ValidationError(f"Calibration needs at least one sample, got {n_calib}")

    student = QuantStudent.from_teacher(teacher, config, rng=stream(config.seed, "distill"))
    recorder = capture_activations(teacher, schedule, config.n_steps, n_calib,
                                   seed=stream(config.seed, "calib"), recorder=ActivationRecorder())
    choose = init_scale if config.calib_method == "max" else search_scale

    for name, layer in student.layers.items():
        calibrated = {t: choose(quantizer_input(layer, x), layer.a_params) for t, x in recorder.by_layer(name).items()}
        layer.act_scales.fill_from(calibrated)
        layer.w_scales.scales[:] = choose(student.effective_weight(name), layer.w_params)
        logger.debug(
            f"{name}: act scales {min(calibrated.values()):.4g}..{max(calibrated.values()):.4g}, "
            f"weight scale {layer.w_scales[0]:.4g}"
        )

    logger.info(f"📏 Calibrated {config.label} {config.scheme} student on {n_calib} noise trajectories")
    return student
