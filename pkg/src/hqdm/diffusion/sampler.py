"""
Deterministic DDIM (eta = 0) sampling over a uniform sub-schedule
"""
import logging
from typing import Dict, Optional, Protocol, Tuple, Union

import numpy as np

from ..constants import SAMPLE_CHUNK
from ..errors import ValidationError
from ..utils.rng import as_generator
from ..utils.threads import parallel_map
from .data import IMAGE_SIZE
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)


class NoisePredictor(Protocol):
    def predict(self, x: np.ndarray, t: int) -> np.ndarray: ...


def ddim_timesteps(T: int, n_steps: int) -> np.ndarray:
    """n_steps distinct timesteps from T-1 down to 0, evenly spaced"""
    if not 1 <= n_steps <= T:
        raise ValidationError(f"DDIM step count must be in [1, {T}], got {n_steps}")
    return np.round(np.linspace(T - 1, 0, n_steps)).astype(np.int64)


def _run(model: NoisePredictor, schedule: NoiseSchedule, timesteps: np.ndarray, x: np.ndarray,
         clip_x0: bool, keep_trajectory: bool) -> Tuple[np.ndarray, Dict[int, np.ndarray]]:
    alphas_bar = schedule.alphas_bar
    trajectory: Dict[int, np.ndarray] = {}
    for i, t in enumerate(timesteps):
        t = int(t)
        if keep_trajectory:
            trajectory[t] = x.copy()
        eps = model.predict(x, t)
        x0 = (x - np.sqrt(1.0 - alphas_bar[t]) * eps) / np.sqrt(alphas_bar[t])
        if clip_x0:
            x0 = np.clip(x0, -1.0, 1.0)
        if i + 1 < len(timesteps):
            a_next = alphas_bar[int(timesteps[i + 1])]
            x = np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * eps
        else:
            x = x0
    return x, trajectory


def ddim_sample(model: NoisePredictor, schedule: NoiseSchedule, n_steps: int, seed=0,
                n_samples: int = 16, clip_x0: bool = True, return_trajectory: bool = False,
                parallel: bool = True) -> Union[np.ndarray, Tuple[np.ndarray, Dict[int, np.ndarray]]]:
    """
    Sample n_samples images from pure noise

    A quantized student picks act_scales[t] itself at every step t. The result
    depends only on (model, seed, n_steps); with return_trajectory the x_t fed
    to the model at every visited timestep is returned as well.
    """
    if n_samples < 1:
        raise ValidationError(f"Sample count must be positive, got {n_samples}")
    timesteps = ddim_timesteps(schedule.T, n_steps)
    rng = as_generator(seed)
    noise = rng.standard_normal((n_samples, 1, IMAGE_SIZE, IMAGE_SIZE))

    chunks = [noise[i:i + SAMPLE_CHUNK] for i in range(0, n_samples, SAMPLE_CHUNK)]
    logger.debug(f"DDIM: {n_steps} steps, {n_samples} samples in {len(chunks)} chunk(s)")

    def run(part: np.ndarray):
        return _run(model, schedule, timesteps, part, clip_x0, return_trajectory)

    results = parallel_map(run, chunks) if parallel else [run(part) for part in chunks]

    samples = np.concatenate([r[0] for r in results], axis=0)
    if not return_trajectory:
        return samples
    trajectory = {int(t): np.concatenate([r[1][int(t)] for r in results], axis=0) for t in timesteps}
    return samples, trajectory
