from .checkpoint import load_model, save_model
from .data import SyntheticDataset
from .model import FloatOps, ToyDenoiser
from .sampler import ddim_sample, ddim_timesteps
from .schedule import NoiseSchedule, forward_noise, make_schedule
from .train import train_teacher

__all__ = [
    'FloatOps',
    'NoiseSchedule',
    'SyntheticDataset',
    'ToyDenoiser',
    'ddim_sample',
    'ddim_timesteps',
    'forward_noise',
    'load_model',
    'make_schedule',
    'save_model',
    'train_teacher',
]
