import numpy as np
import pytest

from hqdm.config import HqdmConfig
from hqdm.diffusion.data import SyntheticDataset
from hqdm.diffusion.model import ToyDenoiser
from hqdm.diffusion.schedule import make_schedule
from hqdm.diffusion.train import train_teacher
from hqdm.distill.config import DistillConfig
from hqdm.utils.rng import stream

SMALL_T = 20


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_schedule():
    return make_schedule(SMALL_T, 1e-2, 0.5)


@pytest.fixture(scope="session")
def small_teacher(small_schedule):
    """A briefly trained teacher; good enough to exercise every pipeline stage"""
    return train_teacher(SyntheticDataset(48, seed=3), small_schedule, epochs=2, seed=5, batch_size=16)


@pytest.fixture(scope="session")
def untrained_model():
    return ToyDenoiser.init(SMALL_T, seed=9)


@pytest.fixture(scope="session")
def default_teacher():
    """Teacher trained at the project's default budget, as train-teacher would; slow tests only"""
    cfg = HqdmConfig()
    schedule = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    dataset = SyntheticDataset(cfg.dataset_size, seed=int(stream(cfg.seed, "data").integers(2 ** 31)))
    teacher = train_teacher(dataset, schedule, cfg.teacher_epochs, seed=stream(cfg.seed, "teacher"),
                            batch_size=cfg.teacher_batch_size, lr=cfg.teacher_lr)
    return teacher, schedule, dataset


@pytest.fixture
def small_config():
    return DistillConfig(
        w_bits=4, a_bits=4, epochs=1, batch_size=4, samples_per_epoch=4,
        n_steps=4, n_calib=4, lora_rank=2, seed=11,
    )


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.setenv("HQDM_THREADS", "1")
