"""
Full-precision teacher training on the simplified noise-prediction objective
"""
import logging

import numpy as np
from tqdm import tqdm

from ..errors import DivergenceError
from ..optim import AdamW
from ..utils.rng import as_generator
from .data import SyntheticDataset
from .model import FloatOps, ToyDenoiser
from .schedule import NoiseSchedule, forward_noise

logger = logging.getLogger(__name__)


def teacher_loss(model: ToyDenoiser, x0: np.ndarray, t: np.ndarray, eps: np.ndarray,
                 schedule: NoiseSchedule) -> float:
    pred = model.predict(forward_noise(x0, t, eps, schedule), t)
    return float(np.mean((pred - eps) ** 2))


def train_teacher(dataset: SyntheticDataset, schedule: NoiseSchedule, epochs: int, seed=0,
                  batch_size: int = 32, lr: float = 2e-3, progress: bool = False) -> ToyDenoiser:
    """
    Minimize E||eps - eps_theta(x_t, t)||^2 with AdamW

    Single-threaded and fully determined by the seed. The per-epoch mean losses
    are kept on model.loss_history.
    """
    rng = as_generator(seed)
    model = ToyDenoiser.init(schedule.T, rng)
    images = dataset.images()
    optimizer = AdamW({"model": lr})
    groups = {name: "model" for name in model.params}
    history = []

    for epoch in tqdm(range(epochs), desc="teacher", disable=not progress):
        order = rng.permutation(len(images))
        losses = []
        for start in range(0, len(order), batch_size):
            x0 = images[order[start:start + batch_size]]
            t = rng.integers(0, schedule.T, size=len(x0))
            eps = rng.standard_normal(x0.shape)

            ops = FloatOps(model.params, track_grads=True)
            pred, tape = model.forward(forward_noise(x0, t, eps, schedule), t, ops)
            diff = pred - eps
            loss = float(np.mean(diff ** 2))
            if not np.isfinite(loss):
                raise DivergenceError(f"Teacher loss became {loss} at epoch {epoch}")

            emb_grads = model.backward(tape, 2.0 * diff / diff.size, ops)
            optimizer.step(model.params, {**ops.grads, **emb_grads}, groups)
            losses.append(loss)

        history.append(float(np.mean(losses)))
        logger.debug(f"Teacher epoch {epoch}: mean loss {history[-1]:.6f}")

    if history:
        logger.info(f"📉 Teacher loss {history[0]:.5f} -> {history[-1]:.5f} over {epochs} epochs")
    model.loss_history = history
    return model
