"""
Train-teacher command: fit the full-precision toy denoiser and checkpoint it
"""
import logging
from pathlib import Path
from typing import Optional

from ..diffusion.checkpoint import save_model
from ..diffusion.data import SyntheticDataset
from ..diffusion.train import train_teacher
from ..utils.rng import stream
from .base import Command

logger = logging.getLogger(__name__)


class TrainTeacherCommand(Command):
    title = "Teacher training"

    def run(self, output: Optional[str] = None, epochs: Optional[int] = None) -> bool:
        cfg = self.config
        out_dir = Path(output) if output else cfg.teacher_dir
        epochs = epochs if epochs is not None else cfg.teacher_epochs
        schedule = self.schedule()
        dataset = SyntheticDataset(cfg.dataset_size, seed=int(stream(cfg.seed, "data").integers(2 ** 31)))

        logger.info(f"🏋️  Training teacher: {epochs} epochs on {cfg.dataset_size} images, T={schedule.T}")
        model = train_teacher(dataset, schedule, epochs, seed=stream(cfg.seed, "teacher"),
                              batch_size=cfg.teacher_batch_size, lr=cfg.teacher_lr, progress=True)
        save_model(model, schedule, out_dir, extra={"seed": cfg.seed, "dataset_size": cfg.dataset_size})
        return True
