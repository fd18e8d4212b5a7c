"""
Quantization-aware distillation of a quantized student against its float teacher

The teacher and the student see the same noisy input x_t at the same timestep;
the loss is the MSE between their noise predictions. Only scales and LoRA
factors move; the frozen weights never do.
"""
import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from ..constants import MANIFEST_NAME, METRICS_COLUMNS
from ..diffusion.model import ToyDenoiser, first_nonfinite_layer
from ..diffusion.sampler import ddim_sample
from ..diffusion.schedule import NoiseSchedule, forward_noise
from ..errors import DivergenceError, ValidationError
from ..optim import AdamW
from ..tensor import PathLike
from ..utils.rng import stream
from .calibrate import calibrate_ptq
from .config import DistillConfig
from .state import RunState, load_run_state, make_optimizer, save_run_state
from .student import QuantOps, QuantStudent

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"


@dataclass
class DistillResult:
    student: QuantStudent
    metrics: List[dict]
    ptq_loss: float
    final_loss: float
    run_dir: Optional[Path] = None


def generate_inputs(teacher: ToyDenoiser, schedule: NoiseSchedule, config: DistillConfig,
                    rng: np.random.Generator, n_samples: Optional[int] = None) -> Dict[int, np.ndarray]:
    """
    Noisy inputs x_t for every timestep the sampler visits, without touching a dataset

    "trajectory" takes the x_t the teacher's own DDIM run produces from pure
    noise; "forward_noise" noises the teacher's final samples with fresh eps.
    """
    n_samples = n_samples or config.samples_per_epoch
    samples, trajectory = ddim_sample(teacher, schedule, config.n_steps, seed=rng, n_samples=n_samples,
                                      return_trajectory=True)
    if config.input_source == "trajectory":
        return trajectory
    return {t: forward_noise(samples, t, rng.standard_normal(samples.shape), schedule) for t in trajectory}


def distill_step(teacher: ToyDenoiser, student: QuantStudent, t: int, batch: np.ndarray,
                 config: Optional[DistillConfig] = None, optimizer: Optional[AdamW] = None) -> float:
    """
    MSE between teacher and student noise predictions at timestep t

    With an optimizer the student's scales and adapters take one step; the
    returned loss is the one measured before the update.
    """
    config = config or student.config
    if not 0 <= int(t) < student.T:
        raise ValidationError(f"Timestep {t} outside [0, {student.T})")
    target = teacher.predict(batch, int(t))
    ops = QuantOps(student, track_grads=optimizer is not None)
    pred, tape = student.forward(batch, int(t), ops)
    diff = pred - target
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        layer = first_nonfinite_layer(tape) or "output"
        raise DivergenceError(f"Distillation loss is {loss} at timestep {t}; first non-finite output in '{layer}'")

    if optimizer is not None:
        student.base.backward(tape, 2.0 * diff / diff.size, ops)
        optimizer.step(ops.params, ops.grads, ops.groups)
        student.project_scales()
    return loss


def evaluate_loss(teacher: ToyDenoiser, student: QuantStudent, inputs: Dict[int, np.ndarray]) -> float:
    """Mean over timesteps of the per-timestep distillation loss, no updates"""
    if not inputs:
        raise ValidationError("No evaluation inputs")
    return float(np.mean([distill_step(teacher, student, t, x) for t, x in inputs.items()]))


def write_metrics(path: PathLike, rows: List[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "loss": f"{row['loss']:.6g}"})
    return path


def _fresh_state(teacher: ToyDenoiser, schedule: NoiseSchedule, config: DistillConfig) -> RunState:
    student = calibrate_ptq(teacher, schedule, config.n_calib, config)
    return RunState(student=student, optimizer=make_optimizer(config), schedule=schedule,
                    epoch=0, rng=stream(config.seed, "distill"))


def distill_run(teacher: ToyDenoiser, schedule: NoiseSchedule, config: DistillConfig,
                output_dir: Optional[PathLike] = None, resume: bool = False,
                progress: bool = False) -> DistillResult:
    """
    PTQ calibration followed by epochs x timesteps x batches of distillation

    With an output directory the run state is saved after every epoch and the
    metrics CSV at the end; resume continues from the last saved epoch.
    """
    run_dir = Path(output_dir) if output_dir is not None else None
    if resume and run_dir is not None and (run_dir / MANIFEST_NAME).exists():
        state = load_run_state(run_dir)
        # only the epoch budget may change between a run and its resumption
        if replace(state.config, epochs=config.epochs) != config:
            raise ValidationError(f"Run in {run_dir} was started with a different configuration")
        state.student.config = config
    else:
        state = _fresh_state(teacher, schedule, config)

    eval_inputs = generate_inputs(teacher, schedule, config, stream(config.seed, "eval"))
    if state.ptq_loss is None:
        state.ptq_loss = evaluate_loss(teacher, state.student, eval_inputs)
        logger.info(f"📊 PTQ {config.label} {config.scheme} loss: {state.ptq_loss:.6g}")

    for epoch in tqdm(range(state.epoch, config.epochs), desc="distill", disable=not progress):
        inputs = generate_inputs(teacher, schedule, config, state.rng)
        epoch_losses = {}
        for t, x_t in inputs.items():
            order = state.rng.permutation(len(x_t))
            losses = [
                distill_step(teacher, state.student, t, x_t[order[start:start + config.batch_size]], config,
                             state.optimizer)
                for start in range(0, len(order), config.batch_size)
            ]
            epoch_losses[t] = float(np.mean(losses))
            state.metrics.append({
                "epoch": epoch, "timestep": t, "loss": epoch_losses[t],
                "scheme": config.scheme, "bits": config.label,
            })
        final_t = min(epoch_losses)
        logger.info(
            f"📉 Epoch {epoch}: mean loss {np.mean(list(epoch_losses.values())):.6g}, "
            f"loss at step {final_t} {epoch_losses[final_t]:.6g}"
        )
        state.epoch = epoch + 1
        if run_dir is not None:
            save_run_state(run_dir, state)

    final_loss = evaluate_loss(teacher, state.student, eval_inputs)
    logger.info(f"📊 Distilled {config.label} {config.scheme} loss: {state.ptq_loss:.6g} -> {final_loss:.6g}")
    if run_dir is not None:
        save_run_state(run_dir, state)
        write_metrics(run_dir / METRICS_FILE, state.metrics)
    return DistillResult(state.student, state.metrics, state.ptq_loss, final_loss, run_dir)
