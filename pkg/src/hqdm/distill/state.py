"""
Run-state persistence: everything needed to resume a distillation run bitwise

Layout of a run directory:
  manifest.json          config, epoch, rng state, metrics so far, tensor index
  params/*.hqt           base model parameters (frozen weights, stage biases)
  student/*.hqt          scale tables and LoRA factors per layer
  optim/*.hqt            AdamW moments
All tensors are written with the 64-bit payload.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..constants import TENSOR_SUFFIX, TENSOR_VERSION_F64
from ..diffusion.checkpoint import (
    read_manifest, read_parameters, schedule_from_manifest, write_manifest, write_parameters,
)
from ..diffusion.model import ToyDenoiser
from ..diffusion.schedule import NoiseSchedule
from ..errors import ValidationError
from ..optim import AdamW
from ..tensor import PathLike, read_tensor, write_tensor
from ..utils.rng import generator_state, restore_generator
from .config import DistillConfig
from .student import ACT_SCALE_GROUP, LORA_GROUP, W_SCALE_GROUP, QuantStudent

logger = logging.getLogger(__name__)

STUDENT_KIND = "student"


@dataclass
class RunState:
    student: QuantStudent
    optimizer: AdamW
    schedule: NoiseSchedule
    epoch: int
    rng: np.random.Generator
    metrics: List[dict] = field(default_factory=list)
    ptq_loss: Optional[float] = None

    @property
    def config(self) -> DistillConfig:
        return self.student.config


def _student_tensors(student: QuantStudent) -> Dict[str, np.ndarray]:
    tensors = {}
    for name, layer in student.layers.items():
        tensors[f"{name}.act_scales"] = layer.act_scales.scales
        tensors[f"{name}.w_scales"] = layer.w_scales.scales
        if layer.lora is not None:
            tensors[f"{name}.lora_A"] = layer.lora.A
            tensors[f"{name}.lora_B"] = layer.lora.B
    return tensors


def _write_group(directory: Path, sub: str, tensors: Dict[str, np.ndarray]) -> Dict[str, str]:
    index = {}
    for i, key in enumerate(sorted(tensors)):
        rel = f"{sub}/{i:04d}{TENSOR_SUFFIX}"
        write_tensor(directory / rel, tensors[key], version=TENSOR_VERSION_F64)
        index[key] = rel
    return index


def _read_into(directory: Path, rel: str, target: np.ndarray, what: str) -> None:
    value = read_tensor(directory / rel)
    if value.shape != target.shape:
        raise ValidationError(f"{what}: stored shape {value.shape} does not match {target.shape}")
    target[...] = value


def save_run_state(directory: PathLike, state: RunState) -> Path:
    directory = Path(directory)
    optim_tensors = {}
    optim_steps = {}
    for name, entry in state.optimizer.state_dict().items():
        optim_tensors[f"{name}/m"] = entry["m"]
        optim_tensors[f"{name}/v"] = entry["v"]
        optim_steps[name] = entry["step"]

    manifest = {
        "kind": STUDENT_KIND,
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "rng_state": generator_state(state.rng),
        "metrics": state.metrics,
        "ptq_loss": state.ptq_loss,
        "schedule": state.schedule.to_manifest(),
        "parameters": write_parameters(state.student.base.params, directory, version=TENSOR_VERSION_F64),
        "student": _write_group(directory, "student", _student_tensors(state.student)),
        "optimizer": {"steps": optim_steps, "tensors": _write_group(directory, "optim", optim_tensors)},
    }
    write_manifest(directory, manifest)
    logger.debug(f"Saved run state at epoch {state.epoch} to {directory}")
    return directory


def _check_kind(directory: Path, manifest: dict) -> None:
    if manifest.get("kind") != STUDENT_KIND:
        raise ValidationError(f"{directory} holds a '{manifest.get('kind')}' checkpoint, expected a student")


def load_student(directory: PathLike) -> Tuple[QuantStudent, NoiseSchedule, dict]:
    """Student, its schedule and the raw manifest"""
    directory = Path(directory)
    manifest = read_manifest(directory)
    _check_kind(directory, manifest)
    schedule = schedule_from_manifest(manifest)
    config = DistillConfig.from_dict(manifest["config"])
    base = ToyDenoiser(read_parameters(directory, manifest["parameters"]), schedule.T)
    student = QuantStudent.from_teacher(base, config)

    tensors = _student_tensors(student)
    unknown = sorted(set(manifest["student"]) - set(tensors))
    missing = sorted(set(tensors) - set(manifest["student"]))
    if unknown or missing:
        raise ValidationError(f"Student tensors do not match the model (unknown {unknown}, missing {missing})")
    for key, rel in manifest["student"].items():
        _read_into(directory, rel, tensors[key], key)
    return student, schedule, manifest


def load_run_state(directory: PathLike) -> RunState:
    directory = Path(directory)
    student, schedule, manifest = load_student(directory)
    config = student.config

    optimizer = make_optimizer(config)
    optim = manifest["optimizer"]
    entries = {}
    for name, step in optim["steps"].items():
        entries[name] = {
            "step": step,
            "m": read_tensor(directory / optim["tensors"][f"{name}/m"]),
            "v": read_tensor(directory / optim["tensors"][f"{name}/v"]),
        }
    optimizer.load_state_dict(entries)

    logger.info(f"♻️  Resuming {config.label} {config.scheme} run from epoch {manifest['epoch']}")
    return RunState(
        student=student,
        optimizer=optimizer,
        schedule=schedule,
        epoch=int(manifest["epoch"]),
        rng=restore_generator(manifest["rng_state"]),
        metrics=list(manifest.get("metrics", [])),
        ptq_loss=manifest.get("ptq_loss"),
    )


def make_optimizer(config: DistillConfig) -> AdamW:
    return AdamW(
        {ACT_SCALE_GROUP: config.lr_act_scale, W_SCALE_GROUP: config.lr_w_scale, LORA_GROUP: config.lr_lora},
        betas=(0.9, 0.999),
        weight_decay={LORA_GROUP: config.weight_decay},
    )
