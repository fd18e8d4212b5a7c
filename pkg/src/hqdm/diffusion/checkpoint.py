"""
Model checkpoints: one TensorFile per parameter plus a JSON manifest
listing names, shapes and schedule constants
"""
import json
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from ..constants import MANIFEST_NAME, TENSOR_SUFFIX, TENSOR_VERSION_F32
from ..errors import ValidationError
from ..tensor import PathLike, read_tensor, write_tensor
from .model import ToyDenoiser
from .schedule import NoiseSchedule, make_schedule

logger = logging.getLogger(__name__)


def write_parameters(params: Dict[str, np.ndarray], directory: Path, version: int = TENSOR_VERSION_F32) -> list:
    entries = []
    for name in sorted(params):
        file_name = f"{name}{TENSOR_SUFFIX}"
        write_tensor(directory / "params" / file_name, params[name], version=version)
        entries.append({"name": name, "shape": list(params[name].shape), "file": f"params/{file_name}"})
    return entries


def read_parameters(directory: Path, entries: list) -> Dict[str, np.ndarray]:
    params = {}
    for entry in entries:
        value = read_tensor(directory / entry["file"])
        if list(value.shape) != list(entry["shape"]):
            raise ValidationError(f"{entry['file']}: shape {value.shape} disagrees with manifest {entry['shape']}")
        params[entry["name"]] = value
    return params


def read_manifest(directory: PathLike) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise ValidationError(f"No checkpoint manifest at {path}")
    with open(path) as f:
        return json.load(f)


def write_manifest(directory: PathLike, manifest: dict) -> Path:
    path = Path(directory) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def schedule_from_manifest(manifest: dict) -> NoiseSchedule:
    sched = manifest["schedule"]
    return make_schedule(int(sched["T"]), float(sched["beta_start"]), float(sched["beta_end"]))


def save_model(model: ToyDenoiser, schedule: NoiseSchedule, directory: PathLike,
               extra: Optional[dict] = None) -> Path:
    """Write a full-precision checkpoint (32-bit TensorFiles)"""
    directory = Path(directory)
    manifest = {
        "kind": "teacher",
        "schedule": schedule.to_manifest(),
        "parameters": write_parameters(model.params, directory),
        "loss_history": list(getattr(model, "loss_history", [])),
    }
    manifest.update(extra or {})
    write_manifest(directory, manifest)
    logger.info(f"💾 Saved model checkpoint to {directory}")
    return directory


def load_model(directory: PathLike) -> Tuple[ToyDenoiser, NoiseSchedule]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    if manifest.get("kind") != "teacher":
        raise ValidationError(f"{directory} holds a '{manifest.get('kind')}' checkpoint, expected a teacher")
    schedule = schedule_from_manifest(manifest)
    model = ToyDenoiser(read_parameters(directory, manifest["parameters"]), schedule.T)
    model.loss_history = list(manifest.get("loss_history", []))
    logger.debug(f"Loaded teacher with {len(model.params)} parameters from {directory}")
    return model, schedule
