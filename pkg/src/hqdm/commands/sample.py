"""
Sample command: DDIM samples from a teacher or student checkpoint, written as
one TensorFile batch plus a plain-text PGM per image
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from ..diffusion.checkpoint import load_model, read_manifest
from ..diffusion.sampler import ddim_sample
from ..distill.state import STUDENT_KIND, load_student
from ..errors import ValidationError
from ..tensor import PathLike, write_tensor
from ..utils.rng import stream
from .base import Command

logger = logging.getLogger(__name__)

PGM_MAXVAL = 255


def write_pgm(path: PathLike, image: np.ndarray) -> Path:
    """Plain (P2) grayscale image; [-1, 1] maps to [0, 255]"""
    path = Path(path)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValidationError(f"PGM needs a 2-D image, got shape {image.shape}")
    pixels = np.rint((np.clip(image, -1.0, 1.0) + 1.0) * (PGM_MAXVAL / 2.0)).astype(np.int64)
    h, w = pixels.shape
    lines = ["P2", f"{w} {h}", str(PGM_MAXVAL)]
    lines.extend(" ".join(str(v) for v in row) for row in pixels)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_predictor(checkpoint: PathLike, int_path: bool = False):
    """Teacher or student from a checkpoint directory, with its schedule"""
    if read_manifest(checkpoint).get("kind") == STUDENT_KIND:
        student, schedule, _ = load_student(checkpoint)
        student.int_path = int_path
        return student, schedule
    return load_model(checkpoint)


class SampleCommand(Command):
    title = "Sampling"

    def run(self, checkpoint: Optional[str] = None, output: Optional[str] = None, n: Optional[int] = None,
            steps: Optional[int] = None, seed: Optional[int] = None, int_path: bool = False) -> bool:
        checkpoint = Path(checkpoint) if checkpoint else self.config.teacher_dir
        out_dir = Path(output) if output else self.config.output_dir / "samples"
        n = n if n is not None else self.config.n_samples
        steps = steps if steps is not None else self.config.sampling_steps
        seed = seed if seed is not None else self.config.seed

        model, schedule = load_predictor(checkpoint, int_path)
        logger.info(f"🎨 Sampling {n} images with {steps} DDIM steps from {checkpoint}")
        samples = ddim_sample(model, schedule, steps, seed=stream(seed, "sample"), n_samples=n)

        write_tensor(out_dir / "samples.hqt", samples)
        for i, image in enumerate(samples):
            write_pgm(out_dir / f"sample_{i:03d}.pgm", image[0])
        logger.info(
            f"📁 Wrote {n} samples to {out_dir} (pixel mean {samples.mean():.3f}, std {samples.std():.3f})"
        )
        return True
