"""
Distill command: PTQ calibration plus quantization-aware distillation of the
trained teacher, optionally swept over Hadamard orders
"""
import logging
from pathlib import Path
from typing import List, Optional

from ..analysis import emit_report
from ..constants import ABLATION_COLUMNS, SUMMARY_COLUMNS
from ..diffusion.checkpoint import load_model
from ..distill.config import DistillConfig
from ..distill.trainer import DistillResult, distill_run
from .base import Command

logger = logging.getLogger(__name__)


def run_name(config: DistillConfig) -> str:
    return f"{config.scheme}_{config.label}_k{config.hadamard_k_preferred}"


def summary_row(config: DistillConfig, result: DistillResult) -> dict:
    return {
        "scheme": config.scheme,
        "bits": config.label,
        "k": config.hadamard_k_preferred,
        "ptq_loss": result.ptq_loss,
        "final_loss": result.final_loss,
    }


class DistillCommand(Command):
    title = "Distillation"

    def run(self, teacher: Optional[str] = None, output: Optional[str] = None,
            sweep_k: Optional[List[int]] = None, resume: bool = False, **changes) -> bool:
        teacher_dir = Path(teacher) if teacher else self.config.teacher_dir
        out_root = Path(output) if output else self.config.output_dir
        model, schedule = load_model(teacher_dir)
        base = self.config.distill_config(**{key: value for key, value in changes.items() if value is not None})

        orders = sweep_k or [base.hadamard_k_preferred]
        rows = []
        for k in orders:
            config = DistillConfig.from_dict({**base.to_dict(), "hadamard_k_preferred": k})
            run_dir = out_root / run_name(config)
            logger.info(f"🚀 Distilling {config.label} {config.scheme} (k={k}) into {run_dir}")
            result = distill_run(model, schedule, config, output_dir=run_dir, resume=resume, progress=True)
            row = summary_row(config, result)
            emit_report([row], run_dir / "summary.csv", SUMMARY_COLUMNS)
            rows.append(row)

        if sweep_k:
            path = emit_report(rows, out_root / "ablation_k.csv", ABLATION_COLUMNS)
            logger.info(f"📄 Hadamard-order sweep written to {path}")
        return True
