"""
Analyze command: outlier statistics before/after the block transform and the
plain / single / double scheme comparison on captured teacher activations
"""
import logging
from pathlib import Path
from typing import List, Optional

from ..analysis import (
    ActivationRecorder, block_dominance, capture_activations, collect_outlier_reports, compare_schemes,
    emit_report, emit_scheme_report, outlier_rows, select_timesteps, transform_rows,
)
from ..diffusion.checkpoint import load_model
from ..diffusion.model import LAYER_ORDER, LINEAR_LAYERS
from ..diffusion.sampler import ddim_timesteps
from ..errors import ValidationError
from ..utils.rng import stream
from .base import Command

logger = logging.getLogger(__name__)


class AnalyzeCommand(Command):
    title = "Analysis"

    def run(self, checkpoint: Optional[str] = None, output: Optional[str] = None,
            layers: Optional[List[str]] = None, timesteps: Optional[List[int]] = None) -> bool:
        cfg = self.config
        checkpoint = Path(checkpoint) if checkpoint else cfg.teacher_dir
        out_dir = Path(output) if output else cfg.output_dir / "analysis"
        layers = layers or cfg.analysis_layers or list(LAYER_ORDER)
        unknown = [name for name in layers if name not in LAYER_ORDER]
        if unknown:
            raise ValidationError(f"Unknown layer(s): {', '.join(unknown)} (known: {', '.join(LAYER_ORDER)})")

        teacher, schedule = load_model(checkpoint)
        t_list = select_timesteps(ddim_timesteps(schedule.T, cfg.sampling_steps), timesteps or cfg.analysis_timesteps)
        logger.info(f"🔬 Capturing {', '.join(layers)} at timesteps {t_list}")
        recorder = capture_activations(teacher, schedule, cfg.sampling_steps, cfg.analysis_samples,
                                       seed=stream(cfg.seed, "analysis"),
                                       recorder=ActivationRecorder(layers, t_list))

        reports = collect_outlier_reports(recorder, cfg.hadamard_k_preferred)
        for report in reports:
            dominance = block_dominance(transform_rows(report.layer, recorder.get(report.layer, report.timestep)),
                                        report.plan)
            logger.info(
                f"   {report.layer} t={report.timestep}: max {report.pre.max_abs.max():.4g} -> "
                f"{report.post.max_abs.max():.4g}, kurtosis {report.pre.kurtosis:.3g} -> "
                f"{report.post.kurtosis:.3g}, dominance {dominance:.3g}"
            )
        path = emit_report(outlier_rows(reports), out_dir / "outliers.csv")
        logger.info(f"📄 Outlier report written to {path}")

        linear = [name for name in layers if name in LINEAR_LAYERS]
        if linear:
            rows = compare_schemes(teacher, schedule, linear, t_list, cfg.analysis_bits,
                                   n_steps=cfg.sampling_steps, n_samples=cfg.analysis_samples,
                                   k_preferred=cfg.hadamard_k_preferred, seed=stream(cfg.seed, "analysis"))
            path = emit_scheme_report(rows, out_dir / "schemes.csv")
            logger.info(f"📄 Scheme comparison written to {path}")
        return True
