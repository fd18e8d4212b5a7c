"""
Bench command: wall-clock timing of the integer linear forward per scheme
"""
import logging
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..analysis import emit_report
from ..constants import BENCH_COLUMNS
from ..errors import ValidationError
from ..hadamard import make_plan
from ..kernels.linear import QLinearLayer, qlinear_forward_int_path
from ..kernels.schemes import Scheme
from ..quantizer import QuantParams, ScaleTable, init_scale
from ..utils.rng import stream
from .base import Command

logger = logging.getLogger(__name__)


def bench_linear(dim: int, bits: int, scheme: Scheme, reps: int, rows: int, k_preferred: int, rng) -> dict:
    if reps < 1:
        raise ValidationError(f"reps must be positive, got {reps}")
    X = rng.standard_normal((rows, dim))
    W = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    p = QuantParams(bits)
    layer = QLinearLayer(f"bench{dim}", W, p, p, ScaleTable.constant(1, init_scale(X, p)),
                         ScaleTable.constant(1, init_scale(W, p)), make_plan(dim, k_preferred), scheme=scheme)
    qlinear_forward_int_path(layer, X, 0)
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        qlinear_forward_int_path(layer, X, 0)
        times.append((time.perf_counter() - start) * 1000.0)
    return {
        "dim": dim, "bits": bits, "scheme": scheme.value, "reps": reps,
        "mean_ms": float(np.mean(times)), "std_ms": float(np.std(times)),
    }


class BenchCommand(Command):
    title = "Benchmark"

    def run(self, output: Optional[str] = None, dims: Optional[List[int]] = None, bits: Optional[List[int]] = None,
            schemes: Optional[List[str]] = None, reps: Optional[int] = None) -> bool:
        cfg = self.config
        dims = dims or cfg.bench_dims
        bits = bits or cfg.bench_bits
        reps = reps if reps is not None else cfg.bench_reps
        schemes = [Scheme.parse(s) for s in (schemes or [s.value for s in Scheme])]
        rng = stream(cfg.seed, "bench")

        rows = []
        for dim in dims:
            for b in bits:
                for scheme in schemes:
                    row = bench_linear(dim, b, scheme, reps, cfg.bench_rows, cfg.hadamard_k_preferred, rng)
                    logger.info(f"⏱️  dim={dim} W{b}A{b} {scheme.value}: {row['mean_ms']:.3f} ± {row['std_ms']:.3f} ms")
                    rows.append(row)
        path = emit_report(rows, Path(output) if output else cfg.output_dir / "bench.csv", BENCH_COLUMNS)
        logger.info(f"📄 Timings written to {path}")
        return True
