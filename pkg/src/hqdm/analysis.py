"""
Outlier statistics and scheme comparisons on captured activations

Everything here produces plain rows for CSV output; nothing is plotted.
"""
import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .constants import OUTLIER_COLUMNS, SCHEME_COLUMNS
from .diffusion.model import CONV_LAYERS, LINEAR_LAYERS, ToyDenoiser
from .diffusion.sampler import ddim_sample
from .diffusion.schedule import NoiseSchedule
from .errors import ValidationError
from .hadamard import HadamardPlan, block_transform, make_plan
from .kernels.linear import QLinearLayer, qlinear_forward, transformed_weight, weight_effective
from .kernels.schemes import Scheme
from .quantizer import QuantParams, ScaleTable, init_scale, max_abs
from .tensor import PathLike

logger = logging.getLogger(__name__)


@dataclass
class ChannelStats:
    max_abs: np.ndarray
    rms: np.ndarray
    signed_min: np.ndarray
    signed_max: np.ndarray
    ratio: float
    # Pearson kurtosis of all values (3 for a Gaussian), 0 for constant input
    kurtosis: float


@dataclass
class OutlierReport:
    layer: str
    timestep: int
    plan: HadamardPlan
    pre: ChannelStats
    post: ChannelStats


def _as_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"Expected a (rows, channels) matrix, got shape {X.shape}")
    if X.size == 0:
        raise ValidationError("Cannot compute outlier statistics of an empty tensor")
    return X


def channel_outlier_stats(X: np.ndarray) -> ChannelStats:
    """Per-channel max |x| and RMS over rows, plus the global max/RMS ratio"""
    X = _as_rows(X)
    rms_all = math.sqrt(float(np.mean(X * X)))
    peak = max_abs(X)
    centered = X - X.mean()
    var = float(np.mean(centered ** 2))
    return ChannelStats(
        max_abs=np.max(np.abs(X), axis=0),
        rms=np.sqrt(np.mean(X * X, axis=0)),
        signed_min=X.min(axis=0),
        signed_max=X.max(axis=0),
        ratio=peak / rms_all if rms_all > 0 else 0.0,
        kurtosis=float(np.mean(centered ** 4)) / var ** 2 if var > 0 else 0.0,
    )


def outlier_report(X: np.ndarray, plan: HadamardPlan, layer: str = "", timestep: int = 0) -> OutlierReport:
    """Channel statistics of X before and after the block transform along the channel axis"""
    X = _as_rows(X)
    if plan.dim != X.shape[1]:
        raise ValidationError(f"Plan covers {plan.dim} channels, matrix has {X.shape[1]}")
    return OutlierReport(layer, int(timestep), plan, channel_outlier_stats(X),
                         channel_outlier_stats(block_transform(X, plan)))


def _blocks(X: np.ndarray, plan: HadamardPlan) -> np.ndarray:
    X = _as_rows(X)
    if plan.dim != X.shape[1]:
        raise ValidationError(f"Plan covers {plan.dim} channels, matrix has {X.shape[1]}")
    return X.reshape(X.shape[0], plan.m, plan.block)


def block_rms(X: np.ndarray, plan: HadamardPlan) -> np.ndarray:
    """RMS of every (row, block) segment; unchanged by the transform"""
    segments = _blocks(X, plan)
    return np.sqrt(np.mean(segments * segments, axis=2))


def block_dominance(X: np.ndarray, plan: HadamardPlan) -> float:
    """
    max|X| over the largest bound the transform can produce, 2^(-k/2) * ||segment||_1

    Above 1 the transformed maximum is strictly smaller than the original one.
    """
    segments = _blocks(X, plan)
    bound = plan.norm * float(np.max(np.sum(np.abs(segments), axis=2)))
    peak = max_abs(X)
    if bound == 0.0:
        return 0.0
    return peak / bound


def transform_rows(name: str, x: np.ndarray) -> np.ndarray:
    """The matrix a layer's activation quantizer sees: conv inputs as (B*C*h, w), linear inputs as is"""
    x = np.asarray(x, dtype=np.float64)
    if name in CONV_LAYERS:
        return x.reshape(-1, x.shape[-1])
    if name in LINEAR_LAYERS:
        return x
    raise ValidationError(f"Unknown layer '{name}'")


class ActivationRecorder:
    """Collects the input of every layer call, keyed by (layer, timestep)"""

    def __init__(self, layers: Optional[Iterable[str]] = None, timesteps: Optional[Iterable[int]] = None):
        self.layers = set(layers) if layers else None
        self.timesteps = {int(t) for t in timesteps} if timesteps is not None else None
        self._chunks: Dict[Tuple[str, int], List[np.ndarray]] = defaultdict(list)

    def __call__(self, name: str, x: np.ndarray, t) -> None:
        steps = np.unique(np.asarray(t, dtype=np.int64))
        if steps.size != 1:
            raise ValidationError("Activation capture expects one timestep per call")
        step = int(steps[0])
        if self.layers is not None and name not in self.layers:
            return
        if self.timesteps is not None and step not in self.timesteps:
            return
        self._chunks[(name, step)].append(np.array(x, dtype=np.float64, copy=True))

    def keys(self) -> List[Tuple[str, int]]:
        return sorted(self._chunks)

    def get(self, name: str, t: int) -> np.ndarray:
        if (name, t) not in self._chunks:
            raise ValidationError(f"No activations recorded for layer '{name}' at timestep {t}")
        return np.concatenate(self._chunks[(name, t)], axis=0)

    def by_layer(self, name: str) -> Dict[int, np.ndarray]:
        return {t: self.get(name, t) for (layer, t) in self.keys() if layer == name}


class _RecordingModel:
    def __init__(self, model: ToyDenoiser, recorder: ActivationRecorder):
        self.model = model
        self.recorder = recorder

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        out, _ = self.model.forward(x, t, recorder=self.recorder)
        return out


def capture_activations(model: ToyDenoiser, schedule: NoiseSchedule, n_steps: int, n_samples: int,
                        seed=0, recorder: Optional[ActivationRecorder] = None) -> ActivationRecorder:
    """Run the model's own DDIM trajectory from pure noise and record layer inputs"""
    recorder = recorder if recorder is not None else ActivationRecorder()
    ddim_sample(_RecordingModel(model, recorder), schedule, n_steps, seed=seed, n_samples=n_samples, parallel=False)
    logger.debug(f"Captured {len(recorder.keys())} (layer, timestep) activation sets")
    return recorder


def select_timesteps(sub_schedule: Sequence[int], requested: Sequence[int] = ()) -> List[int]:
    """Requested timesteps (must be visited by the sampler) or first, middle and last visited"""
    visited = [int(t) for t in sub_schedule]
    if requested:
        unknown = sorted(set(int(t) for t in requested) - set(visited))
        if unknown:
            raise ValidationError(f"Timesteps {unknown} are not visited by the {len(visited)}-step sampler")
        return [int(t) for t in requested]
    picks = [visited[0], visited[len(visited) // 2], visited[-1]]
    return list(dict.fromkeys(picks))


def collect_outlier_reports(recorder: ActivationRecorder, k_preferred: int = 5) -> List[OutlierReport]:
    """One report per recorded (layer, timestep), transformed the way the layer's quantizer would see it"""
    reports = []
    for name, t in recorder.keys():
        X = transform_rows(name, recorder.get(name, t))
        reports.append(outlier_report(X, make_plan(X.shape[1], k_preferred), name, t))
    return reports


def outlier_rows(reports: Iterable[OutlierReport]) -> List[dict]:
    rows = []
    for report in reports:
        pre, post = report.pre, report.post
        for c in range(pre.max_abs.size):
            rows.append({
                "layer": report.layer,
                "timestep": report.timestep,
                "channel": c,
                "max_pre": pre.max_abs[c],
                "max_post": post.max_abs[c],
                "rms_pre": pre.rms[c],
                "rms_post": post.rms[c],
                "signed_min_pre": pre.signed_min[c],
                "signed_max_pre": pre.signed_max[c],
                "signed_min_post": post.signed_min[c],
                "signed_max_post": post.signed_max[c],
                # whole-matrix statistics, repeated on every channel row
                "ratio_pre": pre.ratio,
                "ratio_post": post.ratio,
                "kurtosis_pre": pre.kurtosis,
                "kurtosis_post": post.kurtosis,
            })
    return rows


def _linear_layer(name: str, weight: np.ndarray, bias: np.ndarray, plan: HadamardPlan, scheme: Scheme,
                  bits: int, x: np.ndarray, T: int) -> QLinearLayer:
    p = QuantParams(bits)
    seen = block_transform(x, plan) if scheme.transforms_activations else x
    act = ScaleTable.constant(T, init_scale(seen, p), learnable=False)
    w = ScaleTable.constant(1, init_scale(weight, p), learnable=False)
    return QLinearLayer(name, weight, p, p, act, w, plan, scheme=scheme, bias=bias)


def compare_layer(name: str, weight: np.ndarray, bias: np.ndarray, x: np.ndarray, t: int, bits: int,
                  plan: HadamardPlan, T: int) -> dict:
    """Output MSE against the float layer for every scheme, plus weight max-abs as each scheme quantizes it"""
    reference = x @ weight + bias
    row = {"layer": name, "timestep": int(t), "bits": int(bits)}
    layers = {}
    for scheme, label in ((Scheme.PLAIN, "plain"), (Scheme.SINGLE_HADAMARD, "single"), (Scheme.DOUBLE_HADAMARD, "double")):
        layer = _linear_layer(name, weight, bias, plan, scheme, bits, x, T)
        layers[label] = layer
        y = qlinear_forward(layer, x, t)
        row[f"mse_{label}"] = float(np.mean((y - reference) ** 2))
    row["wmax_plain"] = max_abs(weight_effective(layers["plain"]))
    row["wmax_single"] = max_abs(weight_effective(layers["single"]))
    row["wmax_double"] = max_abs(transformed_weight(layers["double"]))
    return row


def compare_schemes(teacher: ToyDenoiser, schedule: NoiseSchedule, layer_selection: Sequence[str],
                    t_list: Sequence[int], bits_list: Sequence[int], n_steps: int = 20, n_samples: int = 8,
                    k_preferred: int = 5, seed=0) -> List[dict]:
    """plain vs single_hadamard vs double_hadamard quantization error on captured linear-layer inputs"""
    if teacher is None:
        raise ValidationError("Scheme comparison needs a trained teacher")
    for name in layer_selection:
        if name in CONV_LAYERS:
            raise ValidationError(f"'{name}' is a convolution; double_hadamard has no convolution form")
        if name not in LINEAR_LAYERS:
            raise ValidationError(f"Unknown layer '{name}' (linear layers: {', '.join(LINEAR_LAYERS)})")
    recorder = capture_activations(teacher, schedule, n_steps, n_samples, seed=seed,
                                   recorder=ActivationRecorder(layer_selection, t_list))
    rows = []
    for name in layer_selection:
        weight, bias = teacher.params[f"{name}.weight"], teacher.params[f"{name}.bias"]
        plan = make_plan(weight.shape[0], k_preferred)
        for t in t_list:
            x = recorder.get(name, int(t))
            for bits in bits_list:
                rows.append(compare_layer(name, weight, bias, x, int(t), int(bits), plan, teacher.T))
    return rows


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def emit_report(rows: Iterable[Mapping], path: PathLike, columns: Sequence[str] = OUTLIER_COLUMNS) -> Path:
    """CSV with a fixed column order and floats at 6 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        count = 0
        for row in rows:
            missing = [c for c in columns if c not in row]
            if missing:
                raise ValidationError(f"Report row lacks columns: {', '.join(missing)}")
            writer.writerow([_format(row[c]) for c in columns])
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return path


def emit_scheme_report(rows: Iterable[Mapping], path: PathLike) -> Path:
    return emit_report(rows, path, SCHEME_COLUMNS)
