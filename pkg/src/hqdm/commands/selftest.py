"""
Selftest command: fast invariant checks that need nothing but numpy
"""
import logging
import math
from typing import Callable, List, Tuple

import numpy as np

from ..errors import IntegerOverflowError
from ..hadamard import HadamardPlan, block_transform_raw, build_hadamard, fwht, make_plan
from ..kernels.conv import QConvLayer, qconv_forward, qconv_forward_int_path
from ..kernels.linear import QLinearLayer, qlinear_forward, qlinear_forward_int_path, quantized_weight
from ..kernels.schemes import Scheme
from ..quantizer import (
    QuantParams, ScaleTable, clip_mask, fake_quant, init_scale, rounding_offset,
    ste_backward_input, ste_backward_scale, ste_surrogate,
)
from ..tensor import relative_error
from ..utils.rng import stream
from .base import Command

logger = logging.getLogger(__name__)

Check = Callable[[np.random.Generator], Tuple[bool, str]]


def check_orthogonality(rng) -> Tuple[bool, str]:
    worst = 0.0
    for k in range(7):
        H = build_hadamard(k)
        if not np.array_equal(H, H.T):
            return False, f"H_{k} is not symmetric"
        worst = max(worst, float(np.max(np.abs(H @ H.T - np.eye(1 << k)))))
    return worst < 1e-9, f"max |H H^T - I| = {worst:.2e}"


def check_fwht_oracle(rng) -> Tuple[bool, str]:
    worst = 0.0
    for k in range(7):
        x = rng.standard_normal((100, 1 << k))
        worst = max(worst, float(np.max(np.abs(fwht(x, k) - x @ build_hadamard(k)))))
    return worst < 1e-9, f"max deviation from dense H = {worst:.2e}"


def check_spike_and_constant(rng) -> Tuple[bool, str]:
    for k in range(1, 7):
        n = 1 << k
        basis = fwht(np.eye(n)[rng.integers(n)], k)
        if not np.all(np.abs(basis) == math.sqrt(2.0 ** -k)):
            return False, f"fwht(e_i) is not constant 2^(-k/2) for k={k}"
        ones = fwht(np.ones(n), k)
        expected = np.zeros(n)
        expected[0] = math.sqrt(n)
        if not np.array_equal(ones, expected):
            return False, f"fwht(1) != 2^(k/2) e_1 for k={k}"
    return True, "k = 1..6 exact"


def check_quantizer_bound(rng) -> Tuple[bool, str]:
    violations = 0
    for bits in (2, 3, 4, 8):
        p = QuantParams(bits)
        x = rng.normal(0.0, 2.0, size=10_000)
        s = float(rng.uniform(0.05, 1.0))
        inside = clip_mask(x, s, p)
        violations += int(np.sum(np.abs(x - fake_quant(x, s, p))[inside] > s / 2 + 1e-12))
    return violations == 0, f"{violations} rounding-bound violations"


def check_ste_gradients(rng) -> Tuple[bool, str]:
    p = QuantParams(4)
    s = 0.3
    x = rng.uniform(-2.0, 2.0, size=64)
    # keep away from clip edges so central differences do not cross them
    x = x[np.abs(np.abs(x / s) - p.q_max) > 0.05]
    x = x[np.abs(x / s - p.q_min) > 0.05]
    g = rng.standard_normal(x.shape)
    offset = rounding_offset(x, s, p)
    h = 1e-6

    def loss(xv, sv):
        return float(np.sum(g * ste_surrogate(xv, sv, p, offset)))

    grad_x = ste_backward_input(x, s, p, g)
    i = int(np.argmax(np.abs(grad_x)))
    dx = np.zeros_like(x)
    dx[i] = h
    fd_x = (loss(x + dx, s) - loss(x - dx, s)) / (2 * h)
    err_x = abs(fd_x - grad_x[i]) / max(abs(grad_x[i]), 1e-12)

    grad_s = ste_backward_scale(x, s, p, g, grad_scale=1.0)
    fd_s = (loss(x, s + h) - loss(x, s - h)) / (2 * h)
    err_s = abs(fd_s - grad_s) / max(abs(grad_s), 1e-12)
    return err_x < 1e-3 and err_s < 1e-2, f"input rel err {err_x:.1e}, scale rel err {err_s:.1e}"


def _linear(rng, scheme: Scheme, bits: int, c_in: int = 64, c_out: int = 32) -> Tuple[QLinearLayer, np.ndarray]:
    X = rng.standard_normal((16, c_in))
    W = rng.standard_normal((c_in, c_out)) * 0.1
    p = QuantParams(bits)
    plan = make_plan(c_in, 5)
    layer = QLinearLayer("check", W, p, p, ScaleTable.constant(1, init_scale(X, p) * 1.5),
                         ScaleTable.constant(1, init_scale(W, p)), plan, scheme=scheme)
    return layer, X


def check_int_paths(rng) -> Tuple[bool, str]:
    worst = 0.0
    try:
        for bits in (3, 4, 8):
            for scheme in Scheme:
                layer, X = _linear(rng, scheme, bits)
                worst = max(worst, relative_error(qlinear_forward_int_path(layer, X, 0), qlinear_forward(layer, X, 0)))
            for scheme in (Scheme.PLAIN, Scheme.SINGLE_HADAMARD):
                for size, stride in ((1, 1), (3, 1), (3, 2)):
                    X = rng.standard_normal((2, 4, 16, 16))
                    W = rng.standard_normal((8, 4, size, size)) * 0.2
                    p = QuantParams(bits)
                    layer = QConvLayer("check", W, p, p, ScaleTable.constant(1, init_scale(X, p) * 1.5),
                                       ScaleTable.constant(1, init_scale(W, p)), stride=stride,
                                       padding=size // 2, scheme=scheme)
                    worst = max(worst, relative_error(qconv_forward_int_path(layer, X, 0), qconv_forward(layer, X, 0)))
    except IntegerOverflowError as e:
        return False, f"overflow: {e}"
    return worst <= 1e-4, f"max relative error {worst:.1e}"


def check_weight_integrity(rng) -> Tuple[bool, str]:
    plain, _ = _linear(rng, Scheme.PLAIN, 4)
    single = QLinearLayer("check", plain.weight, plain.w_params, plain.a_params, plain.act_scales,
                          plain.w_scales, plain.plan, scheme=Scheme.SINGLE_HADAMARD)
    same = np.array_equal(quantized_weight(plain).ints, quantized_weight(single).ints)
    return same, "single_hadamard weight integers equal plain" if same else "weight integers differ"


def check_raw_butterfly(rng) -> Tuple[bool, str]:
    plan = HadamardPlan(k=4, m=3)
    q = rng.integers(-8, 8, size=(10, plan.dim))
    same = np.array_equal(block_transform_raw(q, plan), q @ plan.raw_matrix())
    return same, "integer butterfly equals H_raw GEMM" if same else "integer butterfly mismatch"


CHECKS: List[Tuple[str, Check]] = [
    ("hadamard orthogonality", check_orthogonality),
    ("fwht oracle", check_fwht_oracle),
    ("spike / constant identities", check_spike_and_constant),
    ("quantizer rounding bound", check_quantizer_bound),
    ("STE / LSQ finite differences", check_ste_gradients),
    ("integer path equivalence", check_int_paths),
    ("single_hadamard weight integrity", check_weight_integrity),
    ("integer butterfly", check_raw_butterfly),
]


class SelftestCommand(Command):
    """Runs every invariant check and fails if any of them does"""
    title = "Selftest"

    def run(self) -> bool:
        rng = stream(self.config.seed, "analysis")
        failures = 0
        for name, check in CHECKS:
            ok, detail = check(rng)
            if ok:
                logger.info(f"✅ {name}: {detail}")
            else:
                failures += 1
                logger.error(f"❌ {name}: {detail}")
        logger.info(f"🧪 {len(CHECKS) - failures}/{len(CHECKS)} checks passed")
        if failures:
            raise AssertionError(f"{failures} selftest check(s) failed")
        return True

