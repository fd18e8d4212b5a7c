import numpy as np
import pytest

from hqdm.errors import IntegerOverflowError, ValidationError
from hqdm.hadamard import block_transform, make_plan
from hqdm.kernels import (
    QLinearLayer, Scheme, int_matmul, qlinear_backward, qlinear_forward, qlinear_forward_int_path,
    qlinear_forward_train, weight_effective,
)
from hqdm.kernels.linear import quantized_weight, transformed_weight
from hqdm.lora import LoraAdapter
from hqdm.quantizer import QuantParams, ScaleTable, clip_mask, init_scale, ste_backward_scale


def make_layer(W, X, bits=4, scheme=Scheme.SINGLE_HADAMARD, k=5, bias=None, lora=None, T=1):
    plan = make_plan(W.shape[0], k)
    p = QuantParams(bits)
    act_input = block_transform(X, plan) if Scheme.parse(scheme).transforms_activations else X
    return QLinearLayer("fc", W, p, p, ScaleTable.constant(T, init_scale(act_input, p)),
                        ScaleTable.constant(1, init_scale(W, p)), plan, scheme=scheme, bias=bias, lora=lora)


@pytest.fixture
def operands(rng):
    X = rng.standard_normal((32, 64))
    W = rng.standard_normal((64, 16)) / 8.0
    return X, W


@pytest.mark.parametrize("scheme", list(Scheme))
@pytest.mark.parametrize("bits", [3, 4, 8])
def test_int_path_matches_float_reference(operands, rng, scheme, bits):
    X, W = operands
    layer = make_layer(W, X, bits=bits, scheme=scheme, bias=rng.standard_normal(16))
    assert np.allclose(qlinear_forward_int_path(layer, X, 0), qlinear_forward(layer, X, 0), rtol=1e-9, atol=1e-9)


def test_eight_bit_single_hadamard_is_close_to_float(operands):
    X, W = operands
    layer = make_layer(W, X, bits=8)
    ref = X @ W
    err = np.linalg.norm(qlinear_forward(layer, X, 0) - ref) / np.linalg.norm(ref)
    assert err < 0.05


def test_single_hadamard_beats_plain_with_an_outlier_channel(rng):
    X = rng.standard_normal((256, 64))
    X[:, 5] += 10.0
    W = rng.standard_normal((64, 16)) / 8.0
    ref = X @ W
    errors = {}
    for scheme in (Scheme.PLAIN, Scheme.SINGLE_HADAMARD):
        y = qlinear_forward(make_layer(W, X, scheme=scheme), X, 0)
        errors[scheme] = np.mean((y - ref) ** 2)
    assert errors[Scheme.SINGLE_HADAMARD] < errors[Scheme.PLAIN]


def test_disabled_layer_is_the_float_layer(operands, rng):
    X, W = operands
    bias = rng.standard_normal(16)
    layer = make_layer(W, X, bias=bias)
    layer.enabled = False
    assert np.array_equal(qlinear_forward(layer, X, 0), X @ W + bias)
    assert np.array_equal(qlinear_forward_int_path(layer, X, 0), X @ W + bias)


def test_odd_dimension_single_equals_plain(rng):
    X = rng.standard_normal((8, 15))
    W = rng.standard_normal((15, 4))
    single = make_layer(W, X, scheme=Scheme.SINGLE_HADAMARD)
    plain = make_layer(W, X, scheme=Scheme.PLAIN)
    assert single.plan.is_identity
    assert np.array_equal(qlinear_forward(single, X, 0), qlinear_forward(plain, X, 0))


def test_double_hadamard_cannot_be_trained(operands):
    X, W = operands
    layer = make_layer(W, X, scheme=Scheme.DOUBLE_HADAMARD)
    with pytest.raises(ValidationError):
        qlinear_forward_train(layer, X, 0)


def test_transformed_weight_spreads_rows(operands):
    _, W = operands
    layer = make_layer(W, np.ones((1, 64)))
    hw = transformed_weight(layer)
    assert np.allclose(np.sum(hw ** 2), np.sum(W ** 2))


@pytest.mark.parametrize("with_adapter", [False, True])
def test_single_hadamard_quantizes_the_untransformed_weight(operands, rng, with_adapter):
    X, W = operands
    adapter = None
    if with_adapter:
        adapter = LoraAdapter(A=rng.standard_normal((2, 16)) / 8, B=rng.standard_normal((64, 2)) / 8)
    plain = make_layer(W, X, scheme=Scheme.PLAIN, lora=adapter)
    single = make_layer(W, X, scheme=Scheme.SINGLE_HADAMARD, lora=adapter)
    assert np.array_equal(quantized_weight(plain).ints, quantized_weight(single).ints)


def test_transform_concentrates_a_constant_weight_column(rng):
    W = 0.01 * rng.standard_normal((64, 16))
    W[:, 3] = 1.0
    hw = transformed_weight(make_layer(W, np.ones((1, 64)), k=5))
    for start in (0, 32):
        block = slice(start, start + 32)
        assert np.max(np.abs(hw[block])) / np.max(np.abs(W[block])) >= 0.9 * np.sqrt(32)


def test_input_shape_checked(operands):
    X, W = operands
    layer = make_layer(W, X)
    with pytest.raises(ValidationError):
        qlinear_forward(layer, X[:, :32], 0)


def test_timestep_out_of_range(operands):
    X, W = operands
    with pytest.raises(ValidationError):
        qlinear_forward(make_layer(W, X, T=4), X, 4)


def test_plan_must_cover_inputs(operands):
    _, W = operands
    p = QuantParams(4)
    with pytest.raises(ValidationError):
        QLinearLayer("fc", W, p, p, ScaleTable.constant(1), ScaleTable.constant(1), make_plan(32, 5))


def test_weight_effective_includes_adapter(operands, rng):
    X, W = operands
    adapter = LoraAdapter(A=rng.standard_normal((2, 16)), B=rng.standard_normal((64, 2)))
    layer = make_layer(W, X, lora=adapter)
    assert np.allclose(weight_effective(layer), W + adapter.B @ adapter.A)
    assert np.array_equal(layer.weight, W)


def test_plain_backward_is_masked_straight_through(operands, rng):
    X, W = operands
    layer = make_layer(W, X, scheme=Scheme.PLAIN)
    layer.act_scales.set(0, layer.act_scales[0] * 0.5)
    y, cache = qlinear_forward_train(layer, X, 0)
    g = rng.standard_normal(y.shape)
    grads = qlinear_backward(layer, cache, g)
    upstream = g @ cache.w_hat.T
    s_a = layer.act_scales[0]
    assert np.allclose(grads.dx, upstream * clip_mask(X, s_a, layer.a_params))
    assert grads.act_scale == pytest.approx(ste_backward_scale(X, s_a, layer.a_params, upstream))
    assert grads.timestep == 0


def test_single_backward_rotates_gradient_back(operands, rng):
    X, W = operands
    layer = make_layer(W, X)
    # headroom above max|XH| keeps every entry unclipped, so the mask is all ones
    layer.act_scales.set(0, layer.act_scales[0] * 1.01)
    y, cache = qlinear_forward_train(layer, X, 0)
    g = rng.standard_normal(y.shape)
    grads = qlinear_backward(layer, cache, g)
    assert np.allclose(grads.dx, g @ cache.w_hat.T)


def test_lora_gradient_matches_finite_difference_when_disabled(rng):
    X = rng.standard_normal((5, 8))
    W = rng.standard_normal((8, 6))
    adapter = LoraAdapter(A=rng.standard_normal((2, 6)), B=rng.standard_normal((8, 2)))
    layer = make_layer(W, X, k=3, lora=adapter)
    layer.enabled = False

    y, cache = qlinear_forward_train(layer, X, 0)
    grads = qlinear_backward(layer, cache, y)
    assert grads.act_scale is None and grads.w_scale is None

    eps = 1e-6
    numeric = np.zeros_like(adapter.A)
    for idx in np.ndindex(adapter.A.shape):
        saved = adapter.A[idx]
        adapter.A[idx] = saved + eps
        up = 0.5 * np.sum(qlinear_forward(layer, X, 0) ** 2)
        adapter.A[idx] = saved - eps
        down = 0.5 * np.sum(qlinear_forward(layer, X, 0) ** 2)
        adapter.A[idx] = saved
        numeric[idx] = (up - down) / (2 * eps)
    assert np.allclose(grads.lora_A, numeric, rtol=1e-5, atol=1e-6)


def test_int_matmul_rejects_floats():
    with pytest.raises(ValidationError):
        int_matmul(np.ones((2, 2)), np.ones((2, 2), dtype=np.int64))


def test_int_matmul_overflow_is_detected():
    a = np.full((1, 4), 2 ** 40, dtype=np.int64)
    with pytest.raises(IntegerOverflowError):
        int_matmul(a, a.T)


def test_int_matmul_exact():
    a = np.array([[1, -2], [3, 4]], dtype=np.int64)
    b = np.array([[5], [-6]], dtype=np.int64)
    assert int_matmul(a, b).tolist() == [[17], [-9]]
