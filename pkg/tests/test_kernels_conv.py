import numpy as np
import pytest

from hqdm.errors import ValidationError
from hqdm.hadamard import block_transform, make_plan
from hqdm.kernels import (
    QConvLayer, QLinearLayer, Scheme, col2im, conv2d, conv2d_backward, conv2d_int, im2col, qconv_backward,
    qconv_forward, qconv_forward_int_path, qconv_forward_train, qlinear_forward,
)
from hqdm.kernels.conv import width_rows
from hqdm.quantizer import QuantParams, ScaleTable, init_scale


def naive_conv(x, w, stride=1, padding=0):
    x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, _, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    out_h = (h - kh) // stride + 1
    out_w = (wd - kw) // stride + 1
    y = np.zeros((b, c_out, out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            patch = x[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            y[:, :, i, j] = np.einsum("bchw,ochw->bo", patch, w)
    return y


def make_conv(w, x, bits=4, scheme=Scheme.SINGLE_HADAMARD, padding=1, bias=None, stride=1):
    p = QuantParams(bits)
    act_input = x
    if Scheme.parse(scheme).transforms_activations:
        act_input = block_transform(width_rows(x), make_plan(x.shape[-1], 5))
    return QConvLayer("conv", w, p, p, ScaleTable.constant(1, init_scale(act_input, p)),
                      ScaleTable.constant(1, init_scale(w, p)), stride=stride, padding=padding, scheme=scheme,
                      bias=bias)


@pytest.fixture
def operands(rng):
    return rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3)) / 3.0


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_direct_loop(operands, stride, padding):
    x, w = operands
    assert np.allclose(conv2d(x, w, stride, padding), naive_conv(x, w, stride, padding))


def test_col2im_is_adjoint_of_im2col(operands, rng):
    x, _ = operands
    cols = im2col(x, 3, 3, 2, 1)
    c = rng.standard_normal(cols.shape)
    assert np.sum(cols * c) == pytest.approx(np.sum(x * col2im(c, x.shape, 3, 3, 2, 1)))


def test_conv2d_backward_matches_finite_difference(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    g = rng.standard_normal(conv2d(x, w, 1, 1).shape)
    grad_x, grad_w = conv2d_backward(x, w, g, 1, 1)
    eps = 1e-6
    for idx in [(0, 0, 0, 0), (0, 1, 2, 3), (0, 1, 4, 4)]:
        d = np.zeros_like(x)
        d[idx] = eps
        numeric = (np.sum(g * conv2d(x + d, w, 1, 1)) - np.sum(g * conv2d(x - d, w, 1, 1))) / (2 * eps)
        assert grad_x[idx] == pytest.approx(numeric, rel=1e-5, abs=1e-6)
    for idx in [(0, 0, 0, 0), (2, 1, 1, 2)]:
        d = np.zeros_like(w)
        d[idx] = eps
        numeric = (np.sum(g * conv2d(x, w + d, 1, 1)) - np.sum(g * conv2d(x, w - d, 1, 1))) / (2 * eps)
        assert grad_w[idx] == pytest.approx(numeric, rel=1e-5, abs=1e-6)


def test_conv2d_int_is_exact(rng):
    x = rng.integers(-8, 8, size=(2, 3, 6, 6))
    w = rng.integers(-8, 8, size=(2, 3, 3, 3))
    out = conv2d_int(x, w, 1, 1)
    assert out.dtype == np.int64
    assert np.array_equal(out, naive_conv(x.astype(float), w.astype(float), 1, 1).astype(np.int64))


def test_conv2d_int_rejects_floats(operands):
    x, w = operands
    with pytest.raises(ValidationError):
        conv2d_int(x, w)


def test_channel_mismatch(operands, rng):
    x, _ = operands
    with pytest.raises(ValidationError):
        conv2d(x, rng.standard_normal((4, 2, 3, 3)))


@pytest.mark.parametrize("scheme", [Scheme.PLAIN, Scheme.SINGLE_HADAMARD])
@pytest.mark.parametrize("bits", [3, 4, 8])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("kernel", [1, 3])
def test_int_path_matches_float_reference(scheme, bits, stride, kernel):
    for seed in range(3):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, kernel, kernel)) / kernel
        layer = make_conv(w, x, bits=bits, scheme=scheme, padding=kernel // 2, stride=stride,
                          bias=rng.standard_normal(4))
        assert np.allclose(qconv_forward_int_path(layer, x, 0), qconv_forward(layer, x, 0), rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("scheme,channels,width", [
    (Scheme.PLAIN, 4, 8),
    # odd width and odd channels leave both Hadamard plans at the identity
    (Scheme.SINGLE_HADAMARD, 5, 7),
])
def test_pointwise_conv_is_a_linear_layer_over_channels(rng, scheme, channels, width):
    x = rng.standard_normal((2, channels, width, width))
    w = rng.standard_normal((6, channels, 1, 1))
    p = QuantParams(4)
    s_a, s_w = init_scale(x, p), init_scale(w, p)
    conv = QConvLayer("conv", w, p, p, ScaleTable.constant(1, s_a), ScaleTable.constant(1, s_w), scheme=scheme)
    linear = QLinearLayer("fc", w[:, :, 0, 0].T.copy(), p, p, ScaleTable.constant(1, s_a),
                          ScaleTable.constant(1, s_w), make_plan(channels, 5), scheme=scheme)

    tokens = x.transpose(0, 2, 3, 1).reshape(-1, channels)
    y = qconv_forward(conv, x, 0).transpose(0, 2, 3, 1).reshape(-1, 6)
    assert np.allclose(y, qlinear_forward(linear, tokens, 0), rtol=1e-6, atol=1e-6)


def test_eight_bit_close_to_float(operands):
    x, w = operands
    ref = conv2d(x, w, 1, 1)
    y = qconv_forward(make_conv(w, x, bits=8), x, 0)
    assert np.linalg.norm(y - ref) / np.linalg.norm(ref) < 0.05


def test_disabled_layer_is_the_float_conv(operands):
    x, w = operands
    layer = make_conv(w, x)
    layer.enabled = False
    assert np.array_equal(qconv_forward(layer, x, 0), conv2d(x, w, 1, 1))
    assert np.array_equal(qconv_forward_int_path(layer, x, 0), conv2d(x, w, 1, 1))


def test_double_hadamard_has_no_conv_form(operands):
    x, w = operands
    with pytest.raises(ValidationError):
        make_conv(w, x, scheme=Scheme.DOUBLE_HADAMARD)


def test_fixed_plan_must_match_width(operands):
    x, w = operands
    layer = make_conv(w, x)
    layer.plan = make_plan(16, 3)
    with pytest.raises(ValidationError):
        qconv_forward(layer, x, 0)


def test_backward_shapes_and_scale_gradients(operands, rng):
    x, w = operands
    layer = make_conv(w, x)
    y, cache = qconv_forward_train(layer, x, 0)
    grads = qconv_backward(layer, cache, rng.standard_normal(y.shape))
    assert grads.dx.shape == x.shape
    assert np.isfinite(grads.act_scale) and np.isfinite(grads.w_scale)
    assert grads.lora_A is None
