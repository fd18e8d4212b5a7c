from .conv import QConvLayer, conv_weight_effective, qconv_backward, qconv_forward, qconv_forward_int_path, qconv_forward_train
from .intmath import conv2d_int, int_matmul
from .linear import (
    LayerGrads, QLinearLayer, double_hadamard_linear, qlinear_backward, qlinear_forward,
    qlinear_forward_int_path, qlinear_forward_train, weight_effective,
)
from .lowering import conv2d, conv2d_backward, col2im, im2col
from .schemes import Scheme

__all__ = [
    'QConvLayer',
    'QLinearLayer',
    'LayerGrads',
    'Scheme',
    'conv2d',
    'conv2d_backward',
    'conv2d_int',
    'col2im',
    'conv_weight_effective',
    'double_hadamard_linear',
    'im2col',
    'int_matmul',
    'qconv_backward',
    'qconv_forward',
    'qconv_forward_int_path',
    'qconv_forward_train',
    'qlinear_backward',
    'qlinear_forward',
    'qlinear_forward_int_path',
    'qlinear_forward_train',
    'weight_effective',
]
