"""Single-Hadamard low-bit quantization and LoRA distillation for a toy diffusion model"""
from .errors import DivergenceError, HqdmError, IntegerOverflowError, TensorFormatError, ValidationError

__version__ = "0.1.0"

__all__ = [
    'DivergenceError',
    'HqdmError',
    'IntegerOverflowError',
    'TensorFormatError',
    'ValidationError',
]
