"""
Exception hierarchy for hqdm
"""


class HqdmError(Exception):
    """Base class for all hqdm failures"""


class ValidationError(HqdmError, ValueError):
    """A precondition, shape, range or configuration check failed"""


class TensorFormatError(ValidationError):
    """A TensorFile is malformed (bad magic, unknown version, truncated payload)"""


class IntegerOverflowError(HqdmError, ArithmeticError):
    """An integer accumulator would leave the int64 range"""


class DivergenceError(HqdmError, RuntimeError):
    """Training produced a non-finite loss"""
