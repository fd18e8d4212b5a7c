from enum import Enum

from ..errors import ValidationError


class Scheme(str, Enum):
    """How a quantized layer places the Hadamard transform"""
    PLAIN = "plain"
    SINGLE_HADAMARD = "single_hadamard"
    DOUBLE_HADAMARD = "double_hadamard"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValidationError(f"Unknown scheme '{value}' (expected one of: {names})")

    @property
    def transforms_activations(self) -> bool:
        return self is not Scheme.PLAIN
