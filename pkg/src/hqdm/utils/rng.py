"""
Named random streams derived from one root seed
"""
from typing import Any, Dict

import numpy as np

from ..constants import RNG_STREAMS
from ..errors import ValidationError


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator for one component (teacher, data, distill, sample, ...)"""
    if name not in RNG_STREAMS:
        raise ValidationError(f"Unknown random stream '{name}' (known: {', '.join(RNG_STREAMS)})")
    if root_seed < 0:
        raise ValidationError(f"Root seed must be non-negative, got {root_seed}")
    seq = np.random.SeedSequence(entropy=root_seed, spawn_key=(RNG_STREAMS.index(name),))
    return np.random.Generator(np.random.PCG64(seq))


def as_generator(seed_or_rng) -> np.random.Generator:
    """Accept either an integer seed or an existing generator"""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.Generator(np.random.PCG64(seed_or_rng))


def generator_state(rng: np.random.Generator) -> Dict[str, Any]:
    return rng.bit_generator.state


def restore_generator(state: Dict[str, Any]) -> np.random.Generator:
    if state.get("bit_generator") != "PCG64":
        raise ValidationError(f"Unsupported bit generator in saved state: {state.get('bit_generator')}")
    bit_gen = np.random.PCG64()
    bit_gen.state = state
    return np.random.Generator(bit_gen)
