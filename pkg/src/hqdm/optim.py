"""
AdamW with decoupled weight decay and one state per named parameter

Parameters are updated in place. A parameter only advances (moments, step
count, decay) on steps where it receives a gradient, so independently
optimized entries such as per-timestep scales never move on other timesteps.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class ParamState:
    step: int
    m: np.ndarray
    v: np.ndarray


class AdamW:
    def __init__(self, lrs: Mapping[str, float], betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: Mapping[str, float] = None):
        for group, lr in lrs.items():
            if not lr > 0:
                raise ValidationError(f"Learning rate for '{group}' must be positive, got {lr}")
        self.lrs = dict(lrs)
        self.betas = betas
        self.eps = eps
        self.weight_decay = dict(weight_decay or {})
        self.state: Dict[str, ParamState] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             groups: Mapping[str, str]) -> None:
        """Update every parameter named in grads; names map to groups for their learning rate"""
        b1, b2 = self.betas
        for name in sorted(grads):
            group = groups[name]
            if group not in self.lrs:
                raise ValidationError(f"No learning rate configured for group '{group}'")
            p = params[name]
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise ValidationError(f"Gradient for {name} has shape {g.shape}, parameter {p.shape}")

            st = self.state.get(name)
            if st is None:
                st = self.state[name] = ParamState(0, np.zeros_like(p), np.zeros_like(p))
            st.step += 1
            st.m = b1 * st.m + (1.0 - b1) * g
            st.v = b2 * st.v + (1.0 - b2) * g * g
            m_hat = st.m / (1.0 - b1 ** st.step)
            v_hat = st.v / (1.0 - b2 ** st.step)

            lr = self.lrs[group]
            decay = self.weight_decay.get(group, 0.0)
            if decay:
                p *= 1.0 - lr * decay
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> Dict[str, dict]:
        return {name: {"step": st.step, "m": st.m, "v": st.v} for name, st in self.state.items()}

    def load_state_dict(self, state: Mapping[str, dict]) -> None:
        self.state = {
            name: ParamState(int(entry["step"]), np.array(entry["m"], dtype=np.float64),
                             np.array(entry["v"], dtype=np.float64))
            for name, entry in state.items()
        }
