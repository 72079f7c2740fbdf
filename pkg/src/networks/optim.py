"""Adam optimizer with bias correction."""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from src.errors import DimensionError


@dataclass
class AdamState:
    """Moment accumulators per parameter name, created lazily on the first step."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
) -> Dict[str, np.ndarray]:
    """
    One Adam update, applied in place to params.

    Returns:
        The same params dict, for chaining
    """
    for name, p in params.items():
        if name not in grads:
            raise DimensionError(f"no gradient for parameter {name}")
        if grads[name].shape != p.shape:
            raise DimensionError(f"gradient {name} has shape {grads[name].shape}, parameter {p.shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.learning_rate / bc1

    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.epsilon)
    return params


class Adam:
    """Stateful wrapper: Adam(lr).step(params, grads)."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.state = AdamState(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return adam_step(self.state, params, grads)
