"""Adam optimizer with bias-corrected moment estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.first_moment[name] = np.zeros(p.shape)
            state.second_moment[name] = np.zeros(p.shape)
        return state


def adam_step(params: Mapping[str, Tensor], state: AdamState, learning_rate: float | None = None) -> AdamState:
    """Apply one Adam update in place and zero the gradients.

    ``learning_rate`` overrides ``state.learning_rate`` for this step only,
    which is how a decay schedule is plugged in.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {', '.join(missing)}")
    lr = state.learning_rate if learning_rate is None else learning_rate
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        if g.shape != p.shape:
            raise ContractError(f"adam_step: gradient of {name} has shape {g.shape}, expected {p.shape}")
        m = state.first_moment.setdefault(name, np.zeros(p.shape))
        v = state.second_moment.setdefault(name, np.zeros(p.shape))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.grad = np.zeros(p.shape)
    return state
