"""Central finite-difference gradient checking.

Used as the independent oracle for the tape: it only evaluates the forward
function on perturbed float64 buffers and never touches recorded gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d array by central differences; ``array`` is perturbed in place and restored."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f()
        flat[i] = orig - h
        minus = f()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(num / den)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between tape and finite-difference gradients.

    ``fn`` must rebuild the scalar output from ``inputs`` on every call.
    """
    for t in inputs:
        t.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    def value() -> float:
        return float(fn().data)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        numeric = numerical_gradient(value, t.data, h)
        worst = max(worst, relative_error(a, numeric))
    return worst
