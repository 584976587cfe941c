"""Seeded parameter initializers."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def make_rng(seed: int) -> np.random.Generator:
    # PCG64 behind a SeedSequence: 64-bit state, splittable via spawn()
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
