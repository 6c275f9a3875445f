"""Deterministic per-parameter initialization.

Each parameter draws from its own RNG stream keyed by (seed, crc32(name)),
so adding or removing one parameter group never shifts the values another
group receives. That keeps runs with different ablation switches comparable
at the same seed.
"""

from __future__ import annotations

import math
import zlib

import numpy as np


def param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), zlib.crc32(name.encode()))))


def glorot_uniform(shape, seed: int, name: str) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return param_rng(seed, name).uniform(-limit, limit, size=shape).astype(np.float32)


def gaussian(shape, std: float, seed: int, name: str) -> np.ndarray:
    return (param_rng(seed, name).standard_normal(size=shape) * std).astype(np.float32)


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float32)
