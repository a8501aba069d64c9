"""Helpers for dicts of named weight arrays."""

from __future__ import annotations

import math
from typing import Dict, Mapping

import numpy as np

Weights = Dict[str, np.ndarray]


def copy(w: Mapping[str, np.ndarray]) -> Weights:
    return {k: np.array(v, dtype=float, copy=True) for k, v in w.items()}


def flat(w: Mapping[str, np.ndarray]) -> np.ndarray:
    if not w:
        return np.zeros(0)
    return np.concatenate([np.ravel(w[k]) for k in w])


def vdot(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> float:
    """Inner product accumulated with ``math.fsum``."""
    return math.fsum((flat(a) * flat(b)).tolist())


def sqnorm(a: Mapping[str, np.ndarray]) -> float:
    return vdot(a, a)


def norm(a: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sqnorm(a))


def sub(a, b) -> Weights:
    return {k: a[k] - b[k] for k in a}


def add_scaled(a, s: float, b) -> Weights:
    """``a + s * b``."""
    return {k: a[k] + s * b[k] for k in a}


def scale(a, s: float) -> Weights:
    return {k: s * v for k, v in a.items()}


def max_abs(a) -> float:
    f = flat(a)
    return float(np.max(np.abs(f))) if f.size else 0.0


def same_shapes(a, b) -> bool:
    return list(a) == list(b) and all(np.shape(a[k]) == np.shape(b[k]) for k in a)
