"""Central finite-difference gradients, for verifying analytic backprop."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                       step: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function, element by element.

    ``fn`` must not mutate its argument and must be deterministic (re-seed any
    internal randomness per call, or dropout masks will decorrelate the two
    evaluations).
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """L2-norm relative difference, floored so tiny gradients stay comparable."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
