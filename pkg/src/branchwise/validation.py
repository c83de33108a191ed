"""Input validation helpers for the estimator surface."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_inputs(X, input_shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce X to a float64 batch.

    2-D X is accepted as flat samples and reshaped to ``input_shape`` when one
    is given (so the estimator composes with pipelines that flatten);
    higher-rank X must already match it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2:
        raise ShapeError(f"X must be at least 2-D (N, features...), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if input_shape is not None:
        input_shape = tuple(int(d) for d in input_shape)
        if X.ndim == 2:
            expected = int(np.prod(input_shape))
            if X.shape[1] != expected:
                raise ShapeError(f"X has {X.shape[1]} features, input shape "
                                 f"{input_shape} needs {expected}")
            X = X.reshape((len(X),) + input_shape)
        elif tuple(X.shape[1:]) != input_shape:
            raise ShapeError(f"X samples have shape {tuple(X.shape[1:])}, "
                             f"expected {input_shape}")
    return X


def check_labels(y, n_samples: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"y must be 1-D, got shape {y.shape}")
    if n_samples is not None and len(y) != n_samples:
        raise ShapeError(f"X has {n_samples} samples but y has {len(y)}")
    return y
