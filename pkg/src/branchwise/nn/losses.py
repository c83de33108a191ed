"""Cross-entropy on probability vectors, with the fused softmax gradient."""

from __future__ import annotations

import numpy as np

_TINY = np.finfo(np.float64).tiny  # keeps the log finite if a probability underflows to 0


def _check_probs(p: np.ndarray, labels: np.ndarray) -> None:
    sums = p.sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= 1e-9):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"probabilities must sum to 1 within 1e-9 (worst deviation {worst:.3e})")
    k = p.shape[-1]
    if labels.min() < 0 or labels.max() >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"label {int(bad)} out of range for {k} classes")


def cross_entropy(probabilities: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss -ln p[label] and its gradient w.r.t. the pre-softmax logits (p - onehot)."""
    p = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray([label])
    _check_probs(p[None, :], labels)
    loss = -float(np.log(max(p[label], _TINY)))
    grad = p.copy()
    grad[label] -= 1.0
    return loss, grad


def batch_cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over a batch and the mean gradient w.r.t. logits.

    The returned gradient already carries the 1/N factor, so it can be fed to
    backward() as-is for a mean-loss objective.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    _check_probs(p, y)
    n = p.shape[0]
    picked = np.maximum(p[np.arange(n), y], _TINY)
    loss = float(-np.log(picked).mean())
    grad = p.copy()
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def per_sample_cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    _check_probs(p, y)
    picked = np.maximum(p[np.arange(p.shape[0]), y], _TINY)
    return -np.log(picked)
