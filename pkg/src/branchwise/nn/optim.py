"""SGD and Adam updates plus the reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ConfigError
from .params import ParameterStore


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # "sgd" | "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_min_delta: float = 1e-4
    min_learning_rate: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer kind must be 'sgd' or 'adam', got {self.kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau factor must be in (0, 1), got {self.plateau_factor}")

    def to_dict(self) -> dict:
        return asdict(self)


def apply_gradients(store: ParameterStore, grads: dict[str, np.ndarray],
                    config: OptimizerConfig, learning_rate: float | None = None) -> None:
    """One in-place update step.

    Every gradient key must name a known, unfrozen parameter; anything else is
    a contract violation and raises. Adam keeps first/second moment buffers and
    a shared step counter on the store; bias correction uses that counter.
    """
    for name in grads:
        store.require_trainable(name)
    lr = config.learning_rate if learning_rate is None else learning_rate
    if config.kind == "sgd":
        for name, g in grads.items():
            store.values[name] -= lr * g
    else:
        store.step_count += 1
        t = store.step_count
        c1 = 1.0 - config.beta1 ** t
        c2 = 1.0 - config.beta2 ** t
        for name, g in grads.items():
            m = store.moment1.setdefault(name, np.zeros_like(store.values[name]))
            v = store.moment2.setdefault(name, np.zeros_like(store.values[name]))
            m *= config.beta1
            m += (1.0 - config.beta1) * g
            v *= config.beta2
            v += (1.0 - config.beta2) * g * g
            store.values[name] -= lr * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    store.version += 1


class PlateauScheduler:
    """Cuts the learning rate when monitored accuracy stops improving.

    An epoch counts as an improvement when its accuracy beats the best seen so
    far by more than ``plateau_min_delta``. After ``plateau_patience``
    non-improving epochs in a row the rate is multiplied by
    ``plateau_factor`` (never below ``min_learning_rate``) and the patience
    counter resets. After k reductions the rate is exactly
    initial * factor**k, clamped at the floor.
    """

    def __init__(self, config: OptimizerConfig):
        self._config = config
        self._best = -math.inf
        self._wait = 0
        self._reductions = 0
        self.learning_rate = config.learning_rate

    def update(self, accuracy: float) -> float:
        """Record one epoch's accuracy; returns the rate for the next epoch."""
        cfg = self._config
        if accuracy > self._best + cfg.plateau_min_delta:
            self._best = accuracy
            self._wait = 0
        else:
            self._wait += 1
            if self._wait >= cfg.plateau_patience:
                self._reductions += 1
                self._wait = 0
        self.learning_rate = max(
            cfg.learning_rate * cfg.plateau_factor ** self._reductions,
            cfg.min_learning_rate,
        )
        return self.learning_rate
