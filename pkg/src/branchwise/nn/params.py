"""Named parameter storage with freeze flags and optimizer state."""

from __future__ import annotations

import numpy as np

from ..errors import FrozenParameterError


class ParameterStore:
    """Ordered mapping of parameter names to float64 tensors.

    Each tensor carries a frozen flag; frozen tensors are skipped by backward
    passes and rejected by optimizer updates. Adam moment buffers and the step
    counter live here too, so the store is the complete training state of a
    network. ``version`` increments on every optimizer update and is used to
    detect stale forward caches.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.version = 0
        self._frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray, frozen: bool = False) -> None:
        if name in self.values:
            raise ValueError(f"parameter {name!r} already exists")
        self.values[name] = np.asarray(value, dtype=np.float64)
        if frozen:
            self._frozen.add(name)

    def get(self, name: str) -> np.ndarray:
        return self.values[name]

    def names(self) -> list[str]:
        return list(self.values)

    def is_frozen(self, name: str) -> bool:
        if name not in self.values:
            raise KeyError(name)
        return name in self._frozen

    def freeze(self, name: str | None = None) -> None:
        """Freeze one parameter, or every parameter when name is None."""
        if name is None:
            self._frozen.update(self.values)
        elif name in self.values:
            self._frozen.add(name)
        else:
            raise KeyError(name)

    def all_frozen(self) -> bool:
        return len(self._frozen) == len(self.values)

    def trainable_names(self) -> list[str]:
        return [n for n in self.values if n not in self._frozen]

    def require_trainable(self, name: str) -> None:
        if name not in self.values:
            raise FrozenParameterError(f"gradient routed to unknown parameter {name!r}")
        if name in self._frozen:
            raise FrozenParameterError(f"gradient routed to frozen parameter {name!r}")

    def clone(self) -> "ParameterStore":
        other = ParameterStore()
        for name, value in self.values.items():
            other.add(name, value.copy(), frozen=name in self._frozen)
        other.moment1 = {n: v.copy() for n, v in self.moment1.items()}
        other.moment2 = {n: v.copy() for n, v in self.moment2.items()}
        other.step_count = self.step_count
        other.version = self.version
        return other

    def to_bytes(self) -> bytes:
        """Concatenated little-endian float64 bytes in sorted-name order."""
        return b"".join(
            np.ascontiguousarray(self.values[n], dtype="<f8").tobytes()
            for n in sorted(self.values)
        )
