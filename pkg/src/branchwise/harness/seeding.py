"""Deterministic per-component seed derivation."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *parts) -> int:
    """Stable 64-bit seed from a master seed and a component path.

    Hash-based (blake2b), so adding components never shifts the seeds of
    existing ones, and the same (master, parts) pair derives the same seed in
    every process. Parts may be strings or ints; they are delimited so
    ("ab", 1) and ("a", "b1") cannot collide.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")
