"""Deterministic seed derivation: one master seed, stable named children."""

from __future__ import annotations

import hashlib


def split_seed(seed: int, tag: str) -> int:
    """Stable 32-bit child seed for a named consumer of a master seed."""
    digest = hashlib.sha256(f"{seed}/{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "little")
