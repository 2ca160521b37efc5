"""Deterministic seed derivation.

A single global seed drives every random decision in the library. Component
seeds are derived as ``derive_seed(global_seed, label)`` where ``label`` names
the consumer (e.g. ``"shuffle"``, ``"tree:17"``, ``"pair:u01:u04"``), so adding
or reordering consumers never perturbs the streams of the others.
"""

from __future__ import annotations

import hashlib

__all__ = ["derive_seed"]


def derive_seed(seed: int, label: str) -> int:
    """Derive a 64-bit sub-seed from a global seed and a component label.

    The derivation is ``blake2b(f"{seed}:{label}")`` truncated to 8 bytes,
    which is stable across platforms and Python versions (unlike ``hash()``).
    """
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
