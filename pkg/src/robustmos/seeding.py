"""Deterministic child-seed derivation.

Every random stream in a run descends from one root seed through named
children: ``derive_seed(root, "train")``, ``derive_seed(root, "sweep-k5-r0")``
and so on. The derivation hashes the name, so adding a new consumer never
shifts the seeds of existing ones.
"""

from __future__ import annotations

import hashlib

__all__ = ["derive_seed"]


def derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
