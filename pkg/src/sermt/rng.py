"""Deterministic random-stream derivation.

Every stochastic component draws from its own `random.Random` seeded by a
stable digest of (master seed, labels).  Keeping streams independent means
toggling one feature (say, an attack) cannot shift the draws seen by
unrelated components, which keeps paired SERMT/baseline runs comparable.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master: int, *labels) -> int:
    material = "|".join(str(part) for part in (master, *labels))
    digest = hashlib.sha1(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(master: int, *labels) -> random.Random:
    return random.Random(derive_seed(master, *labels))
