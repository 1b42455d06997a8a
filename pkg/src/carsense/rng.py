"""Seed-derived random streams.

Every stochastic decision in a run draws from its own stream, derived
from the run seed plus a label path (purpose, cycle, entity id). This
keeps runs bit-reproducible across processes and keeps unrelated
subsystems from perturbing each other's draws when the scenario changes.
"""

from __future__ import annotations

import hashlib
import random


def substream(seed: int, *labels: object) -> random.Random:
    """Return a Random whose state depends only on (seed, labels).

    Never uses hash(), so streams are stable across interpreter runs.
    """
    key = "|".join([str(seed), *(str(x) for x in labels)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))
