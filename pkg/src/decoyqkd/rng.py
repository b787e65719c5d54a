"""Seeded, splittable random streams.

Every stream is a Philox-4x64 counter-based generator keyed through numpy's
SeedSequence with ``spawn_key = (purpose, block_index)``.  Any block of any
stage can therefore be regenerated on its own, in any order or process.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    SOURCE = 0
    DETECTION = 1
    CLOCK = 2
    SAMPLING = 3
    AGGREGATE = 4


def block_rng(seed: int, stream: Stream, block_index: int = 0) -> np.random.Generator:
    if seed < 0 or block_index < 0:
        raise ValueError("seed and block_index must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(block_index)))
    return np.random.Generator(np.random.Philox(ss))
