"""Seeded random streams.

Every stream is a PCG64 generator keyed by ``(seed, stream_index)`` through
:class:`numpy.random.SeedSequence`. Vectorised samplers consume replicates in
fixed-size blocks, one stream per block, so the output for a given
``(seed, reps)`` never depends on how the blocks are scheduled.
"""

from __future__ import annotations

import os
from typing import Iterator

import numpy as np

BLOCK_SIZE = 4096
SEED_ENV = "TRANSCONF_SEED"


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for stream ``index`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def blocks(seed: int, reps: int, block_size: int = BLOCK_SIZE) -> Iterator[tuple[int, np.random.Generator]]:
    """Yield ``(size, generator)`` pairs covering ``reps`` replicates."""
    if reps < 0:
        raise ValueError("reps must be nonnegative")
    for b, start in enumerate(range(0, reps, block_size)):
        yield min(block_size, reps - start), stream(seed, b)
