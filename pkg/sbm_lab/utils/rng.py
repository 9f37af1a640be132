"""
Per-path random streams.

Every path draws from its own counter-based generator keyed by
``(seed, path_id, purpose)`` so that results do not depend on the order in
which paths are executed or on how they are split across workers.
"""
from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Purpose keys separating the random streams of one path."""
    SPDE = 0
    DUAL = 1
    BRANCHING = 2
    SDE = 3
    SAMPLER = 4


def path_stream(seed: int, path_id: int = 0, purpose: Stream = Stream.SAMPLER) -> np.random.Generator:
    """Return the Philox generator owned by one path."""
    if seed < 0 or path_id < 0:
        raise ValueError("seed and path_id must be nonnegative")
    sequence = np.random.SeedSequence([int(seed), int(path_id), int(purpose)])
    return np.random.Generator(np.random.Philox(sequence))


def path_streams(seed: int, path_ids, purpose: Stream = Stream.SAMPLER) -> list:
    return [path_stream(seed, pid, purpose) for pid in path_ids]
