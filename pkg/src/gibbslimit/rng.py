"""Counter-based, splittable random streams.

All randomness goes through Philox4x64-10 keyed by a ``SeedSequence`` built
from ``(master_seed, *stream_path)``.  A stream is therefore a pure function
of its path: chunk ``i`` of replica ``r`` gets the same numbers no matter how
many workers run or in which order they finish.
"""
from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64-10/seedsequence"


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for ``path`` under ``seed``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def raw_words(gen: np.random.Generator, count: int) -> np.ndarray:
    """Raw 64-bit outputs of the underlying bit generator."""
    return gen.bit_generator.random_raw(count)


def words_to_unit(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles in [0, 1) using the top 53 bits."""
    return (words >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
