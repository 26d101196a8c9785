"""Seeded randomness.

Every random draw in this package comes from a numpy Philox generator
(counter-based, 4x64-bit, 10 rounds), keyed through ``SeedSequence([seed,
stream])``. Philox is platform-independent, so "same seed" means the same
bit stream everywhere. Streams keep independent uses of one seed (parameter
init, shuffling, dropout, corpus splitting, synthesis) from colliding.
"""

import numpy as np

# Stream tags; part of the documented seeding scheme, do not renumber.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_DROPOUT = 2
STREAM_SPLIT = 3
STREAM_SYNTH = 4


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for (seed, stream)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))
