"""Tagged, splittable RNG streams.

Every stochastic component derives its generator from (seed, tag, *indices)
so trajectories are a pure function of the config seed: batch order, noise
draws, augmentation, and initialization never share or race a stream.
"""

import numpy as np

TAG_INIT = 1
TAG_HEAD = 2
TAG_SHUFFLE = 3
TAG_NOISE = 4
TAG_AUG = 5
TAG_SUBSET = 6
TAG_GEN = 7
TAG_VAL_NOISE = 8


def stream(seed, *tags):
    """Independent Generator for (seed, *tags); same inputs, same stream."""
    return np.random.default_rng((int(seed),) + tuple(int(t) for t in tags))
