"""
SplitMix64 pseudo-random generator

All shuffles, weight initialization and dropout masks draw from this
generator so that runs are bit-reproducible from their seeds.
"""

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def _mix(z):
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def splitmix64(value):
    """First output of a generator seeded with ``value``."""
    return _mix((value + GOLDEN_GAMMA) & MASK64)


class SplitMix64:
    """64-bit SplitMix generator with scalar and vectorized draws."""

    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next(self):
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(self.state)

    def shuffle(self, items):
        """Fisher-Yates in place, j = next() mod (i + 1)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next() % (i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def next_block(self, count):
        """
        Draw ``count`` outputs at once as a uint64 array

        Produces exactly the values ``count`` successive next() calls would.
        """
        steps = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
        z = steps + np.uint64(self.state)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * GOLDEN_GAMMA) & MASK64
        return z

    def uniform(self, shape):
        """Uniform doubles in [0, 1) from the top 53 bits of each draw."""
        count = int(np.prod(shape, dtype=np.int64))
        bits = self.next_block(count) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)
