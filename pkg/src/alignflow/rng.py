"""SplitMix64 generator: the single source of randomness for scenarios.

The integer stream is the reference SplitMix64 (Steele, Lea, Flood 2014), so
ports in other languages reproduce ``next_u64`` draws bit for bit.  Floats
use the top 53 bits: ``(x >> 11) * 2**-53``.
"""
import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self, size=None):
        """Uniform floats in [0, 1)."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        n = int(np.prod(size))
        out = np.array([(self.next_u64() >> 11) * 2.0**-53 for _ in range(n)])
        return out.reshape(size)

    def uniform(self, low, high, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, size=None):
        """Standard normals by Box-Muller, one uniform pair per draw."""
        n = 1 if size is None else int(np.prod(size))
        vals = np.empty(n)
        for i in range(n):
            u1 = 1.0 - self.random()  # in (0, 1]
            u2 = self.random()
            vals[i] = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return float(vals[0]) if size is None else vals.reshape(size)
