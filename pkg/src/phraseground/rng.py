"""Deterministic counter-based random streams.

Each draw is a pure function of (seed, counter), so replaying any
computation from the same state yields bit-identical numbers and
independent streams can be spawned for workers or sub-tasks.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


class RngState:
    """64-bit seed plus draw counter; identical (seed, counter) => identical stream."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
            out = _mix(_U64(self.seed) + (idx + _U64(1)) * _GOLDEN)
        self.counter += n
        return out

    def uniform(self, *shape: int) -> np.ndarray | float:
        """Draws in [0, 1); scalar float when called with no shape."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> _U64(11)) * 2.0 ** -53
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, *shape: int) -> np.ndarray | float:
        """Standard normal draws via Box-Muller."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(2 * n) >> _U64(11)) * 2.0 ** -53
        z = np.sqrt(-2.0 * np.log1p(-u[:n])) * np.cos(2.0 * np.pi * u[n:])
        return z.reshape(shape) if shape else float(z[0])

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi)."""
        if hi <= lo:
            raise ValueError("empty range")
        return lo + int(self.uniform() * (hi - lo))

    def pick_distinct(self, n: int, count: int) -> list[int]:
        """`count` distinct indices from range(n), order randomized."""
        if count > n:
            raise ValueError("count exceeds population")
        order = np.argsort(self.uniform(n), kind="stable")
        return [int(i) for i in order[:count]]

    def spawn(self, tag: int) -> "RngState":
        """Independent child stream derived from (seed, tag)."""
        with np.errstate(over="ignore"):
            z = _mix(np.array([self.seed], dtype=np.uint64) ^ ((_U64(tag) + _U64(1)) * _MIX2))
        return RngState(int(z[0]))
