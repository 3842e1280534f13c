"""Seeded splitmix64 stream; the single source of randomness in the package."""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """splitmix64 generator keyed by an integer seed.

    Draws are vectorised: ``next_u64(n)`` returns the same values as n
    consecutive scalar draws would.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self, n: int = 1) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * _GOLDEN
        self.state = (self.state + n * int(_GOLDEN)) & _MASK64
        return _mix(z)

    def uniform(self, n: int = 1) -> np.ndarray:
        """Floats in [0, 1) with 53 random bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int = 1, std: float = 1.0) -> np.ndarray:
        """Box-Muller; consumes 2 * ceil(n / 2) uniforms."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(theta)
        z[1::2] = radius * np.sin(theta)
        return z[:n] * std

    def integers(self, high: int, n: int = 1) -> np.ndarray:
        """Integers uniform in [0, high) (float-scaled, bias < 2**-40 for small high)."""
        return np.floor(self.uniform(n) * high).astype(np.int64)

    def below(self, high: int) -> int:
        return int(self.integers(high, 1)[0])

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        out = list(range(n))
        if n < 2:
            return out
        draws = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[k] * (i + 1))
            out[i], out[j] = out[j], out[i]
        return out

    def choice(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), uniformly, via partial Fisher-Yates."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        pool = list(range(n))
        draws = self.uniform(k)
        for i in range(k):
            j = i + int(draws[i] * (n - i))
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def spawn(self, key: int) -> "SplitMix64":
        """Independent child stream derived from this stream's next output and ``key``."""
        base = int(self.next_u64(1)[0])
        return SplitMix64(base ^ (int(key) * 0xD1B54A32D192ED03 & _MASK64))
