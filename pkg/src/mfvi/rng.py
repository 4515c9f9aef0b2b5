"""Deterministic, splittable random streams.

Every stochastic operation in the package takes an explicit ``RngStream``.
A stream is fully determined by a ``(seed, stream_id)`` pair, so repeated
calls with the same stream produce bit-identical draws and parallel batch
elements can own disjoint streams without coordination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Reference finalizer from Steele et al.; good avalanche, cheap.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _mix(state: int, key) -> int:
    if isinstance(key, str):
        key = int.from_bytes(key.encode("utf-8").ljust(8, b"\0")[:8], "little")
    return _splitmix64((state ^ (int(key) & _MASK64)) & _MASK64)


@dataclass(frozen=True)
class RngStream:
    """A named position in a counter-based random sequence.

    Identical ``(seed, stream_id)`` pairs yield identical draw sequences;
    the generator is re-created on every use so the stream itself is a
    pure value.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = [self.seed & _MASK64, self.stream_id & _MASK64]
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, *keys) -> "RngStream":
        """Child stream keyed by integers or short strings.

        Used to give each (iteration, example) its own stream, e.g.
        ``root.derive("eps", iteration, k)``.
        """
        state = self.stream_id & _MASK64
        for key in keys:
            state = _mix(state, key)
        return RngStream(self.seed, state)

    def standard_normal(self, shape, dtype=np.float64) -> np.ndarray:
        out = self.generator().standard_normal(shape)
        return np.asarray(out, dtype=dtype)

    def uniform(self, low, high, shape) -> np.ndarray:
        return self.generator().uniform(low, high, shape)

    def integers(self, low, high, shape=None) -> np.ndarray:
        return self.generator().integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator().permutation(n)
