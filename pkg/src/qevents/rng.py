"""Per-trajectory uniform random streams.

Each stream is a Philox (counter-based) generator keyed by ``(seed,
stream_index)`` through numpy's SeedSequence spawn keys, so trajectory ``i``
draws the same numbers no matter which worker runs it or in what order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _U64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")
        if self.stream_index < 0:
            raise ValueError(f"stream_index must be non-negative, got {self.stream_index}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, index)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "stream_index": self.stream_index}
