"""Counter-based Gaussian noise.

Every draw is addressed by ``(seed, player, step, purpose)``: the Philox key
is derived from ``(seed, player)`` and the counter from ``(step, purpose)``,
so a block of path increments can be regenerated in any order and two
simulations sharing a seed see bit-identical Brownian increments for the same
player.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

BROWNIAN = 0
INITIAL = 1


@lru_cache(maxsize=65536)
def _key(seed: int, player: int) -> tuple:
    return tuple(int(v) for v in np.random.SeedSequence([seed, player]).generate_state(2, dtype=np.uint64))


class CounterNoise:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def normals(self, player: int, step: int, n_paths: int, purpose: int = BROWNIAN) -> np.ndarray:
        bitgen = np.random.Philox(key=np.array(_key(self.seed, int(player)), dtype=np.uint64),
                                  counter=np.array([0, 0, step, purpose], dtype=np.uint64))
        return np.random.Generator(bitgen).standard_normal(n_paths)

    def block(self, players, step: int, n_paths: int, purpose: int = BROWNIAN) -> np.ndarray:
        """Standard normals of shape ``(n_paths, len(players))``."""
        out = np.empty((n_paths, len(players)))
        for j, p in enumerate(players):
            out[:, j] = self.normals(p, step, n_paths, purpose)
        return out
