"""
O(1) categorical sampling (Vose alias method) and reproducible RNG streams.

See: http://www.keithschwarz.com/darts-dice-coins/
"""

import logging
from typing import List

import numpy as np

from .exceptions import InvalidArgumentError

logger = logging.getLogger("sampling")


class AliasTable:
    """Alias table over outcomes 0..K-1 built from non-negative weights."""

    def __init__(self, weights):
        """Initializes the table; weights are unnormalized probabilities."""
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.size == 0 or np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidArgumentError("Alias weights must be finite and non-negative")
        total = weights.sum()
        if total <= 0.0:
            raise InvalidArgumentError("Bad weights: total probability is zero")

        n = weights.size
        scaled = weights * n / total
        prob = np.ones(n)
        alias = np.arange(n)

        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # Leftovers are 1 up to rounding and keep prob = 1, alias = self

        self.size = n
        self.prob = prob
        self.alias = alias

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw ``size`` outcome indices."""
        column = rng.integers(0, self.size, size=size)
        keep = rng.random(size=size) < self.prob[column]
        return np.where(keep, column, self.alias[column])


def spawn_generators(seed: int, n_streams: int) -> List[np.random.Generator]:
    """Independent generators derived from one master seed, one per chunk."""
    if n_streams < 1:
        raise InvalidArgumentError("Need at least one RNG stream", {"n_streams": n_streams})
    children = np.random.SeedSequence(seed).spawn(n_streams)
    return [np.random.default_rng(child) for child in children]


def chunk_sizes(total: int, chunk_size: int) -> List[int]:
    """Split ``total`` into consecutive chunks of at most ``chunk_size``."""
    if chunk_size < 1:
        raise InvalidArgumentError("Chunk size must be positive", {"chunk_size": chunk_size})
    full, rest = divmod(total, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])
