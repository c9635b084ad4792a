"""
Wick (Isserlis) expectation values for zero-mean bosonic Gaussian states.

Operators are addressed in the 8-slot ladder basis xi = (a_0..a_3, a_0^+..a_3^+).
A quadratic operator is a kernel K with Q = sum K[alpha, beta] xi_alpha xi_beta,
and the ordered contraction matrix W[alpha, beta] = <xi_alpha xi_beta> carries
the state. The expectation of Q_1 Q_2 ... Q_k is the sum over all perfect
matchings of the 2k ordered slots. Each matching splits into cycles that
alternate kernel edges and contraction edges, so its value is a product of
traces of small matrix products.

Matchings are cached per order (LRU) since they only depend on k.
"""

import logging
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from cachetools import LRUCache

from .config import settings

logger = logging.getLogger("wick")

# Perfect matchings of range(2k), keyed by k
_matching_cache = LRUCache(maxsize=settings.MATCHING_CACHE_MAXSIZE)


def all_pairings(items: Sequence[int]):
    """
    Yields all pairings (partitions into ordered pairs p < q) of the given items.
    """
    items = list(items)
    if len(items) == 0:
        yield []
        return

    first_item = items.pop(0)
    for i, item in enumerate(items):
        first_pair = (first_item, item)
        for pairing in all_pairings(items[:i] + items[i + 1:]):
            yield [first_pair] + pairing


def matchings(k: int) -> np.ndarray:
    """
    Partner table of every perfect matching of 2k slots, shape ((2k-1)!!, 2k).

    Row r, column s holds the slot matched with s.
    """
    if k in _matching_cache:
        logger.debug(f"Matching cache hit for k={k}")
        return _matching_cache[k]

    rows = []
    for pairing in all_pairings(range(2 * k)):
        partner = [0] * (2 * k)
        for p, q in pairing:
            partner[p] = q
            partner[q] = p
        rows.append(partner)
    table = np.array(rows, dtype=int).reshape(-1, 2 * k)
    _matching_cache[k] = table
    logger.debug(f"Cached {len(table)} matchings for k={k}")
    return table


def _matching_value(partner: np.ndarray, kernels: Sequence[np.ndarray], contraction: np.ndarray) -> complex:
    n_slots = len(partner)
    visited = np.zeros(n_slots, dtype=bool)
    value = 1.0 + 0.0j
    for start in range(n_slots):
        if visited[start]:
            continue
        product = np.eye(contraction.shape[0], dtype=complex)
        slot = start
        while True:
            visited[slot] = True
            # kernel edge within the same factor
            factor, side = divmod(slot, 2)
            nxt = slot + 1 if side == 0 else slot - 1
            product = product @ (kernels[factor] if side == 0 else kernels[factor].T)
            visited[nxt] = True
            # contraction edge to the matched slot
            mate = partner[nxt]
            product = product @ (contraction if nxt < mate else contraction.T)
            slot = mate
            if slot == start:
                break
        value *= np.trace(product)
        if value == 0:
            break
    return value


def expectation(contraction: np.ndarray, kernels: Sequence[np.ndarray]) -> complex:
    """<Q_1 Q_2 ... Q_k> for the given kernels, in operator order."""
    k = len(kernels)
    if k == 0:
        return 1.0 + 0.0j
    total = 0.0 + 0.0j
    for partner in matchings(k):
        total += _matching_value(partner, kernels, contraction)
    return total


def clear_matching_cache() -> None:
    """
    Clear the matchings cache.

    Useful for testing; matchings are rebuilt on next use.
    """
    _matching_cache.clear()
    logger.info("Matching cache cleared")


def get_cache_info() -> Dict[str, Any]:
    """
    Get matchings cache statistics.

    Returns:
        Dict with cache size and cached orders
    """
    return {
        "maxsize": _matching_cache.maxsize,
        "current_size": len(_matching_cache),
        "keys": list(_matching_cache.keys()),
    }
