"""Conversions between raw moments, cumulants and central moments.

All sequences are indexed by order and start at order 0 (value 1 for moments,
0 for cumulants), so ``raw[k]`` is <X^k>.
"""

from typing import Sequence

import numpy as np
from scipy.special import comb


def cumulants_from_raw(raw: Sequence[float]) -> np.ndarray:
    """kappa_n = mu'_n - sum_{m=1}^{n-1} C(n-1, m-1) kappa_m mu'_{n-m}."""
    raw = np.asarray(raw, dtype=float)
    kappa = np.zeros_like(raw)
    for n in range(1, len(raw)):
        kappa[n] = raw[n] - sum(comb(n - 1, m - 1, exact=True) * kappa[m] * raw[n - m] for m in range(1, n))
    return kappa


def raw_from_cumulants(kappa: Sequence[float]) -> np.ndarray:
    """mu'_n = sum_{m=1}^{n} C(n-1, m-1) kappa_m mu'_{n-m}."""
    kappa = np.asarray(kappa, dtype=float)
    raw = np.zeros_like(kappa)
    raw[0] = 1.0
    for n in range(1, len(kappa)):
        raw[n] = sum(comb(n - 1, m - 1, exact=True) * kappa[m] * raw[n - m] for m in range(1, n + 1))
    return raw


def central_from_cumulants(kappa: Sequence[float]) -> np.ndarray:
    """Central moments: the raw-moment recursion with kappa_1 set to zero."""
    shifted = np.array(kappa, dtype=float)
    if len(shifted) > 1:
        shifted[1] = 0.0
    return raw_from_cumulants(shifted)


def cumulants_from_central(central: Sequence[float], mean: float = 0.0) -> np.ndarray:
    """Cumulants of a variable with the given central moments and mean."""
    kappa = cumulants_from_raw(central)
    if len(kappa) > 1:
        kappa[1] = mean
    return kappa
