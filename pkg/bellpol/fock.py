"""
Truncated Fock-space oracle for the four Bell states.

States are amplitude tensors over (n_a1, n_b1, n_a2, n_b2). Each state is a
product of two two-mode squeezed vacua, so amplitudes follow the Schmidt
expansion (+-1)^n tanh^(m+n) Gamma / cosh^2 Gamma on the Psi or Phi index
pattern. Waveplates act within each frequency pair and conserve that pair's
photon total, so padding every mode to the largest possible pair total makes
the rotation exact.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from cachetools import LRUCache
from scipy import linalg, sparse
from scipy.sparse.linalg import expm_multiply

from .config import settings
from .cumulants import central_from_cumulants, cumulants_from_raw
from .exceptions import CutoffLeakageError, InvalidArgumentError, TruncationError
from .gaussian import BellStateSpec
from .geometry import PAULI_STOKES, StokesDirection, WaveplateSetting, unit_vector, waveplate_unitary

logger = logging.getLogger("fock")

# Pair unitaries keyed by (chi_H, chi_Q, per-mode dimension)
_unitary_cache = LRUCache(maxsize=settings.UNITARY_CACHE_MAXSIZE)


@dataclass(frozen=True)
class TruncatedState:
    """
    Amplitude tensor over (n_a1, n_b1, n_a2, n_b2), each index in [0, dim).

    ``cutoff`` is the Schmidt cutoff used at construction; ``eps_trunc`` is
    the squared-norm deficit it leaves.
    """

    cutoff: int
    amplitudes: np.ndarray
    eps_trunc: float

    @property
    def dimension(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


@dataclass(frozen=True)
class FockMoments:
    """Raw moments [1, <S>, ..., <S^k>] and central moments of one Stokes observable."""

    raw: np.ndarray
    central: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.raw[1])

    @property
    def variance(self) -> float:
        return float(self.central[2]) if len(self.central) > 2 else 0.0


def truncation_deficit(gain: float, cutoff: int) -> float:
    """1 - norm^2 of the Schmidt expansion cut at ``cutoff`` photons per mode."""
    t2 = np.tanh(gain) ** 2
    return float(1.0 - (1.0 - t2 ** (cutoff + 1)) ** 2)


def default_cutoff(gain: float, bound: float = None) -> int:
    """
    Smallest cutoff c >= 1 whose truncation deficit meets ``bound``.

    Raises:
        TruncationError: if even FOCK_MAX_CUTOFF is not enough
    """
    bound = settings.FOCK_NORM_BOUND if bound is None else bound
    for c in range(1, settings.FOCK_MAX_CUTOFF + 1):
        if truncation_deficit(gain, c) <= bound:
            return c
    raise TruncationError(
        truncation_deficit(gain, settings.FOCK_MAX_CUTOFF), bound, settings.FOCK_MAX_CUTOFF
    )


def _index(family: str, m: int, n: int) -> tuple:
    # Psi pairs (a1, b2) and (b1, a2); Phi pairs (a1, a2) and (b1, b2)
    return (m, n, n, m) if family == "psi" else (m, n, m, n)


def build_state_fock(spec: BellStateSpec, cutoff: Optional[int] = None) -> TruncatedState:
    """
    Build the single-quadruple Bell state in Fock space.

    Args:
        spec: Bell state; ``quadruples`` is ignored (the oracle is per quadruple)
        cutoff: Maximum photons per mode; smallest adequate value when None

    Returns:
        TruncatedState with cutoff + 1 levels per mode

    Raises:
        InvalidArgumentError: if cutoff < 1
        TruncationError: if the norm deficit exceeds FOCK_NORM_BOUND
    """
    if cutoff is None:
        cutoff = default_cutoff(spec.gain)
    if cutoff < 1:
        raise InvalidArgumentError("Fock cutoff must be >= 1", {"cutoff": cutoff})

    eps = truncation_deficit(spec.gain, cutoff)
    if eps > settings.FOCK_NORM_BOUND:
        raise TruncationError(eps, settings.FOCK_NORM_BOUND, cutoff)

    t = np.tanh(spec.gain)
    scale = 1.0 / np.cosh(spec.gain) ** 2
    amplitudes = np.zeros((cutoff + 1,) * 4, dtype=complex)
    for m in range(cutoff + 1):
        for n in range(cutoff + 1):
            amplitudes[_index(spec.family, m, n)] = spec.sign ** n * t ** (m + n) * scale

    logger.debug(f"Built Fock {spec.label} at cutoff {cutoff} (eps_trunc={eps:.3e})")
    return TruncatedState(cutoff, amplitudes, eps)


def _annihilation(dim: int) -> sparse.csr_matrix:
    return sparse.diags(np.sqrt(np.arange(1, dim)), 1, format="csr")


def _pair_operators(dim: int):
    a = _annihilation(dim)
    eye = sparse.identity(dim, format="csr")
    return sparse.kron(a, eye, format="csr"), sparse.kron(eye, a, format="csr")


def _pair_bilinear(matrix: np.ndarray, dim: int) -> sparse.csr_matrix:
    """sum_kl matrix[k, l] c_k^+ c_l on the two-mode space of one frequency."""
    ops = _pair_operators(dim)
    out = sparse.csr_matrix((dim * dim, dim * dim), dtype=complex)
    for k in range(2):
        for l in range(2):
            if matrix[k, l] != 0:
                out = out + matrix[k, l] * (ops[k].conj().T @ ops[l])
    return out.tocsr()


def _pair_unitary(setting: WaveplateSetting, dim: int) -> np.ndarray:
    key = (round(setting.chi_H, 15), round(setting.chi_Q, 15), dim)
    if key in _unitary_cache:
        logger.debug(f"Unitary cache hit for {key}")
        return _unitary_cache[key]

    # u = exp(i h) with h Hermitian, from the complex Schur form of the unitary
    u = waveplate_unitary(setting)
    t, z = linalg.schur(u, output="complex")
    h = -1j * (z @ np.diag(np.log(np.diag(t))) @ z.conj().T)
    h = 0.5 * (h + h.conj().T)
    unitary = linalg.expm(1j * _pair_bilinear(h, dim).toarray())
    _unitary_cache[key] = unitary
    logger.debug(f"Cached pair unitary for {key}")
    return unitary


def _padded(state: TruncatedState, dim: int) -> np.ndarray:
    current = state.dimension
    if current >= dim:
        return state.amplitudes
    pad = [(0, dim - current)] * 4
    return np.pad(state.amplitudes, pad)


def apply_waveplates_fock(state: TruncatedState, setting: WaveplateSetting) -> TruncatedState:
    """
    Apply the HWP->QWP unitary to both frequency pairs.

    Each mode is padded to 2*cutoff + 1 levels so every reachable pair total
    fits; the rotated state is exact up to rounding.

    Raises:
        CutoffLeakageError: if the norm changes by more than FOCK_LEAKAGE_BOUND
    """
    dim = max(state.dimension, 2 * state.cutoff + 1)
    amplitudes = _padded(state, dim).reshape(dim * dim, dim * dim)
    unitary = _pair_unitary(setting, dim)
    rotated = unitary @ amplitudes @ unitary.T

    before = state.norm_squared
    after = float(np.vdot(rotated, rotated).real)
    if abs(after - before) > settings.FOCK_LEAKAGE_BOUND:
        raise CutoffLeakageError(abs(after - before), settings.FOCK_LEAKAGE_BOUND)

    return TruncatedState(state.cutoff, rotated.reshape((dim,) * 4), state.eps_trunc)


def stokes_pair_operator(vector, dim: int) -> sparse.csr_matrix:
    """Pair-space matrix of v1 S1 + v2 S2 + v3 S3 for one frequency."""
    v = np.asarray(vector, dtype=float)
    sigma = v[0] * PAULI_STOKES[0] + v[1] * PAULI_STOKES[1] + v[2] * PAULI_STOKES[2]
    return _pair_bilinear(sigma, dim)


def stokes_moment_fock(state: TruncatedState, direction: StokesDirection, k: int) -> FockMoments:
    """
    Moments of S_n up to order k by repeated sparse application.

    S_n acts on the pair matrix A as O A + A O^T, with O the single-pair
    operator. Moments are for the renormalized truncated state.

    Raises:
        InvalidArgumentError: if k is outside [1, MAX_WICK_ORDER]
    """
    if not 1 <= k <= settings.MAX_WICK_ORDER:
        raise InvalidArgumentError("Moment order out of range", {"k": k, "maximum": settings.MAX_WICK_ORDER})
    # S_n conserves each pair total, so 2*cutoff + 1 levels are enough
    d = max(state.dimension, 2 * state.cutoff + 1)
    op = stokes_pair_operator(unit_vector(direction), d)
    psi = _padded(state, d).reshape(d * d, d * d)
    norm = state.norm_squared

    raw = np.ones(k + 1)
    current = psi
    for order in range(1, k + 1):
        current = op @ current + (op @ current.T).T
        raw[order] = float(np.vdot(psi, current).real) / norm

    central = central_from_cumulants(cumulants_from_raw(raw))
    return FockMoments(raw, central)


def joint_pn_distribution(state: TruncatedState) -> np.ndarray:
    """Probability table |amplitude|^2 over (n_a1, n_b1, n_a2, n_b2)."""
    return np.abs(state.amplitudes) ** 2


def pair_generator(spec: BellStateSpec, dim: int) -> sparse.csr_matrix:
    """Gamma (x_1^+ y_1^+ +- x_2^+ y_2^+) - h.c. on the full four-mode space."""
    a = _annihilation(dim)
    eye = sparse.identity(dim, format="csr")

    def mode(i: int) -> sparse.csr_matrix:
        factors = [eye] * 4
        factors[i] = a
        out = factors[0]
        for f in factors[1:]:
            out = sparse.kron(out, f, format="csr")
        return out

    a1, b1, a2, b2 = (mode(i) for i in range(4))
    if spec.family == "psi":
        creation = a1.T @ b2.T + spec.sign * (b1.T @ a2.T)
    else:
        creation = a1.T @ a2.T + spec.sign * (b1.T @ b2.T)
    creation = spec.gain * creation
    return (creation - creation.T).tocsr()


def build_state_series(spec: BellStateSpec, cutoff: int) -> TruncatedState:
    """
    Independent construction: exp(generator) applied to vacuum.

    The exponential acts in a space cut at ``cutoff`` photons per mode, so
    only low-photon amplitudes are accurate; compare those against
    build_state_fock.
    """
    if cutoff < 1:
        raise InvalidArgumentError("Fock cutoff must be >= 1", {"cutoff": cutoff})
    dim = cutoff + 1
    vacuum = np.zeros(dim ** 4)
    vacuum[0] = 1.0
    vector = expm_multiply(pair_generator(spec, dim), vacuum)
    amplitudes = vector.reshape((dim,) * 4).astype(complex)
    eps = max(0.0, 1.0 - float(np.vdot(amplitudes, amplitudes).real))
    logger.debug(f"Series-built {spec.label} at cutoff {cutoff}")
    return TruncatedState(cutoff, amplitudes, eps)


def clear_unitary_cache() -> None:
    """
    Clear the pair-unitary cache.

    Useful for testing or after changing the cache size.
    """
    _unitary_cache.clear()
    logger.info("Pair unitary cache cleared")


def get_cache_info() -> Dict[str, Any]:
    """
    Get pair-unitary cache statistics.

    Returns:
        Dict with cache size and cached keys
    """
    return {
        "maxsize": _unitary_cache.maxsize,
        "current_size": len(_unitary_cache),
        "keys": list(_unitary_cache.keys()),
    }
