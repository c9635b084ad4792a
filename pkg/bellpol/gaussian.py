"""
Exact moment engine for the four macroscopic Bell states.

Each state is a zero-mean Gaussian state of four modes (two polarizations at
two frequencies), a product of two two-mode squeezed vacua. The engine keeps
the normal and anomalous second moments, applies beamsplitter loss and
waveplate rotations, and evaluates moments of any Stokes observable with the
Wick expansion in ``bellpol.wick``. Multimode beams are M independent copies;
cumulants scale linearly in M.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import comb

from . import wick
from .config import settings
from .cumulants import central_from_cumulants, cumulants_from_raw
from .exceptions import InvalidArgumentError, UnphysicalStateError, UnsupportedOrderError
from .geometry import PAULI_STOKES, StokesDirection, WaveplateSetting, unit_vector, waveplate_unitary

logger = logging.getLogger("gaussian")

# Sign of S3 = S3_SIGN * sum_j i(b_j^+ a_j - a_j^+ b_j); flipping it is a convention mutation
S3_SIGN = 1

STATE_LABELS = ("psi+", "psi-", "phi+", "phi-")


class ModeIndex(IntEnum):
    """Fixed mode order (a1, b1, a2, b2): a = horizontal, b = vertical, 1/2 = frequency."""

    A1 = 0
    B1 = 1
    A2 = 2
    B2 = 3


N_MODES = len(ModeIndex)


@dataclass(frozen=True)
class BellStateSpec:
    """
    Which Bell state, at what gain, and how many independent mode quadruples.

    Exactly one of ``gain`` (Gamma) or ``nbar`` (N = sinh^2 Gamma) is needed;
    the other is filled in.
    """

    family: str  # "psi" | "phi"
    sign: int  # +1 | -1
    gain: Optional[float] = None
    nbar: Optional[float] = None
    quadruples: int = 1

    def __post_init__(self):
        if self.family not in ("psi", "phi"):
            raise InvalidArgumentError(f"Unknown state family '{self.family}'", {"family": self.family})
        if self.sign not in (1, -1):
            raise InvalidArgumentError("Sign must be +1 or -1", {"sign": self.sign})
        if not isinstance(self.quadruples, (int, np.integer)) or self.quadruples < 1:
            raise InvalidArgumentError("Quadruple count M must be a positive integer", {"quadruples": self.quadruples})
        gain, nbar = self.gain, self.nbar
        if gain is None and nbar is None:
            raise InvalidArgumentError("Either gain or nbar must be given")
        if gain is not None and gain < 0:
            raise InvalidArgumentError("Gain must be non-negative", {"gain": gain})
        if nbar is not None and nbar < 0:
            raise InvalidArgumentError("Mean photon number must be non-negative", {"nbar": nbar})
        if gain is None:
            gain = float(np.arcsinh(np.sqrt(nbar)))
        elif nbar is None:
            nbar = float(np.sinh(gain) ** 2)
        elif abs(np.sinh(gain) ** 2 - nbar) > 1e-12 * max(1.0, nbar):
            raise InvalidArgumentError("gain and nbar disagree (N = sinh^2 Gamma)", {"gain": gain, "nbar": nbar})
        object.__setattr__(self, "gain", float(gain))
        object.__setattr__(self, "nbar", float(nbar))
        object.__setattr__(self, "quadruples", int(self.quadruples))

    @classmethod
    def from_label(cls, label: str, gain: float = None, nbar: float = None, quadruples: int = 1) -> "BellStateSpec":
        """Build from 'psi+', 'psi-', 'phi+' or 'phi-'."""
        label = label.strip().lower()
        if label not in STATE_LABELS:
            raise InvalidArgumentError(f"Unknown state '{label}'", {"allowed": list(STATE_LABELS)})
        return cls(label[:3], 1 if label[3] == "+" else -1, gain=gain, nbar=nbar, quadruples=quadruples)

    @property
    def label(self) -> str:
        return f"{self.family}{'+' if self.sign > 0 else '-'}"


@dataclass(frozen=True)
class SecondMoments:
    """
    Per-quadruple Gaussian state: normal[i, j] = <a_i^+ a_j>, anomalous[i, j] = <a_i a_j>.

    First moments are zero for every state built here.
    """

    normal: np.ndarray
    anomalous: np.ndarray

    def contraction_matrix(self) -> np.ndarray:
        """W[alpha, beta] = <xi_alpha xi_beta> with xi = (a_0..a_3, a_0^+..a_3^+)."""
        n, m = self.normal, self.anomalous
        w = np.zeros((2 * N_MODES, 2 * N_MODES), dtype=complex)
        w[:N_MODES, :N_MODES] = m
        w[:N_MODES, N_MODES:] = n.T + np.eye(N_MODES)
        w[N_MODES:, :N_MODES] = n
        w[N_MODES:, N_MODES:] = m.conj()
        return w

    def check_physical(self, tol: float = None) -> None:
        """Raise UnphysicalStateError unless [[n^T + 1, m], [m^*, n]] is PSD."""
        tol = settings.PHYSICALITY_TOL if tol is None else tol
        n, m = self.normal, self.anomalous
        if not np.allclose(n, n.conj().T, atol=tol) or not np.allclose(m, m.T, atol=tol):
            raise UnphysicalStateError(float("nan"), tol)
        gram = np.block([[n.T + np.eye(N_MODES), m], [m.conj(), n]])
        min_eig = float(np.linalg.eigvalsh(0.5 * (gram + gram.conj().T)).min())
        bound = tol * max(1.0, float(np.abs(gram).max()))
        if min_eig < -bound:
            raise UnphysicalStateError(min_eig, bound)


@dataclass(frozen=True)
class Term:
    """One term weight * op_i op_j of a quadratic form; dagger flags per operator."""

    left_dagger: bool
    i: int
    right_dagger: bool
    j: int
    weight: complex

    def conjugate(self) -> "Term":
        return Term(not self.right_dagger, self.j, not self.left_dagger, self.i, complex(np.conj(self.weight)))


@dataclass(frozen=True)
class QuadraticForm:
    """Hermitian operator sum(terms) + offset, quadratic in the mode operators."""

    terms: Tuple[Term, ...]
    offset: float = 0.0

    def kernel(self) -> np.ndarray:
        """8x8 matrix K with Q - offset = sum K[alpha, beta] xi_alpha xi_beta."""
        k = np.zeros((2 * N_MODES, 2 * N_MODES), dtype=complex)
        for t in self.terms:
            alpha = t.i + (N_MODES if t.left_dagger else 0)
            beta = t.j + (N_MODES if t.right_dagger else 0)
            k[alpha, beta] += t.weight
        return k

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        """True when the term list is closed under conjugation."""
        weights: Dict[tuple, complex] = {}
        for t in self.terms:
            key = (t.left_dagger, t.i, t.right_dagger, t.j)
            weights[key] = weights.get(key, 0.0) + t.weight
        for (ld, i, rd, j), w in weights.items():
            c = Term(ld, i, rd, j, w).conjugate()
            partner = weights.get((c.left_dagger, c.i, c.right_dagger, c.j), 0.0)
            if abs(partner - c.weight) > tol:
                return False
        return True


@dataclass(frozen=True)
class MomentReport:
    """Mean Stokes data, covariance and central moments of S_n for one direction."""

    direction: StokesDirection
    quadruples: int
    mean_S0: float
    mean_stokes: np.ndarray
    stokes_cov: np.ndarray
    mean_S_n: float
    central_moments: Dict[int, float] = field(default_factory=dict)
    nrf: Optional[float] = None


def build_state(spec: BellStateSpec) -> SecondMoments:
    """Second moments of one quadruple of the requested Bell state."""
    g = spec.gain
    nbar = np.sinh(g) ** 2
    sc = np.sinh(g) * np.cosh(g)
    normal = np.diag(np.full(N_MODES, nbar)).astype(complex)
    anomalous = np.zeros((N_MODES, N_MODES), dtype=complex)
    if spec.family == "psi":
        pairs = ((ModeIndex.A1, ModeIndex.B2, sc), (ModeIndex.B1, ModeIndex.A2, spec.sign * sc))
    else:
        pairs = ((ModeIndex.A1, ModeIndex.A2, sc), (ModeIndex.B1, ModeIndex.B2, spec.sign * sc))
    for i, j, value in pairs:
        anomalous[i, j] = value
        anomalous[j, i] = value
    logger.debug(f"Built {spec.label} at gain {g:.6g} (N={nbar:.6g})")
    return SecondMoments(normal, anomalous)


def apply_loss(state: SecondMoments, eta: float) -> SecondMoments:
    """Uniform beamsplitter loss of transmission eta on every mode."""
    if not 0.0 <= eta <= 1.0:
        raise InvalidArgumentError("Efficiency eta must lie in [0, 1]", {"eta": eta})
    return SecondMoments(eta * state.normal, eta * state.anomalous)


def mode_unitary(setting: WaveplateSetting) -> np.ndarray:
    """4x4 unitary: the waveplate chain on (a_j, b_j) at both frequencies."""
    return np.kron(np.eye(2), waveplate_unitary(setting))


def apply_polarization_rotation(state: SecondMoments, setting: WaveplateSetting) -> SecondMoments:
    """
    Pass the state through the plates: n -> conj(U) n U^T, m -> U m U^T.

    Measuring S1 on the result is measuring S_n on the input, with n the
    direction selected by the plates.
    """
    u = mode_unitary(setting)
    return SecondMoments(u.conj() @ state.normal @ u.T, u @ state.anomalous @ u.T)


def _stokes_matrix(vector: np.ndarray) -> np.ndarray:
    sigma = (
        vector[0] * PAULI_STOKES[0]
        + vector[1] * PAULI_STOKES[1]
        + S3_SIGN * vector[2] * PAULI_STOKES[2]
    )
    return np.kron(np.eye(2), sigma)


def _form_from_matrix(h: np.ndarray, offset: float = 0.0) -> QuadraticForm:
    terms = tuple(
        Term(True, i, False, j, complex(h[i, j]))
        for i in range(N_MODES)
        for j in range(N_MODES)
        if h[i, j] != 0
    )
    return QuadraticForm(terms, offset)


def stokes_quadratic_form(direction: StokesDirection) -> QuadraticForm:
    """S_n = cos t S1 + sin t cos p S2 + sin t sin p S3, summed over both frequencies."""
    return stokes_form_from_vector(unit_vector(direction))


def stokes_form_from_vector(vector) -> QuadraticForm:
    """Linear combination v1 S1 + v2 S2 + v3 S3 (any real 3-vector)."""
    return _form_from_matrix(_stokes_matrix(np.asarray(vector, dtype=float)))


def total_intensity_form() -> QuadraticForm:
    """S0 = sum_j (a_j^+ a_j + b_j^+ b_j)."""
    return _form_from_matrix(np.eye(N_MODES))


def _check_order(k: int) -> None:
    if k < 1:
        raise InvalidArgumentError("Moment order must be >= 1", {"k": k})
    if k > settings.MAX_WICK_ORDER:
        raise UnsupportedOrderError(k, settings.MAX_WICK_ORDER)


def wick_moment(state: SecondMoments, form: QuadraticForm, k: int) -> float:
    """Raw moment <Q^k> of a Hermitian quadratic form, exact for the Gaussian state."""
    _check_order(k)
    contraction = state.contraction_matrix()
    kernel = form.kernel()
    if form.offset == 0.0:
        return float(np.real(wick.expectation(contraction, [kernel] * k)))
    # (Q0 + c)^k expanded binomially
    total = 0.0
    for r in range(k + 1):
        inner = 1.0 if r == 0 else np.real(wick.expectation(contraction, [kernel] * r))
        total += comb(k, r, exact=True) * form.offset ** (k - r) * inner
    return float(total)


def raw_moments(state: SecondMoments, form: QuadraticForm, k_max: int) -> np.ndarray:
    """[1, <Q>, <Q^2>, ..., <Q^k_max>] for one quadruple."""
    _check_order(k_max)
    return np.array([1.0] + [wick_moment(state, form, k) for k in range(1, k_max + 1)])


def lossy_state(spec: BellStateSpec, eta: float) -> SecondMoments:
    """Bell state after loss eta, checked against the uncertainty bound."""
    state = apply_loss(build_state(spec), eta)
    state.check_physical()
    return state


def stokes_covariance(state: SecondMoments, quadruples: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Mean Stokes vector and symmetrized 3x3 covariance for M quadruples."""
    contraction = state.contraction_matrix()
    kernels = [stokes_form_from_vector(e).kernel() for e in np.eye(3)]
    means = np.array([np.real(wick.expectation(contraction, [k])) for k in kernels])
    cov = np.empty((3, 3))
    for i in range(3):
        for j in range(i, 3):
            second = np.real(wick.expectation(contraction, [kernels[i], kernels[j]]))
            if i != j:
                second = 0.5 * (second + np.real(wick.expectation(contraction, [kernels[j], kernels[i]])))
            cov[i, j] = cov[j, i] = second - means[i] * means[j]
    return quadruples * means, quadruples * cov


def stokes_covariance_matrix(spec: BellStateSpec, eta: float) -> np.ndarray:
    """C with Delta S_n^2 = n^T C n, for the spec's M quadruples."""
    _, cov = stokes_covariance(lossy_state(spec, eta), spec.quadruples)
    return cov


def moment_report(
    state: SecondMoments,
    direction: StokesDirection,
    k_max: int,
    quadruples: int = 1,
) -> MomentReport:
    """
    Central moments of S_n for M independent copies of ``state``.

    Per-copy cumulants come from raw Wick moments, are scaled by M and
    converted back to central moments.
    """
    _check_order(k_max)
    form = stokes_quadratic_form(direction)
    raw = raw_moments(state, form, k_max)
    kappa = quadruples * cumulants_from_raw(raw)
    central = central_from_cumulants(kappa)
    mean_S0 = quadruples * float(np.real(np.trace(state.normal)))
    mean_stokes, cov = stokes_covariance(state, quadruples)
    moments = {k: float(central[k]) for k in range(2, k_max + 1)}
    nrf = moments[2] / mean_S0 if mean_S0 > 0 and 2 in moments else None
    return MomentReport(
        direction=direction,
        quadruples=quadruples,
        mean_S0=mean_S0,
        mean_stokes=mean_stokes,
        stokes_cov=cov,
        mean_S_n=float(kappa[1]),
        central_moments=moments,
        nrf=nrf,
    )


def central_moments(spec: BellStateSpec, eta: float, direction: StokesDirection, k_max: int = 4) -> MomentReport:
    """Moment report of S_n for the lossy Bell state with M = spec.quadruples."""
    return moment_report(lossy_state(spec, eta), direction, k_max, spec.quadruples)


def _direction_central_moment(state: SecondMoments, vector: np.ndarray, k: int, quadruples: int) -> float:
    raw = raw_moments(state, stokes_form_from_vector(vector), k)
    return float(central_from_cumulants(quadruples * cumulants_from_raw(raw))[k])


def _monomial_exponents(k: int) -> np.ndarray:
    return np.array([(a, b, k - a - b) for a in range(k, -1, -1) for b in range(k - a, -1, -1)])


def _sample_vectors(count: int) -> np.ndarray:
    # Fibonacci lattice on the sphere: deterministic and well spread
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(1.0 - z ** 2)
    angle = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.column_stack([z, r * np.cos(angle), r * np.sin(angle)])


@dataclass(frozen=True)
class CentralMomentPolynomial:
    """
    k-th central moment of S_n as a homogeneous degree-k polynomial in n.

    The moment of (sum_l n_l dS_l)^k is exactly such a polynomial, so a
    least-squares fit over enough sample directions recovers it; evaluating
    the polynomial then replaces a full Wick expansion per direction.
    """

    order: int
    exponents: np.ndarray
    coefficients: np.ndarray
    scale: Optional[float] = None  # (largest variance)^(k/2)

    def __call__(self, direction: StokesDirection) -> float:
        return float(self.evaluate(unit_vector(direction)[None, :])[0])

    def evaluate(self, vectors: np.ndarray) -> np.ndarray:
        """Moments at a (n, 3) array of unit vectors."""
        vectors = np.atleast_2d(vectors)
        powers = np.prod(vectors[:, None, :] ** self.exponents[None, :, :], axis=2)
        return powers @ self.coefficients


def central_moment_polynomial(state: SecondMoments, k: int, quadruples: int = 1) -> CentralMomentPolynomial:
    """Fit the degree-k central-moment polynomial of S_n for ``quadruples`` copies of ``state``."""
    _check_order(k)
    exponents = _monomial_exponents(k)
    vectors = _sample_vectors(2 * len(exponents))
    values = np.array([_direction_central_moment(state, v, k, quadruples) for v in vectors])
    design = np.prod(vectors[:, None, :] ** exponents[None, :, :], axis=2)
    coefficients, *_ = np.linalg.lstsq(design, values, rcond=None)
    _, cov = stokes_covariance(state, quadruples)
    scale = max(float(np.linalg.eigvalsh(cov)[-1]), 0.0) ** (k / 2)
    logger.debug(f"Fitted order-{k} moment polynomial with {len(exponents)} monomials (scale {scale:.3e})")
    return CentralMomentPolynomial(k, exponents, coefficients, scale)


def nrf_curve(spec: BellStateSpec, eta: float, directions: Sequence[StokesDirection]) -> np.ndarray:
    """NRF along a sequence of directions for the lossy Bell state."""
    return nrf_along(lossy_state(spec, eta), directions, spec.quadruples)


def nrf_along(state: SecondMoments, directions: Sequence[StokesDirection], quadruples: int = 1) -> np.ndarray:
    """Var(S_n) / <S0> per direction, from the Stokes covariance; 1 when there is no light."""
    _, cov = stokes_covariance(state, quadruples)
    mean_S0 = quadruples * float(np.real(np.trace(state.normal)))
    if mean_S0 <= 0:
        return np.ones(len(directions))
    vectors = np.array([unit_vector(d) for d in directions])
    return np.einsum("ni,ij,nj->n", vectors, cov, vectors) / mean_S0
