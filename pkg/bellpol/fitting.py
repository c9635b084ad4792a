"""
Weighted least-squares fits of NRF curves for (eta, N).

Every curve model is linear in eta and eta*N:

    NRF(chi) = 1 + eta * b(chi) + eta * N * c(chi)

with plate-specific shapes b, c. The fit runs Levenberg-Marquardt on
(logit eta, log N) so the estimates stay inside 0 < eta < 1 and N > 0.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .config import settings
from .exceptions import InvalidArgumentError, UnidentifiableParametersError

logger = logging.getLogger("fitting")

PLATES = ("hwp", "qwp")

# Singular-value ratio below which the Jacobian counts as rank deficient
_RANK_RTOL = 1e-10

_LAMBDA_START = 1e-3
_LAMBDA_MAX = 1e16


@dataclass(frozen=True)
class CurveModel:
    """Closed-form NRF of one Bell state along one plate trajectory (other plate at 0)."""

    family: str
    sign: int
    plate: str

    def __post_init__(self):
        if self.family not in ("psi", "phi") or self.sign not in (1, -1):
            raise InvalidArgumentError("Unknown state", {"family": self.family, "sign": self.sign})
        if self.plate not in PLATES:
            raise InvalidArgumentError(f"Unknown plate '{self.plate}'", {"allowed": list(PLATES)})

    @classmethod
    def from_label(cls, label: str, plate: str) -> "CurveModel":
        """'psi+', 'phi-', ... plus 'hwp' or 'qwp'."""
        label = label.strip().lower()
        if label not in ("psi+", "psi-", "phi+", "phi-"):
            raise InvalidArgumentError(f"Unknown state '{label}'")
        return cls(label[:3], 1 if label[3] == "+" else -1, plate.strip().lower())

    @property
    def label(self) -> str:
        return f"{self.family}{'+' if self.sign > 0 else '-'}/{self.plate}"

    def shapes(self, chi) -> Tuple[np.ndarray, np.ndarray]:
        """(b(chi), c(chi)) for plate angles in radians."""
        chi = np.asarray(chi, dtype=float)
        one = np.ones_like(chi)
        if self.family == "psi" and self.sign < 0:
            return -one, 0.0 * one
        if self.family == "psi":
            if self.plate == "hwp":
                c8 = np.cos(8 * chi)
                return -c8, 1.0 - c8
            q = (1.0 - 4.0 * np.cos(4 * chi) - np.cos(8 * chi)) / 4.0
            return q, 1.0 + q
        if self.sign > 0:
            if self.plate == "hwp":
                return one, 2.0 * one
            c4 = np.cos(4 * chi)
            return c4, 1.0 + c4
        if self.plate == "hwp":
            c8 = np.cos(8 * chi)
            return c8, 1.0 + c8
        w = (1.0 - np.cos(8 * chi)) / 4.0
        return 1.0 - w, 2.0 - w

    def __call__(self, chi, eta: float, N: float):
        b, c = self.shapes(chi)
        return 1.0 + eta * b + eta * N * c


def model_nrf(model: CurveModel, chi, eta: float, N: float):
    """Evaluate ``model`` at plate angle(s) ``chi`` (radians)."""
    return model(chi, eta, N)


@dataclass(frozen=True)
class FitDataset:
    """Measured NRF samples along one plate trajectory; sigma None means unweighted."""

    model: CurveModel
    chi: np.ndarray
    nrf: np.ndarray
    sigma: Optional[np.ndarray] = None

    @classmethod
    def from_degrees(cls, model: CurveModel, chi_deg, nrf, sigma=None) -> "FitDataset":
        sigma = None if sigma is None else np.asarray(sigma, dtype=float)
        return cls(model, np.radians(np.asarray(chi_deg, dtype=float)), np.asarray(nrf, dtype=float), sigma)

    def __len__(self) -> int:
        return len(self.chi)


@dataclass(frozen=True)
class FitResult:
    eta: float
    N: float
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    chi_square: float
    dof: int

    @property
    def eta_se(self) -> float:
        return float(np.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def N_se(self) -> float:
        return float(np.sqrt(max(self.covariance[1, 1], 0.0)))


def _stack(datasets: Sequence[FitDataset]):
    bare = [d.model.label for d in datasets if d.sigma is None]
    if bare and len(bare) < len(datasets):
        raise InvalidArgumentError(
            "Either every dataset carries sigma or none does", {"without_sigma": bare}
        )
    weighted = not bare
    sigmas = []
    for d in datasets:
        if weighted:
            s = np.broadcast_to(np.asarray(d.sigma, dtype=float), d.chi.shape)
            if np.any(s <= 0):
                raise InvalidArgumentError("Per-point sigma must be positive", {"model": d.model.label})
            sigmas.append(s)
        else:
            sigmas.append(np.ones_like(d.chi))
    y = np.concatenate([d.nrf for d in datasets])
    return y, np.concatenate(sigmas), weighted


def _shapes(datasets: Sequence[FitDataset]) -> Tuple[np.ndarray, np.ndarray]:
    parts = [d.model.shapes(d.chi) for d in datasets]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _from_theta(theta: np.ndarray) -> Tuple[float, float]:
    return float(1.0 / (1.0 + np.exp(-theta[0]))), float(np.exp(theta[1]))


def _to_theta(eta: float, N: float) -> np.ndarray:
    return np.array([np.log(eta / (1.0 - eta)), np.log(N)])


def _natural_jacobian(b: np.ndarray, c: np.ndarray, eta: float, N: float, sigma: np.ndarray) -> np.ndarray:
    """d(model / sigma) / d(eta, N)."""
    return np.column_stack([(b + N * c) / sigma, (eta * c) / sigma])


def _check_identifiable(jacobian: np.ndarray) -> None:
    singular = linalg.svdvals(jacobian)
    if singular[0] == 0 or singular[-1] / singular[0] < _RANK_RTOL:
        raise UnidentifiableParametersError(details={"singular_values": singular.tolist()})


def fit(
    datasets: Sequence[FitDataset],
    initial: Tuple[float, float] = (0.5, 0.5),
    max_iter: int = None,
    step_tol: float = None,
) -> FitResult:
    """
    Fit (eta, N) jointly to one or more NRF curves.

    Args:
        datasets: Curves to fit together (e.g. one HWP and one QWP trajectory)
        initial: Starting (eta, N); an 8x8 grid pre-scan may replace it
        max_iter: Iteration cap (default FIT_MAX_ITER)
        step_tol: Relative step size that counts as converged (default FIT_STEP_TOL)

    Returns:
        FitResult; ``converged`` is False if the iteration cap was hit or
        the damping grew past its limit without a small step

    Raises:
        InvalidArgumentError: if fewer than 3 points are supplied or only
            some datasets carry sigma
        UnidentifiableParametersError: if the Jacobian is rank deficient
    """
    max_iter = settings.FIT_MAX_ITER if max_iter is None else max_iter
    step_tol = settings.FIT_STEP_TOL if step_tol is None else step_tol
    datasets = list(datasets)
    total = sum(len(d) for d in datasets)
    if total < 3:
        raise InvalidArgumentError("Need at least 3 points to fit", {"points": total})

    y, sigma, weighted = _stack(datasets)
    b, c = _shapes(datasets)

    def residuals(theta: np.ndarray) -> np.ndarray:
        eta, N = _from_theta(theta)
        return (y - (1.0 + eta * b + eta * N * c)) / sigma

    def cost(theta: np.ndarray) -> float:
        r = residuals(theta)
        return float(r @ r)

    _check_identifiable(_natural_jacobian(b, c, *initial, sigma))

    # Coarse pre-scan against local minima
    candidates = [_to_theta(*initial)]
    for eta in np.linspace(0.05, 0.95, 8):
        for N in np.geomspace(0.01, 5.0, 8):
            candidates.append(_to_theta(eta, N))
    theta = min(candidates, key=cost)
    current = cost(theta)
    logger.debug(f"Fit start at eta={_from_theta(theta)[0]:.4g}, N={_from_theta(theta)[1]:.4g}")

    lam = _LAMBDA_START
    converged = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        eta, N = _from_theta(theta)
        jac = -_natural_jacobian(b, c, eta, N, sigma) * np.array([eta * (1.0 - eta), N])
        r = residuals(theta)
        damping = np.sqrt(lam) * np.diag(np.sqrt(np.maximum(np.sum(jac ** 2, axis=0), 1e-300)))
        step, *_ = linalg.lstsq(np.vstack([jac, damping]), np.concatenate([-r, np.zeros(2)]))

        small = np.linalg.norm(step) <= step_tol * (np.linalg.norm(theta) + step_tol)
        trial = theta + step
        trial_cost = cost(trial)
        if trial_cost <= current:
            theta, current = trial, trial_cost
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
        if small:
            converged = True
            break
        if lam > _LAMBDA_MAX:
            logger.warning(f"Fit stalled after {iterations} iterations: damping above {_LAMBDA_MAX:g}")
            break

    eta, N = _from_theta(theta)
    jac_nat = _natural_jacobian(b, c, eta, N, sigma)
    _check_identifiable(jac_nat)
    dof = total - 2
    covariance = linalg.inv(jac_nat.T @ jac_nat)
    if not weighted and dof > 0:
        covariance = covariance * current / dof
    covariance = 0.5 * (covariance + covariance.T)

    if not converged and iterations >= max_iter:
        logger.warning(f"Fit did not converge in {max_iter} iterations (eta={eta:.6g}, N={N:.6g})")
    elif converged:
        logger.info(f"Fit converged in {iterations} iterations: eta={eta:.6g}, N={N:.6g}")

    return FitResult(
        eta=eta,
        N=N,
        covariance=covariance,
        residual_norm=float(np.sqrt(current)),
        iterations=iterations,
        converged=converged,
        chi_square=current,
        dof=dof,
    )


def fitted_curves(result: FitResult, datasets: Sequence[FitDataset]) -> List[np.ndarray]:
    """Model values at each dataset's angles for the fitted parameters."""
    return [d.model(d.chi, result.eta, result.N) for d in datasets]
