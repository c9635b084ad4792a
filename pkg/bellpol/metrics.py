"""
Degrees of polarization of every order.

P1 comes from the mean Stokes vector, P2 from the extreme eigenvalues of the
Stokes covariance, and P_k (k >= 3) from a sphere search over the k-th
central moment of S_n. Closed forms cover the lossy Bell states and the
Gaussian-limit relation between orders.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import optimize

from .config import settings
from .exceptions import InvalidArgumentError, UndefinedDPError
from .geometry import StokesDirection, SweepGrid, sphere_sweep

logger = logging.getLogger("metrics")

# Moment fields with every |value| at or below this are treated as identically zero
_ZERO_FIELD_ATOL = 1e-9
# Same, relative to the field's scale when one is known
_ZERO_FIELD_RTOL = 1e-9


@dataclass(frozen=True)
class DPReport:
    """
    Visibility (sup - inf) / (sup + inf) of a moment field over the sphere.

    For order 1, sup/inf are the extreme channel intensities (S0 +- <S_n>)/2.
    """

    order: int
    sup: float
    inf: float
    dp: float
    argmax: StokesDirection
    argmin: StokesDirection
    method: str  # "eigen" | "grid+refine" | "closed-form"
    visibility: Optional[float] = None


def _visibility(sup: float, inf: float, order: int) -> float:
    if sup + inf <= 0:
        raise UndefinedDPError(order)
    if inf < 0:
        raise UndefinedDPError(order, f"Order-{order} moment field changes sign (inf={inf:.6g}); DP undefined")
    return float((sup - inf) / (sup + inf))


def dp1(mean_stokes, mean_S0: float, grid: SweepGrid = None) -> DPReport:
    """
    First-order DP |<S>| / <S0>, with the intensity-visibility form alongside.

    The visibility form takes I_max/I_min of one prism channel over the grid
    plus the two directions +-<S>/|<S>|, where the extremes lie.

    Raises:
        UndefinedDPError: if mean_S0 <= 0
    """
    if mean_S0 <= 0:
        raise UndefinedDPError(1, "First-order DP is undefined without light (mean S0 <= 0)")
    s = np.asarray(mean_stokes, dtype=float)
    length = float(np.linalg.norm(s))
    p1 = length / mean_S0

    grid = sphere_sweep() if grid is None else grid
    vectors = grid.unit_vectors()
    if length > 0:
        vectors = np.vstack([vectors, s / length, -s / length])
    projections = vectors @ s
    i_max = 0.5 * (mean_S0 + projections.max())
    i_min = 0.5 * (mean_S0 + projections.min())
    visibility = (i_max - i_min) / (i_max + i_min)

    if abs(visibility - p1) > 1e-9:
        logger.warning(f"P1 visibility form {visibility:.12g} differs from |S|/S0 {p1:.12g}")

    argmax = StokesDirection.from_vector(s) if length > 0 else StokesDirection(0.0, 0.0)
    argmin = StokesDirection.from_vector(-s) if length > 0 else StokesDirection(np.pi, 0.0)
    return DPReport(1, i_max, i_min, p1, argmax, argmin, "closed-form", float(visibility))


def dp2_eigen(stokes_cov, mean_S0: Optional[float] = None) -> DPReport:
    """
    Second-order DP from the Stokes covariance.

    Var(S_n) = n^T C n on the unit sphere, so sup and inf are the extreme
    eigenvalues and the arg-directions their eigenvectors.

    Args:
        stokes_cov: Symmetric 3x3 covariance
        mean_S0: Optional mean intensity; must be positive when given

    Raises:
        InvalidArgumentError: if the matrix is not symmetric 3x3
        UndefinedDPError: if sup + inf <= 0
    """
    cov = np.asarray(stokes_cov, dtype=float)
    if cov.shape != (3, 3):
        raise InvalidArgumentError("Stokes covariance must be 3x3", {"shape": list(cov.shape)})
    scale = max(1.0, float(np.abs(cov).max()))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidArgumentError("Stokes covariance must be symmetric")
    if mean_S0 is not None and mean_S0 <= 0:
        raise UndefinedDPError(2, "Second-order DP is undefined without light (mean S0 <= 0)")

    values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
    sup = float(values[-1])
    inf = _clamp_floor(float(values[0]), abs(sup))
    dp = _visibility(sup, inf, 2)
    return DPReport(
        2, sup, inf, dp,
        StokesDirection.from_vector(vectors[:, -1]),
        StokesDirection.from_vector(vectors[:, 0]),
        "eigen",
    )


def _clamp_floor(inf: float, scale: float) -> float:
    """Rounding-level negatives of a nonnegative field become 0."""
    return 0.0 if -_ZERO_FIELD_RTOL * scale <= inf < 0 else inf


def _tangent_basis(n0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(n0[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n0, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n0, e1)


def _refine(
    moment_fn: Callable[[StokesDirection], float],
    start: np.ndarray,
    sign: float,
    refine_tol: float,
    step: float,
    fatol: float,
) -> Tuple[float, np.ndarray]:
    """Nelder-Mead in the tangent plane at ``start``; sign=-1 maximizes."""
    e1, e2 = _tangent_basis(start)

    def to_vector(uv):
        v = start + uv[0] * e1 + uv[1] * e2
        return v / np.linalg.norm(v)

    def objective(uv):
        return sign * moment_fn(StokesDirection.from_vector(to_vector(uv)))

    simplex = np.array([[0.0, 0.0], [step, 0.0], [0.0, step]])
    result = optimize.minimize(
        objective, np.zeros(2), method="Nelder-Mead",
        options={"xatol": refine_tol, "fatol": fatol, "initial_simplex": simplex, "maxiter": 2000},
    )
    return sign * float(result.fun), to_vector(result.x)


def dpk_search(
    moment_fn: Callable[[StokesDirection], float],
    k: int,
    grid: SweepGrid = None,
    refine_tol: float = None,
    scale: Optional[float] = None,
) -> DPReport:
    """
    k-th order DP by grid search plus derivative-free refinement.

    The k-th central moment is evaluated on every grid direction; the best and
    worst grid points are then polished with Nelder-Mead until the direction
    moves less than ``refine_tol`` radians.

    Args:
        moment_fn: Direction -> k-th central moment; a CentralMomentPolynomial
            is evaluated on the whole grid at once
        k: Moment order
        grid: Directions to scan (default: the plate sweep grid)
        refine_tol: Refinement tolerance in radians (default REFINE_TOL)
        scale: Size of a non-vanishing field, e.g. (largest variance)^(k/2);
            read from ``moment_fn.scale`` when not given. The field counts as
            identically zero below 1e-9 times this, or below 1e-9 absolute
            when no scale is known.

    Raises:
        InvalidArgumentError: if the grid is empty
        UndefinedDPError: if the moment field vanishes identically, changes
            sign, or sup + inf <= 0
    """
    grid = sphere_sweep() if grid is None else grid
    refine_tol = settings.REFINE_TOL if refine_tol is None else refine_tol
    if len(grid) == 0:
        raise InvalidArgumentError("Direction grid is empty")

    vectors = grid.unit_vectors()
    if hasattr(moment_fn, "evaluate"):
        values = np.asarray(moment_fn.evaluate(vectors), dtype=float)
    else:
        values = np.array([moment_fn(d) for d in grid.directions])

    if scale is None:
        scale = getattr(moment_fn, "scale", None)
    threshold = _ZERO_FIELD_ATOL if scale is None else _ZERO_FIELD_RTOL * scale
    if np.all(np.abs(values) <= threshold):
        logger.warning(f"Order-{k} moment field is identically zero; DP undefined")
        raise UndefinedDPError(k)

    i_max, i_min = int(np.argmax(values)), int(np.argmin(values))
    step = np.radians(max(grid.step_H_deg, grid.step_Q_deg, 1.0))
    fatol = 1e-12 * float(np.abs(values).max())

    sup, arg_sup = _refine(moment_fn, vectors[i_max], -1.0, refine_tol, step, fatol)
    inf, arg_inf = _refine(moment_fn, vectors[i_min], 1.0, refine_tol, step, fatol)
    if sup < values[i_max]:
        sup, arg_sup = float(values[i_max]), vectors[i_max]
    if inf > values[i_min]:
        inf, arg_inf = float(values[i_min]), vectors[i_min]
    if scale is not None:
        inf = _clamp_floor(inf, scale)

    dp = _visibility(sup, inf, k)
    logger.debug(f"P{k}: sup={sup:.6g}, inf={inf:.6g}, dp={dp:.6g}")
    return DPReport(
        k, sup, inf, dp,
        StokesDirection.from_vector(arg_sup),
        StokesDirection.from_vector(arg_inf),
        "grid+refine",
    )


def closed_form_p2(family: str, sign: int, eta: float, N: float) -> float:
    """P2 = eta (1 + N) / (1 + eta N) for the triplets, 0 for the singlet."""
    if not 0.0 <= eta <= 1.0 or N < 0:
        raise InvalidArgumentError("Need 0 <= eta <= 1 and N >= 0", {"eta": eta, "N": N})
    if family == "psi" and sign < 0:
        return 0.0
    return float(eta * (1.0 + N) / (1.0 + eta * N))


def gaussian_limit_dp(p2: float, order: int) -> float:
    """
    P_{2m} implied by P2 when every even central moment follows from the variance.

    With a/b = (1 + p2)/(1 - p2), P_{2m} = (a^m - b^m)/(a^m + b^m).
    """
    if not 0.0 <= p2 <= 1.0:
        raise InvalidArgumentError("p2 must lie in [0, 1]", {"p2": p2})
    if order < 2 or order % 2:
        raise InvalidArgumentError("Gaussian-limit DP needs an even order >= 2", {"order": order})
    if p2 == 1.0:
        return 1.0
    m = order // 2
    a, b = (1.0 + p2) ** m, (1.0 - p2) ** m
    return float((a - b) / (a + b))


def coherent_fourth_moment(mean_S0: float) -> float:
    """Fourth central moment of a difference of independent Poissons with total mean S0."""
    return float(3.0 * mean_S0 ** 2 + mean_S0)

