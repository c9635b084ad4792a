"""
Tests for the NRF curve models and the (eta, N) fit.
"""

import numpy as np
import pytest

from bellpol import fitting
from bellpol.exceptions import InvalidArgumentError, UnidentifiableParametersError
from bellpol.fitting import CurveModel, FitDataset, fit, fitted_curves, model_nrf
from bellpol.gaussian import BellStateSpec, nrf_curve
from bellpol.geometry import hwp_trajectory, qwp_trajectory

ETA, N = 0.26, 0.2


def _dataset(label, plate, eta=ETA, nbar=N, points=46, noise=0.0, seed=0):
    model = CurveModel.from_label(label, plate)
    chi_deg = np.linspace(0.0, 90.0 if plate == "hwp" else 180.0, points)
    values = model_nrf(model, np.radians(chi_deg), eta, nbar)
    sigma = None
    if noise:
        values = values + np.random.default_rng(seed).normal(0.0, noise, points)
        sigma = np.full(points, noise)
    return FitDataset.from_degrees(model, chi_deg, values, sigma)


def test_psi_plus_hwp_values():
    """1 - eta at chi = 0 and 1 + eta (2N + 1) at 22.5 degrees."""
    model = CurveModel.from_label("psi+", "hwp")
    values = model(np.radians([0.0, 22.5]), ETA, N)
    assert values == pytest.approx([0.74, 1.0 + ETA * (2 * N + 1)])


def test_phi_plus_hwp_flat():
    """Phi+ under the HWP is flat at 1 + eta + 2 eta N."""
    values = CurveModel.from_label("phi+", "hwp")(np.linspace(0, np.pi / 2, 9), ETA, N)
    assert values == pytest.approx(np.full(9, 1.364))


@pytest.mark.parametrize("label", ["psi+", "psi-", "phi+", "phi-"])
@pytest.mark.parametrize("plate", ["hwp", "qwp"])
def test_models_match_engine(label, plate):
    """Closed-form curves agree with the Gaussian engine along the plate trajectory."""
    spec = BellStateSpec.from_label(label, nbar=N)
    if plate == "hwp":
        trajectory = hwp_trajectory(19)
        chi = np.array([s.chi_H for s, _ in trajectory])
    else:
        trajectory = qwp_trajectory(19)
        chi = np.array([s.chi_Q for s, _ in trajectory])
    engine = nrf_curve(spec, ETA, [d for _, d in trajectory])
    assert CurveModel.from_label(label, plate)(chi, ETA, N) == pytest.approx(engine, abs=1e-9)


def test_unknown_model_rejected():
    """Plates other than hwp/qwp are refused."""
    with pytest.raises(InvalidArgumentError):
        CurveModel.from_label("psi+", "lens")


def test_fit_recovers_parameters_exact_data():
    """Noise-free HWP and QWP curves give back (eta, N)."""
    result = fit([_dataset("psi+", "hwp"), _dataset("phi-", "qwp")])
    assert result.converged
    assert result.eta == pytest.approx(ETA, abs=1e-6)
    assert result.N == pytest.approx(N, abs=1e-6)
    assert result.residual_norm < 1e-6
    assert result.dof == 90


def test_fit_noisy_data_within_uncertainty():
    """Weighted fit of noisy data lands within 4 standard errors."""
    data = [_dataset("psi+", "hwp", noise=0.01, seed=1), _dataset("psi+", "qwp", noise=0.01, seed=2)]
    result = fit(data)
    assert abs(result.eta - ETA) < 4 * result.eta_se
    assert abs(result.N - N) < 4 * result.N_se
    assert result.chi_square / result.dof == pytest.approx(1.0, abs=0.5)


def test_fitted_curves_follow_data():
    """The fitted model reproduces exact input curves."""
    data = [_dataset("psi+", "hwp")]
    curves = fitted_curves(fit(data), data)
    assert curves[0] == pytest.approx(data[0].nrf, abs=1e-6)


def test_fit_needs_three_points():
    """Two points cannot pin two parameters with a residual."""
    with pytest.raises(InvalidArgumentError):
        fit([_dataset("psi+", "hwp", points=2)])


@pytest.mark.parametrize("label, plate", [("psi-", "hwp"), ("phi+", "hwp")])
def test_unidentifiable_data(label, plate):
    """Flat curves cannot separate eta from N."""
    with pytest.raises(UnidentifiableParametersError):
        fit([_dataset(label, plate)])


def test_nonpositive_sigma_rejected():
    """Per-point uncertainties must be positive."""
    model = CurveModel.from_label("psi+", "hwp")
    data = FitDataset.from_degrees(model, [0.0, 10.0, 20.0, 30.0], [0.7, 0.8, 1.0, 1.1], [0.1, 0.0, 0.1, 0.1])
    with pytest.raises(InvalidArgumentError):
        fit([data])


def test_iteration_cap_reports_non_convergence():
    """Hitting max_iter returns the current estimate flagged as not converged."""
    result = fit([_dataset("psi+", "hwp", eta=0.9, nbar=3.0)], max_iter=1)
    assert not result.converged
    assert result.iterations == 1


def test_damping_overflow_reports_non_convergence(monkeypatch):
    """A fit that stops because the damping ran away is not flagged as converged."""
    monkeypatch.setattr(fitting, "_LAMBDA_START", 1e18)
    result = fit([_dataset("psi+", "hwp"), _dataset("psi+", "qwp")], step_tol=0.0)
    assert not result.converged
    assert result.iterations == 1


def test_mixed_weighting_rejected():
    """Datasets with and without sigma cannot be fitted together."""
    data = [_dataset("psi+", "hwp", noise=0.01, seed=1), _dataset("psi+", "qwp")]
    with pytest.raises(InvalidArgumentError) as exc_info:
        fit(data)
    assert exc_info.value.details["without_sigma"] == ["psi+/qwp"]


def test_fit_recovers_random_truths():
    """Exact HWP and QWP curves give back (eta, N) across the parameter box."""
    rng = np.random.default_rng(31)
    for eta, nbar in zip(rng.uniform(0.05, 0.95, 20), rng.uniform(0.01, 5.0, 20)):
        result = fit([_dataset("psi+", "hwp", eta=eta, nbar=nbar), _dataset("psi+", "qwp", eta=eta, nbar=nbar)])
        assert result.converged
        assert result.eta == pytest.approx(eta, abs=1e-7)
        assert result.N == pytest.approx(nbar, rel=1e-7)


def test_noisy_fit_residual_orthogonal_to_jacobian():
    """At the optimum the weighted residual has no component along either parameter direction."""
    data = [_dataset("psi+", "hwp", noise=0.01, seed=1), _dataset("psi+", "qwp", noise=0.01, seed=2)]
    result = fit(data, step_tol=1e-12)
    b = np.concatenate([d.model.shapes(d.chi)[0] for d in data])
    c = np.concatenate([d.model.shapes(d.chi)[1] for d in data])
    sigma = np.concatenate([d.sigma for d in data])
    residual = np.concatenate([d.nrf - d.model(d.chi, result.eta, result.N) for d in data]) / sigma
    jacobian = np.column_stack([(b + result.N * c) / sigma, result.eta * c / sigma])
    scale = np.linalg.norm(jacobian, axis=0) * np.linalg.norm(residual)
    assert np.all(np.abs(jacobian.T @ residual) <= 1e-6 * scale)


def test_fit_roundtrip_73_points():
    """A noiseless 73-point pair of curves round-trips to 1e-8."""
    data = [_dataset("psi+", "hwp", points=73), _dataset("psi+", "qwp", points=73)]
    result = fit(data)
    assert result.eta == pytest.approx(ETA, abs=1e-8)
    assert result.N == pytest.approx(N, abs=1e-8)
    for curve, d in zip(fitted_curves(result, data), data):
        assert curve == pytest.approx(d.nrf, abs=1e-8)


def test_mean_photon_number_less_certain_than_efficiency():
    """N only enters through eta N, so its relative uncertainty exceeds that of eta."""
    data = [_dataset("psi+", "hwp", noise=0.01, seed=1), _dataset("psi+", "qwp", noise=0.01, seed=2)]
    result = fit(data)
    assert result.N_se / result.N > result.eta_se / result.eta
