"""
Tests for the pulse-by-pulse Monte Carlo simulator and its estimators.
"""

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from bellpol import pulses
from bellpol.exceptions import InsufficientPulsesError, InvalidArgumentError
from bellpol.gaussian import STATE_LABELS, BellStateSpec, nrf_curve
from bellpol.geometry import WaveplateSetting, direction_from_waveplates
from bellpol.metrics import closed_form_p2
from bellpol.pulses import (
    DetectorConfig,
    PulseBatch,
    default_noise_sigma,
    estimate_moments,
    histogram,
    monte_carlo_dp,
    outcome_table,
    required_pulses,
    sample_pulses,
    subtract_electronic_noise,
    vacuum_table,
)
from bellpol.validation import loss_suite

S2_SETTING = WaveplateSetting.from_degrees(22.5, 0.0)


@pytest.mark.parametrize("kwargs", [
    {"eta": 1.2},
    {"eta": 0.5, "electronic_noise_sigma": -1.0},
    {"eta": 0.5, "pulses": 0},
    {"eta": 0.5, "workers": 0},
])
def test_detector_config_validation(kwargs):
    """Out-of-range detector parameters are rejected."""
    with pytest.raises(InvalidArgumentError):
        DetectorConfig(**kwargs)


def test_default_noise_sigma():
    """2 sigma^2 is 10% of the singlet signal variance 4 M eta N (1 - eta)."""
    spec = BellStateSpec.from_label("psi-", nbar=0.2, quadruples=100)
    sigma = default_noise_sigma(spec, 0.26)
    assert 2 * sigma ** 2 == pytest.approx(0.1 * 4 * 100 * 0.26 * 0.2 * 0.74)
    assert DetectorConfig.for_state(spec, 0.26).electronic_noise_sigma == pytest.approx(sigma)


def test_outcome_table_normalized_and_correlated():
    """Psi+ without plates puts equal photon numbers in both channels."""
    table = outcome_table(BellStateSpec.from_label("psi+", gain=0.3), WaveplateSetting(0.0, 0.0), cutoff=10)
    assert table.probabilities.sum() == pytest.approx(1.0)
    off_diagonal = table.probabilities - np.diag(np.diag(table.probabilities))
    assert off_diagonal.sum() == pytest.approx(0.0, abs=1e-12)
    mean_a, mean_b = table.mean_counts()
    assert mean_a == pytest.approx(2 * np.sinh(0.3) ** 2, rel=1e-6)
    assert mean_b == pytest.approx(mean_a, rel=1e-9)


def test_vacuum_table_is_point_mass():
    """The noise reference has no photons."""
    table = vacuum_table()
    assert table.probabilities[0, 0] == pytest.approx(1.0)


def test_sampling_reproducible_across_workers():
    """Fixed seed and chunk size give identical batches for 1 or 3 workers."""
    spec = BellStateSpec.from_label("phi+", gain=0.3, quadruples=5)
    table = outcome_table(spec, S2_SETTING)
    config = DetectorConfig(eta=0.5, electronic_noise_sigma=0.3, pulses=5000, seed=7, chunk_size=700)
    one = sample_pulses(table, 5, config)
    many = sample_pulses(table, 5, replace(config, workers=3))
    assert np.array_equal(one.I_A, many.I_A)
    assert np.array_equal(one.I_B, many.I_B)
    assert one.pulses == 5000


def test_different_seeds_differ():
    """Two seeds give different batches."""
    spec = BellStateSpec.from_label("psi+", gain=0.3, quadruples=5)
    table = outcome_table(spec, S2_SETTING)
    a = sample_pulses(table, 5, DetectorConfig(eta=0.5, pulses=200, seed=1))
    b = sample_pulses(table, 5, DetectorConfig(eta=0.5, pulses=200, seed=2))
    assert not np.array_equal(a.S_n, b.S_n)


def test_perfect_detection_psi_s1_is_silent():
    """eta = 1, no noise: Psi+ along S1 has S_n = 0 on every pulse."""
    spec = BellStateSpec.from_label("psi+", gain=0.3, quadruples=4)
    batch = sample_pulses(outcome_table(spec, WaveplateSetting(0.0, 0.0)), 4, DetectorConfig(eta=1.0, pulses=500))
    assert np.all(batch.S_n == 0)
    assert batch.S0.mean() > 0


def test_estimator_matches_k_statistics():
    """Central-moment estimates use k-statistics up to order 4."""
    rng = np.random.default_rng(5)
    x = rng.poisson(3.0, 400).astype(float)
    batch = PulseBatch(x, np.zeros_like(x))
    est = estimate_moments(batch, 4, n_batches=10)
    assert est.s_n[1].value == pytest.approx(x.mean())
    assert est.s_n[2].value == pytest.approx(stats.kstat(x, 2))
    assert est.s_n[3].value == pytest.approx(stats.kstat(x, 3))
    assert est.s_n[4].value == pytest.approx(stats.kstat(x, 4) + 3 * stats.kstat(x, 2) ** 2)
    assert est.s_n[2].standard_error > 0
    assert est.nrf.value == pytest.approx(stats.kstat(x, 2) / x.mean())


def test_insufficient_pulses():
    """Fewer than max(2, 2 k) pulses cannot give moment estimates."""
    assert required_pulses(1) == 2
    assert required_pulses(4) == 8
    batch = PulseBatch(np.ones(7), np.zeros(7))
    with pytest.raises(InsufficientPulsesError):
        estimate_moments(batch, 4)


def test_no_light_has_no_nrf():
    """A zero-intensity batch leaves the NRF undefined."""
    batch = PulseBatch(np.zeros(50), np.zeros(50))
    assert estimate_moments(batch, 2).nrf is None


@pytest.mark.parametrize("label", ["psi+", "phi+"])
def test_mc_nrf_matches_engine(label):
    """Binomial thinning reproduces the beamsplitter-loss NRF within 4 SE."""
    spec = BellStateSpec.from_label(label, nbar=0.2, quadruples=20)
    eta = 0.26
    batch = sample_pulses(outcome_table(spec, S2_SETTING), 20, DetectorConfig(eta=eta, pulses=20000, seed=11))
    est = estimate_moments(batch, 2)
    exact = nrf_curve(spec, eta, [direction_from_waveplates(S2_SETTING)])[0]
    assert abs(est.nrf.value - exact) < 4 * est.nrf.standard_error


def test_channel_means_equal():
    """Both prism channels see the same mean intensity."""
    spec = BellStateSpec.from_label("phi-", nbar=0.2, quadruples=20)
    batch = sample_pulses(outcome_table(spec, S2_SETTING), 20, DetectorConfig(eta=0.5, pulses=10000, seed=3))
    a, b = estimate_moments(batch, 2).channel_means
    assert abs(a.value - b.value) < 4 * np.hypot(a.standard_error, b.standard_error)


def test_noise_subtraction_recovers_variance():
    """Subtracting a vacuum reference removes the electronic variance."""
    spec = BellStateSpec.from_label("psi-", nbar=0.2, quadruples=20)
    eta = 0.5
    table = outcome_table(spec, WaveplateSetting(0.0, 0.0))
    noisy = DetectorConfig(eta=eta, electronic_noise_sigma=2.0, pulses=20000, seed=4)
    signal = estimate_moments(sample_pulses(table, 20, noisy), 4)
    reference = sample_pulses(vacuum_table(), 20, replace(noisy, seed=5))
    corrected = subtract_electronic_noise(signal, reference)

    exact_variance = (1 - eta) * 4 * 20 * eta * 0.2
    assert signal.s_n[2].value > exact_variance + 5.0
    assert abs(corrected.s_n[2].value - exact_variance) < 4 * corrected.s_n[2].standard_error
    assert not corrected.over_subtracted


def test_over_subtraction_is_flagged():
    """A reference noisier than the signal gives a flagged negative variance."""
    rng = np.random.default_rng(9)
    signal = estimate_moments(PulseBatch(rng.normal(0, 0.1, 2000), np.zeros(2000)), 2)
    reference = PulseBatch(rng.normal(0, 3.0, 2000), np.zeros(2000))
    corrected = subtract_electronic_noise(signal, reference)
    assert corrected.over_subtracted
    assert corrected.s_n[2].value < 0


def test_histogram_symmetric_bins():
    """Bins are centred on the mean and counts cover every pulse."""
    rng = np.random.default_rng(2)
    x = rng.normal(1.0, 2.0, 1000)
    hist = histogram(PulseBatch(x, np.zeros_like(x)), 21)
    assert len(hist.counts) == 21
    assert hist.counts.sum() == 1000
    assert hist.edges[0] + hist.edges[-1] == pytest.approx(2 * x.mean())
    assert hist.normality_pvalue is not None


def test_histogram_needs_two_bins():
    """One bin is not a histogram."""
    with pytest.raises(InvalidArgumentError):
        histogram(PulseBatch(np.ones(10), np.zeros(10)), 1)


def test_monte_carlo_dp_singlet():
    """Singlet: P1 and P2 near zero."""
    spec = BellStateSpec.from_label("psi-", nbar=0.2, quadruples=10)
    result = monte_carlo_dp(spec, DetectorConfig(eta=0.26, pulses=8000, seed=1), orders=(4,), n_batches=20)
    assert result.p1.value < 0.05
    assert result.p1.standard_error is not None
    assert result.p2.value < 0.1
    assert 4 in result.higher
    assert_allclose(result.covariance, result.covariance.T)


def test_monte_carlo_dp_triplet_p2():
    """Psi+ P2 from six settings approaches the closed form."""
    spec = BellStateSpec.from_label("psi+", nbar=0.2, quadruples=10)
    result = monte_carlo_dp(spec, DetectorConfig(eta=0.26, pulses=20000, seed=2), orders=(4,))
    assert result.p2.value == pytest.approx(closed_form_p2("psi", 1, 0.26, 0.2), abs=0.06)
    assert len(result.estimates) == 6


def test_standard_error_halves_with_four_times_the_pulses():
    """Batch-means SE of the mean follows sqrt(Var(S_n) / pulses)."""
    spec = BellStateSpec.from_label("psi+", nbar=0.2, quadruples=10)
    table = outcome_table(spec, S2_SETTING)
    variance = nrf_curve(spec, 0.5, [direction_from_waveplates(S2_SETTING)])[0] * 4 * 0.5 * 0.2 * 10
    errors = []
    for pulses_count, seed in ((5000, 21), (20000, 22)):
        batch = sample_pulses(table, 10, DetectorConfig(eta=0.5, pulses=pulses_count, seed=seed))
        se = estimate_moments(batch, 2, n_batches=100).s_n[1].standard_error
        assert se == pytest.approx(np.sqrt(variance / pulses_count), rel=0.3)
        errors.append(se)
    assert 0.35 < errors[1] / errors[0] < 0.7


@pytest.mark.parametrize("label", STATE_LABELS)
def test_mean_stokes_vanishes(label):
    """Bell states carry no mean polarization along an off-axis direction."""
    spec = BellStateSpec.from_label(label, nbar=0.2, quadruples=10)
    setting = WaveplateSetting.from_degrees(11.25, 22.5)
    batch = sample_pulses(outcome_table(spec, setting), 10, DetectorConfig(eta=0.5, pulses=10000, seed=31))
    mean = estimate_moments(batch, 2).s_n[1]
    assert abs(mean.value) < 3 * mean.standard_error


def test_singlet_third_moment_vanishes():
    """The singlet's S_n distribution is symmetric about zero."""
    spec = BellStateSpec.from_label("psi-", nbar=0.2, quadruples=10)
    batch = sample_pulses(outcome_table(spec, S2_SETTING), 10, DetectorConfig(eta=0.5, pulses=20000, seed=41))
    mu3 = estimate_moments(batch, 3).s_n[3]
    assert abs(mu3.value) < 3 * mu3.standard_error


def test_thinning_equals_beamsplitter_loss_for_every_state():
    """All four states at five plate settings match the engine NRF."""
    result = loss_suite(n_se=4.0)
    assert len(result.cases) == 4 * 5
    assert result.passed


def test_monte_carlo_singlet_p1_small():
    """With 20000 pulses per setting the singlet's P1 stays below 0.02."""
    spec = BellStateSpec.from_label("psi-", nbar=0.2, quadruples=100)
    result = monte_carlo_dp(spec, DetectorConfig(eta=0.26, pulses=20000, seed=5), orders=(4,))
    assert result.p1.value <= 0.02


def test_sign_changing_moments_have_no_visibility():
    """Estimated moments of both signs leave the DP undefined."""
    assert pulses._visibility([1.5, 0.2, -0.5]) is None
    assert pulses._visibility([0.0, 0.0]) is None
    assert pulses._visibility([3.0, 1.0]) == pytest.approx(0.5)
