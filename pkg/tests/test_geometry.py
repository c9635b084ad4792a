"""
Tests for Poincare-sphere geometry.

Verifies the plate-angle mapping, trajectories, sweep grid and projections.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bellpol.exceptions import InvalidArgumentError
from bellpol.geometry import (
    StokesDirection,
    WaveplateSetting,
    direction_from_waveplates,
    hwp_trajectory,
    measured_vector,
    project_to_S2S1,
    qwp_trajectory,
    sphere_sweep,
    stokes_rotation,
    unit_vector,
)


@pytest.mark.parametrize("chi_h, chi_q, expected", [
    (0.0, 0.0, (1.0, 0.0, 0.0)),
    (22.5, 0.0, (0.0, 1.0, 0.0)),
    (0.0, 45.0, (0.0, 0.0, 1.0)),
])
def test_direction_from_waveplates_axes(chi_h, chi_q, expected):
    """The three reference settings select S1, S2 and S3."""
    direction = direction_from_waveplates(WaveplateSetting.from_degrees(chi_h, chi_q))
    assert_allclose(unit_vector(direction), expected, atol=1e-12)


def test_direction_angles_for_s3():
    """QWP at 45 degrees gives theta = phi = 90 degrees."""
    direction = direction_from_waveplates(WaveplateSetting.from_degrees(0.0, 45.0))
    assert direction.theta_deg == pytest.approx(90.0)
    assert direction.phi_deg == pytest.approx(90.0)


def test_doubly_singular_point_pins_phi():
    """At theta = 0 the azimuth is defined as 0."""
    direction = direction_from_waveplates(WaveplateSetting(0.0, 0.0))
    assert direction.theta == 0.0
    assert direction.phi == 0.0


@pytest.mark.parametrize("theta, phi, expected", [
    (0.0, 1.234, (1.0, 0.0, 0.0)),
    (np.pi / 2, 0.0, (0.0, 1.0, 0.0)),
    (np.pi / 2, np.pi / 2, (0.0, 0.0, 1.0)),
])
def test_unit_vector_examples(theta, phi, expected):
    """unit_vector returns the S1, S2, S3 coefficients of S_n."""
    assert_allclose(unit_vector(StokesDirection(theta, phi)), expected, atol=1e-15)


def test_direction_normalization():
    """Out-of-range angles are folded into theta in [0, pi], phi in (-pi, pi]."""
    direction = StokesDirection(-0.5, 3 * np.pi)
    assert 0.0 <= direction.theta <= np.pi
    assert -np.pi < direction.phi <= np.pi
    assert_allclose(
        unit_vector(direction),
        [np.cos(-0.5), np.sin(-0.5) * np.cos(3 * np.pi), 0.0],
        atol=1e-12,
    )


def test_from_vector_round_trip():
    """from_vector inverts unit_vector."""
    v = np.array([0.3, -0.5, 0.8])
    direction = StokesDirection.from_vector(v)
    assert_allclose(unit_vector(direction), v / np.linalg.norm(v), atol=1e-12)


def test_from_vector_rejects_zero():
    """A zero vector has no direction."""
    with pytest.raises(InvalidArgumentError):
        StokesDirection.from_vector([0.0, 0.0, 0.0])


def test_direction_matches_measured_vector_everywhere():
    """The angle formula and the measured unit vector agree on a dense grid."""
    for chi_h in np.linspace(-50.0, 100.0, 31):
        for chi_q in np.linspace(-90.0, 190.0, 29):
            setting = WaveplateSetting.from_degrees(chi_h, chi_q)
            n = unit_vector(direction_from_waveplates(setting))
            assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
            assert_allclose(n, measured_vector(setting), atol=1e-7)


@pytest.mark.parametrize("chi_h, chi_q", [(7.0, 13.0), (33.0, 71.0), (-12.0, 150.0)])
def test_periodicity(chi_h, chi_q):
    """HWP period 90 degrees and QWP period 180 degrees."""
    base = unit_vector(direction_from_waveplates(WaveplateSetting.from_degrees(chi_h, chi_q)))
    shifted_h = unit_vector(direction_from_waveplates(WaveplateSetting.from_degrees(chi_h + 90.0, chi_q)))
    shifted_q = unit_vector(direction_from_waveplates(WaveplateSetting.from_degrees(chi_h, chi_q + 180.0)))
    assert_allclose(shifted_h, base, atol=1e-12)
    assert_allclose(shifted_q, base, atol=1e-12)


@pytest.mark.parametrize("trajectory, period", [(hwp_trajectory, 90.0), (qwp_trajectory, 180.0)])
def test_trajectory_continuity(trajectory, period):
    """No branch jumps along a trajectory sampled at 0.1 degree steps."""
    grid = trajectory(int(period / 0.1) + 1)
    vectors = grid.unit_vectors()
    jumps = np.linalg.norm(np.diff(vectors, axis=0), axis=1)
    assert jumps.max() < 0.02


def test_hwp_trajectory_on_s1_s2_circle():
    """With the QWP at 0 every direction has phi = 0 or lies at a pole."""
    grid = hwp_trajectory(37)
    vectors = grid.unit_vectors()
    assert_allclose(vectors[:, 2], 0.0, atol=1e-12)
    for setting, direction in grid:
        assert setting.chi_Q == 0.0
        assert direction.theta == pytest.approx(min(4 * setting.chi_H, 2 * np.pi - 4 * setting.chi_H), abs=1e-9)


def test_qwp_trajectory_passes_s1_and_s3():
    """The QWP sweep starts at S1 and reaches S3 at 45 degrees."""
    grid = qwp_trajectory(5)
    vectors = grid.unit_vectors()
    assert [s.chi_Q_deg for s in grid.settings] == pytest.approx([0.0, 45.0, 90.0, 135.0, 180.0])
    assert_allclose(vectors[0], [1.0, 0.0, 0.0], atol=1e-12)
    assert_allclose(vectors[1], [0.0, 0.0, 1.0], atol=1e-12)


def test_two_step_trajectory_is_endpoints():
    """n_steps = 2 gives the two ends of the period."""
    grid = hwp_trajectory(2)
    assert [s.chi_H_deg for s in grid.settings] == pytest.approx([0.0, 90.0])
    assert grid.step_H_deg == pytest.approx(90.0)


def test_trajectory_rejects_single_step():
    """Fewer than two steps is an invalid argument."""
    with pytest.raises(InvalidArgumentError):
        qwp_trajectory(1)


@pytest.mark.parametrize("step_h, step_q, count", [(2.5, 5.0, 361), (45.0, 90.0, 4)])
def test_sphere_sweep_size(step_h, step_q, count):
    """Inclusive grid nodes over [0, 45] x [0, 90] degrees."""
    assert len(sphere_sweep(step_h, step_q)) == count


def test_sphere_sweep_entries_consistent():
    """Each grid direction is the direction of its setting, on the n3 >= 0 hemisphere."""
    grid = sphere_sweep(7.5, 15.0)
    for setting, direction in grid:
        assert direction == direction_from_waveplates(setting)
        assert unit_vector(direction)[2] >= -1e-12


@pytest.mark.parametrize("step_h, step_q", [(0.0, 5.0), (2.5, -1.0)])
def test_sphere_sweep_rejects_bad_steps(step_h, step_q):
    """Non-positive steps are rejected."""
    with pytest.raises(InvalidArgumentError):
        sphere_sweep(step_h, step_q)


def test_full_domain_coverage():
    """The plate domain reaches within 1 degree of every signed axis."""
    vectors = []
    for chi_h in np.arange(0.0, 90.0, 1.0):
        for chi_q in np.arange(0.0, 180.0, 2.0):
            vectors.append(measured_vector(WaveplateSetting.from_degrees(chi_h, chi_q)))
    vectors = np.array(vectors)
    for axis in np.vstack([np.eye(3), -np.eye(3)]):
        closest = np.degrees(np.arccos(np.clip(vectors @ axis, -1.0, 1.0))).min()
        assert closest < 1.0


@pytest.mark.parametrize("direction, expected", [
    (StokesDirection(0.0, 0.0), (0.0, 1.0)),
    (StokesDirection(np.pi / 2, 0.0), (1.0, 0.0)),
    (StokesDirection(np.pi / 2, np.pi / 2), (0.0, 0.0)),
])
def test_project_to_s2s1(direction, expected):
    """(x, y) are the S2 and S1 components."""
    assert project_to_S2S1(direction) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("chi_h, chi_q", [(0.0, 0.0), (11.0, 29.0), (40.0, 100.0)])
def test_stokes_rotation_is_orthogonal_with_measured_first_row(chi_h, chi_q):
    """The induced Stokes rotation is in SO(3) and its first row is the measured direction."""
    setting = WaveplateSetting.from_degrees(chi_h, chi_q)
    rot = stokes_rotation(setting)
    assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-12)
    assert_allclose(rot[0], measured_vector(setting), atol=1e-12)
