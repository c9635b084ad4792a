"""
Poincare-sphere geometry for Stokes measurements.

Maps half- and quarter-wave plate angles to measurement directions, builds
single-plate trajectories and the two-plate sweep grid, and projects
directions onto the (S2, S1) plane used by the sphere maps.

Angles are accepted in degrees at the edges (``from_degrees``, sweep steps)
and stored in radians.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import InvalidArgumentError

# Below this, both atan2 arguments are treated as zero and phi is pinned to 0
_POLE_EPS = 1e-12

# Pauli matrices in Stokes order: S1 <-> sigma_z, S2 <-> sigma_x, S3 <-> sigma_y
PAULI_STOKES = (
    np.array([[1, 0], [0, -1]], dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
)


@dataclass(frozen=True)
class StokesDirection:
    """Unit vector n(theta, phi) on the Poincare sphere, radians."""

    theta: float
    phi: float

    def __post_init__(self):
        theta, phi = _normalize_angles(self.theta, self.phi)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_vector(cls, vector) -> "StokesDirection":
        """Direction of a nonzero 3-vector (S1, S2, S3 components)."""
        v = np.asarray(vector, dtype=float)
        norm = np.linalg.norm(v)
        if v.shape != (3,) or norm == 0.0:
            raise InvalidArgumentError("Direction vector must be a nonzero 3-vector", {"vector": v.tolist()})
        v = v / norm
        theta = float(np.arccos(np.clip(v[0], -1.0, 1.0)))
        if np.hypot(v[1], v[2]) < _POLE_EPS:
            return cls(theta, 0.0)
        return cls(theta, float(np.arctan2(v[2], v[1])))

    @classmethod
    def from_degrees(cls, theta_deg: float, phi_deg: float) -> "StokesDirection":
        return cls(np.radians(theta_deg), np.radians(phi_deg))

    @property
    def theta_deg(self) -> float:
        return float(np.degrees(self.theta))

    @property
    def phi_deg(self) -> float:
        return float(np.degrees(self.phi))


@dataclass(frozen=True)
class WaveplateSetting:
    """Half-wave and quarter-wave plate angles in radians, stored unwrapped."""

    chi_H: float
    chi_Q: float

    @classmethod
    def from_degrees(cls, chi_H_deg: float, chi_Q_deg: float) -> "WaveplateSetting":
        return cls(float(np.radians(chi_H_deg)), float(np.radians(chi_Q_deg)))

    @property
    def chi_H_deg(self) -> float:
        return float(np.degrees(self.chi_H))

    @property
    def chi_Q_deg(self) -> float:
        return float(np.degrees(self.chi_Q))


@dataclass(frozen=True)
class SweepGrid:
    """Ordered (setting, direction) pairs plus the plate steps in degrees."""

    entries: Tuple[Tuple[WaveplateSetting, StokesDirection], ...]
    step_H_deg: float
    step_Q_deg: float

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def settings(self) -> Tuple[WaveplateSetting, ...]:
        return tuple(s for s, _ in self.entries)

    @property
    def directions(self) -> Tuple[StokesDirection, ...]:
        return tuple(d for _, d in self.entries)

    def unit_vectors(self) -> np.ndarray:
        """(len, 3) array of the grid's unit vectors."""
        return np.array([unit_vector(d) for d in self.directions])


def _normalize_angles(theta: float, phi: float) -> Tuple[float, float]:
    theta = float(theta)
    phi = float(phi)
    if not 0.0 <= theta <= np.pi:
        # Out-of-range polar angle: go through the unit vector
        v = np.array([np.cos(theta), np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi)])
        theta = float(np.arccos(np.clip(v[0], -1.0, 1.0)))
        phi = float(np.arctan2(v[2], v[1])) if np.hypot(v[1], v[2]) >= _POLE_EPS else 0.0
    phi = float(np.angle(np.exp(1j * phi)))
    if phi <= -np.pi:
        phi = np.pi
    return theta, phi


def unit_vector(direction: StokesDirection) -> np.ndarray:
    """Coefficients (cos t, sin t cos p, sin t sin p) of S1, S2, S3 in S_n."""
    st = np.sin(direction.theta)
    return np.array([
        np.cos(direction.theta),
        st * np.cos(direction.phi),
        st * np.sin(direction.phi),
    ])


def measured_vector(setting: WaveplateSetting) -> np.ndarray:
    """Unit vector measured by the prism after the HWP->QWP chain."""
    c, s = np.cos(2 * setting.chi_Q), np.sin(2 * setting.chi_Q)
    x = 4 * setting.chi_H - 2 * setting.chi_Q
    return np.array([c * np.cos(x), c * np.sin(x), s])


def direction_from_waveplates(setting: WaveplateSetting) -> StokesDirection:
    """
    Measurement direction selected by the plates.

    theta = arccos[cos 2chi_Q cos(4chi_H - 2chi_Q)]; phi is the two-argument
    arctangent of (sin 2chi_Q, cos 2chi_Q sin(4chi_H - 2chi_Q)), so
    |tan phi| = |tan 2chi_Q / sin(4chi_H - 2chi_Q)| with the quadrant resolved.
    At the doubly singular point phi is 0 (theta is then 0 or pi).
    """
    c, s = np.cos(2 * setting.chi_Q), np.sin(2 * setting.chi_Q)
    x = 4 * setting.chi_H - 2 * setting.chi_Q
    theta = float(np.arccos(np.clip(c * np.cos(x), -1.0, 1.0)))
    y_arg, x_arg = s, c * np.sin(x)
    if abs(y_arg) < _POLE_EPS and abs(x_arg) < _POLE_EPS:
        return StokesDirection(theta, 0.0)
    return StokesDirection(theta, float(np.arctan2(y_arg, x_arg)))


def _rotator(chi: float) -> np.ndarray:
    return np.array([[np.cos(chi), np.sin(chi)], [-np.sin(chi), np.cos(chi)]])


def retarder_jones(chi: float, retardance: float) -> np.ndarray:
    """Jones matrix R(-chi) diag(1, exp(-i delta)) R(chi) of a plate at angle chi."""
    return _rotator(-chi) @ np.diag([1.0, np.exp(-1j * retardance)]) @ _rotator(chi)


def waveplate_unitary(setting: WaveplateSetting) -> np.ndarray:
    """
    2x2 unitary u of the HWP->QWP chain acting on (a, b) = (H, V) mode operators.

    Heisenberg convention: the prism sees c' = u c, so measuring S1 afterwards
    measures c^dagger u^dagger sigma_z u c = S_n with n from measured_vector.
    """
    hwp = retarder_jones(setting.chi_H, np.pi)
    qwp = retarder_jones(setting.chi_Q, np.pi / 2)
    return qwp @ hwp


def stokes_rotation(setting: WaveplateSetting) -> np.ndarray:
    """
    SO(3) matrix R with u^dagger sigma_k u = sum_l R[k, l] sigma_l.

    Row 0 is the measured direction; the Stokes covariance of the rotated
    state is R C R^T.
    """
    u = waveplate_unitary(setting)
    rot = np.empty((3, 3))
    for k, sk in enumerate(PAULI_STOKES):
        conj = u.conj().T @ sk @ u
        for l, sl in enumerate(PAULI_STOKES):
            rot[k, l] = 0.5 * np.real(np.trace(conj @ sl))
    return rot


def _trajectory(n_steps: int, period_deg: float, plate: str) -> SweepGrid:
    if n_steps < 2:
        raise InvalidArgumentError("Trajectory needs at least 2 steps", {"n_steps": n_steps})
    angles = np.linspace(0.0, period_deg, n_steps)
    step = period_deg / (n_steps - 1)
    entries = []
    for a in angles:
        setting = WaveplateSetting.from_degrees(a, 0.0) if plate == "hwp" else WaveplateSetting.from_degrees(0.0, a)
        entries.append((setting, direction_from_waveplates(setting)))
    if plate == "hwp":
        return SweepGrid(tuple(entries), step, 0.0)
    return SweepGrid(tuple(entries), 0.0, step)


def hwp_trajectory(n_steps: int) -> SweepGrid:
    """HWP over one period [0, 90 deg] with the QWP at 0: the S1-S2 great circle."""
    return _trajectory(n_steps, 90.0, "hwp")


def qwp_trajectory(n_steps: int) -> SweepGrid:
    """QWP over one period [0, 180 deg] with the HWP at 0."""
    return _trajectory(n_steps, 180.0, "qwp")


def _inclusive_range(stop: float, step: float) -> np.ndarray:
    count = int(np.floor(stop / step + 1e-9)) + 1
    return np.arange(count) * step


def sphere_sweep(step_H: float = 2.5, step_Q: float = 5.0) -> SweepGrid:
    """
    Cartesian plate grid chi_H in [0, 45], chi_Q in [0, 90] degrees.

    The image is the hemisphere n3 >= 0, which carries every even central
    moment because S_{-n} = -S_n.
    """
    if step_H <= 0 or step_Q <= 0:
        raise InvalidArgumentError("Sweep steps must be positive", {"step_H": step_H, "step_Q": step_Q})
    entries = []
    for h in _inclusive_range(45.0, step_H):
        for q in _inclusive_range(90.0, step_Q):
            setting = WaveplateSetting.from_degrees(h, q)
            entries.append((setting, direction_from_waveplates(setting)))
    return SweepGrid(tuple(entries), float(step_H), float(step_Q))


def project_to_S2S1(direction: StokesDirection) -> Tuple[float, float]:
    """(x, y) = (S2 component, S1 component)."""
    return (
        float(np.sin(direction.theta) * np.cos(direction.phi)),
        float(np.cos(direction.theta)),
    )
