"""Jones calculus for a retarder traversed twice (out and back off a mirror).

Jones matrices are plain 2x2 complex numpy arrays; composition is ``a @ b``.
Retardation is always the single-pass value ``delta_single`` in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _check_finite(**values: float) -> None:
    for name, value in values.items():
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class SampleSpec:
    """A linear retarder placed in one interferometer arm.

    Attributes
    ----------
    delta_single : float
        Single-pass retardation between extraordinary and ordinary waves [rad].
    theta : float
        Orientation of the optical axis relative to the photon polarization [rad].
    tau_m : float
        Real amplitude transmission of the sample, in [0, 1].
    group_delay : float
        Extra propagation delay accumulated over the double pass [s].
    """

    delta_single: float
    theta: float = 0.0
    tau_m: float = 1.0
    group_delay: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        _check_finite(
            delta_single=self.delta_single,
            theta=self.theta,
            tau_m=self.tau_m,
            group_delay=self.group_delay,
        )
        if not 0.0 <= self.tau_m <= 1.0:
            raise ValueError(f"tau_m must lie in [0, 1], got {self.tau_m}")

    @property
    def tau_m_sq(self) -> float:
        return self.tau_m**2

    @classmethod
    def from_transmission(cls, delta_single: float, tau_m_sq: float, **kw) -> "SampleSpec":
        """Build a sample from its intensity transmission |tau_m|^2."""
        if not 0.0 <= tau_m_sq <= 1.0:
            raise ValueError(f"tau_m_sq must lie in [0, 1], got {tau_m_sq}")
        return cls(delta_single=delta_single, tau_m=math.sqrt(tau_m_sq), **kw)

    def rotated(self, theta: float) -> "SampleSpec":
        return SampleSpec(self.delta_single, theta, self.tau_m, self.group_delay, self.name)

    def canonical(self) -> tuple[float, float]:
        """(delta_single, theta) reduced to [0, pi) each."""
        return self.delta_single % math.pi, self.theta % math.pi


def retardation_from_birefringence(delta_n: float, thickness: float, wavelength: float) -> float:
    """Single-pass retardation 2*pi*delta_n*L/lambda [rad]."""
    _check_finite(delta_n=delta_n, thickness=thickness, wavelength=wavelength)
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    return 2.0 * math.pi * delta_n * thickness / wavelength


def rotation_matrix(theta: float) -> np.ndarray:
    _check_finite(theta=theta)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def waveplate_matrix(delta_single: float, tau_m: float = 1.0) -> np.ndarray:
    """Retarder in its own axes: diag(tau e^{i delta/2}, tau e^{-i delta/2})."""
    _check_finite(delta_single=delta_single, tau_m=tau_m)
    if not 0.0 <= tau_m <= 1.0:
        raise ValueError(f"tau_m must lie in [0, 1], got {tau_m}")
    half = 0.5 * delta_single
    return np.diag([tau_m * np.exp(1j * half), tau_m * np.exp(-1j * half)])


def transmission_coefficients(delta_single, theta):
    """Amplitude transmission t and cross-coupling r of the double-passed retarder.

    t = cos(delta) + i sin(delta) cos(2 theta)
    r = i sin(delta) sin(2 theta)

    Accepts scalars or broadcastable arrays.
    """
    _check_finite(delta_single=delta_single, theta=theta)
    delta = np.asarray(delta_single, dtype=float)
    two_theta = 2.0 * np.asarray(theta, dtype=float)
    sd = np.sin(delta)
    t = np.cos(delta) + 1j * sd * np.cos(two_theta)
    r = 1j * sd * np.sin(two_theta)
    if t.ndim == 0:
        return complex(t), complex(r)
    return t, r


def double_pass_matrix(sample: SampleSpec) -> np.ndarray:
    """Composite Jones matrix tau_m^2 [[t, r], [-r*, t*]] for out-and-back passage.

    The mirror's coordinate inversion is folded in, so this equals
    R(theta) T T R(-theta).
    """
    t, r = transmission_coefficients(sample.delta_single, sample.theta)
    return sample.tau_m**2 * np.array([[t, r], [-np.conj(r), np.conj(t)]])


def effective_idler_transmission(sample: SampleSpec) -> float:
    """|tau_m|^2 |t|: fringe-contrast factor of the horizontally polarized component."""
    t, _ = transmission_coefficients(sample.delta_single, sample.theta)
    return sample.tau_m**2 * abs(t)
