"""Signal-photon count rate of the nonlinear Michelson interferometer.

The quantum state is collapsed to its intensity-level consequence: the signal
rate is an offset plus a fringe whose contrast is the product of the sample's
double-pass transmission and the SPDC correlation envelope mu(dt).

Mirror displacements are double-passed: an arm phase is 4*pi*dz/lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from nlipol.jones import SampleSpec, transmission_coefficients

SPEED_OF_LIGHT = 299_792_458.0  # m/s

LAMBDA_PUMP = 532e-9
LAMBDA_SIGNAL = 809.2e-9
LAMBDA_IDLER = 1553e-9
FILTER_HALF_WIDTH = 0.6e-9  # band-pass 809.2 +/- 0.6 nm

SAMPLE_ARMS = ("idler", "signal", "none")


def bandwidth_from_filter(half_width: float, center: float) -> float:
    """Angular-frequency width 2*pi*c*dlambda/lambda^2 of a band-pass filter [rad/s]."""
    return 2.0 * math.pi * SPEED_OF_LIGHT * half_width / center**2


@dataclass(frozen=True)
class SpectralModel:
    """Detected SPDC spectral density |F(Omega)|^2.

    ``gaussian``: |F|^2 ~ exp(-Omega^2 / (2 bandwidth^2)), so bandwidth is the rms width.
    ``sinc2``: |F|^2 ~ sinc^2(pi Omega / bandwidth), first zeros at +/- bandwidth.
    """

    shape: str = "gaussian"
    bandwidth: float = field(default_factory=lambda: bandwidth_from_filter(FILTER_HALF_WIDTH, LAMBDA_SIGNAL))
    center_detuning: float = 0.0

    def __post_init__(self) -> None:
        if self.shape not in ("gaussian", "sinc2"):
            raise ValueError(f"unknown spectral shape {self.shape!r}")
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not math.isfinite(self.center_detuning):
            raise ValueError("center_detuning must be finite")

    @property
    def coherence_time(self) -> float:
        """Delay at which the envelope has clearly decayed (1/e for gaussian, zero for sinc2)."""
        if self.shape == "gaussian":
            return math.sqrt(2.0) / self.bandwidth
        return 2.0 * math.pi / self.bandwidth


@dataclass(frozen=True)
class InterferometerConfig:
    lambda_p: float = LAMBDA_PUMP
    lambda_s: float = LAMBDA_SIGNAL
    lambda_i: float = LAMBDA_IDLER
    spectral: SpectralModel = field(default_factory=SpectralModel)
    # counts/s; absorbs conversion and detection efficiency. Tuned so the default
    # scan (3 fringes, 20 points each) gives ~8000 counts per point.
    rate_scale: float = 4000.0
    dwell: float = 1.0  # s per scan point
    dark_rate: float = 0.0  # counts/s, constant background

    def __post_init__(self) -> None:
        for name in ("lambda_p", "lambda_s", "lambda_i", "rate_scale", "dwell"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not (math.isfinite(self.dark_rate) and self.dark_rate >= 0):
            raise ValueError(f"dark_rate must be >= 0, got {self.dark_rate}")
        inv_p = 1.0 / self.lambda_p
        mismatch = abs(inv_p - (1.0 / self.lambda_s + 1.0 / self.lambda_i)) / inv_p
        if mismatch > 1e-3:
            raise ValueError(
                f"wavelengths violate energy conservation 1/lp = 1/ls + 1/li "
                f"(relative mismatch {mismatch:.2e})"
            )

    def wavelength(self, axis: str) -> float:
        """Wavelength that sets the fringe period when ``axis`` mirror is scanned."""
        try:
            return {
                "pump_mirror": self.lambda_p,
                "signal_mirror": self.lambda_s,
                "idler_mirror": self.lambda_i,
            }[axis]
        except KeyError:
            raise ValueError(f"unknown scan axis {axis!r}") from None


@dataclass(frozen=True)
class ArmGeometry:
    """Mirror displacements from the balanced position [m] and static arm phases [rad].

    Fields may hold numpy arrays for vectorized evaluation.
    """

    dz_p: float = 0.0
    dz_s: float = 0.0
    dz_i: float = 0.0
    phi0_p: float = 0.0
    phi0_s: float = 0.0
    phi0_i: float = 0.0

    def __post_init__(self) -> None:
        for name in ("dz_p", "dz_s", "dz_i", "phi0_p", "phi0_s", "phi0_i"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")

    def moved(self, axis: str, position) -> "ArmGeometry":
        key = {"pump_mirror": "dz_p", "signal_mirror": "dz_s", "idler_mirror": "dz_i"}[axis]
        return replace(self, **{key: position})


@dataclass(frozen=True)
class CorrelationValue:
    magnitude: float
    phase: float

    @property
    def complex(self) -> complex:
        return self.magnitude * np.exp(1j * self.phase)


def _mu(delta_t, spectral: SpectralModel) -> np.ndarray:
    dt = np.asarray(delta_t, dtype=float)
    if not np.all(np.isfinite(dt)):
        raise ValueError("delta_t must be finite")
    if spectral.shape == "gaussian":
        mag = np.exp(-0.5 * (spectral.bandwidth * dt) ** 2)
    else:
        # Fourier transform of sinc^2 is a triangle of half-width 2*pi/bandwidth.
        mag = np.clip(1.0 - np.abs(dt) * spectral.bandwidth / (2.0 * math.pi), 0.0, None)
    return mag * np.exp(-1j * spectral.center_detuning * dt)


def correlation(delta_t, spectral: SpectralModel) -> CorrelationValue:
    """Normalized SPDC correlation mu(dt), |mu(0)| = 1."""
    mu = _mu(delta_t, spectral)
    phase = np.angle(mu)
    if mu.ndim == 0:
        return CorrelationValue(float(abs(mu)), float(phase))
    return CorrelationValue(np.abs(mu), phase)


def arm_phases(geometry: ArmGeometry, config: InterferometerConfig):
    """(phi_p, phi_s, phi_i) = 4*pi*dz/lambda + static offset for each arm."""
    phi_p = 4.0 * math.pi * np.asarray(geometry.dz_p) / config.lambda_p + geometry.phi0_p
    phi_s = 4.0 * math.pi * np.asarray(geometry.dz_s) / config.lambda_s + geometry.phi0_s
    phi_i = 4.0 * math.pi * np.asarray(geometry.dz_i) / config.lambda_i + geometry.phi0_i
    return phi_p, phi_s, phi_i


def time_delay(geometry: ArmGeometry, sample: SampleSpec | None = None, sample_arm: str = "idler"):
    """Idler lag relative to the signal, 2(dz_i - dz_s)/c plus the sample's group delay.

    A sample in the idler arm adds its group delay; in the signal arm it subtracts it.
    """
    dt = 2.0 * (np.asarray(geometry.dz_i) - np.asarray(geometry.dz_s)) / SPEED_OF_LIGHT
    if sample is not None:
        if sample_arm == "idler":
            dt = dt + sample.group_delay
        elif sample_arm == "signal":
            dt = dt - sample.group_delay
    return dt


def _fringe_terms(geometry, config, sample, sample_arm):
    if sample_arm not in SAMPLE_ARMS:
        raise ValueError(f"sample_arm must be one of {SAMPLE_ARMS}, got {sample_arm!r}")
    if sample is None or sample_arm == "none":
        sample, sample_arm = None, "idler"
        tau_sq, t = 1.0, 1.0 + 0j
    else:
        tau_sq = sample.tau_m**2
        t, _ = transmission_coefficients(sample.delta_single, sample.theta)
    mu = _mu(time_delay(geometry, sample, sample_arm), config.spectral)
    phi_p, phi_s, phi_i = arm_phases(geometry, config)
    if sample_arm == "idler":
        arg = phi_p - phi_s - phi_i + np.angle(t) + np.angle(mu)
    else:
        arg = phi_s + phi_i - phi_p + np.angle(t) + np.angle(mu)
    contrast = tau_sq * abs(t) * np.abs(mu)
    return contrast, arg


def signal_rate_idler_sample(geometry: ArmGeometry, config: InterferometerConfig, sample: SampleSpec | None):
    """Signal count rate [counts/s] with the sample double-passed by the idler.

    P = rate * 2 [1 + tau^2 |t| |mu| cos(phi_p - phi_s - phi_i + arg t + arg mu)]
    """
    contrast, arg = _fringe_terms(geometry, config, sample, "idler" if sample is not None else "none")
    return config.rate_scale * 2.0 * (1.0 + contrast * np.cos(arg))


def signal_rate_signal_sample(geometry: ArmGeometry, config: InterferometerConfig, sample: SampleSpec | None):
    """Signal count rate [counts/s] with the sample double-passed by the signal photon.

    P = rate * [2 + 2 tau^2 |t_s| |mu| cos(phi_s + phi_i - phi_p + arg t_s + arg mu)]

    The cross-polarized |r_s|^2 part only feeds the constant background, so the
    offset stays at 2 while the fringe amplitude carries |t_s|.
    """
    contrast, arg = _fringe_terms(geometry, config, sample, "signal" if sample is not None else "none")
    return config.rate_scale * (2.0 + 2.0 * contrast * np.cos(arg))


def signal_rate(geometry, config, sample=None, sample_arm: str = "idler"):
    if sample is None or sample_arm == "none":
        return signal_rate_idler_sample(geometry, config, None)
    if sample_arm == "idler":
        return signal_rate_idler_sample(geometry, config, sample)
    if sample_arm == "signal":
        return signal_rate_signal_sample(geometry, config, sample)
    raise ValueError(f"sample_arm must be one of {SAMPLE_ARMS}, got {sample_arm!r}")


def model_visibility(geometry, config, sample=None, sample_arm: str = "idler"):
    """Closed-form fringe visibility tau^2 |t| |mu(dt)| at the given geometry."""
    contrast, _ = _fringe_terms(geometry, config, sample, sample_arm if sample is not None else "none")
    return contrast
