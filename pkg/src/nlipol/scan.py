"""Fringe-scan synthesis, Poisson counting noise, and arm balancing.

A scan translates one mirror (pump, signal or idler) and records the signal
count per point. Each arm is double-passed, so the fringe period in mirror
coordinates is lambda_axis / 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nlipol.interference import (
    SPEED_OF_LIGHT,
    ArmGeometry,
    InterferometerConfig,
    model_visibility,
    signal_rate,
)
from nlipol.jones import SampleSpec

AXES = ("idler_mirror", "pump_mirror", "signal_mirror")
NOISE_MODELS = ("none", "poisson")
MIN_FIT_POINTS = 8
PHASE_CONVENTION = "arm phase 4*pi*dz/lambda (double pass); fringe period lambda/2 in mirror displacement"


class UndersampledScanWarning(UserWarning):
    pass


class NoInterferenceError(RuntimeError):
    """No fringe contrast anywhere in the searched delay window."""


class ScanFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ScanPlan:
    axis: str = "idler_mirror"
    start: float = 0.0
    step: float = 1553e-9 / 40
    n_points: int = 60
    seed: int = 0
    noise: str = "poisson"

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.noise not in NOISE_MODELS:
            raise ValueError(f"noise must be one of {NOISE_MODELS}, got {self.noise!r}")
        if not (math.isfinite(self.step) and self.step > 0):
            raise ValueError(f"step must be positive, got {self.step}")
        if not math.isfinite(self.start):
            raise ValueError("start must be finite")
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def around(
        cls,
        axis: str,
        config: InterferometerConfig,
        center: float = 0.0,
        periods: float = 3.0,
        points_per_period: int = 20,
        seed: int = 0,
        noise: str = "poisson",
    ) -> "ScanPlan":
        """Plan covering ``periods`` fringes centred on ``center``."""
        period = config.wavelength(axis) / 2.0
        step = period / points_per_period
        n_points = int(round(periods * points_per_period))
        start = center - step * (n_points - 1) / 2.0
        return cls(axis=axis, start=start, step=step, n_points=n_points, seed=seed, noise=noise)

    @property
    def positions(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.n_points)


@dataclass(frozen=True, eq=False)
class FringeScan:
    plan: ScanPlan
    positions: np.ndarray
    counts: np.ndarray
    wavelength: float  # wavelength of the scanned arm [m]
    config: InterferometerConfig | None = None
    sample: SampleSpec | None = None
    sample_arm: str = "none"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.positions) != len(self.counts):
            raise ValueError("positions and counts differ in length")
        if np.any(np.diff(self.positions) <= 0):
            raise ValueError("positions must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def period(self) -> float:
        return self.wavelength / 2.0

    @property
    def theta(self) -> float | None:
        if self.sample is not None:
            return self.sample.theta
        return self.metadata.get("theta")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FringeScan):
            return NotImplemented
        return (
            self.plan == other.plan
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.counts, other.counts)
            and self.wavelength == other.wavelength
            and self.config == other.config
            and self.sample == other.sample
            and self.sample_arm == other.sample_arm
        )


def synthesize_scan(
    plan: ScanPlan,
    geometry: ArmGeometry,
    config: InterferometerConfig,
    sample: SampleSpec | None = None,
    sample_arm: str = "idler",
    for_fitting: bool = True,
) -> FringeScan:
    """Counts per point while the ``plan.axis`` mirror steps through ``plan.positions``.

    Expected counts are dwell * (P_s + dark_rate); with ``noise="poisson"``
    each point is an independent draw from a generator seeded by ``plan.seed``.
    """
    if sample is None:
        sample_arm = "none"
    wavelength = config.wavelength(plan.axis)
    if for_fitting and plan.n_points < MIN_FIT_POINTS:
        raise ValueError(f"a scan for fitting needs >= {MIN_FIT_POINTS} points, got {plan.n_points}")
    if plan.step > wavelength / 4.0:
        msg = f"step {plan.step:.3e} m exceeds lambda/4 = {wavelength / 4:.3e} m (fringes undersampled)"
        if for_fitting:
            raise ValueError(msg)
        warnings.warn(msg, UndersampledScanWarning, stacklevel=2)

    positions = plan.positions
    moved = geometry.moved(plan.axis, positions)
    rate = signal_rate(moved, config, sample, sample_arm) + config.dark_rate
    expected = config.dwell * np.broadcast_to(rate, positions.shape).astype(float)
    if plan.noise == "poisson":
        rng = np.random.default_rng(plan.seed)
        counts = rng.poisson(expected).astype(float)
    else:
        counts = expected.copy()
    return FringeScan(
        plan=plan,
        positions=positions,
        counts=counts,
        wavelength=wavelength,
        config=config,
        sample=sample,
        sample_arm=sample_arm,
    )


def envelope_profile(
    dz_s_range,
    geometry: ArmGeometry,
    config: InterferometerConfig,
    sample: SampleSpec | None = None,
    sample_arm: str = "idler",
) -> np.ndarray:
    """Model visibility tau^2 |t| |mu| as the signal mirror is moved through ``dz_s_range``."""
    dz_s = np.asarray(dz_s_range, dtype=float)
    return np.asarray(model_visibility(geometry.moved("signal_mirror", dz_s), config, sample, sample_arm))


def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def balance_search(
    config: InterferometerConfig,
    sample: SampleSpec | None = None,
    coarse_step: float = 5e-6,
    geometry: ArmGeometry | None = None,
    sample_arm: str = "idler",
    half_range: float = 1e-3,
    floor: float = 1e-3,
    tol: float = 1e-9,
) -> float:
    """Signal-mirror position dz_s [m] that maximizes the fringe visibility.

    A coarse grid over +/- ``half_range`` around the current dz_s locates the
    envelope; golden-section search refines it to ``tol``.
    """
    geometry = geometry or ArmGeometry()
    coherence_dz = SPEED_OF_LIGHT * config.spectral.coherence_time / 2.0
    if not 0 < coarse_step < coherence_dz:
        raise ValueError(
            f"coarse_step {coarse_step:.3e} m must be positive and below the coherence length {coherence_dz:.3e} m"
        )
    center = float(geometry.dz_s)
    grid = center + np.arange(-half_range, half_range + 0.5 * coarse_step, coarse_step)
    profile = envelope_profile(grid, geometry, config, sample, sample_arm)
    k = int(np.argmax(profile))
    if profile[k] < floor:
        raise NoInterferenceError(
            f"visibility below {floor} over dz_s in [{grid[0]:.3e}, {grid[-1]:.3e}] m; "
            "the arm mismatch exceeds the search window"
        )
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]

    def vis(x: float) -> float:
        return float(envelope_profile(x, geometry, config, sample, sample_arm))

    return _golden_max(vis, lo, hi, tol)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_scan_csv(scan: FringeScan, path) -> Path:
    """Write ``position_m,counts`` rows preceded by ``# key=value`` header comments."""
    path = Path(path)
    header = {
        "format": "nlipol-fringe-scan/1",
        "axis": scan.plan.axis,
        "lambda": _fmt(scan.wavelength),
        "period": _fmt(scan.period),
        "seed": str(scan.plan.seed),
        "noise": scan.plan.noise,
        "sample_arm": scan.sample_arm,
        "convention": PHASE_CONVENTION,
    }
    if scan.sample is not None:
        header.update(
            theta=_fmt(scan.sample.theta),
            delta_single=_fmt(scan.sample.delta_single),
            tau_m=_fmt(scan.sample.tau_m),
            group_delay=_fmt(scan.sample.group_delay),
        )
        if scan.sample.name:
            header["sample"] = scan.sample.name
    if scan.config is not None:
        header.update(dwell=_fmt(scan.config.dwell), rate_scale=_fmt(scan.config.rate_scale))
    integral = scan.plan.noise == "poisson"
    lines = [f"# {k}={v}" for k, v in header.items()]
    lines.append("position_m,counts")
    for z, c in zip(scan.positions, scan.counts):
        lines.append(f"{_fmt(z)},{int(c) if integral else _fmt(c)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_scan_csv(path) -> FringeScan:
    """Parse a scan written by :func:`write_scan_csv` (or lab data in the same layout)."""
    path = Path(path)
    header: dict[str, str] = {}
    positions: list[float] = []
    counts: list[float] = []
    saw_columns = False
    last_good = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    header[key.strip()] = value.strip()
                continue
            if not saw_columns:
                if line.replace(" ", "") != "position_m,counts":
                    raise ScanFormatError(f"{path}:{lineno}: expected header 'position_m,counts', got {line!r}")
                saw_columns = True
                continue
            fields = line.split(",")
            try:
                if len(fields) != 2:
                    raise ValueError(f"expected 2 fields, got {len(fields)}")
                z, c = float(fields[0]), float(fields[1])
            except ValueError as exc:
                where = f"last good data row at line {last_good}" if last_good else "no data rows parsed"
                raise ScanFormatError(f"{path}:{lineno}: malformed row {line!r} ({exc}); {where}") from None
            positions.append(z)
            counts.append(c)
            last_good = lineno
    if not saw_columns:
        raise ScanFormatError(f"{path}: missing 'position_m,counts' column header")
    if len(positions) < 2:
        raise ScanFormatError(f"{path}: need at least 2 data rows, got {len(positions)}")
    pos = np.array(positions)
    step = float(np.median(np.diff(pos)))
    plan = ScanPlan(
        axis=header.get("axis", "idler_mirror"),
        start=float(pos[0]),
        step=step if step > 0 else 1.0,
        n_points=len(pos),
        seed=int(header.get("seed", 0)),
        noise=header.get("noise", "poisson"),
    )
    sample = None
    if "delta_single" in header:
        sample = SampleSpec(
            delta_single=float(header["delta_single"]),
            theta=float(header.get("theta", 0.0)),
            tau_m=float(header.get("tau_m", 1.0)),
            group_delay=float(header.get("group_delay", 0.0)),
            name=header.get("sample", ""),
        )
    metadata = dict(header)
    if "theta" in header:
        metadata["theta"] = float(header["theta"])
    return FringeScan(
        plan=plan,
        positions=pos,
        counts=np.array(counts),
        # lab files may omit the wavelength; the period is then fitted
        wavelength=float(header.get("lambda", "nan")),
        config=None,
        sample=sample,
        sample_arm=header.get("sample_arm", "none"),
        metadata=metadata,
    )
