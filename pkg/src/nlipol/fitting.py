"""Sinusoidal fringe fitting: offset, visibility and phase with uncertainties.

Model: y(z) = C [1 + V cos(2*pi*z/period + phi)], where period = lambda/2 is
the fringe period in mirror displacement. Fits are weighted with Poisson
weights 1/max(count, 1) and refined by a damped Gauss-Newton
(Levenberg-Marquardt) loop.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from nlipol.scan import MIN_FIT_POINTS, FringeScan

TWO_PI = 2.0 * math.pi


class FitConvergenceError(RuntimeError):
    pass


def wrap_phase(phase):
    """Map angles onto (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(phase, dtype=float), TWO_PI)


@dataclass
class LMResult:
    params: np.ndarray
    cost: float
    iterations: int
    converged: bool
    damping: float


def levenberg_marquardt(residual, jacobian, p0, max_iter: int = 100, rtol: float = 1e-10, damping: float = 1e-3):
    """Minimize 0.5 * ||residual(p)||^2 with Marquardt-scaled damping.

    Damping is divided by 10 after an accepted step and multiplied by 10
    after a rejected one. Converges when an accepted step changes the cost by
    less than ``rtol`` relative, or when no damping level can lower the cost
    any further (a minimum to machine precision).
    """
    p = np.array(p0, dtype=float)
    r = residual(p)
    cost = 0.5 * float(r @ r)
    lam = damping
    for it in range(1, max_iter + 1):
        J = jacobian(p)
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                p_new = p + step
                r_new = residual(p_new)
                cost_new = 0.5 * float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new <= cost:
                    break
            lam *= 10.0
            if lam > 1e20:
                # Nothing lowers the cost: we sit on the minimum.
                return LMResult(p, cost, it, True, lam)
        change = (cost - cost_new) / max(cost, np.finfo(float).tiny)
        p, r, cost = p_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-12)
        if change < rtol or cost == 0.0:
            return LMResult(p, cost, it, True, lam)
    return LMResult(p, cost, max_iter, False, lam)


@dataclass(frozen=True)
class FitResult:
    offset: float
    visibility: float
    phase: float
    period: float
    sigma_offset: float
    sigma_visibility: float
    sigma_phase: float
    residual_rms: float
    converged: bool
    sigma_period: float = 0.0
    n_points: int = 0
    iterations: int = 0
    theta: float | None = None
    axis: str = ""
    sample_arm: str = ""

    @property
    def phase_determinate(self) -> bool:
        """False when the fringe is too faint for its phase to mean anything."""
        return math.isfinite(self.sigma_phase) and self.visibility > 3.0 * self.sigma_visibility

    def model(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.offset * (1.0 + self.visibility * np.cos(TWO_PI * z / self.period + self.phase))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase_rad"] = d.pop("phase")
        d["period_m"] = d.pop("period")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        d = dict(d)
        d["phase"] = d.pop("phase_rad")
        d["period"] = d.pop("period_m")
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_keyvalue(self) -> str:
        return _dump_keyvalue(self.to_dict())

    @classmethod
    def from_keyvalue(cls, text: str) -> "FitResult":
        return cls.from_dict(_parse_keyvalue(text, _FIT_TYPES))

    def save(self, path) -> Path:
        """Write ``path`` (key=value) and a JSON twin with the same keys."""
        path = Path(path)
        path.write_text(self.to_keyvalue(), encoding="utf-8")
        path.with_suffix(".json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "FitResult":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            return cls.from_dict(json.loads(text))
        return cls.from_keyvalue(text)


_FIT_TYPES = {
    "converged": "bool",
    "n_points": "int",
    "iterations": "int",
    "axis": "str",
    "sample_arm": "str",
}


def _dump_keyvalue(d: dict) -> str:
    lines = []
    for key, value in d.items():
        if value is None:
            value = "none"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _parse_keyvalue(text: str, types: dict[str, str]) -> dict:
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = key.strip(), value.strip()
        kind = types.get(key, "float")
        if value == "none":
            out[key] = None
        elif kind == "bool":
            out[key] = value == "true"
        elif kind == "int":
            out[key] = int(value)
        elif kind == "str":
            out[key] = value
        else:
            out[key] = float(value)
    return out


def _design(z, k):
    kz = k * z
    return np.column_stack([np.ones_like(z), np.cos(kz), np.sin(kz)])


def _project(z, y, w, k):
    """Weighted linear projection onto the fringe frequency k: (C, V, phi)."""
    X = _design(z, k)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    c0, a, b = coef
    amp = math.hypot(a, b)
    return c0, (amp / c0 if c0 > 0 else 0.0), math.atan2(-b, a)


def _dominant_wavenumber(z, y) -> float:
    """Angular wavenumber of the strongest non-DC DFT component (uniform grid)."""
    n = len(z)
    dz = (z[-1] - z[0]) / (n - 1)
    pad = 16 * n
    spec = np.abs(np.fft.rfft(y - y.mean(), pad))
    spec[0] = 0.0
    m = int(np.argmax(spec))
    if 0 < m < len(spec) - 1:
        a, b, c = spec[m - 1], spec[m], spec[m + 1]
        denom = a - 2 * b + c
        if denom != 0:
            m = m + 0.5 * (a - c) / denom
    return TWO_PI * m / (pad * dz)


def fringe_model(z, params):
    """C [1 + V cos(k z + phi)] for params (C, V, phi, k)."""
    C, V, phi, k = params
    return C * (1.0 + V * np.cos(k * z + phi))


def fringe_jacobian(z, params, free_period: bool = True) -> np.ndarray:
    """Analytic derivatives of :func:`fringe_model` w.r.t. (C, V, phi[, k])."""
    C, V, phi, k = params
    arg = k * z + phi
    c, s = np.cos(arg), np.sin(arg)
    cols = [1.0 + V * c, C * c, -C * V * s]
    if free_period:
        cols.append(-C * V * s * z)
    return np.column_stack(cols)


def fit_sinusoid(
    positions,
    counts,
    period: float | None,
    free_period: bool = False,
    max_iter: int = 100,
) -> FitResult:
    """Fit C [1 + V cos(2 pi z / period + phi)] to counts at mirror positions z.

    With ``free_period`` the period is fitted too, starting from ``period`` or,
    if None, from the dominant DFT component.
    """
    z_abs = np.asarray(positions, dtype=float)
    y = np.asarray(counts, dtype=float)
    n = len(y)
    if n < MIN_FIT_POINTS:
        raise ValueError(f"need >= {MIN_FIT_POINTS} points to fit, got {n}")
    if period is None and not free_period:
        raise ValueError("period is required unless free_period is set")
    span = z_abs[-1] - z_abs[0]
    z_mid = 0.5 * (z_abs[0] + z_abs[-1])
    z = z_abs - z_mid  # phase is fitted about the scan centre for conditioning
    w = 1.0 / np.maximum(y, 1.0)
    sw = np.sqrt(w)

    if free_period:
        k0 = _dominant_wavenumber(z_abs, y) if period is None else TWO_PI / period
        if span * k0 < TWO_PI * (1 - 1e-9):
            raise ValueError("a free-period fit needs at least one full fringe period in the scan")
    else:
        k0 = TWO_PI / period

    C0, V0, phi0 = _project(z, y, w, k0)
    flat = C0 > 0 and V0 <= 1e-12

    if flat:
        resid = y - C0
        sigma_c = 1.0 / math.sqrt(float(np.sum(w)))
        # Visibility uncertainty at V = 0 is phase independent: average the two quadratures.
        jc = C0 * np.cos(k0 * z)
        js = C0 * np.sin(k0 * z)
        sigma_v = math.sqrt(2.0 / (float(np.sum(w * jc**2)) + float(np.sum(w * js**2))))
        return FitResult(
            offset=float(C0),
            visibility=0.0,
            phase=0.0,
            period=TWO_PI / k0,
            sigma_offset=sigma_c,
            sigma_visibility=sigma_v,
            sigma_phase=math.inf,
            residual_rms=float(np.sqrt(np.mean(resid**2))),
            converged=True,
            n_points=n,
        )

    def residual(p):
        full = p if free_period else np.append(p, k0)
        return sw * (fringe_model(z, full) - y)

    def jacobian(p):
        full = p if free_period else np.append(p, k0)
        return sw[:, None] * fringe_jacobian(z, full, free_period)

    p0 = [C0, V0, phi0, k0] if free_period else [C0, V0, phi0]
    lm = levenberg_marquardt(residual, jacobian, p0, max_iter=max_iter)
    if not lm.converged:
        raise FitConvergenceError(f"fringe fit did not converge in {max_iter} iterations")
    p = lm.params
    C, V, phi = p[0], p[1], p[2]
    k = p[3] if free_period else k0
    if V < 0:
        V, phi = -V, phi + math.pi

    J = sw[:, None] * fringe_jacobian(z, [C, V, phi, k], free_period)
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((len(p), len(p)), np.inf)
    # Move the phase reference from the scan centre back to z = 0.
    phase_abs = phi - k * z_mid
    var_phase = cov[2, 2]
    sigma_period = 0.0
    if free_period:
        var_phase = cov[2, 2] + z_mid**2 * cov[3, 3] - 2.0 * z_mid * cov[2, 3]
        sigma_period = TWO_PI * math.sqrt(max(cov[3, 3], 0.0)) / k**2
    resid = fringe_model(z, [C, V, phi, k]) - y
    return FitResult(
        offset=float(C),
        visibility=float(min(V, 1.0)),
        phase=float(wrap_phase(phase_abs)),
        period=float(TWO_PI / k),
        sigma_offset=float(math.sqrt(max(cov[0, 0], 0.0))),
        sigma_visibility=float(math.sqrt(max(cov[1, 1], 0.0))),
        sigma_phase=float(math.sqrt(max(var_phase, 0.0))),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        converged=True,
        sigma_period=float(sigma_period),
        n_points=n,
        iterations=lm.iterations,
    )


def fit_fringe(scan: FringeScan, period_hint: float | None = None, free_period: bool = False) -> FitResult:
    """Fit one fringe scan.

    The period is fixed to ``period_hint`` or, by default, to lambda_axis / 2
    taken from the scan. ``free_period`` fits it instead (for lab data).
    """
    period = period_hint if period_hint is not None else scan.period
    if not math.isfinite(period):
        if not free_period:
            raise ValueError("scan period unknown; give a period or fit it with free_period")
        period = None
    fit = fit_sinusoid(scan.positions, scan.counts, period, free_period=free_period)
    theta = scan.theta
    return FitResult(
        **{**asdict(fit), "theta": None if theta is None else float(theta), "axis": scan.plan.axis, "sample_arm": scan.sample_arm}
    )


def visibility_minmax(scan: FringeScan, harmonics: int = 3, oversample: int = 64) -> float:
    """Model-free contrast (max - min) / (max + min) of a harmonically smoothed scan.

    Smoothing keeps the first ``harmonics`` multiples of the fringe frequency,
    which removes sampling and shot noise without assuming a pure sinusoid.
    """
    z = np.asarray(scan.positions, dtype=float)
    y = np.asarray(scan.counts, dtype=float)
    span = z[-1] - z[0]
    if span < scan.period * (1 - 1e-9):
        raise ValueError(f"scan spans {span:.3e} m, less than one fringe period {scan.period:.3e} m")
    k = TWO_PI / scan.period
    zc = z - 0.5 * (z[0] + z[-1])

    def basis(x):
        cols = [np.ones_like(x)]
        for h in range(1, harmonics + 1):
            cols += [np.cos(h * k * x), np.sin(h * k * x)]
        return np.column_stack(cols)

    coef, *_ = np.linalg.lstsq(basis(zc), y, rcond=None)
    fine = np.linspace(zc[0], zc[-1], oversample * len(z))
    smooth = basis(fine) @ coef
    hi, lo = float(smooth.max()), max(float(smooth.min()), 0.0)
    if hi + lo <= 0:
        return 0.0
    return (hi - lo) / (hi + lo)


def unwrap_phases(phases) -> np.ndarray:
    """Add multiples of 2 pi so successive differences lie within (-pi, pi]."""
    return np.unwrap(np.asarray(phases, dtype=float))
