"""Retardation and transmission estimators built on fitted fringes.

* phase shift: the fringe moves by twice the single-pass retardation between
  the sample axis at 0 and at 90 degrees;
* visibility ratio: V(45 deg) / V(0 deg) = |cos delta|;
* visibility curve: weighted fit of V(theta) = A sqrt(cos^2 d + sin^2 d cos^2 2theta);
* transmission: ratio of peak visibilities with and without the sample.

Retardations are reported as single-pass values reduced to [0, pi).
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from nlipol.fitting import FitConvergenceError, FitResult, _dump_keyvalue, levenberg_marquardt, unwrap_phases

BRANCHES = ("principal", "reflected")
METHODS = ("phase_shift", "visibility_ratio", "visibility_curve")
ANGLE_TOL = 1e-6


class BranchAmbiguityError(ValueError):
    """arccos leaves delta vs pi - delta open and nothing was supplied to decide."""


class NoFringeError(ValueError):
    """Reference visibility indistinguishable from zero."""


class RatioAboveUnityError(ValueError):
    """V_min / V_max above 1 beyond the noise tolerance."""


class UnwrapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RetardationEstimate:
    delta_single: float
    sigma: float
    method: str
    branch: str = "principal"
    inputs_digest: str = ""
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")
        if not 0.0 <= self.delta_single < math.pi:
            raise ValueError(f"delta_single {self.delta_single} outside [0, pi)")
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")

    @property
    def delta_single_pi(self) -> float:
        return self.delta_single / math.pi

    def to_dict(self) -> dict:
        d = asdict(self)
        d["notes"] = "; ".join(self.notes)
        d["delta_single_pi"] = self.delta_single_pi
        d["sigma_pi"] = self.sigma / math.pi
        return d

    def to_keyvalue(self) -> str:
        return _dump_keyvalue(self.to_dict())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_keyvalue(), encoding="utf-8")
        path.with_suffix(".json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RetardationEstimate":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            d = json.loads(text)
        else:
            d = {}
            for line in text.splitlines():
                key, sep, value = line.partition("=")
                if sep:
                    d[key.strip()] = value.strip()
        notes = d.get("notes") or ""
        return cls(
            delta_single=float(d["delta_single"]),
            sigma=float(d["sigma"]),
            method=d["method"],
            branch=d.get("branch", "principal"),
            inputs_digest=d.get("inputs_digest", ""),
            notes=tuple(n for n in notes.split("; ") if n),
        )


@dataclass(frozen=True)
class TransmissionEstimate:
    tau_m_sq: float
    sigma: float
    inputs_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(_dump_keyvalue(self.to_dict()), encoding="utf-8")
        path.with_suffix(".json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path


@dataclass(frozen=True)
class VisibilityCurve:
    thetas: np.ndarray
    visibilities: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self) -> None:
        if not len(self.thetas) == len(self.visibilities) == len(self.sigmas):
            raise ValueError("thetas, visibilities and sigmas differ in length")
        v = np.asarray(self.visibilities)
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("visibilities must lie in [0, 1]")

    @classmethod
    def from_fits(cls, fits) -> "VisibilityCurve":
        fits = sorted(fits, key=lambda f: f.theta)
        return cls(
            thetas=np.array([f.theta for f in fits], dtype=float),
            visibilities=np.array([f.visibility for f in fits]),
            sigmas=np.array([f.sigma_visibility for f in fits]),
        )


@dataclass(frozen=True)
class VisibilityCurveFit:
    estimate: RetardationEstimate
    tau_m_sq: float
    sigma_tau_m_sq: float
    amplitude: float  # tau_m^2 |mu|


def _digest(*items) -> str:
    payload = json.dumps(items, sort_keys=True, default=repr)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _fit_digest(fits) -> str:
    return _digest([f.to_dict() for f in fits])


def fringe_phase_sign(axis: str, sample_arm: str = "idler") -> int:
    """Sign s with which arg t enters the fitted fringe phase for this scan axis.

    The fit model is cos(2 pi z / period + phi). With the sample in the idler
    arm the pump phase enters the fringe with + and the signal/idler phases
    with -, so a pump scan yields phi = +arg t + const and a signal/idler scan
    phi = -arg t + const. A signal-arm sample reverses every sign.
    """
    if axis not in ("idler_mirror", "pump_mirror", "signal_mirror"):
        raise ValueError(f"unknown scan axis {axis!r}")
    s = 1 if axis == "pump_mirror" else -1
    if sample_arm == "signal":
        s = -s
    elif sample_arm not in ("idler", "none", ""):
        raise ValueError(f"unknown sample arm {sample_arm!r}")
    return s


def _pairs(fits_by_theta):
    pairs = []
    for item in fits_by_theta:
        if isinstance(item, FitResult):
            if item.theta is None:
                raise ValueError("FitResult without theta; pass (theta, fit) pairs")
            pairs.append((float(item.theta), item))
        else:
            theta, fit = item
            pairs.append((float(theta), fit))
    return sorted(pairs, key=lambda p: p[0])


def method1_phase_shift(
    fits_by_theta,
    axis: str = "idler_mirror",
    sample_arm: str = "idler",
    max_step: float = 0.9 * math.pi,
) -> RetardationEstimate:
    """Retardation from the fringe shift between sample orientations 0 and pi/2.

    ``fits_by_theta`` holds FitResults carrying ``theta`` or (theta, FitResult)
    pairs spanning 0 .. pi/2. Fitted phases are unwrapped along theta
    (orientations with an indeterminate phase are skipped), then
    delta_double = s (phi(0) - phi(pi/2)) is reduced mod 2 pi and halved.
    Successive unwrapped steps above ``max_step`` are reported as a warning
    and in ``notes``; they cannot change the result modulo 2 pi.
    """
    pairs = [p for p in _pairs(fits_by_theta) if -ANGLE_TOL <= p[0] <= math.pi / 2 + ANGLE_TOL]
    first, last = pairs[0] if pairs else None, pairs[-1] if pairs else None
    if first is None or abs(first[0]) > ANGLE_TOL or abs(last[0] - math.pi / 2) > ANGLE_TOL:
        raise ValueError("phase-shift method needs fits at theta = 0 and theta = pi/2")
    for theta, fit in (first, last):
        if not fit.phase_determinate:
            raise ValueError(f"fringe phase at theta={theta:.4f} rad is indeterminate (visibility too low)")
    usable_idx = [i for i, p in enumerate(pairs) if p[1].phase_determinate]
    phases = unwrap_phases([pairs[i][1].phase for i in usable_idx])
    notes = []
    steps = np.abs(np.diff(phases))
    # A jump across a dropped (null-visibility) orientation is expected: t changes sign there.
    adjacent = np.diff(usable_idx) == 1
    steps = steps[adjacent] if steps.size else steps
    if steps.size and steps.max() > max_step:
        msg = f"unwrapped phase step {steps.max():.3f} rad exceeds {max_step:.3f} rad; theta grid may be too coarse"
        warnings.warn(msg, UnwrapWarning, stacklevel=2)
        notes.append(msg)
    s = fringe_phase_sign(axis, sample_arm)
    delta_double = s * (phases[0] - phases[-1])
    delta_single = float(np.mod(delta_double, 2.0 * math.pi) / 2.0)
    if delta_single >= math.pi:
        delta_single = 0.0
    sigma = 0.5 * math.hypot(first[1].sigma_phase, last[1].sigma_phase)
    return RetardationEstimate(
        delta_single=delta_single,
        sigma=sigma,
        method="phase_shift",
        branch="principal",
        inputs_digest=_fit_digest([f for _, f in pairs]),
        notes=tuple(notes),
    )


def _choose_branch(principal: float, branch_hint: str | None, reference: RetardationEstimate | None) -> str:
    if branch_hint is not None:
        if branch_hint not in BRANCHES:
            raise ValueError(f"branch_hint must be one of {BRANCHES}, got {branch_hint!r}")
        return branch_hint
    if reference is None:
        raise BranchAmbiguityError(
            "visibility methods fix delta only up to delta <-> pi - delta; "
            "pass branch_hint or a phase-shift estimate"
        )

    def dist(a: float) -> float:
        d = abs(a - reference.delta_single) % math.pi
        return min(d, math.pi - d)

    return "principal" if dist(principal) <= dist(math.pi - principal) else "reflected"


def _apply_branch(principal: float, branch: str) -> float:
    value = principal if branch == "principal" else math.pi - principal
    value = value % math.pi
    return 0.0 if value >= math.pi else value


def method2_visibility_ratio(
    v_min: FitResult,
    v_max: FitResult,
    branch_hint: str | None = None,
    method1: RetardationEstimate | None = None,
    n_sigma: float = 3.0,
    strict: bool = True,
) -> RetardationEstimate:
    """Retardation from V(theta=pi/4) / V(theta=0 or pi/2) = |cos delta|.

    A ratio above 1 by more than ``n_sigma`` raises :class:`RatioAboveUnityError`;
    with ``strict=False`` it is clamped and recorded in ``notes`` instead, which
    suits Monte Carlo runs on samples whose true ratio is 1.
    """
    if v_max.visibility <= 1e-12 or v_max.visibility <= n_sigma * v_max.sigma_visibility:
        raise NoFringeError("maximum visibility is indistinguishable from zero; check sample and alignment")
    ratio = v_min.visibility / v_max.visibility
    rel_min = v_min.sigma_visibility / v_max.visibility
    rel_max = v_max.sigma_visibility / v_max.visibility
    sigma_ratio = math.hypot(rel_min, ratio * rel_max)
    notes = []
    if ratio > 1.0 + n_sigma * sigma_ratio:
        msg = (
            f"visibility ratio {ratio:.6f} exceeds 1 by more than {n_sigma:g} sigma ({sigma_ratio:.2e}); "
            "the orientations may be swapped"
        )
        if strict:
            raise RatioAboveUnityError(msg)
        notes.append(msg)
    clamped = min(max(ratio, 0.0), 1.0)
    principal = math.acos(clamped)
    # First-order propagation through arccos, capped by its square-root behaviour at ratio -> 1.
    slope_limited = sigma_ratio / math.sqrt(1.0 - clamped**2) if clamped < 1.0 else math.inf
    sigma = min(slope_limited, math.sqrt(2.0 * sigma_ratio))
    branch = _choose_branch(principal, branch_hint, method1)
    return RetardationEstimate(
        delta_single=_apply_branch(principal, branch),
        sigma=sigma,
        method="visibility_ratio",
        branch=branch,
        inputs_digest=_fit_digest([v_min, v_max]),
        notes=tuple(notes),
    )


def visibility_model(thetas, delta_single: float, amplitude: float) -> np.ndarray:
    """A sqrt(cos^2 d + sin^2 d cos^2 2 theta)."""
    c2 = math.cos(delta_single) ** 2
    return amplitude * np.sqrt(c2 + (1.0 - c2) * np.cos(2.0 * np.asarray(thetas)) ** 2)


def fit_visibility_curve(
    curve: VisibilityCurve,
    mu_mag: float = 1.0,
    branch_hint: str | None = None,
    method1: RetardationEstimate | None = None,
    max_iter: int = 200,
) -> VisibilityCurveFit:
    """Weighted least-squares fit of V(theta) for (delta, tau_m^2).

    mu_mag is taken as known; only the product tau_m^2 |mu| is identifiable.
    """
    th = np.asarray(curve.thetas, dtype=float)
    v = np.asarray(curve.visibilities, dtype=float)
    sig = np.asarray(curve.sigmas, dtype=float)
    if len(th) < 5:
        raise ValueError(f"visibility-curve fit needs >= 5 orientations, got {len(th)}")
    if not mu_mag > 0:
        raise ValueError("mu_mag must be positive")
    w = 1.0 / np.where(sig > 0, sig, 1.0)
    c2t = np.cos(2.0 * th) ** 2
    s2t = 1.0 - c2t

    # V^2 = A^2 cos^2 2theta + A^2 cos^2 d sin^2 2theta is linear: use it to start.
    X = np.column_stack([c2t, s2t]) * w[:, None]
    (a, b), *_ = np.linalg.lstsq(X, v**2 * w, rcond=None)
    if a <= 0:
        a = float(np.max(v) ** 2) or 1e-12
    amp0 = math.sqrt(a)
    d0 = math.acos(min(max(math.sqrt(max(b, 0.0) / a), 0.0), 1.0))
    d0 = min(max(d0, 1e-4), math.pi / 2 - 1e-4)

    def mod_t(d):
        return np.sqrt(np.cos(d) ** 2 * s2t + c2t)

    def residual(p):
        d, amp = p
        return w * (amp * mod_t(d) - v)

    def jacobian(p):
        d, amp = p
        mt = np.maximum(mod_t(d), 1e-15)
        dd = -amp * math.sin(d) * math.cos(d) * s2t / mt
        return w[:, None] * np.column_stack([dd, mod_t(d)])

    lm = levenberg_marquardt(residual, jacobian, [d0, amp0], max_iter=max_iter)
    if not lm.converged:
        raise FitConvergenceError(f"visibility-curve fit did not converge in {max_iter} iterations")
    d, amp = lm.params
    d = d % math.pi
    if d > math.pi / 2:
        d = math.pi - d
    J = jacobian([d, amp])
    try:
        sigma_amp = math.sqrt(max(np.linalg.inv(J.T @ J)[1, 1], 0.0))
    except np.linalg.LinAlgError:
        sigma_amp = math.inf

    def profile_chi2(delta):
        # amplitude enters linearly, so it is re-optimized in closed form
        m = w * mod_t(delta)
        a_best = float(m @ (w * v)) / float(m @ m)
        r = a_best * m - w * v
        return float(r @ r)

    sigma_d = _profile_sigma(profile_chi2, d)
    branch = _choose_branch(d, branch_hint, method1)
    estimate = RetardationEstimate(
        delta_single=_apply_branch(d, branch),
        sigma=sigma_d,
        method="visibility_curve",
        branch=branch,
        inputs_digest=_digest(th.tolist(), v.tolist(), sig.tolist(), mu_mag),
    )
    return VisibilityCurveFit(estimate, amp / mu_mag, sigma_amp / mu_mag, amp)


def _profile_sigma(chi2, best: float) -> float:
    """Half-width of {delta : chi2(delta) <= chi2(best) + 1}.

    Robust where the curve is flat in delta (delta near 0), unlike the
    linearized covariance.
    """
    from scipy.optimize import brentq

    target = chi2(best) + 1.0
    edges = []
    for direction in (-1.0, 1.0):
        step, inner = 1e-7, best
        while step < math.pi / 2:
            outer = best + direction * step
            if chi2(outer) >= target:
                root = brentq(lambda x: chi2(x) - target, min(inner, outer), max(inner, outer), xtol=1e-14)
                edges.append(abs(root - best))
                break
            inner, step = outer, step * 2.0
        else:
            edges.append(math.inf)
    return 0.5 * (edges[0] + edges[1])


def estimate_transmission(v_sample_max: FitResult, v_reference: FitResult) -> TransmissionEstimate:
    """|tau_m|^2 = V(sample at theta=0, balanced) / V(no sample, balanced)."""
    if v_reference.visibility <= 1e-12:
        raise NoFringeError("reference visibility is zero")
    ratio = v_sample_max.visibility / v_reference.visibility
    sigma = ratio * math.hypot(
        v_sample_max.sigma_visibility / max(v_sample_max.visibility, 1e-300),
        v_reference.sigma_visibility / v_reference.visibility,
    )
    return TransmissionEstimate(ratio, sigma, _fit_digest([v_sample_max, v_reference]))
