import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlipol.fitting import FitResult
from nlipol.retardation import (
    BranchAmbiguityError,
    NoFringeError,
    RatioAboveUnityError,
    RetardationEstimate,
    UnwrapWarning,
    VisibilityCurve,
    estimate_transmission,
    fit_visibility_curve,
    fringe_phase_sign,
    method1_phase_shift,
    method2_visibility_ratio,
    visibility_model,
)
from helpers import theta_fits


def fake_fit(theta, phase=0.0, v=0.5, sv=1e-3, sp=1e-3):
    return FitResult(1000.0, v, phase, 7.765e-7, 1.0, sv, sp, 0.0, True, theta=theta)


def test_phase_sign_table():
    assert fringe_phase_sign("pump_mirror") == 1
    assert fringe_phase_sign("idler_mirror") == -1
    assert fringe_phase_sign("signal_mirror") == -1
    assert fringe_phase_sign("pump_mirror", "signal") == -1
    assert fringe_phase_sign("idler_mirror", "signal") == 1
    with pytest.raises(ValueError):
        fringe_phase_sign("sample")


@pytest.mark.parametrize("d_pi", [0.172, 0.322, 0.495, 0.8])
@pytest.mark.parametrize("axis,arm", [("pump_mirror", "idler"), ("idler_mirror", "idler"), ("pump_mirror", "signal")])
def test_method1_noiseless(d_pi, axis, arm):
    fits = theta_fits(math.pi * d_pi, 0.95, axis, arm)
    est = method1_phase_shift(fits, axis, arm)
    assert est.delta_single_pi == pytest.approx(d_pi, abs=1e-6)
    assert est.method == "phase_shift"


def test_method1_accepts_pairs_and_needs_endpoints():
    fits = [fake_fit(None, 0.3), fake_fit(None, -0.5)]
    est = method1_phase_shift([(0.0, fits[0]), (math.pi / 2, fits[1])], "pump_mirror")
    assert est.delta_single == pytest.approx(0.4)
    with pytest.raises(ValueError, match="theta = 0"):
        method1_phase_shift([fake_fit(0.1), fake_fit(math.pi / 2)])
    with pytest.raises(ValueError, match="without theta"):
        method1_phase_shift([fake_fit(None), fake_fit(math.pi / 2)])


def test_method1_rejects_indeterminate_endpoint():
    with pytest.raises(ValueError, match="indeterminate"):
        method1_phase_shift([fake_fit(0.0, v=0.001), fake_fit(math.pi / 2)])


def test_method1_warns_on_large_adjacent_step():
    fits = [fake_fit(0.0, 0.0), fake_fit(math.pi / 4, 2.9), fake_fit(math.pi / 2, 0.5)]
    with pytest.warns(UnwrapWarning):
        est = method1_phase_shift(fits, "pump_mirror")
    assert est.notes


def test_method1_quiet_across_visibility_null():
    # the phase flips by pi where |t| passes through zero; that orientation is dropped
    fits = [fake_fit(0.0, 0.1), fake_fit(math.pi / 4, 2.0, v=0.0005), fake_fit(math.pi / 2, 0.1 + math.pi)]
    with warnings.catch_warnings():
        warnings.simplefilter("error", UnwrapWarning)
        est = method1_phase_shift(fits, "pump_mirror")
    assert est.delta_single == pytest.approx(math.pi / 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=5, max_size=5), st.floats(0.05, 3.0))
def test_method1_invariant_to_2pi_shifts(turns, delta_double):
    # unwrapping may pick any 2 pi representative of intermediate phases; the result cannot change
    thetas = np.linspace(0, math.pi / 2, 7)
    phases = np.linspace(0.0, -delta_double, 7)
    base = method1_phase_shift([fake_fit(t, p) for t, p in zip(thetas, phases)], "pump_mirror")
    shifted = phases.copy()
    shifted[1:6] += 2 * math.pi * np.array(turns)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnwrapWarning)
        other = method1_phase_shift([fake_fit(t, p) for t, p in zip(thetas, shifted)], "pump_mirror")
    assert other.delta_single == pytest.approx(base.delta_single, abs=1e-12)


def test_method2_branches():
    vmin, vmax = fake_fit(math.pi / 4, v=0.5 * 0.98), fake_fit(0.0, v=0.98)
    with pytest.raises(BranchAmbiguityError):
        method2_visibility_ratio(vmin, vmax)
    p = method2_visibility_ratio(vmin, vmax, "principal")
    r = method2_visibility_ratio(vmin, vmax, "reflected")
    assert p.delta_single == pytest.approx(math.pi / 3)
    assert r.delta_single == pytest.approx(2 * math.pi / 3)
    m1 = RetardationEstimate(0.7 * math.pi, 0.01, "phase_shift", "principal")
    assert method2_visibility_ratio(vmin, vmax, method1=m1).branch == "reflected"


def test_method2_ratio_above_unity():
    vmin, vmax = fake_fit(math.pi / 4, v=0.9), fake_fit(0.0, v=0.8)
    with pytest.raises(RatioAboveUnityError):
        method2_visibility_ratio(vmin, vmax, "principal")
    est = method2_visibility_ratio(vmin, vmax, "principal", strict=False)
    assert est.delta_single == 0.0 and est.notes


def test_method2_ratio_slightly_above_unity_is_clamped():
    est = method2_visibility_ratio(fake_fit(math.pi / 4, v=0.8005), fake_fit(0.0, v=0.8), "principal")
    assert est.delta_single == 0.0
    assert est.sigma > 0


def test_method2_no_fringe():
    with pytest.raises(NoFringeError):
        method2_visibility_ratio(fake_fit(0.7, v=0.0), fake_fit(0.0, v=0.002), "principal")


def test_method2_sigma_propagation():
    # d arccos(x)/dx = -1/sqrt(1-x^2); at x = 0.5 the slope is 2/sqrt(3)
    est = method2_visibility_ratio(fake_fit(0.7, v=0.4, sv=1e-3), fake_fit(0.0, v=0.8, sv=0.0), "principal")
    assert est.sigma == pytest.approx((1e-3 / 0.8) / math.sqrt(0.75))


@pytest.mark.parametrize("d_pi,branch", [(0.172, "principal"), (0.322, "principal"), (0.5, "principal"), (0.8, "reflected")])
def test_method2_and_curve_noiseless(d_pi, branch):
    fits = theta_fits(math.pi * d_pi, 0.903, "pump_mirror")
    m2 = method2_visibility_ratio(fits[3], fits[0], branch)
    assert m2.delta_single_pi == pytest.approx(d_pi, abs=1e-9)
    curve = fit_visibility_curve(VisibilityCurve.from_fits(fits), 1.0, branch)
    assert curve.estimate.delta_single_pi == pytest.approx(d_pi, abs=1e-9)
    assert curve.tau_m_sq == pytest.approx(0.903, abs=1e-9)


def test_curve_fit_with_noise_reports_finite_sigma():
    fits = theta_fits(math.pi, 0.985, "idler_mirror", noise="poisson", seed=3)
    curve = fit_visibility_curve(VisibilityCurve.from_fits(fits), 1.0, "reflected")
    # degenerate point (|cos delta| = 1): the profile width stays finite and small
    assert 0 < curve.estimate.sigma < 0.05 * math.pi
    assert abs(curve.estimate.delta_single_pi - 1.0) < 0.05 or curve.estimate.delta_single_pi < 0.05


def test_visibility_model_shape():
    th = np.linspace(0, math.pi, 9)
    v = visibility_model(th, math.pi / 2, 0.9)
    assert v[0] == pytest.approx(0.9) and v[2] == pytest.approx(0.0, abs=1e-15)


def test_curve_validation():
    with pytest.raises(ValueError):
        VisibilityCurve(np.zeros(2), np.array([0.5, 1.2]), np.ones(2))
    with pytest.raises(ValueError):
        VisibilityCurve(np.zeros(2), np.zeros(3), np.ones(2))


def test_transmission_ratio():
    est = estimate_transmission(fake_fit(0.0, v=0.857, sv=1e-3), fake_fit(None, v=1.0, sv=1e-3))
    assert est.tau_m_sq == pytest.approx(0.857)
    assert est.sigma == pytest.approx(0.857 * math.hypot(1e-3 / 0.857, 1e-3))
    with pytest.raises(NoFringeError):
        estimate_transmission(fake_fit(0.0), fake_fit(None, v=0.0))


def test_estimate_round_trip(tmp_path):
    est = RetardationEstimate(0.5 * math.pi, 0.002, "visibility_ratio", "reflected", "abc", ("clamped",))
    path = est.save(tmp_path / "m2.txt")
    assert RetardationEstimate.load(path) == est
    assert RetardationEstimate.load(path.with_suffix(".json")) == est
    assert "delta_single_pi=0.5" in path.read_text()


def test_estimate_range_checked():
    with pytest.raises(ValueError):
        RetardationEstimate(math.pi, 0.1, "phase_shift", "principal")
