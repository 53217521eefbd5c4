"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
The output directory is --out, else $NLIPOL_OUT, else the config's output_dir.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from nlipol import __version__
from nlipol.config import ConfigError, dump_config, load_config
from nlipol.fitting import FitConvergenceError, FitResult, _dump_keyvalue, fit_fringe
from nlipol.retardation import (
    BranchAmbiguityError,
    NoFringeError,
    RatioAboveUnityError,
    RetardationEstimate,
    UnwrapWarning,
    VisibilityCurve,
    estimate_transmission,
    fit_visibility_curve,
    method1_phase_shift,
    method2_visibility_ratio,
)
from nlipol.replicate import derived_seed, replicate_tables
from nlipol.scan import (
    PHASE_CONVENTION,
    NoInterferenceError,
    ScanFormatError,
    balance_search,
    read_scan_csv,
    synthesize_scan,
    write_scan_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
OUT_ENV = "NLIPOL_OUT"

NUMERIC_ERRORS = (FitConvergenceError, NoFringeError, RatioAboveUnityError, NoInterferenceError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(args, fallback: str = "out") -> Path:
    out = args.out or os.environ.get(OUT_ENV) or fallback
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _with_context(path, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except NUMERIC_ERRORS as exc:
        raise type(exc)(f"{path}: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def load_fit(path, free_period: bool = False, period: float | None = None) -> FitResult:
    """A FitResult from a saved fit (.txt/.json) or by fitting a scan CSV."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{path}: no such file")
    if path.suffix == ".csv":
        scan = read_scan_csv(path)
        return _with_context(path, fit_fringe, scan, period, free_period)
    return _with_context(path, FitResult.load, path)


def _load_fits(paths, args) -> list[FitResult]:
    fits = [load_fit(p, args.free_period) for p in paths]
    for p, f in zip(paths, fits):
        if f.theta is None:
            raise UsageError(f"{p}: no sample orientation (theta) recorded")
    return fits


def _branch(args):
    """(branch_hint, method1 estimate) from --branch / --method1."""
    if args.branch == "from-method1":
        if not args.method1:
            raise UsageError("--branch from-method1 needs --method1 FILE")
        return None, _with_context(args.method1, RetardationEstimate.load, args.method1)
    return args.branch, None


def _closest(fits, theta: float) -> FitResult:
    best = min(fits, key=lambda f: abs(f.theta - theta))
    if abs(best.theta - theta) > 1e-6:
        raise UsageError(f"no fit at theta = {math.degrees(theta):g} deg")
    return best


def _report(estimate: RetardationEstimate, path: Path) -> None:
    print(f"delta_single = {estimate.delta_single_pi:.6f} pi +/- {estimate.sigma / math.pi:.6f} pi ({estimate.method}) -> {path}")
    for note in estimate.notes:
        print(f"warning: {note}", file=sys.stderr)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = _out_dir(args, cfg.output_dir)
    geometry = cfg.geometry
    if cfg.balance:
        dz_s = balance_search(cfg.interferometer, cfg.sample, geometry=geometry, sample_arm=cfg.sample_arm if cfg.sample else "idler")
        geometry = replace(geometry, dz_s=dz_s)

    thetas = cfg.thetas_deg if cfg.sample is not None else (None,)
    entries = []
    for j, theta_deg in enumerate(thetas):
        plan = replace(cfg.scan, seed=derived_seed(seed, j))
        sample = None if cfg.sample is None else cfg.sample.rotated(math.radians(theta_deg))
        scan = synthesize_scan(plan, geometry, cfg.interferometer, sample, cfg.sample_arm)
        name = "scan_reference.csv" if theta_deg is None else f"scan_{j:02d}_theta{theta_deg:g}.csv"
        write_scan_csv(scan, out / name)
        entries.append({"file": name, "theta_deg": theta_deg, "seed": plan.seed})

    manifest = {
        "tool": f"nlipol {__version__}",
        "seed": seed,
        "files": entries,
        "conventions": {
            "phase": PHASE_CONVENTION,
            "theta": "fast-axis angle from the horizontal, degrees",
            "fit_model": "counts = C [1 + V cos(2 pi z / period + phi)]",
            "units": "positions in metres, counts per dwell",
        },
        "balanced_dz_s": geometry.dz_s,
        "config": dump_config(replace(cfg, seed=seed)),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} scan(s) and manifest.json to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    out = _out_dir(args)
    for path in args.scans:
        path = Path(path)
        try:
            scan = read_scan_csv(path)
        except OSError as exc:
            raise UsageError(f"{path}: {exc}") from None
        fit = _with_context(path, fit_fringe, scan, args.period, args.free_period)
        target = fit.save(out / f"fit_{path.stem}.txt")
        print(f"{path.name}: V = {fit.visibility:.6f} +/- {fit.sigma_visibility:.6f}, phase = {fit.phase:+.6f} rad -> {target}")
        if not fit.phase_determinate:
            print(f"warning: {path.name}: no resolvable fringe (V = {fit.visibility:.3g}); phase is meaningless", file=sys.stderr)
        if args.plot:
            z = np.linspace(scan.positions[0], scan.positions[-1], 10 * len(scan.positions))
            lines = ["position_m,model_counts"] + [f"{zi!r},{mi!r}" for zi, mi in zip(z.tolist(), fit.model(z).tolist())]
            (out / f"model_{path.stem}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_method1(args) -> int:
    fits = _load_fits(args.inputs, args)
    axis = args.axis or fits[0].axis or "idler_mirror"
    arm = args.sample_arm or fits[0].sample_arm or "idler"
    if arm == "none":
        arm = "idler"
    estimate = _with_context("method1", method1_phase_shift, fits, axis, arm)
    target = estimate.save(_out_dir(args) / "method1.txt")
    _report(estimate, target)
    return EXIT_OK


def cmd_method2(args) -> int:
    fits = _load_fits(args.inputs, args)
    hint, m1 = _branch(args)
    v_min = _closest(fits, math.pi / 4)
    edges = [f for f in fits if abs(f.theta) < 1e-6 or abs(f.theta - math.pi / 2) < 1e-6]
    if not edges:
        raise UsageError("no fit at theta = 0 or 90 deg")
    v_max = max(edges, key=lambda f: f.visibility)
    try:
        estimate = method2_visibility_ratio(v_min, v_max, hint, m1)
    except BranchAmbiguityError as exc:
        raise UsageError(f"{exc}; use --branch") from None
    target = estimate.save(_out_dir(args) / "method2.txt")
    _report(estimate, target)
    return EXIT_OK


def cmd_viscurve(args) -> int:
    fits = _load_fits(args.inputs, args)
    hint, m1 = _branch(args)
    try:
        result = fit_visibility_curve(VisibilityCurve.from_fits(fits), args.mu, hint, m1)
    except BranchAmbiguityError as exc:
        raise UsageError(f"{exc}; use --branch") from None
    target = result.estimate.save(_out_dir(args) / "viscurve.txt")
    extra = {"tau_m_sq": result.tau_m_sq, "sigma_tau_m_sq": result.sigma_tau_m_sq, "amplitude": result.amplitude}
    with open(target, "a", encoding="utf-8") as fh:
        fh.write(_dump_keyvalue(extra))
    js = target.with_suffix(".json")
    js.write_text(json.dumps({**json.loads(js.read_text(encoding="utf-8")), **extra}, indent=2) + "\n", encoding="utf-8")
    _report(result.estimate, target)
    print(f"tau_m^2 = {result.tau_m_sq:.6f} +/- {result.sigma_tau_m_sq:.6f} (|mu| = {args.mu:g})")
    return EXIT_OK


def cmd_transmission(args) -> int:
    sample = load_fit(args.sample, args.free_period)
    reference = load_fit(args.reference, args.free_period)
    estimate = _with_context(args.sample, estimate_transmission, sample, reference)
    target = estimate.save(_out_dir(args) / "transmission.txt")
    print(f"tau_m^2 = {estimate.tau_m_sq:.6f} +/- {estimate.sigma:.6f} -> {target}")
    return EXIT_OK


def cmd_replicate(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    seed = 42 if args.seed is None else args.seed
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = replicate_tables(seed=seed, trials=args.trials)
    txt, js = report.write(_out_dir(args))
    sys.stdout.write(report.to_text())
    # runtime stays out of the report so that its bytes depend only on (seed, trials)
    print(f"runtime {time.perf_counter() - t0:.2f} s; wrote {txt} and {js}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nlipol", description="Waveplate retardation from nonlinear-interferometer fringes.")
    p.add_argument("--version", action="version", version=f"nlipol {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")

    sp = sub.add_parser("simulate", help="synthesize fringe scans from a config file")
    sp.add_argument("--config", required=True, help="INI run configuration")
    sp.add_argument("--seed", type=int, help="override [run] seed")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit fringe scans (CSV)")
    sp.add_argument("scans", nargs="+")
    sp.add_argument("--free-period", action="store_true", help="fit the fringe period too")
    sp.add_argument("--period", type=float, help="fringe period [m]; default lambda/2 from the CSV header")
    sp.add_argument("--plot", action="store_true", help="also write a model-curve CSV per scan")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    def estimator(name, helptext, func, branch=True):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("inputs", nargs="+", help="fit files (.txt/.json) or scan CSVs, one per orientation")
        sp.add_argument("--free-period", action="store_true", help="fit the period when inputs are scans")
        if branch:
            sp.add_argument("--branch", choices=("principal", "reflected", "from-method1"), help="branch of delta vs pi - delta")
            sp.add_argument("--method1", help="phase-shift estimate used by --branch from-method1")
        common(sp)
        sp.set_defaults(func=func)
        return sp

    sp = estimator("method1", "retardation from the fringe phase shift", cmd_method1, branch=False)
    sp.add_argument("--axis", choices=("idler_mirror", "pump_mirror", "signal_mirror"), help="default: from the fits")
    sp.add_argument("--sample-arm", choices=("idler", "signal"), help="default: from the fits")
    estimator("method2", "retardation from the visibility ratio V(45)/V(0)", cmd_method2)
    sp = estimator("viscurve", "retardation and transmission from V(theta)", cmd_viscurve)
    sp.add_argument("--mu", type=float, default=1.0, help="|mu| at the balanced position (default 1)")

    sp = sub.add_parser("transmission", help="tau_m^2 from sample and reference visibilities")
    sp.add_argument("--sample", required=True, help="fit or scan with the sample at theta = 0")
    sp.add_argument("--reference", required=True, help="fit or scan without the sample")
    sp.add_argument("--free-period", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_transmission)

    sp = sub.add_parser("replicate-tables", help="Monte Carlo replication of the retardation tables")
    sp.add_argument("--seed", type=int, help="top-level seed (default 42)")
    sp.add_argument("--trials", type=int, default=100)
    common(sp)
    sp.set_defaults(func=cmd_replicate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # estimator notes are printed by _report; avoid a second copy from the warnings module
    warnings.simplefilter("ignore", UnwrapWarning)
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"nlipol {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ScanFormatError, BranchAmbiguityError) as exc:
        print(f"nlipol {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"nlipol {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"nlipol {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
