"""Monte Carlo replication of the retardation and transmission tables.

Each trial synthesizes noisy scans for every configured waveplate over a
theta grid, fits them, and applies the phase-shift, visibility-ratio and
visibility-curve estimators plus the transmission ratio. The report compares
the Monte Carlo statistics with the published table entries.

Row pass flags are calibrated property checks, not reproductions of
hardware-limited numbers:

* phase shift: scatter <= 0.006 pi and |mean - configured| <= 2 sigma;
* visibility ratio / curve: scatter <= 0.01 pi and |mean - configured| <= 2 sigma;
* transmission: every trial within the table's quoted uncertainty.

sigma is the median uncertainty reported by the estimator for one trial.
Agreement with the published value is listed separately (``z_published``).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from nlipol.fitting import FitResult, fit_fringe
from nlipol.interference import ArmGeometry, InterferometerConfig
from nlipol.jones import SampleSpec
from nlipol.retardation import (
    UnwrapWarning,
    VisibilityCurve,
    estimate_transmission,
    fit_visibility_curve,
    method1_phase_shift,
    method2_visibility_ratio,
)
from nlipol.scan import ScanPlan, balance_search, synthesize_scan

THETA_GRID_DEG = (0, 15, 30, 45, 60, 75, 90)
M1_SCATTER_MAX = 0.006  # units of pi
M2_SCATTER_MAX = 0.01  # units of pi
NOISE_LABEL = (
    "noise level tuned (rate_scale, dwell, 60-point scans) so that shot-noise scatter "
    "stays inside the published accuracy; criteria are calibrated property checks"
)


@dataclass(frozen=True)
class TableSample:
    name: str
    delta_single_pi: float
    tau_m_sq: float
    arm: str
    group_delay: float
    branch: str
    # table -> {method: (value, sigma)} in units of pi
    published: dict
    transmission: tuple[float, float]


# Group delays are illustrative; only their effect on the balance position matters.
SAMPLES = (
    TableSample(
        "HWP@1550", 1.000, 0.985, "idler", 3.5e-12, "reflected",
        {"I": {"phase_shift": (1.004, 0.006), "visibility_ratio": (0.980, 0.030)},
         "II": {"phase_shift": (0.994, 0.006), "visibility_ratio": (0.983, 0.010)}},
        (0.985, 0.012),
    ),
    TableSample(
        "QWP@1550", 0.500, 0.980, "idler", 3.5e-12, "principal",
        {"I": {"phase_shift": (0.495, 0.006), "visibility_ratio": (0.498, 0.002)},
         "II": {"phase_shift": (0.507, 0.006), "visibility_ratio": (0.499, 0.001)}},
        (0.980, 0.012),
    ),
    TableSample(
        "HWP@532", 0.322, 0.857, "idler", 3.5e-12, "principal",
        {"I": {"phase_shift": (0.322, 0.006), "visibility_ratio": (0.321, 0.006)},
         "II": {"phase_shift": (0.325, 0.006), "visibility_ratio": (0.323, 0.006)}},
        (0.857, 0.018),
    ),
    TableSample(
        "QWP@532", 0.172, 0.903, "idler", 2.0e-12, "principal",
        {"I": {"phase_shift": (0.172, 0.006), "visibility_ratio": (0.173, 0.010)},
         "II": {"phase_shift": (0.175, 0.006), "visibility_ratio": (0.162, 0.012)}},
        (0.903, 0.016),
    ),
    TableSample(
        "QWP@800", 0.500, 0.986, "signal", 3.5e-12, "principal",
        {"III": {"phase_shift": (0.491, 0.006), "visibility_ratio": (0.485, 0.001)}},
        (0.986, 0.013),
    ),
)

TABLE_AXIS = {"I": "idler_mirror", "II": "pump_mirror", "III": "idler_mirror"}


@dataclass
class ReportRow:
    table: str
    sample: str
    method: str
    configured: float
    mean: float
    scatter: float
    sigma: float
    published: float | None
    published_sigma: float | None
    z_published: float | None
    passed: bool
    criterion: str
    flags: int = 0


@dataclass
class ReplicationReport:
    seed: int
    trials: int
    rows: list[ReportRow] = field(default_factory=list)
    noise_label: str = NOISE_LABEL

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trials": self.trials,
            "noise_label": self.noise_label,
            "all_passed": self.all_passed,
            "rows": [asdict(r) for r in self.rows],
        }

    def to_text(self) -> str:
        out = [
            "Retardation / transmission replication report",
            f"seed={self.seed} trials={self.trials}",
            f"note: {self.noise_label}",
            "retardations are single-pass values in units of pi; scatter = Monte Carlo std per trial",
            "",
            f"{'table':5} {'sample':9} {'method':17} {'config':>7} {'mean':>8} {'scatter':>8} "
            f"{'sigma':>8} {'published':>14} {'z_pub':>8}  result",
        ]
        for r in self.rows:
            published = f"{r.published:.3f}+/-{r.published_sigma:.3f}" if r.published is not None else "-"
            z = f"{r.z_published:+.2f}" if r.z_published is not None else "-"
            flag = f" ({r.flags} flagged)" if r.flags else ""
            out.append(
                f"{r.table:5} {r.sample:9} {r.method:17} {r.configured:7.3f} {r.mean:8.4f} {r.scatter:8.5f} "
                f"{r.sigma:8.5f} {published:>14} {z:>8}  {'PASS' if r.passed else 'FAIL'} [{r.criterion}]{flag}"
            )
        out.append("")
        out.append(f"overall: {'PASS' if self.all_passed else 'FAIL'}")
        return "\n".join(out) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        txt = out_dir / "replication_report.txt"
        js = out_dir / "replication_report.json"
        txt.write_text(self.to_text(), encoding="utf-8")
        js.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return txt, js


def derived_seed(root: int, *path: int) -> int:
    """Independent 64-bit seed for one scan, derived from the single top-level seed."""
    return int(np.random.SeedSequence([root, *path]).generate_state(1, np.uint64)[0])


def _deviation_pi(values, configured_pi: float) -> np.ndarray:
    """Signed distance to the configured value modulo pi, in units of pi."""
    d = np.mod(np.asarray(values) / math.pi - configured_pi, 1.0)
    return np.where(d > 0.5, d - 1.0, d)


def _row(table, sample, method, values, sigmas, limit, flags=0) -> ReportRow:
    dev = _deviation_pi(values, sample.delta_single_pi)
    mean = sample.delta_single_pi + float(dev.mean())
    scatter = float(dev.std(ddof=1)) if len(dev) > 1 else 0.0
    sigma = float(np.median(sigmas)) / math.pi
    passed = scatter <= limit and abs(float(dev.mean())) <= 2.0 * sigma
    published = sample.published.get(table, {}).get(method)
    z = None
    if published is not None:
        z = (mean - published[0]) / math.hypot(published[1], max(scatter, sigma))
    return ReportRow(
        table=table,
        sample=sample.name,
        method=method,
        configured=sample.delta_single_pi,
        mean=mean,
        scatter=scatter,
        sigma=sigma,
        published=None if published is None else published[0],
        published_sigma=None if published is None else published[1],
        z_published=z,
        passed=passed,
        criterion=f"scatter<={limit}pi, |bias|<=2sigma",
        flags=flags,
    )


def _scan_fits(sample, arm, axis, geometry, config, seed, path) -> list[FitResult]:
    fits = []
    for j, theta_deg in enumerate(THETA_GRID_DEG):
        plan = ScanPlan.around(axis, config, seed=derived_seed(seed, *path, j))
        scan = synthesize_scan(plan, geometry, config, sample.rotated(math.radians(theta_deg)), arm)
        fits.append(fit_fringe(scan))
    return fits


def replicate_tables(seed: int = 42, trials: int = 100, config: InterferometerConfig | None = None) -> ReplicationReport:
    config = config or InterferometerConfig()
    report = ReplicationReport(seed=seed, trials=trials)
    collected: dict = {}
    for si, ts in enumerate(SAMPLES):
        spec = SampleSpec.from_transmission(
            math.pi * ts.delta_single_pi, ts.tau_m_sq, group_delay=ts.group_delay, name=ts.name
        )
        dz_s = balance_search(config, spec, sample_arm=ts.arm)
        balanced = ArmGeometry(dz_s=dz_s)
        tables = list(ts.published)
        for trial in range(trials):
            ref_plan = ScanPlan.around("idler_mirror", config, seed=derived_seed(seed, trial, si, 99))
            ref_fit = fit_fringe(synthesize_scan(ref_plan, ArmGeometry(), config))
            for ti, table in enumerate(tables):
                axis = TABLE_AXIS[table]
                fits = _scan_fits(spec, ts.arm, axis, balanced, config, seed, (trial, si, ti))
                with warnings.catch_warnings():
                    # chance-level fringes near a visibility null can jump; counted via notes below
                    warnings.simplefilter("ignore", UnwrapWarning)
                    m1 = method1_phase_shift(fits, axis, ts.arm)
                m2 = method2_visibility_ratio(fits[3], fits[0], ts.branch, strict=False)
                acc = collected.setdefault((table, si), {"m1": [], "m2": [], "vc": [], "flags": 0, "m1_flags": 0, "tr": []})
                acc["m1"].append((m1.delta_single, m1.sigma))
                acc["m2"].append((m2.delta_single, m2.sigma))
                acc["flags"] += len(m2.notes)
                acc["m1_flags"] += len(m1.notes)
                if table != "II":
                    vc = fit_visibility_curve(VisibilityCurve.from_fits(fits), 1.0, ts.branch)
                    acc["vc"].append((vc.estimate.delta_single, vc.estimate.sigma))
                    tr = estimate_transmission(fits[0], ref_fit)
                    acc["tr"].append((tr.tau_m_sq, tr.sigma))

    for table in ("I", "II", "III"):
        for si, ts in enumerate(SAMPLES):
            acc = collected.get((table, si))
            if acc is None:
                continue
            m1 = np.array(acc["m1"])
            m2 = np.array(acc["m2"])
            report.rows.append(_row(table, ts, "phase_shift", m1[:, 0], m1[:, 1], M1_SCATTER_MAX, acc["m1_flags"]))
            report.rows.append(_row(table, ts, "visibility_ratio", m2[:, 0], m2[:, 1], M2_SCATTER_MAX, acc["flags"]))
            if acc["vc"]:
                vc = np.array(acc["vc"])
                report.rows.append(_row(table, ts, "visibility_curve", vc[:, 0], vc[:, 1], M2_SCATTER_MAX))

    for si, ts in enumerate(SAMPLES):
        acc = collected[(next(t for t in ts.published if t != "II"), si)]
        tr = np.array(acc["tr"])
        value, tol = ts.transmission
        dev = tr[:, 0] - ts.tau_m_sq
        report.rows.append(
            ReportRow(
                table="AI",
                sample=ts.name,
                method="transmission",
                configured=ts.tau_m_sq,
                mean=float(tr[:, 0].mean()),
                scatter=float(tr[:, 0].std(ddof=1)) if len(tr) > 1 else 0.0,
                sigma=float(np.median(tr[:, 1])),
                published=value,
                published_sigma=tol,
                z_published=float((tr[:, 0].mean() - value) / tol),
                passed=bool(np.all(np.abs(dev) <= tol)),
                criterion=f"all trials within +/-{tol}",
            )
        )
    return report
