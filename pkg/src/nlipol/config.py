"""Run configuration: an INI file with one section per concern.

Grammar (``#`` or ``;`` start comments, values in SI units unless the key says otherwise)::

    [interferometer]          ; required
    lambda_p = 532e-9         ; required, m
    lambda_s = 809.2e-9       ; required, m
    lambda_i = 1553e-9        ; required, m
    rate_scale = 4000         ; counts/s
    dwell = 1.0               ; s per point
    dark_rate = 0             ; counts/s

    [spectral]                ; optional
    shape = gaussian          ; gaussian | sinc2
    bandwidth = 1.7e12        ; rad/s; default from the 0.6 nm band-pass filter
    center_detuning = 0       ; rad/s

    [sample]                  ; optional; omit for a reference run
    name = QWP@1550
    arm = idler               ; idler | signal
    delta_single_pi = 0.5     ; or delta_single (rad)
    tau_m_sq = 0.98           ; or tau_m
    group_delay = 0           ; s

    [geometry]                ; optional
    dz_p = 0
    dz_s = 0
    dz_i = 0
    balance = true            ; move dz_s to the envelope peak before scanning

    [scan]
    axis = idler_mirror       ; idler_mirror | pump_mirror | signal_mirror
    step = 3.8825e-8          ; m; default lambda_axis / 40
    n_points = 60
    start = -2.29e-6          ; m; default centres the scan on 0
    noise = poisson           ; poisson | none

    [run]
    seed = 42
    thetas_deg = 0, 45, 90
    output_dir = out
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from nlipol.interference import ArmGeometry, InterferometerConfig, SpectralModel
from nlipol.jones import SampleSpec
from nlipol.scan import ScanPlan


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    interferometer: InterferometerConfig
    scan: ScanPlan
    sample: SampleSpec | None = None
    sample_arm: str = "none"
    geometry: ArmGeometry = field(default_factory=ArmGeometry)
    balance: bool = True
    thetas_deg: tuple[float, ...] = (0.0,)
    output_dir: str = "out"
    seed: int = 0


_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to its 1-based line number for diagnostics."""
    index: dict[tuple[str, str], int] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index[(section, "")] = lineno
            continue
        m = _KEY_RE.match(line)
        if m and section:
            index[(section, m.group(1).strip().lower())] = lineno
    return index


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, lines: dict, source: str):
        self.parser = parser
        self.lines = lines
        self.source = source

    def where(self, section: str, key: str = "") -> str:
        line = self.lines.get((section, key)) or self.lines.get((section, ""))
        return f"{self.source}:{line}" if line else self.source

    def fail(self, section: str, key: str, msg: str):
        label = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{self.where(section, key)}: {label}: {msg}")

    def has(self, section: str, key: str = "") -> bool:
        if not key:
            return self.parser.has_section(section)
        return self.parser.has_option(section, key)

    def raw(self, section: str, key: str, default=None, required: bool = False):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        if required:
            if not self.parser.has_section(section):
                raise ConfigError(f"{self.source}: missing required section [{section}] (needs key {key!r})")
            self.fail(section, "", f"missing required key {key!r}")
        return default

    def number(self, section: str, key: str, default=None, required: bool = False):
        value = self.raw(section, key, None, required)
        if value is None:
            return default
        try:
            out = float(value)
        except ValueError:
            self.fail(section, key, f"expected a number, got {value!r}")
        if not math.isfinite(out):
            self.fail(section, key, f"must be finite, got {value!r}")
        return out

    def integer(self, section: str, key: str, default=None):
        value = self.raw(section, key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            self.fail(section, key, f"expected an integer, got {value!r}")

    def boolean(self, section: str, key: str, default: bool) -> bool:
        if not self.parser.has_option(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            self.fail(section, key, f"expected true/false, got {self.parser.get(section, key)!r}")

    def build(self, section: str, factory, **kwargs):
        try:
            return factory(**kwargs)
        except ValueError as exc:
            self.fail(section, "", str(exc))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    r = _Reader(parser, _line_index(text), source)

    spectral_kw = {}
    if r.has("spectral"):
        spectral_kw["shape"] = r.raw("spectral", "shape", "gaussian")
        bw = r.number("spectral", "bandwidth")
        if bw is not None:
            spectral_kw["bandwidth"] = bw
        spectral_kw["center_detuning"] = r.number("spectral", "center_detuning", 0.0)
    spectral = r.build("spectral", SpectralModel, **spectral_kw)

    interferometer = r.build(
        "interferometer",
        InterferometerConfig,
        lambda_p=r.number("interferometer", "lambda_p", required=True),
        lambda_s=r.number("interferometer", "lambda_s", required=True),
        lambda_i=r.number("interferometer", "lambda_i", required=True),
        spectral=spectral,
        rate_scale=r.number("interferometer", "rate_scale", InterferometerConfig.rate_scale),
        dwell=r.number("interferometer", "dwell", InterferometerConfig.dwell),
        dark_rate=r.number("interferometer", "dark_rate", 0.0),
    )

    sample, arm = None, "none"
    if r.has("sample"):
        arm = r.raw("sample", "arm", "idler")
        if arm not in ("idler", "signal"):
            r.fail("sample", "arm", f"must be idler or signal, got {arm!r}")
        if r.has("sample", "delta_single_pi"):
            delta = math.pi * r.number("sample", "delta_single_pi")
        else:
            delta = r.number("sample", "delta_single", required=True)
        if r.has("sample", "tau_m_sq"):
            tau_sq = r.number("sample", "tau_m_sq")
            if not 0 <= tau_sq <= 1:
                r.fail("sample", "tau_m_sq", f"must lie in [0, 1], got {tau_sq}")
            tau = math.sqrt(tau_sq)
        else:
            tau = r.number("sample", "tau_m", 1.0)
        sample = r.build(
            "sample",
            SampleSpec,
            delta_single=delta,
            theta=0.0,
            tau_m=tau,
            group_delay=r.number("sample", "group_delay", 0.0),
            name=r.raw("sample", "name", ""),
        )

    geometry = r.build(
        "geometry",
        ArmGeometry,
        dz_p=r.number("geometry", "dz_p", 0.0),
        dz_s=r.number("geometry", "dz_s", 0.0),
        dz_i=r.number("geometry", "dz_i", 0.0),
    )
    balance = r.boolean("geometry", "balance", True)

    seed = r.integer("run", "seed", 0)
    axis = r.raw("scan", "axis", "idler_mirror")
    try:
        wavelength = interferometer.wavelength(axis)
    except ValueError as exc:
        r.fail("scan", "axis", str(exc))
    step = r.number("scan", "step", wavelength / 40.0)
    n_points = r.integer("scan", "n_points", 60)
    start = r.number("scan", "start", -step * (n_points - 1) / 2.0)
    scan = r.build(
        "scan",
        ScanPlan,
        axis=axis,
        start=start,
        step=step,
        n_points=n_points,
        seed=seed,
        noise=r.raw("scan", "noise", "poisson"),
    )

    thetas_raw = r.raw("run", "thetas_deg", "0")
    try:
        thetas = tuple(float(x) for x in thetas_raw.split(",") if x.strip())
    except ValueError:
        r.fail("run", "thetas_deg", f"expected comma-separated degrees, got {thetas_raw!r}")
    if not thetas:
        r.fail("run", "thetas_deg", "no orientations given")

    return RunConfig(
        interferometer=interferometer,
        scan=scan,
        sample=sample,
        sample_arm=arm,
        geometry=geometry,
        balance=balance,
        thetas_deg=thetas,
        output_dir=r.raw("run", "output_dir", "out"),
        seed=seed,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))


def _f(x: float) -> str:
    return repr(float(x))


def dump_config(cfg: RunConfig) -> str:
    """Serialize with every value explicit; parse_config(dump_config(c)) == c."""
    ic = cfg.interferometer
    sp = ic.spectral
    lines = [
        "[interferometer]",
        f"lambda_p = {_f(ic.lambda_p)}",
        f"lambda_s = {_f(ic.lambda_s)}",
        f"lambda_i = {_f(ic.lambda_i)}",
        f"rate_scale = {_f(ic.rate_scale)}",
        f"dwell = {_f(ic.dwell)}",
        f"dark_rate = {_f(ic.dark_rate)}",
        "",
        "[spectral]",
        f"shape = {sp.shape}",
        f"bandwidth = {_f(sp.bandwidth)}",
        f"center_detuning = {_f(sp.center_detuning)}",
        "",
    ]
    if cfg.sample is not None:
        s = cfg.sample
        lines += [
            "[sample]",
            f"name = {s.name}",
            f"arm = {cfg.sample_arm}",
            f"delta_single = {_f(s.delta_single)}",
            f"tau_m = {_f(s.tau_m)}",
            f"group_delay = {_f(s.group_delay)}",
            "",
        ]
    g = cfg.geometry
    lines += [
        "[geometry]",
        f"dz_p = {_f(g.dz_p)}",
        f"dz_s = {_f(g.dz_s)}",
        f"dz_i = {_f(g.dz_i)}",
        f"balance = {'true' if cfg.balance else 'false'}",
        "",
        "[scan]",
        f"axis = {cfg.scan.axis}",
        f"start = {_f(cfg.scan.start)}",
        f"step = {_f(cfg.scan.step)}",
        f"n_points = {cfg.scan.n_points}",
        f"noise = {cfg.scan.noise}",
        "",
        "[run]",
        f"seed = {cfg.seed}",
        "thetas_deg = " + ", ".join(_f(t) for t in cfg.thetas_deg),
        f"output_dir = {cfg.output_dir}",
    ]
    return "\n".join(lines) + "\n"
