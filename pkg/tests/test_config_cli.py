import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlipol.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from nlipol.config import ConfigError, dump_config, parse_config
from nlipol.fitting import FitResult
from nlipol.retardation import RetardationEstimate
from nlipol.scan import read_scan_csv

QWP_INI = """\
[interferometer]
lambda_p = 532e-9
lambda_s = 809.2e-9
lambda_i = 1553e-9

[sample]
name = QWP@1550
arm = idler
delta_single_pi = 0.5
tau_m_sq = 0.98

[run]
seed = 7
thetas_deg = 0, 45, 90
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_defaults():
    cfg = parse_config(QWP_INI)
    assert cfg.sample.delta_single == pytest.approx(math.pi / 2)
    assert cfg.sample.tau_m_sq == pytest.approx(0.98)
    assert cfg.thetas_deg == (0.0, 45.0, 90.0)
    assert cfg.scan.n_points == 60 and cfg.scan.step == pytest.approx(1553e-9 / 40)
    assert cfg.scan.seed == 7 and cfg.balance


def test_round_trip_fixed_point():
    cfg = parse_config(QWP_INI)
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert dump_config(parse_config(text)) == text


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.0, math.pi * 0.999),
    st.floats(0.0, 1.0),
    st.floats(1e-9, 1e-7),
    st.integers(8, 500),
    st.integers(0, 2**63),
    st.lists(st.floats(-180, 180), min_size=1, max_size=6),
    st.sampled_from(["gaussian", "sinc2"]),
)
def test_round_trip_property(delta, tau_sq, step, n, seed, thetas, shape):
    text = QWP_INI.replace("delta_single_pi = 0.5", f"delta_single = {delta!r}")
    text = text.replace("tau_m_sq = 0.98", f"tau_m_sq = {tau_sq!r}")
    text = text.replace("seed = 7", f"seed = {seed}")
    text = text.replace("thetas_deg = 0, 45, 90", "thetas_deg = " + ", ".join(repr(t) for t in thetas))
    text += f"\n[scan]\nstep = {step!r}\nn_points = {n}\n\n[spectral]\nshape = {shape}\n"
    cfg = parse_config(text)
    assert parse_config(dump_config(cfg)) == cfg


def test_missing_wavelength_names_key():
    text = QWP_INI.replace("lambda_i = 1553e-9\n", "")
    with pytest.raises(ConfigError, match=r"run\.ini:1: \[interferometer\]: missing required key 'lambda_i'"):
        parse_config(text, "run.ini")


def test_bad_value_names_line():
    text = QWP_INI.replace("tau_m_sq = 0.98", "tau_m_sq = lots")
    with pytest.raises(ConfigError, match=r"cfg:10: \[sample\] tau_m_sq: expected a number"):
        parse_config(text, "cfg")


@pytest.mark.parametrize("bad,match", [
    ("arm = idler", "arm = pump"),
    ("lambda_i = 1553e-9", "lambda_i = 1400e-9"),
])
def test_invalid_values(bad, match):
    with pytest.raises(ConfigError):
        parse_config(QWP_INI.replace(bad, match))


def test_missing_section():
    with pytest.raises(ConfigError, match="missing required section"):
        parse_config("[run]\nseed = 1\n")


def test_cli_simulate_qwp(tmp_path):
    cfg = write(tmp_path, QWP_INI)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    csvs = sorted(out.glob("*.csv"))
    assert len(csvs) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert [e["file"] for e in manifest["files"]] == [p.name for p in csvs]
    assert len({e["seed"] for e in manifest["files"]}) == 3
    assert "4*pi*dz/lambda" in manifest["conventions"]["phase"]
    scan = read_scan_csv(csvs[0])
    assert scan.period == pytest.approx(776.5e-9)
    # peak spacing of the theta = 0 fringe
    y, z = scan.counts, scan.positions
    smooth = np.convolve(y, np.ones(3) / 3, mode="same")
    peaks = [i for i in range(2, len(y) - 2) if smooth[i] == smooth[i - 2:i + 3].max()]
    assert np.diff(z[peaks]).mean() == pytest.approx(776.5e-9, rel=0.03)


def test_cli_noiseless_bytes_repeat(tmp_path):
    cfg = write(tmp_path, QWP_INI + "\n[scan]\nnoise = none\n")
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name)]) == EXIT_OK
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, QWP_INI.replace("lambda_p = 532e-9\n", ""))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "lambda_p" in capsys.readouterr().err


def test_cli_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["method2"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == EXIT_USAGE


@pytest.fixture
def qwp_fits(tmp_path):
    cfg = write(tmp_path, QWP_INI.replace("thetas_deg = 0, 45, 90", "thetas_deg = 0, 15, 30, 45, 60, 75, 90"))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "scans")]) == EXIT_OK
    scans = sorted(str(p) for p in (tmp_path / "scans").glob("*.csv"))
    assert main(["fit", *scans, "--out", str(tmp_path / "fits"), "--plot"]) == EXIT_OK
    return sorted(str(p) for p in (tmp_path / "fits").glob("fit_*.txt"))


def test_cli_fit_outputs(qwp_fits, tmp_path):
    assert len(qwp_fits) == 7
    fit = FitResult.load(qwp_fits[0])
    assert fit.visibility == pytest.approx(0.98, abs=0.01)
    model = (tmp_path / "fits" / "model_scan_00_theta0.csv").read_text().splitlines()
    assert model[0] == "position_m,model_counts" and len(model) == 601


def test_cli_estimators_on_qwp(qwp_fits, tmp_path):
    out = str(tmp_path / "est")
    assert main(["method1", *qwp_fits, "--out", out]) == EXIT_OK
    m1 = RetardationEstimate.load(Path(out) / "method1.txt")
    assert m1.delta_single_pi == pytest.approx(0.5, abs=0.01)
    assert main(["method2", *qwp_fits, "--out", out]) == EXIT_USAGE  # branch needed
    assert main(["method2", *qwp_fits, "--out", out, "--branch", "from-method1"]) == EXIT_USAGE
    assert main(["method2", *qwp_fits, "--out", out, "--branch", "from-method1", "--method1", str(Path(out) / "method1.txt")]) == EXIT_OK
    m2 = RetardationEstimate.load(Path(out) / "method2.txt")
    assert m2.delta_single_pi == pytest.approx(0.5, abs=0.01)
    assert main(["viscurve", *qwp_fits, "--out", out, "--branch", "principal"]) == EXIT_OK
    text = (Path(out) / "viscurve.txt").read_text()
    assert "tau_m_sq=" in text
    assert json.loads((Path(out) / "viscurve.json").read_text())["tau_m_sq"] == pytest.approx(0.98, abs=0.01)


def test_cli_method2_ratio_above_unity(tmp_path):
    def save(name, theta, v):
        FitResult(1000.0, v, 0.0, 7.765e-7, 1.0, 1e-3, 1e-3, 0.0, True, theta=theta).save(tmp_path / name)
        return str(tmp_path / name)

    files = [save("a.txt", 0.0, 0.5), save("b.txt", math.pi / 4, 0.7)]
    assert main(["method2", *files, "--branch", "principal", "--out", str(tmp_path / "o")]) == EXIT_NUMERIC


def test_cli_flat_scan_warns_but_succeeds(tmp_path, capsys):
    p = tmp_path / "flat.csv"
    p.write_text("# lambda=1.553e-06\nposition_m,counts\n" + "".join(f"{i * 3.8825e-8!r},5000\n" for i in range(40)))
    assert main(["fit", str(p), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "warning" in capsys.readouterr().err
    assert FitResult.load(tmp_path / "o" / "fit_flat.txt").visibility == 0.0


def test_cli_truncated_csv(tmp_path, capsys):
    p = tmp_path / "cut.csv"
    p.write_text("# lambda=1.553e-06\nposition_m,counts\n0.0,10\n1e-8,11\n2e-8\n")
    assert main(["fit", str(p), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "last good data row at line 4" in capsys.readouterr().err


def test_cli_unknown_period_needs_free_period(tmp_path):
    p = tmp_path / "lab.csv"
    z = np.arange(60) * 3.8825e-8
    y = np.round(5000 * (1 + 0.5 * np.cos(2 * math.pi * z / 7.9e-7)))
    p.write_text("position_m,counts\n" + "".join(f"{a!r},{int(b)}\n" for a, b in zip(z.tolist(), y.tolist())))
    assert main(["fit", str(p), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["fit", str(p), "--free-period", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert FitResult.load(tmp_path / "o" / "fit_lab.txt").period == pytest.approx(7.9e-7, rel=1e-3)


def test_cli_transmission_hwp532(tmp_path):
    ini = QWP_INI.replace("delta_single_pi = 0.5", "delta_single_pi = 0.322").replace("tau_m_sq = 0.98", "tau_m_sq = 0.857")
    ini = ini.replace("thetas_deg = 0, 45, 90", "thetas_deg = 0")
    assert main(["simulate", "--config", str(write(tmp_path, ini)), "--out", str(tmp_path / "s")]) == EXIT_OK
    ref = QWP_INI.split("[sample]")[0]
    assert main(["simulate", "--config", str(write(tmp_path, ref, "ref.ini")), "--out", str(tmp_path / "r")]) == EXIT_OK
    out = tmp_path / "t"
    code = main(["transmission", "--sample", str(tmp_path / "s" / "scan_00_theta0.csv"),
                 "--reference", str(tmp_path / "r" / "scan_reference.csv"), "--out", str(out)])
    assert code == EXIT_OK
    tau = json.loads((out / "transmission.json").read_text())["tau_m_sq"]
    assert tau == pytest.approx(0.857, abs=0.018)


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("NLIPOL_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--config", str(write(tmp_path, QWP_INI))]) == EXIT_OK
    assert (tmp_path / "env" / "manifest.json").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nlipol", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "nlipol" in proc.stdout
