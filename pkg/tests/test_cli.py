import json
import subprocess
import sys

import numpy as np
import pytest

from sgubu.harness import cli
from sgubu.harness.io import CSV_HEADER


def write(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SWEEP = """
experiment = "sweep"
[run]
methods = ["SG-EM", "SG-UBU"]
h = [0.05, 0.025]
gamma = [5.0]
n_samples = 1000
burn_in = 100
replicas = 2
"""


def test_sweep_writes_csv_and_manifest(tmp_path, capsys):
    out = tmp_path / "o"
    code = cli.main(["--config", write(tmp_path, SWEEP), "--out", str(out), "--seed", "4", "sweep"])
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert all(line.endswith(",4") for line in lines[1:])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 4 and manifest["files"] == ["sweep.csv"]


def test_flags_after_subcommand(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["sweep", "--config", write(tmp_path, SWEEP), "--out", str(out), "--threads", "2"]) == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["threads"] == 2


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["--config", write(tmp_path, "seed = = 2"), "sweep"]) == 2
    assert cli.main(["--config", str(tmp_path / "missing.toml"), "sweep"]) == 2
    assert cli.main(["--threads", "0", "--out", str(tmp_path), "sweep"]) == 2
    assert "error" in capsys.readouterr().err


def test_regime_violation_exit_code(tmp_path):
    cfg = SWEEP.replace("h = [0.05, 0.025]", "h = [0.25]")
    assert cli.main(["--config", write(tmp_path, cfg), "--out", str(tmp_path / "o"), "sweep"]) == 2
    code = cli.main(["--config", write(tmp_path, cfg), "--out", str(tmp_path / "o"), "--allow-out-of-regime", "sweep"])
    assert code == 0
    assert "+oor" in (tmp_path / "o" / "sweep.csv").read_text()


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    from sgubu.errors import NumericError

    def fail(cfg):
        raise NumericError("non-finite state")

    monkeypatch.setattr(cli, "run_bias_sweep", fail)
    assert cli.main(["--out", str(tmp_path), "sweep"]) == 3


def test_bounds_and_certificate(tmp_path, capsys):
    pts = tmp_path / "pts.txt"
    np.savetxt(pts, np.random.default_rng(0).normal(size=(9, 2)))
    cfg = write(tmp_path, '[bounds]\nsigma_samples = 2000\n')
    out = tmp_path / "b"
    assert cli.main(["--config", cfg, "--out", str(out), "bounds", "--certificate", str(pts), "--p", "1"]) == 0
    report = json.loads((out / "bounds.json").read_text())
    cert = json.loads((out / "certificate.json").read_text())
    assert report["C_G"] == pytest.approx(56.25)
    assert cert["total"] <= cert["closed_form"]
    assert report["certificate_total"] == pytest.approx(cert["total"])
    assert cli.main(["--config", cfg, "--out", str(out), "bounds", "--format", "text"]) == 0
    assert "bias_bound" in capsys.readouterr().out


def _fast_verify(monkeypatch):
    from sgubu.harness import verify

    fast = {
        "covariance": lambda cfg: verify.check_covariance(n=200_000, tol=2e-2, fault=cfg.verify["inject_fault"]),
        "two_component": lambda cfg: verify.check_two_component(),
    }
    monkeypatch.setattr(verify, "REGISTRY", fast)


def test_verify_exit_codes(tmp_path, monkeypatch):
    _fast_verify(monkeypatch)
    out = tmp_path / "v"
    assert cli.main(["--out", str(out), "verify"]) == 0
    report = json.loads((out / "verify_report.json").read_text())
    assert report["passed"] and report["n_checks"] == 2
    assert cli.main(["--out", str(out), "verify", "--inject-fault", "sigma2_sign"]) == 4
    assert not json.loads((out / "verify_report.json").read_text())["passed"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sgubu", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("sweep", "spike", "blr", "bounds", "verify"):
        assert sub in res.stdout
