from __future__ import annotations

import csv
import math
import os

import pytest

from sfdeinv import mlf
from sfdeinv.cli import main, read_config_file
from sfdeinv.experiment import ExperimentConfig, run_experiment
from sfdeinv.selftest import run_selftest

FAST = "realizations=200\nn_t=128\n"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_closed_loop_analytic():
    out = run_experiment(ExperimentConfig(preset="e1", data_mode="analytic", noise=0.0))
    assert out.result.rel_err_f <= 1e-8
    assert out.result.rel_err_g_abs <= 1e-8


def test_config_resolution_uses_table_gammas():
    cfg = ExperimentConfig(preset="e2", domain="b").resolved()
    assert (cfg.gamma_f, cfg.gamma_g) == (1e-13, 1e-16)
    assert (cfg.n_r_cells, cfg.n_theta_cells) == (2, 32)
    with pytest.raises(ValueError):
        ExperimentConfig(preset="e3")
    with pytest.raises(ValueError):
        ExperimentConfig(noise=-1.0)


def test_config_file_parsing(tmp_path):
    p = _write(tmp_path, "# comment\nalpha = 0.7\ntrust_region=true\ngamma_f=none\nn_t=64 # trailing\n")
    vals = read_config_file(p)
    assert vals == {"alpha": 0.7, "trust_region": True, "gamma_f": None, "n_t": 64}


def test_experiment_outputs(tmp_path):
    cfg = _write(tmp_path, FAST + "grid_r=8\ngrid_theta=16\n")
    out = tmp_path / "e1"
    rc = main(["experiment", "--config", cfg, "--preset", "e1", "--domain", "full", "--seed", "7", "--out", str(out)])
    assert rc == 0
    for name in ("config.txt", "modes.csv", "sensors.csv", "data_expectation.csv", "data_covariance.csv",
                 "truth_f.csv", "recon_f.csv", "truth_g.csv", "recon_g.csv", "results.csv", "residuals.csv"):
        assert (out / name).exists(), name
    res = _rows(out / "results.csv")
    assert res[0][:6] == ["experiment", "gamma_f", "gamma_g", "rel_err_f", "rel_err_g_abs", "iterations"]
    assert res[1][0] == "e1" and float(res[1][3]) > 0 and float(res[1][4]) > 0
    grid = _rows(out / "recon_f.csv")
    assert grid[0] == ["r", "theta", "x", "y", "value"] and len(grid) == 1 + 8 * 16
    for row in grid[1:]:
        r, t, x, y, _ = map(float, row)
        assert abs(x - r * math.cos(t)) <= 1e-12 and abs(y - r * math.sin(t)) <= 1e-12
    echoed = (out / "config.txt").read_text()
    assert "seed=7" in echoed and "alpha=0.80000000000000004" in echoed and "n_modes=36" in echoed
    assert (out / "data_expectation.csv").read_text().endswith("\n")


def test_determinism(tmp_path):
    cfg = _write(tmp_path, FAST + "grid_r=4\ngrid_theta=8\n")
    dirs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["experiment", "--config", cfg, "--preset", "e1", "--domain", "b", "--seed", "3", "--out", str(d)]) == 0
        dirs.append(d)
    for name in sorted(os.listdir(dirs[0])):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


def test_partial_domain_results_have_gammas(tmp_path):
    cfg = _write(tmp_path, FAST + "grid_r=4\ngrid_theta=8\nlm_max_iter=5\n")
    out = tmp_path / "c"
    assert main(["experiment", "--config", cfg, "--preset", "e2", "--domain", "c", "--out", str(out)]) == 0
    row = _rows(out / "results.csv")[1]
    assert row[0] == "e2c" and float(row[1]) == 1e-13 and float(row[2]) == 1e-16
    res = _rows(out / "residuals.csv")
    assert res[0] == ["iteration", "frobenius_residual", "step_norm"] and len(res) >= 3
    assert len(_rows(out / "sensors.csv")) == 1 + 32


def test_spectrum_command(tmp_path):
    assert main(["spectrum", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "modes.csv")
    assert rows[0] == ["n", "m", "parity", "bessel_zero", "lambda", "weight"]
    assert len(rows) == 37
    assert rows[1][:3] == ["1", "0", "cos"] and rows[3][:3] == ["3", "1", "sin"]
    assert float(rows[1][4]) == pytest.approx(5.783185962946785, abs=1e-12)


def test_simulate_and_invert_roundtrip(tmp_path):
    cfg = _write(tmp_path, "n_t=64\n")
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--data-mode", "analytic", "--out", str(out)]) == 0
    exp = _rows(out / "moments_expectation.csv")
    assert exp[0] == ["n", "value"] and len(exp) == 37
    cov = _rows(out / "moments_covariance.csv")
    assert cov[0] == ["row", "col", "value"] and len(cov) == 1 + 36 * 36
    # full-domain data files are the mode moments; invert must reproduce (e1)
    os.rename(out / "moments_expectation.csv", out / "data_expectation.csv")
    os.rename(out / "moments_covariance.csv", out / "data_covariance.csv")
    inv = tmp_path / "inv"
    assert main(["invert", "--config", cfg, "--data", str(out), "--out", str(inv)]) == 0
    row = _rows(inv / "results.csv")[1]
    assert float(row[3]) <= 1e-8 and float(row[4]) <= 1e-8


def test_invert_partial_domain(tmp_path):
    cfg = _write(tmp_path, FAST + "grid_r=4\ngrid_theta=8\n")
    out = tmp_path / "exp"
    assert main(["experiment", "--config", cfg, "--domain", "b", "--out", str(out)]) == 0
    inv = tmp_path / "inv"
    assert main(["invert", "--config", cfg, "--domain", "b", "--data", str(out), "--out", str(inv)]) == 0
    a, b = _rows(out / "results.csv")[1], _rows(inv / "results.csv")[1]
    assert a[:6] == b[:6]


def test_exit_codes(tmp_path, capsys):
    assert main(["experiment", "--preset", "e9"]) == 2
    assert main(["experiment", "--config", _write(tmp_path, "colour=red\n"), "--out", str(tmp_path)]) == 2
    assert main(["experiment", "--config", _write(tmp_path, "n_t=many\n", "b.cfg")]) == 2
    assert main(["experiment", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["invert", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 2
    # the sixth mode carries no stochastic source, so the closed form must refuse it
    bad = _write(tmp_path, FAST + "n0=6\n", "c.cfg")
    assert main(["experiment", "--config", bad, "--out", str(tmp_path / "x")]) == 3
    err = capsys.readouterr().err
    assert "inversion" in err


def test_selftest_passes():
    lines = []
    assert run_selftest(out=lines.append)
    assert len(lines) == 6 and all("PASS" in ln for ln in lines)
    assert main(["selftest"]) == 0


def test_selftest_catches_tampered_branch(monkeypatch):
    real = mlf._integral
    monkeypatch.setattr(mlf, "_integral", lambda t, a, b: real(t, a, b) * (1 + 1e-4))
    lines = []
    assert not run_selftest(out=lines.append)
    assert any(ln.startswith("derivative-identity") and "FAIL" in ln for ln in lines)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_selftest_seed_robust(seed):
    assert run_selftest(seed=seed, out=lambda s: None)
