import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from gcselect import cli, validation


def write_config(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_config_parsing_and_flag_precedence(tmp_path):
    cfg_path = write_config(tmp_path, "# comment\nmu = 0.5\neps=0.2  # trailing\n\nrho0 = 3\n")
    cfg = cli.RunConfig.load(cfg_path, {"rho0": "7", "stop_at_threshold": "yes"})
    assert cfg["mu"] == 0.5 and cfg["eps"] == 0.2
    assert cfg["rho0"] == 7.0
    assert cfg["stop_at_threshold"] is True
    assert cfg["n_cells"] == 400
    assert cfg.explicit == {"mu", "eps", "rho0", "stop_at_threshold"}
    assert cfg.params().rho0 == 7.0


@pytest.mark.parametrize("text", ["bogus = 1\n", "mu 1\n", "mu = 1\nmu = 2\n", "n_cells = 1.5\n"])
def test_bad_config_files_are_errors(tmp_path, text):
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.load(write_config(tmp_path, text), {})


def test_override_parsing():
    assert cli.parse_overrides(["--mu", "2", "--eps=0.3"]) == {"mu": "2", "eps": "0.3"}
    with pytest.raises(cli.ConfigError):
        cli.parse_overrides(["--mu"])
    with pytest.raises(cli.ConfigError):
        cli.parse_overrides(["mu", "2"])


def test_exit_code_for_config_errors(tmp_path, capsys):
    assert cli.main(["simulate", "--unknown", "1", "--out", str(tmp_path)]) == 1
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert cli.main(["simulate", "--mu", "-1", "--out", str(tmp_path)]) == 1
    assert cli.main(["simulate", "--initial", "gaussian", "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_simulate_outputs_and_reproducibility(tmp_path, capsys):
    args = ["simulate", "--eps", "1", "--rho0", "0.5", "--n_cells", "100", "--dt", "1e-3",
            "--t_max", "1", "--snapshot_times", "0.5,1", "--initial", "random", "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    for name in ("timeseries.csv", "snapshot_0.5.csv", "snapshot_1.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    raw = (a / "timeseries.csv").read_bytes()
    assert b"\r" not in raw
    header, rows = read_csv(a / "timeseries.csv")
    assert header == ["t", "rho", "mass", "q_regime"]
    assert rows[1][1] == "%.12e" % float(rows[1][1])
    _, snap = read_csv(a / "snapshot_0.5.csv")
    assert len(snap) == 101
    assert "threshold_time" in capsys.readouterr().out


def test_simulate_uniform_case_crosses_at_ln2(tmp_path, capsys):
    rc = cli.main(["simulate", "--eps", "1", "--n_cells", "50", "--dt", "1e-4",
                   "--stop_at_threshold", "true", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert float(out.split("=")[1]) == pytest.approx(math.log(2), abs=1e-3)


def test_simulate_without_crossing_exits_2(tmp_path):
    rc = cli.main(["simulate", "--Q0", "0.01", "--rho0", "1e6", "--n_cells", "50",
                   "--t_max", "1", "--stop_at_threshold", "1", "--out", str(tmp_path)])
    assert rc == 2
    rc = cli.main(["simulate", "--Q0", "0.01", "--rho0", "1e6", "--n_cells", "50",
                   "--t_max", "1", "--out", str(tmp_path)])
    assert rc == 0


def test_spectrum_eigvecs_round_trip_orthonormal(tmp_path):
    assert cli.main(["spectrum", "--K", "5", "--n_cells", "1000", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "spectrum.csv")
    assert header == ["k", "lambda_exact", "lambda_asym", "abs_gap"]
    assert [int(r[0]) for r in rows] == list(range(5))
    vecs = []
    for k in range(5):
        _, rows = read_csv(tmp_path / f"eigvec_{k}.csv")
        vecs.append(np.array([float(r[1]) for r in rows]))
    w = np.full(1001, 1e-3)
    w[[0, -1]] = 5e-4
    G = np.array([[np.sum(w * u * v) for v in vecs] for u in vecs])
    assert np.allclose(G, np.eye(5), atol=1e-5)


def test_sweep_identical_for_one_and_two_jobs(tmp_path, monkeypatch):
    args = ["sweep", "--axis", "rho0", "--start", "1", "--stop", "100", "--count", "3",
            "--n_cells", "100", "--dt", "1e-2", "--K_modes", "20"]
    assert cli.main(args + ["--jobs", "1", "--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("GCSELECT_JOBS", "2")
    assert cli.main(args + ["--out", str(tmp_path / "two")]) == 0
    one = (tmp_path / "one" / "sweep_rho0.csv").read_bytes()
    assert one == (tmp_path / "two" / "sweep_rho0.csv").read_bytes()
    header, rows = read_csv(tmp_path / "one" / "sweep_rho0.csv")
    assert header == cli.SWEEP_COLUMNS
    t_fem = [float(r[1]) for r in rows]
    t_spec = [float(r[2]) for r in rows]
    assert np.all(np.diff(t_fem) > 0)
    assert np.allclose(t_fem, t_spec, rtol=2e-2)


def test_sweep_dirac_brackets_fem(tmp_path):
    args = ["sweep", "--axis", "mu", "--start", "0.1", "--stop", "10", "--count", "3",
            "--initial", "dirac", "--z", "0.5", "--n_cells", "200", "--dt", "1e-3",
            "--K_modes", "40", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    _, rows = read_csv(tmp_path / "sweep_mu.csv")
    for r in rows:
        t_fem, t_l, t_u = float(r[1]), float(r[6]), float(r[7])
        assert t_l <= t_fem <= t_u


def test_sweep_records_per_point_errors(tmp_path):
    args = ["sweep", "--axis", "eps", "--spacing", "lin", "--start", "0.005", "--stop", "0.1",
            "--count", "2", "--n_cells", "100", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    _, rows = read_csv(tmp_path / "sweep_eps.csv")
    assert "resolve" in rows[0][-1]
    assert rows[1][1] != ""
    assert cli.main(["sweep", "--axis", "d", "--out", str(tmp_path)]) == 1
    assert cli.main(["sweep", "--spacing", "cubic", "--out", str(tmp_path)]) == 1


def test_validation_negative_control_fails_narrow_window_order():
    # a coarse time step must make the eps-order check fail, not pass by accident
    with pytest.warns(RuntimeWarning):
        res = validation.check_narrow_eps_order(validation.Settings(dt=0.5), validation.Tracker())
    assert not res.passed


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "gcselect.cli", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for cmd in ("simulate", "spectrum", "sweep", "validate"):
        assert cmd in out
