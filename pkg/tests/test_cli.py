import subprocess
import sys

import numpy as np
import pytest

from lpvmpc.cli import main
from lpvmpc.metrics import COLUMNS, read_summary
from lpvmpc.trajectory import read_trajectory_csv


@pytest.fixture
def line_csv(tmp_path):
    assert main(["gen-trajectory", "line", "--length", "25", "--ds", "0.5",
                 "--out-dir", str(tmp_path), "-o", "line.csv"]) == 0
    return tmp_path / "line.csv"


def simulate(tmp_path, traj, *extra):
    out = tmp_path / "out"
    rc = main(["simulate", str(traj), "--out-dir", str(out), "--lockstep",
               "--set", "controller.N=10", *extra])
    return rc, out


def test_gen_line_rows(tmp_path, capsys):
    assert main(["gen-trajectory", "line", "--length", "100", "--ds", "1",
                 "--out-dir", str(tmp_path)]) == 0
    xy, v = read_trajectory_csv(tmp_path / "line.csv")
    assert len(xy) == 101 and v is None
    assert "101 samples" in capsys.readouterr().out


def test_gen_circle_with_speed(tmp_path):
    assert main(["gen-trajectory", "circle", "--radius", "20", "--ds", "0.5", "--speed", "5",
                 "--out-dir", str(tmp_path), "-o", "c.csv"]) == 0
    xy, v = read_trajectory_csv(tmp_path / "c.csv")
    assert len(xy) == 251
    np.testing.assert_array_equal(v, 5.0)


def test_gen_invalid_shape(tmp_path, capsys):
    assert main(["gen-trajectory", "spiral", "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    for shape in ("line", "circle", "figure_eight", "s_curve"):
        assert shape in err


def test_gen_rejects_bad_geometry(tmp_path):
    assert main(["gen-trajectory", "circle", "--radius", "-2", "--out-dir", str(tmp_path)]) == 1


def test_simulate_writes_outputs(tmp_path, line_csv, capsys):
    rc, out = simulate(tmp_path, line_csv)
    assert rc == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["line.csv", "line.summary", "line_errors.svg", "line_trajectory.svg",
                     "line_yaw.svg"]
    svg = (out / "line_trajectory.svg").read_text(encoding="utf-8")
    assert svg.startswith("<svg") and "href" not in svg
    printed = capsys.readouterr().out
    assert "Mean CTE" in printed


def test_simulate_is_deterministic(tmp_path, line_csv):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", str(line_csv), "--out-dir", str(d), "--lockstep", "--seed", "3",
                     "--set", "controller.N=10", "--set", "sim.noise_position=0.05"]) == 0
    assert (a / "line.csv").read_bytes() == (b / "line.csv").read_bytes()


def test_simulate_negative_weight(tmp_path, line_csv, capsys):
    rc, _ = simulate(tmp_path, line_csv, "--set", "weights.Q=1,-1,1,1",
                     "--set", "weights.S=1,1,1,1", "--set", "weights.R=1,1")
    assert rc == 1
    assert "error" in capsys.readouterr().err.lower()


def test_simulate_missing_trajectory(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    rc, _ = simulate(tmp_path, missing)
    assert rc == 1
    assert str(missing) in capsys.readouterr().err


def test_simulate_config_file(tmp_path, line_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"trajectory.file = {line_csv}\ncontroller.N = 8\noutput.name = fromcfg\n"
                   f"output.dir = {tmp_path / 'cfgout'}\n", encoding="utf-8")
    assert main(["--config", str(cfg), "--lockstep", "simulate"]) == 0
    assert (tmp_path / "cfgout" / "fromcfg.csv").exists()


def test_metrics_matches_simulate(tmp_path, line_csv, capsys):
    rc, out = simulate(tmp_path, line_csv, "--set", "sim.initial=10,0,0,0,0,0.5")
    assert rc == 0
    capsys.readouterr()
    assert main(["metrics", str(out / "line.csv"), str(line_csv)]) == 0
    text = capsys.readouterr().out
    head, row = text.strip().splitlines()
    for _, h in COLUMNS:
        assert h in head
    stored = read_summary(out / "line.summary")
    printed = [float(v) for v in row.split()[1:]]
    np.testing.assert_allclose(printed, [getattr(stored, k) for k, _ in COLUMNS], atol=5e-5)


def test_metrics_empty_and_mismatched(tmp_path, line_csv):
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    assert main(["metrics", str(empty), str(line_csv)]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x\n0,1\n", encoding="utf-8")
    assert main(["metrics", str(bad), str(line_csv)]) == 1


def test_tune_small_circle(tmp_path, capsys):
    assert main(["gen-trajectory", "circle", "--radius", "0.25", "--ds", "0.01",
                 "--out-dir", str(tmp_path), "-o", "c.csv"]) == 0
    capsys.readouterr()
    assert main(["tune", str(tmp_path / "c.csv")]) == 0
    out = capsys.readouterr().out
    kappa = float(out.split("Max Curvature (1/m):")[1].split()[0])
    assert kappa == pytest.approx(4.0, rel=0.01)
    assert "Tier: 2 (sharp)" in out
    assert "Total Curvature:" in out


def test_tune_straight(line_csv, capsys):
    assert main(["tune", str(line_csv)]) == 0
    assert "Tier: 0" in capsys.readouterr().out


def test_tune_single_point(tmp_path):
    one = tmp_path / "one.csv"
    one.write_text("x,y\n0,0\n", encoding="utf-8")
    assert main(["tune", str(one)]) == 1


def test_tune_malformed_row(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n0,0\n1,0\n2,oops\n", encoding="utf-8")
    assert main(["tune", str(bad)]) == 1
    assert "row 4" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["--jobs", "0", "config"]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lpvmpc", "config"], capture_output=True,
                          text=True, cwd=tmp_path, check=False)
    assert proc.returncode == 0
    assert "controller.N = 25" in proc.stdout


def test_simulate_parallel_jobs(tmp_path, line_csv):
    other = tmp_path / "short.csv"
    assert main(["gen-trajectory", "line", "--length", "15", "--out-dir", str(tmp_path),
                 "-o", "short.csv"]) == 0
    out = tmp_path / "out"
    rc = main(["simulate", str(line_csv), str(other), "--out-dir", str(out), "--lockstep",
               "--jobs", "2", "--set", "controller.N=10"])
    assert rc == 0
    assert (out / "line.summary").exists() and (out / "short.summary").exists()
