import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lpvmpc.controller import ControllerConfig
from lpvmpc.simulator import (
    RUNLOG_COLUMNS, NoiseConfig, RunLog, SimConfig, SimulationAborted, integrate_plant,
    lateral_stiffness, measure, run_closed_loop,
)
from lpvmpc.trajectory import ReferenceTrajectory, generate
from lpvmpc.vehicle_model import ControlInput, VehicleParams, VehicleState

P = VehicleParams()


def short_line(length=40.0):
    xy, closed = generate("line", length=length, ds=0.5)
    return ReferenceTrajectory(xy, closed=closed)


def test_coasting_advances_only_x():
    s0 = VehicleState(10.0, X=1.0, Y=2.0)
    s1 = integrate_plant(s0, ControlInput(P.mu * P.g, 0.0), 0.01, P)
    np.testing.assert_allclose(s1.as_array(), [10.0, 0, 0, 0, 1.1, 2.0], atol=1e-12)


def fine_euler(state, u, T, h):
    x = state
    for _ in range(int(round(T / h))):
        x = integrate_plant(x, u, h, P, method="euler")
    return x


def test_rk4_matches_fine_euler():
    s0 = VehicleState(8.0, 0.2, 0.4, 0.1, 0.0, 0.0)
    u = ControlInput(0.5, 0.06)
    s = s0
    for _ in range(100):
        s = integrate_plant(s, u, 0.01, P)
    ref = fine_euler(s0, u, 1.0, 1e-4)
    assert abs(s.X - ref.X) < 1e-4 and abs(s.Y - ref.Y) < 1e-4


def steady_cornering(vx, delta, p=P):
    """Solve the lateral and yaw balance for (vy, r) with no lateral or yaw acceleration."""
    Cf, Cr, lf, lr, m = p.C_alpha_f, p.C_alpha_r, p.l_f, p.l_r, p.m
    cd = math.cos(delta)
    # Ff = Cf (delta - vy/vx - lf r/vx),  Fr = Cr (-vy/vx + lr r/vx)
    # lateral: Fr + Ff cd - m r vx = 0 ; yaw: lf Ff cd - lr Fr = 0
    M = np.array([
        [-Cr / vx - Cf * cd / vx, Cr * lr / vx - Cf * cd * lf / vx - m * vx],
        [-lf * Cf * cd / vx + lr * Cr / vx, -lf * Cf * cd * lf / vx - lr * Cr * lr / vx],
    ])
    rhs = -np.array([Cf * cd * delta, lf * Cf * cd * delta])
    vy, r = np.linalg.solve(M, rhs)
    Ff = Cf * (delta - vy / vx - lf * r / vx)
    a = p.mu * p.g + Ff * math.sin(delta) / m - r * vy
    return vy, r, a


def fit_circle(x, y):
    A = np.column_stack([2 * x, 2 * y, np.ones_like(x)])
    (cx, cy, c), *_ = np.linalg.lstsq(A, x**2 + y**2, rcond=None)
    return math.sqrt(c + cx**2 + cy**2)


def test_steady_state_cornering_radius():
    vx, delta = 10.0, 0.03
    vy, r, a = steady_cornering(vx, delta)
    s = VehicleState(vx, vy, 0.0, r, 0.0, 0.0)
    xs, ys = [], []
    for k in range(2000):
        s = integrate_plant(s, ControlInput(a, delta), 0.01, P)
        xs.append(s.X)
        ys.append(s.Y)
    R_expected = math.hypot(vx, vy) / r
    R = fit_circle(np.array(xs), np.array(ys))
    assert R == pytest.approx(R_expected, rel=0.02)
    assert s.vx == pytest.approx(vx, rel=1e-6)


def test_zero_throttle_never_speeds_up():
    s = VehicleState(12.0)
    speeds = [s.vx]
    for _ in range(1000):
        s = integrate_plant(s, ControlInput(0.0, 0.0), 0.01, P)
        speeds.append(s.vx)
    assert np.all(np.diff(speeds) <= 0)
    assert speeds[-1] < speeds[0]


def test_plant_clamps_low_speed_and_wraps():
    s = integrate_plant(VehicleState(0.0, psi=math.pi - 1e-4, psi_dot=1.0), ControlInput(-5, 0), 0.01, P)
    assert s.vx >= 0.1
    assert -math.pi < s.psi <= math.pi


def lateral_jacobian(vx, p=P):
    """d(vy_dot, r_dot)/d(vy, r) of the linear-tire model at zero steering."""
    Cf, Cr, lf, lr = p.C_alpha_f, p.C_alpha_r, p.l_f, p.l_r
    return np.array([
        [-(Cf + Cr) / (p.m * vx), (lr * Cr - lf * Cf) / (p.m * vx) - vx],
        [(lr * Cr - lf * Cf) / (p.I_z * vx), -(lf * lf * Cf + lr * lr * Cr) / (p.I_z * vx)],
    ])


@given(st.floats(0.1, 30.0))
def test_stiffness_bounds_lateral_spectrum(vx):
    rho = np.abs(np.linalg.eigvals(lateral_jacobian(vx))).max()
    assert lateral_stiffness(vx, P) >= rho * (1 - 1e-12)


def test_crawling_plant_stays_stable():
    # One plain RK4 step at 0.01 s would sit far outside the stability region here.
    assert 0.01 * np.abs(np.linalg.eigvals(lateral_jacobian(0.1))).max() > 2.8
    s0 = VehicleState(0.1, 0.05, 0.0, 0.3, 0.0, 0.0)
    u = ControlInput(0.0, 0.2)
    s = s0
    for _ in range(50):
        s = integrate_plant(s, u, 0.01, P)
    ref = fine_euler(s0, u, 0.5, 1e-5)
    assert np.all(np.isfinite(s.as_array()))
    np.testing.assert_allclose(s.as_array(), ref.as_array(), atol=1e-4)


def test_non_finite_state_aborts():
    with pytest.raises(SimulationAborted):
        integrate_plant(VehicleState(5.0), ControlInput(math.nan, 0.0), 0.01, P)


def test_unknown_integrator():
    with pytest.raises(ValueError):
        integrate_plant(VehicleState(5.0), ControlInput(), 0.01, P, method="midpoint")


def test_measure_noise_free_is_exact():
    s = VehicleState(3.0, 0.1, 0.2, 0.3, 4.0, 5.0)
    rng = np.random.default_rng(0)
    assert measure(s, NoiseConfig(), rng) == s


def test_measure_seeded_streams():
    s = VehicleState(3.0)
    n = NoiseConfig(position=0.1, heading=0.01, velocity=0.2)
    a = [measure(s, n, np.random.default_rng(5)) for _ in range(2)]
    assert a[0] == a[1]


def test_measure_position_std():
    s = VehicleState(3.0)
    rng = np.random.default_rng(12)
    X = np.array([measure(s, NoiseConfig(position=0.1), rng).X for _ in range(10_000)])
    assert np.std(X, ddof=1) == pytest.approx(0.1, rel=0.05)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(Ts_sim=0)
    with pytest.raises(ValueError):
        SimConfig(integrator="leapfrog")
    with pytest.raises(ValueError):
        NoiseConfig(position=-1)
    with pytest.raises(ValueError):
        SimConfig(Ts_sim=0.03).substeps(0.05)
    assert SimConfig().substeps(0.05) == 5
    assert SimConfig(plant_mismatch={"m": 1.1}).plant_mismatch == (("m", 1.1),)


def test_max_steps_zero():
    log = run_closed_loop(short_line(), sim_cfg=SimConfig(max_steps=0))
    assert len(log) == 0 and not log.finished and not log.aborted


def test_run_log_rows_and_hold():
    log = run_closed_loop(short_line(), ControllerConfig(N=10), SimConfig(max_steps=30))
    assert len(log) == 30
    assert np.all(np.diff(log.t) > 0)
    np.testing.assert_allclose(np.diff(log.t), 0.05)
    assert set(log.columns) == set(RUNLOG_COLUMNS)
    assert len(log.measured) == 30
    assert np.all(log.cycle_ms == 0.0)


def test_open_path_finishes():
    log = run_closed_loop(short_line(30.0), ControllerConfig(N=10), SimConfig(max_steps=500))
    assert log.finished
    assert log.X[-1] > 27.0
    assert len(log) < 500


def test_lockstep_runs_are_byte_identical(tmp_path):
    xy, closed = generate("s_curve", length=40, ds=0.5)
    traj = ReferenceTrajectory(xy, closed=closed)
    cfg = SimConfig(max_steps=60, seed=7, noise=NoiseConfig(position=0.05, heading=0.005))
    paths = []
    for k in range(2):
        log = run_closed_loop(traj, ControllerConfig(N=10), cfg)
        paths.append(tmp_path / f"run{k}.csv")
        log.write_csv(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    other = run_closed_loop(traj, ControllerConfig(N=10), SimConfig(max_steps=60, seed=8,
                                                                    noise=cfg.noise))
    other.write_csv(tmp_path / "other.csv")
    assert (tmp_path / "other.csv").read_bytes() != paths[0].read_bytes()


def test_run_log_csv_roundtrip(tmp_path):
    log = run_closed_loop(short_line(), ControllerConfig(N=8), SimConfig(max_steps=10))
    path = tmp_path / "log.csv"
    log.write_csv(path)
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == ("t,vx,vy,psi,psi_dot,X,Y,a_cmd,delta_cmd,vx_ref,psi_ref,X_ref,Y_ref,"
                      "e_d,e_theta,cte,J,solver_status,cycle_ms")
    back = RunLog.read_csv(path)
    for c in RUNLOG_COLUMNS:
        if c == "solver_status":
            assert back.solver_status == log.solver_status
        else:
            np.testing.assert_array_equal(getattr(back, c), getattr(log, c))


def test_run_log_read_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,vx\n0,1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="column mismatch"):
        RunLog.read_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(ValueError):
        RunLog.read_csv(empty)


def test_plant_mismatch_changes_response():
    traj = short_line()
    start = VehicleState(10.0, Y=0.5)
    base = run_closed_loop(traj, ControllerConfig(N=10), SimConfig(max_steps=20, initial_state=start))
    heavy = run_closed_loop(traj, ControllerConfig(N=10),
                            SimConfig(max_steps=20, initial_state=start, plant_mismatch={"m": 1.3}))
    assert not np.array_equal(base.Y, heavy.Y)
