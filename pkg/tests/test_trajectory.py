import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpvmpc.trajectory import (
    SHAPES, V_FLOOR, ReferenceTrajectory, SpeedLimits, TrajectoryError, TrajectoryFormatError,
    arc_length, curvature, generate, heading, load_trajectory, read_trajectory_csv,
    reference_window, speed_profile, write_trajectory_csv,
)
from lpvmpc.vehicle_model import VehicleState


def circle_xy(R, n, start=0.0):
    th = start + 2 * np.pi * np.arange(n) / n
    return np.column_stack([R * np.cos(th), R * np.sin(th)])


# -- arc length --------------------------------------------------------------------

def test_arc_length_345():
    np.testing.assert_allclose(arc_length([(0, 0), (3, 4)]), [0, 5])


def test_arc_length_unit_square():
    np.testing.assert_allclose(arc_length([(0, 0), (1, 0), (1, 1), (0, 1)]), [0, 1, 2, 3])


def test_arc_length_circle_circumference():
    xy = circle_xy(20.0, 720)
    s = arc_length(np.vstack([xy, xy[:1]]))
    assert abs(s[-1] - 2 * np.pi * 20) / (2 * np.pi * 20) < 1e-3


def test_arc_length_errors():
    with pytest.raises(TrajectoryError, match="degenerate"):
        arc_length([(0, 0), (1, 1), (1, 1)])
    with pytest.raises(TrajectoryError):
        arc_length([(0, 0)])


# -- curvature ------------------------------------------------------------------------

def test_curvature_line_is_zero():
    x = np.linspace(0, 50, 101)
    k = curvature(np.column_stack([x, 0.3 * x + 1]))
    assert np.abs(k).max() < 1e-9


def test_curvature_circle_interior():
    xy, _ = generate("circle", ds=0.5, radius=20.0)
    k = curvature(xy)
    np.testing.assert_allclose(k[1:-1], 0.05, rtol=0.01)
    # Closed treatment covers every sample.
    np.testing.assert_allclose(curvature(xy, closed=True), 0.05, rtol=0.01)


def test_curvature_circle_frozen():
    xy, _ = generate("circle", ds=0.5, radius=20.0)
    assert len(xy) == 251
    # Chord-based stencil overshoots 1/R by ~h^2/(24 R^3) relative terms.
    assert curvature(xy)[100] == pytest.approx(0.050008, abs=2e-6)


def test_curvature_sign():
    ccw = circle_xy(10.0, 200)
    k = curvature(ccw, signed=True, closed=True)
    assert np.all(k > 0)
    k_cw = curvature(ccw[::-1], signed=True, closed=True)
    assert np.all(k_cw < 0)


def test_curvature_parabola_vertex():
    for h in (0.1, 0.05, 0.025):
        x = np.linspace(-1.0, 1.0, int(round(2 / h)) + 1)
        k = curvature(np.column_stack([x, x**2]))
        assert k[len(x) // 2] == pytest.approx(2.0, abs=0.01)
        # Away from the vertex the exact value is 2 / (1 + 4x^2)^1.5.
        i = len(x) // 2 + int(round(0.5 / h))
        assert k[i] == pytest.approx(2 / (1 + 4 * x[i] ** 2) ** 1.5, rel=0.02)


def test_curvature_density_robust():
    k1 = curvature(circle_xy(20.0, 400), closed=True)
    k2 = curvature(circle_xy(20.0, 800), closed=True)
    assert abs(np.median(k1) - np.median(k2)) / np.median(k2) < 0.005


def test_curvature_needs_three_points():
    with pytest.raises(TrajectoryError):
        curvature([(0, 0), (1, 0)])


def test_curvature_smoothing_window():
    with pytest.raises(TrajectoryError):
        curvature(circle_xy(5, 50), smooth=2)
    rng = np.random.default_rng(1)
    xy = circle_xy(20.0, 400) + rng.normal(0, 1e-3, (400, 2))
    raw = curvature(xy, closed=True)
    smooth = curvature(xy, closed=True, smooth=5)
    assert np.std(smooth) < np.std(raw)


# -- heading ----------------------------------------------------------------------------

def test_heading_axes():
    x = np.linspace(0, 5, 6)
    np.testing.assert_allclose(heading(np.column_stack([x, 0 * x])), 0.0)
    np.testing.assert_allclose(heading(np.column_stack([0 * x, x])), np.pi / 2)


def test_heading_two_points():
    np.testing.assert_allclose(heading([(0, 0), (-1, 0)]), [np.pi, np.pi])


def test_heading_circle_winds_once():
    xy = circle_xy(20.0, 300)
    psi = heading(xy, closed=True)
    assert np.all((psi > -np.pi) & (psi <= np.pi))
    turns = np.sum(np.diff(np.unwrap(np.append(psi, psi[0]))))
    assert turns == pytest.approx(2 * np.pi, abs=1e-9)


def test_heading_step_matches_curvature():
    xy, _ = generate("circle", ds=0.5, radius=20.0)
    psi = heading(xy, closed=True)
    k = curvature(xy, closed=True)
    ds = np.hypot(*np.diff(xy, axis=0).T)
    dpsi = np.abs(np.angle(np.exp(1j * np.diff(psi))))
    np.testing.assert_allclose(dpsi, k[:-1] * ds, atol=ds.max() ** 2)


# -- speed profile -----------------------------------------------------------------------

def test_speed_fixed():
    np.testing.assert_array_equal(speed_profile(np.zeros(5), "fixed", SpeedLimits(v_fixed=8)), 8.0)


def test_speed_straight_hits_cap():
    v = speed_profile(np.zeros(10), "curvature_limited", SpeedLimits(), ds=np.ones(9))
    np.testing.assert_array_equal(v, SpeedLimits().v_max)


def test_speed_formula_before_smoothing():
    lim = SpeedLimits(v_min=0.1, v_max=100.0, a_lat_max=2.0)
    v = speed_profile(np.full(3, 0.05), "curvature_limited", lim)
    np.testing.assert_allclose(v, math.sqrt(40.0))


def test_speed_unknown_mode():
    with pytest.raises(ValueError):
        speed_profile(np.zeros(3), "adaptive")


def test_speed_limits_validation():
    with pytest.raises(ValueError):
        SpeedLimits(v_min=5, v_max=4)
    with pytest.raises(ValueError):
        SpeedLimits(a_lat_max=0)


@settings(max_examples=100)
@given(st.lists(st.floats(-3.0, 3.0), min_size=2, max_size=60),
       st.floats(0.05, 2.0), st.booleans())
def test_speed_profile_bounds_and_acceleration(kappa, ds, closed):
    kappa = np.array(kappa)
    lim = SpeedLimits()
    n = len(kappa)
    seg = np.full(n if closed else n - 1, ds)
    raw = speed_profile(kappa, "curvature_limited", lim)
    v = speed_profile(kappa, "curvature_limited", lim, ds=seg)
    assert np.all(v >= lim.v_min - 1e-12) and np.all(v <= lim.v_max + 1e-12)
    assert np.all(v <= raw + 1e-12)
    v2 = v ** 2
    dv2 = np.diff(np.append(v2, v2[0]) if closed else v2)
    assert np.all(np.abs(dv2) / (2 * ds) <= lim.a_long_max + 1e-9)


# -- ReferenceTrajectory -----------------------------------------------------------------------

def test_reference_trajectory_fields():
    xy, closed = generate("circle", ds=0.5, radius=20.0)
    traj = ReferenceTrajectory(xy, closed=closed)
    assert len(traj) == 251 and traj.closed
    assert traj.length == pytest.approx(2 * np.pi * 20, rel=1e-4)
    assert np.all(np.diff(traj.s) > 0)
    assert traj.kappa_max == pytest.approx(0.05, rel=0.01)
    assert traj.total_curvature == pytest.approx(2 * np.pi, rel=0.01)
    pts = traj.points
    assert pts[0].x == 0.0 and pts[0].v_r == 10.0
    assert all(-np.pi < p.psi_r <= np.pi for p in pts)
    with pytest.raises(ValueError):
        traj.x[0] = 1.0


def test_reference_trajectory_kappa_clip():
    xy, closed = generate("circle", ds=0.1, radius=0.5)
    traj = ReferenceTrajectory(xy, closed=closed, kappa_abs_max=1.0)
    assert traj.kappa_max <= 1.0


def test_reference_trajectory_validation():
    with pytest.raises(TrajectoryError):
        ReferenceTrajectory([(0, 0)])
    with pytest.raises(TrajectoryError):
        ReferenceTrajectory([(0, 0), (0, 0), (1, 0)])
    with pytest.raises(TrajectoryError):
        ReferenceTrajectory([(0, 0), (1, 0), (2, 0)], v_r=[1.0, 2.0])


def test_from_xy_detects_closure():
    xy, _ = generate("circle", ds=0.5, radius=20.0)
    assert ReferenceTrajectory.from_xy(xy).closed
    dup = ReferenceTrajectory.from_xy(np.vstack([xy, xy[:1]]))
    assert dup.closed and len(dup) == len(xy)
    line, _ = generate("line", length=50, ds=1.0)
    assert not ReferenceTrajectory.from_xy(line).closed


def test_nearest_index_ties_and_window():
    traj = ReferenceTrajectory([(0, 0), (1, 0), (2, 0), (3, 0)])
    assert traj.nearest_index(0.5, 1.0) == 0
    assert traj.nearest_index(2.4, -3.0) == 2
    # A narrow window around the hint excludes the true nearest sample.
    assert traj.nearest_index(3.0, 0.0, hint=0, window=1.0) == 1


def test_nearest_index_stays_on_branch_at_crossing():
    xy, closed = generate("figure_eight", ds=0.5, kappa_max=0.1)
    traj = ReferenceTrajectory(xy, closed=closed)
    # The path passes the origin twice; the hint picks the branch.
    second = int(np.argmin(np.hypot(traj.x[100:], traj.y[100:]))) + 100
    assert traj.nearest_index(0.05, 0.0, hint=second - 3) == second
    assert traj.nearest_index(0.05, 0.0, hint=3) in (0, 1, len(traj) - 1)


def test_project_onto_segments():
    traj = ReferenceTrajectory([(0, 0), (1, 0), (2, 0), (3, 0)])
    s, qx, qy, tx, ty = traj.project(1.3, 0.7, 1)
    assert (s, qx, qy, tx, ty) == pytest.approx((1.3, 1.3, 0.0, 1.0, 0.0))
    assert traj.project(-1.0, 0.5, 0)[0] == 0.0


def test_sample_saturates_and_wraps():
    traj = ReferenceTrajectory([(0, 0), (1, 0), (2, 0)], v_r=[1.0, 2.0, 3.0])
    np.testing.assert_allclose(traj.sample([-1.0, 0.5, 5.0]),
                               [[1, 0, 0, 0], [1.5, 0, 0.5, 0], [3, 0, 2, 0]])
    xy, closed = generate("circle", ds=0.5, radius=20.0)
    circ = ReferenceTrajectory(xy, closed=closed)
    np.testing.assert_allclose(circ.sample(circ.length + 1.0), circ.sample(1.0))


# -- reference window --------------------------------------------------------------------------

def test_window_uniform_spacing():
    xy, closed = generate("line", length=100, ds=0.5)
    traj = ReferenceTrajectory(xy, closed=closed, v_r=np.full(len(xy), 10.0))
    ref = reference_window(traj, VehicleState(10.0, X=20.0), 8, 0.1)
    np.testing.assert_allclose(np.diff(ref[:, 2]), 1.0)
    assert ref[0, 2] == pytest.approx(21.0)
    np.testing.assert_allclose(ref[:, [0, 1, 3]], [[10.0, 0.0, 0.0]] * 8)


def test_window_saturates_past_end():
    xy, closed = generate("line", length=20, ds=0.5)
    traj = ReferenceTrajectory(xy, closed=closed)
    ref = reference_window(traj, VehicleState(5.0, X=30.0, Y=2.0), 6, 0.05)
    np.testing.assert_allclose(ref[:, 2:], [[20.0, 0.0]] * 6)


def test_window_uses_speed_floor():
    xy, closed = generate("line", length=20, ds=0.5)
    traj = ReferenceTrajectory(xy, closed=closed, v_r=np.full(len(xy), 0.2))
    ref = reference_window(traj, VehicleState(1.0), 3, 0.5)
    np.testing.assert_allclose(ref[:, 2], [0.5 * V_FLOOR, 1.0 * V_FLOOR, 1.5 * V_FLOOR])


def test_window_wraps_across_seam():
    xy, closed = generate("circle", ds=0.5, radius=20.0)
    traj = ReferenceTrajectory(xy, closed=closed, v_r=np.full(len(xy), 10.0))
    last = len(traj) - 3
    st_ = VehicleState(10.0, X=traj.x[last], Y=traj.y[last])
    ref = reference_window(traj, st_, 20, 0.05)
    steps = np.hypot(*np.diff(ref[:, 2:], axis=0).T)
    assert steps.max() < 2 * traj.seg.max()
    assert ref[-1, 2] > 0 and abs(ref[-1, 3]) < 2.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 150), st.floats(-50, 50), st.integers(1, 40))
def test_window_length_is_n(X, Y, N):
    xy, closed = generate("s_curve", length=100, ds=1.0)
    traj = ReferenceTrajectory(xy, closed=closed)
    assert reference_window(traj, VehicleState(5.0, X=X, Y=Y), N, 0.05).shape == (N, 4)


def test_window_rejects_bad_horizon():
    traj = ReferenceTrajectory([(0, 0), (1, 0)])
    with pytest.raises(ValueError):
        reference_window(traj, VehicleState(1.0), 0, 0.05)


# -- generators and CSV ------------------------------------------------------------------------

def test_generate_line_rows():
    xy, closed = generate("line", length=100, ds=1.0)
    assert xy.shape == (101, 2) and not closed


def test_generate_circle_closure():
    xy, closed = generate("circle", radius=20, ds=0.5)
    assert closed and len(xy) == 251
    gaps = np.hypot(*np.diff(np.vstack([xy, xy[:1]]), axis=0).T)
    # The closing gap is one ordinary sample step.
    np.testing.assert_allclose(gaps, gaps[0], rtol=1e-9)
    assert gaps[0] == pytest.approx(0.5, rel=0.01)


def test_figure_eight_geometry():
    xy, closed = generate("figure_eight", ds=0.5, kappa_max=0.1)
    traj = ReferenceTrajectory(xy, closed=closed)
    assert traj.kappa_max == pytest.approx(0.1, rel=0.02)
    signs = np.sign(traj.kappa[np.abs(traj.kappa) > 1e-4])
    changes = np.count_nonzero(signs != np.roll(signs, 1))
    assert changes == 2


def test_generate_invalid():
    with pytest.raises(ValueError, match="valid shapes"):
        generate("hexagon")
    with pytest.raises(ValueError):
        generate("circle", radius=-1)
    assert set(SHAPES) == {"line", "circle", "figure_eight", "s_curve"}


def test_csv_roundtrip(tmp_path):
    xy, _ = generate("s_curve", length=30, ds=0.7)
    v = np.linspace(3, 5, len(xy))
    path = tmp_path / "p.csv"
    write_trajectory_csv(path, xy, v)
    xy2, v2 = read_trajectory_csv(path)
    np.testing.assert_array_equal(xy2, xy)
    np.testing.assert_array_equal(v2, v)
    traj = load_trajectory(path)
    np.testing.assert_array_equal(traj.v_r, v)


def test_csv_comments_and_no_speed(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("# sample path\nx,y\n0,0\n\n# mid comment\n1,0\n2,0.5\n", encoding="utf-8")
    xy, v = read_trajectory_csv(path)
    assert v is None and xy.shape == (3, 2)


@pytest.mark.parametrize("text,row", [
    ("x,y\n0,0\n1,abc\n", 3),
    ("x,y\n0,0\n1,2,3\n", 3),
    ("a,b\n0,0\n", 1),
    ("x,y\n0,0\n1,nan\n", 3),
])
def test_csv_errors_carry_row(tmp_path, text, row):
    path = tmp_path / "bad.csv"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(TrajectoryFormatError) as err:
        read_trajectory_csv(path)
    assert err.value.row == row
    assert f"row {row}" in str(err.value)


def test_csv_empty_and_single_point(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(TrajectoryFormatError):
        read_trajectory_csv(empty)
    one = tmp_path / "one.csv"
    one.write_text("x,y\n1,1\n", encoding="utf-8")
    with pytest.raises(TrajectoryError):
        load_trajectory(one)
