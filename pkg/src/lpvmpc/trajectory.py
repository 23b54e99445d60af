"""Reference path geometry: arc length, curvature, heading and speed profiles.

Paths are ordered ``(n, 2)`` arrays of global ``(x, y)`` samples in metres.
A closed path does not repeat its first sample; the closing segment from the
last sample back to the first is implicit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .vehicle_model import VehicleState, wrap_angle

V_FLOOR = 1.0


class TrajectoryError(ValueError):
    pass


class TrajectoryFormatError(TrajectoryError):
    """Malformed trajectory file; ``row`` is the 1-based line number, if known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


def _as_xy(xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise TrajectoryError(f"expected an (n, 2) array of points, got shape {xy.shape}")
    return xy


def _segment_lengths(xy: np.ndarray, closed: bool = False) -> np.ndarray:
    diff = np.diff(xy, axis=0)
    if closed:
        diff = np.vstack([diff, xy[0] - xy[-1]])
    ds = np.hypot(diff[:, 0], diff[:, 1])
    bad = np.flatnonzero(ds <= 0.0)
    if bad.size:
        raise TrajectoryError(f"degenerate segment: points {bad[0]} and {bad[0] + 1} coincide")
    return ds


def arc_length(xy) -> np.ndarray:
    """Cumulative arc length, starting at 0."""
    xy = _as_xy(xy)
    if len(xy) < 2:
        raise TrajectoryError("arc length needs at least 2 points")
    return np.concatenate([[0.0], np.cumsum(_segment_lengths(xy))])


def _derivatives(f: np.ndarray, s: np.ndarray, L: float | None = None):
    """First and second derivative of ``f`` w.r.t. ``s`` with 3-point stencils.

    Interior points use the non-uniform central stencil. Open ends take the
    one-sided second-order first derivative and the neighbouring second
    derivative; closed paths (total length ``L``) wrap around.
    """
    if L is not None:
        fm, fp = np.roll(f, 1), np.roll(f, -1)
        h1 = np.diff(np.concatenate([[s[-1] - L], s]))
        h2 = np.diff(np.concatenate([s, [L]]))
    else:
        fm, fp = f[:-2], f[2:]
        h1 = np.diff(s)[:-1]
        h2 = np.diff(s)[1:]
        f = f[1:-1]
    d1 = (-h2 / (h1 * (h1 + h2))) * fm + ((h2 - h1) / (h1 * h2)) * f + (h1 / (h2 * (h1 + h2))) * fp
    d2 = 2.0 * (fm / (h1 * (h1 + h2)) - f / (h1 * h2) + fp / (h2 * (h1 + h2)))
    return d1, d2


def curvature(xy, signed: bool = False, closed: bool = False, smooth: int = 1) -> np.ndarray:
    """Per-sample curvature ``|x'y'' - y'x''| / (x'^2 + y'^2)^1.5`` over arc length.

    With ``signed=True`` the sign of the cross product is kept (positive for
    left turns). ``smooth`` is an odd moving-average window applied to the
    result; 1 disables it.
    """
    xy = _as_xy(xy)
    if len(xy) < 3:
        raise TrajectoryError("curvature needs at least 3 points")
    if smooth < 1 or smooth % 2 == 0:
        raise TrajectoryError(f"smoothing window must be a positive odd integer, got {smooth}")
    s = arc_length(xy)
    x, y = xy[:, 0], xy[:, 1]
    if closed:
        L = s[-1] + float(_segment_lengths(xy, closed=True)[-1])
        dx, ddx = _derivatives(x, s, L)
        dy, ddy = _derivatives(y, s, L)
    else:
        dx_i, ddx_i = _derivatives(x, s)
        dy_i, ddy_i = _derivatives(y, s)
        dx = np.gradient(x, s, edge_order=2)
        dy = np.gradient(y, s, edge_order=2)
        ddx = np.concatenate([[ddx_i[0]], ddx_i, [ddx_i[-1]]])
        ddy = np.concatenate([[ddy_i[0]], ddy_i, [ddy_i[-1]]])
        dx[1:-1], dy[1:-1] = dx_i, dy_i
    cross = dx * ddy - dy * ddx
    kappa = cross / (dx**2 + dy**2) ** 1.5
    if not signed:
        kappa = np.abs(kappa)
    if smooth > 1:
        kappa = _moving_average(kappa, smooth, closed)
    return kappa


def _moving_average(v: np.ndarray, window: int, closed: bool) -> np.ndarray:
    half = window // 2
    if closed:
        padded = np.concatenate([v[-half:], v, v[:half]])
    else:
        padded = np.pad(v, half, mode="edge")
    return np.convolve(padded, np.ones(window) / window, mode="valid")


def heading(xy, closed: bool = False) -> np.ndarray:
    """Tangent direction at each sample, wrapped into (-pi, pi]."""
    xy = _as_xy(xy)
    if len(xy) < 2:
        raise TrajectoryError("heading needs at least 2 points")
    if closed and len(xy) >= 3:
        s = arc_length(xy)
        L = s[-1] + float(_segment_lengths(xy, closed=True)[-1])
        t = np.column_stack([_derivatives(xy[:, 0], s, L)[0], _derivatives(xy[:, 1], s, L)[0]])
    else:
        _segment_lengths(xy)
        if len(xy) == 2:
            t = np.repeat(xy[1:] - xy[:1], 2, axis=0)
        else:
            s = arc_length(xy)
            t = np.column_stack(
                [np.gradient(xy[:, 0], s, edge_order=2), np.gradient(xy[:, 1], s, edge_order=2)]
            )
    psi = np.unwrap(np.arctan2(t[:, 1], t[:, 0]))
    return wrap_angle(psi)


@dataclass(frozen=True)
class SpeedLimits:
    v_fixed: float = 10.0
    v_min: float = 2.0
    v_max: float = 15.0
    a_lat_max: float = 2.0
    a_long_max: float = 1.0

    def __post_init__(self):
        for name in ("v_fixed", "v_min", "v_max", "a_lat_max", "a_long_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SpeedLimits.{name} must be positive")
        if self.v_min > self.v_max:
            raise ValueError("SpeedLimits requires v_min <= v_max")


def speed_profile(
    kappa,
    mode: str = "fixed",
    limits: SpeedLimits = SpeedLimits(),
    ds=None,
) -> np.ndarray:
    """Reference speed per sample.

    ``fixed`` returns ``v_fixed`` everywhere. ``curvature_limited`` caps the
    speed at ``sqrt(a_lat_max / |kappa|)`` within ``[v_min, v_max]``; when
    segment lengths ``ds`` are given, a forward and a backward pass then
    enforce ``|d(v^2)/2ds| <= a_long_max``. ``ds`` with one entry per sample
    (instead of one fewer) marks a closed loop whose last entry is the
    closing segment.
    """
    kappa = np.asarray(kappa, dtype=float)
    if mode == "fixed":
        return np.full(kappa.shape, float(limits.v_fixed))
    if mode != "curvature_limited":
        raise ValueError(f"unknown speed mode {mode!r}; expected 'fixed' or 'curvature_limited'")
    v = np.sqrt(limits.a_lat_max / np.maximum(np.abs(kappa), 1e-6))
    v = np.clip(v, limits.v_min, limits.v_max)
    if ds is None or len(v) < 2:
        return v
    ds = np.asarray(ds, dtype=float)
    n = len(v)
    closed = len(ds) == n
    if not closed and len(ds) != n - 1:
        raise ValueError("ds must have len(kappa) - 1 (open) or len(kappa) (closed) entries")
    v2 = v**2
    two_a = 2.0 * limits.a_long_max
    wrap = 1 if closed else 0
    for _ in range(1 + wrap):
        for i in range(1, n + wrap):
            j, k = i % n, i - 1
            v2[j] = min(v2[j], v2[k] + two_a * ds[k])
        for i in range(n - 2, -1 - wrap, -1):
            j, k = i % n, (i + 1) % n
            v2[j] = min(v2[j], v2[k] + two_a * ds[j])
    return np.sqrt(v2)


@dataclass(frozen=True, eq=False)
class PathPoint:
    x: float
    y: float
    s: float
    kappa: float
    psi_r: float
    v_r: float


class ReferenceTrajectory:
    """Immutable sampled reference path.

    Attributes are read-only arrays: ``x``, ``y``, ``s``, signed ``kappa``,
    ``psi_r`` and ``v_r``. ``length`` includes the closing segment of a
    closed path.
    """

    def __init__(self, xy, v_r=None, closed: bool = False, kappa=None,
                 kappa_abs_max: float | None = None, smooth: int = 1,
                 speed_mode: str = "fixed", limits: SpeedLimits = SpeedLimits()):
        xy = _as_xy(xy).copy()
        if len(xy) < 2:
            raise TrajectoryError("a trajectory needs at least 2 points")
        seg = _segment_lengths(xy, closed=closed)
        s = np.concatenate([[0.0], np.cumsum(seg[: len(xy) - 1])])
        if kappa is None:
            if len(xy) >= 3:
                kappa = curvature(xy, signed=True, closed=closed, smooth=smooth)
            else:
                kappa = np.zeros(len(xy))
        kappa = np.asarray(kappa, dtype=float).copy()
        if kappa_abs_max is not None:
            kappa = np.clip(kappa, -kappa_abs_max, kappa_abs_max)
        psi = heading(xy, closed=closed)
        if v_r is None:
            v_r = speed_profile(kappa, speed_mode, limits, ds=seg)
        v_r = np.asarray(v_r, dtype=float).copy()
        if v_r.shape != (len(xy),):
            raise TrajectoryError("speed column length does not match the number of points")

        self.closed = bool(closed)
        self.x, self.y = xy[:, 0].copy(), xy[:, 1].copy()
        self.s, self.kappa, self.psi_r, self.v_r = s, kappa, psi, v_r
        self.seg = seg
        self.length = float(s[-1] + (seg[-1] if closed else 0.0))
        for arr in (self.x, self.y, self.s, self.kappa, self.psi_r, self.v_r, self.seg):
            arr.setflags(write=False)

        # Interpolation knots; closed paths get the first sample appended at s = length.
        psi_u = np.unwrap(psi)
        if closed:
            self._s_knots = np.append(s, self.length)
            self._x_knots = np.append(self.x, self.x[0])
            self._y_knots = np.append(self.y, self.y[0])
            self._v_knots = np.append(v_r, v_r[0])
            psi_end = psi_u[-1] + wrap_angle(psi_u[0] - psi_u[-1])
            self._psi_knots = np.append(psi_u, psi_end)
        else:
            self._s_knots, self._x_knots, self._y_knots = s, self.x, self.y
            self._v_knots, self._psi_knots = v_r, psi_u

    @classmethod
    def from_xy(cls, xy, v=None, closed: bool | None = None, **kwargs) -> "ReferenceTrajectory":
        """Build from raw samples, detecting closure when ``closed`` is None.

        A trailing sample equal to the first one is dropped and marks the
        path closed; otherwise the path counts as closed when the end gap is
        no longer than 1.5 times the median spacing.
        """
        xy = _as_xy(xy)
        if v is not None:
            v = np.asarray(v, dtype=float)
        if len(xy) >= 3 and np.allclose(xy[0], xy[-1], rtol=0.0, atol=1e-9):
            xy = xy[:-1]
            v = v[:-1] if v is not None else None
            closed = True if closed is None else closed
        if closed is None:
            closed = False
            if len(xy) >= 4:
                ds = np.hypot(*np.diff(xy, axis=0).T)
                gap = math.hypot(*(xy[0] - xy[-1]))
                closed = bool(gap <= 1.5 * np.median(ds))
        return cls(xy, v_r=v, closed=closed, **kwargs)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def points(self) -> list[PathPoint]:
        return [
            PathPoint(*map(float, row))
            for row in zip(self.x, self.y, self.s, self.kappa, self.psi_r, self.v_r)
        ]

    @property
    def kappa_max(self) -> float:
        return float(np.max(np.abs(self.kappa)))

    @property
    def total_curvature(self) -> float:
        n = len(self.seg)
        return float(np.sum(np.abs(self.kappa[:n]) * self.seg))

    def nearest_index(self, X: float, Y: float, hint: int | None = None,
                      window: float = 10.0) -> int:
        """Index of the nearest sample; ties go to the lower index.

        With ``hint`` the search is limited to samples within ``window``
        metres of arc length of the hinted sample, which keeps the match on
        the right branch where a path crosses itself.
        """
        if hint is None:
            idx = np.arange(len(self))
        else:
            ds = self.s - self.s[hint]
            if self.closed:
                ds = (ds + 0.5 * self.length) % self.length - 0.5 * self.length
            idx = np.flatnonzero(np.abs(ds) <= window)
            if idx.size == 0:
                idx = np.array([hint])
        d2 = (self.x[idx] - X) ** 2 + (self.y[idx] - Y) ** 2
        return int(idx[np.argmin(d2)])

    def project(self, X: float, Y: float, index: int):
        """Closest point on the segments adjoining sample ``index``.

        Returns ``(s, qx, qy, tx, ty)``: arc length and position of the
        projection and the unit tangent of its segment.
        """
        n = len(self)
        best = None
        for j in (index - 1, index):
            if self.closed:
                j0, j1 = j % n, (j + 1) % n
            elif j < 0 or j + 1 >= n:
                continue
            else:
                j0, j1 = j, j + 1
            px, py = self.x[j0], self.y[j0]
            dx, dy = self.x[j1] - px, self.y[j1] - py
            L2 = dx * dx + dy * dy
            t = min(max(((X - px) * dx + (Y - py) * dy) / L2, 0.0), 1.0)
            qx, qy = px + t * dx, py + t * dy
            d2 = (X - qx) ** 2 + (Y - qy) ** 2
            if best is None or d2 < best[0]:
                L = math.sqrt(L2)
                best = (d2, float(self.s[j0] + t * L), float(qx), float(qy), dx / L, dy / L)
        return best[1:]

    def sample(self, s_query) -> np.ndarray:
        """Interpolated ``(v_r, psi_r, X, Y)`` rows at arc lengths ``s_query``.

        Open paths saturate at their ends; closed paths wrap.
        """
        s_query = np.atleast_1d(np.asarray(s_query, dtype=float))
        if self.closed:
            s_query = np.mod(s_query, self.length)
        else:
            s_query = np.clip(s_query, 0.0, self.s[-1])
        out = np.empty((len(s_query), 4))
        out[:, 0] = np.interp(s_query, self._s_knots, self._v_knots)
        out[:, 1] = wrap_angle(np.interp(s_query, self._s_knots, self._psi_knots))
        out[:, 2] = np.interp(s_query, self._s_knots, self._x_knots)
        out[:, 3] = np.interp(s_query, self._s_knots, self._y_knots)
        return out


def reference_window(traj: ReferenceTrajectory, state: VehicleState, N: int, Ts: float,
                     anchor: int | None = None, v_floor: float = V_FLOOR,
                     s0: float | None = None) -> np.ndarray:
    """``N`` output references ``(vx_R, psi_R, X_R, Y_R)`` for the predicted steps.

    Row ``k`` (0-based) is the path sampled ``(k + 1) * Ts * max(v_r, v_floor)``
    metres ahead of the anchor, where ``v_r`` is the anchor's reference speed.
    ``s0`` replaces the anchor's arc length as the starting point, e.g. with
    the vehicle's projection onto the path.
    """
    if len(traj) == 0:
        raise TrajectoryError("empty trajectory")
    if N < 1:
        raise ValueError(f"horizon must be >= 1, got {N}")
    if anchor is None:
        anchor = traj.nearest_index(state.X, state.Y)
    if s0 is None:
        s0, v0 = float(traj.s[anchor]), float(traj.v_r[anchor])
    else:
        v0 = float(traj.sample(s0)[0, 0])
    step = Ts * max(v0, v_floor)
    s_query = s0 + step * np.arange(1, N + 1)
    return traj.sample(s_query)


# -- generators ---------------------------------------------------------------

SHAPES = ("line", "circle", "figure_eight", "s_curve")


def _resample(dense: np.ndarray, ds: float, closed: bool) -> np.ndarray:
    seg = np.hypot(*np.diff(dense, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    L = s[-1]
    if closed:
        n = max(int(round(L / ds)), 3)
        sq = np.arange(n) * (L / n)
    else:
        n = max(int(round(L / ds)), 1)
        sq = np.linspace(0.0, L, n + 1)
    return np.column_stack([np.interp(sq, s, dense[:, 0]), np.interp(sq, s, dense[:, 1])])


def _gerono_unit_kappa_max() -> float:
    t = np.linspace(0.0, 2.0 * np.pi, 200001)
    dx, dy = np.cos(t), np.cos(2 * t)
    ddx, ddy = -np.sin(t), -2.0 * np.sin(2 * t)
    return float(np.max(np.abs(dx * ddy - dy * ddx) / (dx**2 + dy**2) ** 1.5))


def generate(shape: str, ds: float = 0.5, length: float = 100.0, radius: float = 20.0,
             kappa_max: float = 0.1, offset: float = 3.5):
    """Sample a synthetic path; returns ``(xy, closed)``.

    line
        ``length`` metres along +x from the origin.
    circle
        counter-clockwise circle of ``radius`` starting at the origin heading +x.
    figure_eight
        lemniscate of Gerono scaled so its peak curvature is ``kappa_max``.
    s_curve
        half-cosine lateral shift of ``offset`` metres over ``length``.
    """
    if not ds > 0:
        raise ValueError("ds must be positive")
    if shape == "line":
        if not length > 0:
            raise ValueError("length must be positive")
        n = max(int(round(length / ds)), 1)
        x = np.linspace(0.0, length, n + 1)
        return np.column_stack([x, np.zeros_like(x)]), False
    if shape == "circle":
        if not radius > 0:
            raise ValueError("radius must be positive")
        n = max(int(round(2 * np.pi * radius / ds)), 3)
        th = 2 * np.pi * np.arange(n) / n
        return np.column_stack([radius * np.sin(th), radius * (1 - np.cos(th))]), True
    if shape == "figure_eight":
        if not kappa_max > 0:
            raise ValueError("kappa_max must be positive")
        a = _gerono_unit_kappa_max() / kappa_max
        t = np.linspace(0.0, 2 * np.pi, 20001)
        dense = np.column_stack([a * np.sin(t), a * np.sin(t) * np.cos(t)])
        return _resample(dense, ds, closed=True), True
    if shape == "s_curve":
        if not (length > 0 and offset > 0):
            raise ValueError("length and offset must be positive")
        x = np.linspace(0.0, length, 20001)
        dense = np.column_stack([x, 0.5 * offset * (1 - np.cos(np.pi * x / length))])
        return _resample(dense, ds, closed=False), False
    raise ValueError(f"unknown shape {shape!r}; valid shapes: {', '.join(SHAPES)}")


# -- CSV ------------------------------------------------------------------------

def read_trajectory_csv(path):
    """Read ``x,y[,v]`` samples; returns ``(xy, v_or_None)``.

    Lines starting with ``#`` and blank lines are skipped.
    """
    path = Path(path)
    rows, speeds, has_v = [], [], None
    with path.open(encoding="utf-8", newline="") as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            cells = [c.strip() for c in next(csv.reader([text]))]
            if header is None:
                header = cells
                if header not in (["x", "y"], ["x", "y", "v"]):
                    raise TrajectoryFormatError(
                        f"expected header 'x,y' or 'x,y,v', got {','.join(header)!r}", lineno)
                has_v = len(header) == 3
                continue
            if len(cells) != len(header):
                raise TrajectoryFormatError(
                    f"expected {len(header)} columns, got {len(cells)}", lineno)
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                raise TrajectoryFormatError(f"non-numeric value in {text!r}", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise TrajectoryFormatError(f"non-finite value in {text!r}", lineno)
            rows.append(vals[:2])
            if has_v:
                speeds.append(vals[2])
    if header is None:
        raise TrajectoryFormatError("file is empty")
    xy = np.array(rows, dtype=float).reshape(-1, 2)
    return xy, (np.array(speeds) if has_v else None)


def write_trajectory_csv(path, xy, v=None) -> None:
    xy = _as_xy(xy)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"] if v is None else ["x", "y", "v"])
        for i, (x, y) in enumerate(xy):
            row = [repr(float(x)), repr(float(y))]
            if v is not None:
                row.append(repr(float(v[i])))
            w.writerow(row)


def load_trajectory(path, closed: bool | None = None, **kwargs) -> ReferenceTrajectory:
    xy, v = read_trajectory_csv(path)
    if len(xy) < 2:
        raise TrajectoryFormatError(f"need at least 2 samples, found {len(xy)}")
    try:
        return ReferenceTrajectory.from_xy(xy, v=v, closed=closed, **kwargs)
    except TrajectoryError as exc:
        raise TrajectoryFormatError(str(exc)) from exc
