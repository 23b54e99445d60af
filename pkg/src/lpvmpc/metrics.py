"""Tracking-error measures and run summaries.

Sign convention for lateral errors: positive when the vehicle is to the
right of the path direction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .trajectory import ReferenceTrajectory
from .vehicle_model import wrap_angle


class MetricsError(ValueError):
    pass


def cte_line(a: float, b: float, c: float, pos) -> float:
    """Unsigned distance from ``pos`` to the line ``a x + b y + c = 0``."""
    norm = math.hypot(a, b)
    if norm == 0.0:
        raise MetricsError("line normal (a, b) must be non-zero")
    x, y = pos
    return abs(a * x + b * y + c) / norm


def cte_function(f: Callable[[float], float], pos, domain: tuple | None = None) -> float:
    """Signed vertical offset ``y - f(x)`` from a path given as ``y = f(x)``.

    Parameters
    ----------
    f : callable
        Reference function.
    pos : (x, y)
    domain : (lo, hi), optional
        Closed interval where ``f`` is defined.
    """
    x, y = pos
    if domain is not None and not (domain[0] <= x <= domain[1]):
        raise MetricsError(f"x = {x} is outside the reference domain {domain}")
    try:
        fx = float(f(x))
    except (ValueError, ArithmeticError) as exc:
        raise MetricsError(f"reference function undefined at x = {x}") from exc
    if not math.isfinite(fx):
        raise MetricsError(f"reference function undefined at x = {x}")
    return y - fx


def cte_parametric(pos, ref_point, theta_r: float) -> float:
    """Signed offset from the matched reference sample along the path normal."""
    x, y = pos
    xr, yr = ref_point
    return (x - xr) * math.sin(theta_r) - (y - yr) * math.cos(theta_r)


@dataclass(frozen=True)
class PathError:
    index: int
    e_d: float
    e_theta: float
    cte: float
    # Reference output at the projection: v_r, psi_r, X, Y.
    ref: tuple


class ErrorTracker:
    """Sequential path matcher producing per-sample errors.

    The nearest sample is searched around the previous match, so a log
    replayed through a fresh tracker gives the same errors.

    ``cte`` uses the nearest sample and its heading. ``e_d`` is the signed
    distance to the closest point on the two segments adjoining that
    sample, and ``e_theta`` the wrapped heading error at that point.
    """

    def __init__(self, traj: ReferenceTrajectory, window: float = 10.0):
        self.traj = traj
        self.window = window
        self._hint: int | None = None

    def update(self, X: float, Y: float, psi: float) -> PathError:
        traj = self.traj
        i = traj.nearest_index(X, Y, hint=self._hint, window=self.window)
        self._hint = i
        cte = cte_parametric((X, Y), (traj.x[i], traj.y[i]), traj.psi_r[i])

        s_proj, qx, qy, tx, ty = traj.project(X, Y, i)
        # Cross product of tangent and offset; positive to the right.
        e_d = (X - qx) * ty - (Y - qy) * tx
        v_r, psi_r, _, _ = traj.sample(s_proj)[0]
        e_theta = float(wrap_angle(psi_r - psi))
        return PathError(i, float(e_d), e_theta, float(cte), (float(v_r), float(psi_r), qx, qy))


def path_errors(traj: ReferenceTrajectory, X, Y, psi, window: float = 10.0):
    """Vectorised :class:`ErrorTracker` pass: returns ``(e_d, e_theta, cte)`` arrays."""
    tracker = ErrorTracker(traj, window)
    out = np.array([
        (e.e_d, e.e_theta, e.cte)
        for e in (tracker.update(float(x), float(y), float(p)) for x, y, p in zip(X, Y, psi))
    ]).reshape(-1, 3)
    return out[:, 0], out[:, 1], out[:, 2]


@dataclass(frozen=True)
class MetricsSummary:
    """Six-figure run summary.

    ``ale`` and ``aoe`` are root-mean-square values. ``mean_cte`` averages
    the absolute cross-track error.
    """

    max_cte: float
    mean_cte: float
    mle: float
    ale: float
    moe: float
    aoe: float

    def as_dict(self) -> dict:
        return asdict(self)


COLUMNS = (
    ("max_cte", "Max CTE (m)"),
    ("mean_cte", "Mean CTE (m)"),
    ("mle", "MLE (m)"),
    ("ale", "ALE (m)"),
    ("moe", "MOE (rad)"),
    ("aoe", "AOE (rad)"),
)


def summarize_errors(e_d, e_theta, cte) -> MetricsSummary:
    e_d, e_theta, cte = (np.asarray(v, dtype=float) for v in (e_d, e_theta, cte))
    if e_d.size == 0:
        raise MetricsError("cannot summarise an empty log")
    if not (e_d.shape == e_theta.shape == cte.shape):
        raise MetricsError("error series have different lengths")
    e_theta = wrap_angle(e_theta)
    abs_cte = np.abs(cte)
    return MetricsSummary(
        max_cte=float(abs_cte.max()),
        mean_cte=float(abs_cte.mean()),
        mle=float(np.abs(e_d).max()),
        ale=float(np.sqrt(np.mean(e_d ** 2))),
        moe=float(np.abs(e_theta).max()),
        aoe=float(np.sqrt(np.mean(e_theta ** 2))),
    )


def summarize(log) -> MetricsSummary:
    """Summary of a run log (anything with ``e_d``, ``e_theta`` and ``cte`` columns)."""
    return summarize_errors(log.e_d, log.e_theta, log.cte)


def format_table(rows: dict[str, MetricsSummary], digits: int = 4) -> str:
    """Plain-text table, one line per named run."""
    label_w = max([len("Run")] + [len(k) for k in rows])
    heads = [h for _, h in COLUMNS]
    widths = [max(len(h), digits + 4) for h in heads]
    lines = ["  ".join([f"{'Run':<{label_w}}"] + [f"{h:>{w}}" for h, w in zip(heads, widths)])]
    for name, summ in rows.items():
        vals = [f"{getattr(summ, k):>{w}.{digits}f}" for (k, _), w in zip(COLUMNS, widths)]
        lines.append("  ".join([f"{name:<{label_w}}"] + vals))
    return "\n".join(lines)


def write_summary(path, summ: MetricsSummary, extra: dict | None = None) -> None:
    """``key=value`` lines; floats use their shortest round-trip repr."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in fields(summ):
            fh.write(f"{f.name}={getattr(summ, f.name)!r}\n")
        for k, v in (extra or {}).items():
            fh.write(f"{k}={v}\n")


def read_summary(path) -> MetricsSummary:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise MetricsError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    try:
        return MetricsSummary(**{f.name: float(values[f.name]) for f in fields(MetricsSummary)})
    except KeyError as exc:
        raise MetricsError(f"{path}: missing field {exc.args[0]}") from None
