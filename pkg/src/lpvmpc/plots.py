"""Self-contained SVG line plots for run logs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .trajectory import ReferenceTrajectory

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str
    dashed: bool = False


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    return np.arange(math.ceil(lo / step) * step, hi + 0.5 * step, step)


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_plot(series: list[Series], title: str, xlabel: str, ylabel: str,
              equal_aspect: bool = False, width: int = 640, height: int = 480) -> str:
    """Render ``series`` as a standalone SVG document string."""
    ml, mr, mt, mb = 70, 20, 40, 55
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([s.x for s in series if len(s.x)]) if series else np.zeros(1)
    ys = np.concatenate([s.y for s in series if len(s.y)]) if series else np.zeros(1)
    xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
    x0, x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad_y = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad_y, y1 + pad_y
    if equal_aspect:
        scale = min(pw / (x1 - x0), ph / (y1 - y0))
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        x0, x1 = cx - 0.5 * pw / scale, cx + 0.5 * pw / scale
        y0, y1 = cy - 0.5 * ph / scale, cy + 0.5 * ph / scale

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{mt}" x2="{X:.2f}" y2="{mt + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{X:.2f}" y="{mt + ph + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{ml}" y1="{Y:.2f}" x2="{ml + pw}" y2="{Y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{Y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    for k, s in enumerate(series):
        color = COLORS[k % len(COLORS)]
        ok = np.isfinite(s.x) & np.isfinite(s.y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(s.x[ok], s.y[ok]))
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.6"{dash}/>')
        ly = mt + 16 + 16 * k
        out.append(f'<line x1="{ml + pw - 130}" y1="{ly - 4}" x2="{ml + pw - 105}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{ml + pw - 100}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def trajectory_overlay(log, traj: ReferenceTrajectory) -> str:
    rx, ry = traj.x, traj.y
    if traj.closed:
        rx, ry = np.append(rx, rx[0]), np.append(ry, ry[0])
    return line_plot(
        [Series(rx, ry, "reference", dashed=True), Series(log.X, log.Y, "vehicle")],
        "Trajectory", "X (m)", "Y (m)", equal_aspect=True,
    )


def yaw_tracking(log) -> str:
    return line_plot(
        [Series(log.t, np.unwrap(log.psi_ref), "reference", dashed=True),
         Series(log.t, np.unwrap(log.psi), "vehicle")],
        "Yaw angle", "t (s)", "psi (rad)",
    )


def tracking_errors(log) -> str:
    return line_plot(
        [Series(log.t, log.e_d, "lateral e_d (m)"),
         Series(log.t, log.e_theta, "orientation e_theta (rad)")],
        "Tracking errors", "t (s)", "error",
    )


def write_run_plots(log, traj: ReferenceTrajectory, base) -> list[str]:
    """Write the three run plots next to ``base``; returns the file paths."""
    paths = []
    for suffix, svg in (("_trajectory.svg", trajectory_overlay(log, traj)),
                        ("_yaw.svg", yaw_tracking(log)),
                        ("_errors.svg", tracking_errors(log))):
        path = f"{base}{suffix}"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
        paths.append(path)
    return paths
