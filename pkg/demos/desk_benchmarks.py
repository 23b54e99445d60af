"""Track three synthetic paths and print the six-column error table.

Run with ``python3 demos/desk_benchmarks.py``. Takes about half a minute.
"""

import time

import numpy as np

from lpvmpc.controller import ControllerConfig
from lpvmpc.metrics import format_table, summarize
from lpvmpc.simulator import SimConfig, run_closed_loop
from lpvmpc.trajectory import ReferenceTrajectory, generate


def path(shape, speed=None, **kw):
    xy, closed = generate(shape, ds=0.5, **kw)
    if speed is None:
        # Slow down where the path bends.
        return ReferenceTrajectory(xy, closed=closed, speed_mode="curvature_limited")
    return ReferenceTrajectory(xy, closed=closed, v_r=np.full(len(xy), speed))


cases = {
    "line": path("line", 10.0, length=200.0),
    "circle": path("circle", 5.0, radius=20.0),
    "figure_eight": path("figure_eight", kappa_max=0.1),
}

rows = {}
for name, traj in cases.items():
    t0 = time.perf_counter()
    log = run_closed_loop(traj, ControllerConfig(), SimConfig(max_steps=4000))
    rows[name] = summarize(log)
    print(f"{name:>13}: {len(log)} cycles, finished={log.finished}, "
          f"{time.perf_counter() - t0:.1f} s")

print()
print(format_table(rows))
