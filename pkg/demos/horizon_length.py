"""Why a long horizon can track worse than a short one.

The LPV model is evaluated once per cycle at the measured state, heading
included. Over the horizon the predicted heading still turns, but the
position rows keep rotating velocity by the frozen heading, so the predicted
path drifts away from what the car would do. At 10 m/s and N = 25 the
horizon spans 12.5 m and the drift reaches metres; the optimiser then keeps
steering long after it should ease off.

Run with ``python3 demos/horizon_length.py``. Takes about a minute.
"""

import numpy as np

from lpvmpc.controller import ControllerConfig, MpcController
from lpvmpc.metrics import summarize
from lpvmpc.simulator import SimConfig, integrate_plant, run_closed_loop
from lpvmpc.trajectory import ReferenceTrajectory, generate
from lpvmpc.vehicle_model import ControlInput, VehicleState

# A 3.5 m lane change over 30 m, then 50 m straight so the run can settle.
xy, _ = generate("s_curve", length=30.0, ds=0.5)
tail = np.column_stack([np.arange(30.5, 80.01, 0.5), np.full(100, 3.5)])
pts = np.vstack([xy, tail])


def lane_change(speed):
    return ReferenceTrajectory(pts, closed=False, v_r=np.full(len(pts), speed))


def prediction_drift(N, cycles=14):
    """Drive `cycles` steps into the curve, then replay the plan on the plant."""
    ctrl = MpcController(lane_change(10.0), ControllerConfig(N=N), clock=lambda: 0.0)
    state, u = VehicleState(10.0), ControlInput()
    for k in range(cycles):
        cmd = ctrl.step(state, u)
        u = cmd.input
        if k < cycles - 1:
            for _ in range(5):
                state = integrate_plant(state, u, 0.01)
    plan = cmd.diagnostics.z.reshape(N, 2)
    predicted = cmd.diagnostics.predicted
    drift = []
    for j in range(N):
        for _ in range(5):
            state = integrate_plant(state, ControlInput(*plan[j]), 0.01)
        drift.append(np.hypot(state.X - predicted[j, 4], state.Y - predicted[j, 5]))
    return np.array(drift), plan[:, 1]


for N in (10, 25):
    drift, steer = prediction_drift(N)
    print(f"N={N:2d}: predicted-vs-plant position gap at the last step {drift[-1]:.2f} m, "
          f"planned steering {steer[0]:.3f} -> peak {np.abs(steer).max():.3f} rad")

print()
for speed, N in ((10.0, 10), (10.0, 15), (10.0, 25), (5.0, 25)):
    log = run_closed_loop(lane_change(speed), ControllerConfig(N=N), SimConfig(max_steps=400))
    s = summarize(log)
    print(f"{speed:4.0f} m/s, N={N:2d}: mean CTE {s.mean_cte:6.3f} m, max {s.max_cte:6.3f} m, "
          f"finished={log.finished}")

# At half the speed the same horizon covers half the distance and tracks well.
