"""Closed-loop plant simulation and run logs."""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

from .controller import (
    ControlCommand, ControllerConfig, Measurement, MpcController, PipelineSummary, run_pipeline,
)
from .metrics import ErrorTracker
from .trajectory import ReferenceTrajectory
from .vehicle_model import (
    ControlInput, VehicleParams, VehicleState, nonlinear_derivative, wrap_angle,
)

PLANT_VX_MIN = 0.1
# Largest |h * lambda| a plant step may take; RK4 is stable to about 2.78 and
# forward Euler to 2 on the negative real axis.
STEP_STABILITY = {"rk4": 2.5, "euler": 1.8}

RUNLOG_COLUMNS = (
    "t", "vx", "vy", "psi", "psi_dot", "X", "Y", "a_cmd", "delta_cmd",
    "vx_ref", "psi_ref", "X_ref", "Y_ref", "e_d", "e_theta", "cte", "J",
    "solver_status", "cycle_ms",
)


class SimulationAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement noise standard deviations."""

    position: float = 0.0
    heading: float = 0.0
    velocity: float = 0.0
    # Heading noise also perturbs the yaw rate with this std (rad/s).
    yaw_rate: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"noise std {f.name} must be finite and >= 0, got {v}")

    @property
    def stds(self) -> np.ndarray:
        """Per-state std vector in state order."""
        return np.array([self.velocity, self.velocity, self.heading, self.yaw_rate,
                         self.position, self.position])


@dataclass(frozen=True)
class SimConfig:
    Ts_sim: float = 0.01
    integrator: str = "rk4"
    noise: NoiseConfig = NoiseConfig()
    seed: int = 0
    # None starts on the first path sample at its reference heading and speed.
    initial_state: VehicleState | None = None
    max_steps: int = 100_000
    # Multiplicative perturbation of the plant's parameters, e.g. {"m": 1.1}.
    plant_mismatch: tuple = ()

    def __post_init__(self):
        if not self.Ts_sim > 0:
            raise ValueError(f"Ts_sim must be positive, got {self.Ts_sim}")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if isinstance(self.plant_mismatch, dict):
            object.__setattr__(self, "plant_mismatch", tuple(sorted(self.plant_mismatch.items())))

    def substeps(self, Ts: float) -> int:
        """Plant steps per control period; Ts_sim must divide Ts exactly."""
        k = round(Ts / self.Ts_sim)
        if k < 1 or abs(k * self.Ts_sim - Ts) > 1e-9 * Ts:
            raise ValueError(f"Ts_sim = {self.Ts_sim} does not divide the control period {Ts}")
        return k


def lateral_stiffness(vx: float, params: VehicleParams) -> float:
    """Row-sum bound on the lateral Jacobian's spectral radius at speed ``vx`` (1/s)."""
    Cf, Cr, lf, lr = params.C_alpha_f, params.C_alpha_r, params.l_f, params.l_r
    cross = abs(lf * Cf - lr * Cr)
    vy_row = (Cf + Cr + cross) / (params.m * vx) + vx
    r_row = (lf * lf * Cf + lr * lr * Cr + cross) / (params.I_z * vx)
    return max(vy_row, r_row)


def integrate_plant(state: VehicleState, u: ControlInput, Ts_sim: float,
                    params: VehicleParams = VehicleParams(), method: str = "rk4") -> VehicleState:
    """One plant step of the nonlinear model with a zero-order-held input.

    The lateral modes stiffen as 1/vx, so near standstill the step is split
    into equal sub-steps that keep the integrator inside its stability region.
    At ordinary speeds exactly one step is taken.
    """
    if method not in STEP_STABILITY:
        raise ValueError(f"unknown integrator {method!r}")

    def f(x):
        if not np.all(np.isfinite(x)):
            raise SimulationAborted(f"non-finite plant state {x}")
        st = VehicleState.from_array(x)
        st = st.replace(vx=max(st.vx, PLANT_VX_MIN))
        return nonlinear_derivative(st, u, params)

    x = state.as_array()
    x[0] = max(x[0], PLANT_VX_MIN)
    if not np.all(np.isfinite(u.as_array())):
        raise SimulationAborted(f"non-finite command {u}")
    if not np.all(np.isfinite(x)):
        raise SimulationAborted(f"non-finite plant state {x}")
    n_sub = max(1, math.ceil(Ts_sim * lateral_stiffness(x[0], params) / STEP_STABILITY[method]))
    h = Ts_sim / n_sub
    for _ in range(n_sub):
        if method == "euler":
            x = x + h * f(x)
        else:
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise SimulationAborted(f"non-finite plant state {x}")
        x[0] = max(x[0], PLANT_VX_MIN)
    x[2] = wrap_angle(x[2])
    return VehicleState.from_array(x)

def measure(true_state: VehicleState, noise: NoiseConfig, rng: np.random.Generator) -> VehicleState:
    """Noisy copy of the state. Always draws six normals so streams stay aligned."""
    draw = rng.standard_normal(6)
    x = true_state.as_array() + noise.stds * draw
    x[2] = wrap_angle(x[2])
    return VehicleState.from_array(x)


@dataclass
class RunLog:
    """Per-cycle record of a closed-loop run, stored column-wise."""

    columns: dict = field(default_factory=lambda: {c: [] for c in RUNLOG_COLUMNS})
    measured: list = field(default_factory=list)
    finished: bool = False
    aborted: bool = False
    message: str = ""
    pipeline: PipelineSummary | None = None

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getattr__(self, name):
        cols = self.__dict__.get("columns")
        if cols is not None and name in cols:
            if name == "solver_status":
                return list(cols[name])
            return np.asarray(cols[name], dtype=float)
        raise AttributeError(name)

    def append(self, row: dict) -> None:
        for c in RUNLOG_COLUMNS:
            self.columns[c].append(row[c])

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUNLOG_COLUMNS)
            for i in range(len(self)):
                w.writerow([
                    self.columns[c][i] if c == "solver_status" else repr(float(self.columns[c][i]))
                    for c in RUNLOG_COLUMNS
                ])

    @classmethod
    def read_csv(cls, path) -> "RunLog":
        log = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ValueError(f"{path}: empty run log")
            if tuple(h.strip() for h in header) != RUNLOG_COLUMNS:
                raise ValueError(f"{path}: column mismatch, expected {','.join(RUNLOG_COLUMNS)}")
            for lineno, rec in enumerate(reader, 2):
                if not rec:
                    continue
                if len(rec) != len(RUNLOG_COLUMNS):
                    raise ValueError(f"{path}:{lineno}: expected {len(RUNLOG_COLUMNS)} fields")
                try:
                    row = {c: (v if c == "solver_status" else float(v))
                           for c, v in zip(RUNLOG_COLUMNS, rec)}
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric field") from None
                log.append(row)
        return log


def default_initial_state(traj: ReferenceTrajectory) -> VehicleState:
    return VehicleState(vx=max(float(traj.v_r[0]), 1.0), psi=float(traj.psi_r[0]),
                        X=float(traj.x[0]), Y=float(traj.y[0]))


def run_closed_loop(traj: ReferenceTrajectory, ctrl_cfg: ControllerConfig = ControllerConfig(),
                    sim_cfg: SimConfig = SimConfig(), params: VehicleParams = VehicleParams(),
                    mode: str = "lockstep", controller: MpcController | None = None) -> RunLog:
    """Simulate the plant under the controller until the path is done or ``max_steps``.

    One log row per control cycle holds the true state the command was
    computed from, the command, the matched reference and the errors. In
    lockstep mode time is the simulation clock and ``cycle_ms`` is 0, so a
    fixed seed reproduces the log byte for byte.
    """
    k_sub = sim_cfg.substeps(ctrl_cfg.Ts)
    plant_params = params.scaled(**dict(sim_cfg.plant_mismatch)) if sim_cfg.plant_mismatch else params
    rng = np.random.default_rng(sim_cfg.seed)
    if controller is None:
        if mode == "lockstep":
            controller = MpcController(traj, ctrl_cfg, params, clock=lambda: 0.0)
        else:
            controller = MpcController(traj, ctrl_cfg, params)
    tracker = ErrorTracker(traj, ctrl_cfg.anchor_window)
    log = RunLog()
    state = sim_cfg.initial_state or default_initial_state(traj)
    # Latest command and the measurement time it answers. In concurrent mode
    # the plant waits up to 2 Ts of wall time for the answer to its own
    # measurement and otherwise keeps applying the previous command.
    mailbox = {"t": None, "cmd": ControlInput()}
    answered = threading.Condition()
    truth: dict = {}

    def source() -> Iterator[Measurement]:
        nonlocal state
        for k in range(sim_cfg.max_steps):
            t = k * ctrl_cfg.Ts
            truth[t] = state
            yield Measurement(t, measure(state, sim_cfg.noise, rng))
            with answered:
                answered.wait_for(lambda: mailbox["t"] == t, timeout=2.0 * ctrl_cfg.Ts)
                u = mailbox["cmd"]
            try:
                for _ in range(k_sub):
                    state = integrate_plant(state, u, sim_cfg.Ts_sim, plant_params,
                                            sim_cfg.integrator)
            except SimulationAborted as exc:
                log.aborted = True
                log.message = str(exc)
                return

    def sink(msg: Measurement, cmd: ControlCommand) -> None:
        with answered:
            mailbox["t"], mailbox["cmd"] = msg.t, cmd.input
            answered.notify_all()
        true_state = truth.pop(msg.t, msg.state)
        err = tracker.update(true_state.X, true_state.Y, true_state.psi)
        d = cmd.diagnostics
        log.measured.append(msg.state)
        log.append({
            "t": msg.t, "vx": true_state.vx, "vy": true_state.vy, "psi": true_state.psi,
            "psi_dot": true_state.psi_dot, "X": true_state.X, "Y": true_state.Y,
            "a_cmd": cmd.a, "delta_cmd": cmd.delta,
            "vx_ref": err.ref[0], "psi_ref": err.ref[1], "X_ref": err.ref[2], "Y_ref": err.ref[3],
            "e_d": err.e_d, "e_theta": err.e_theta, "cte": err.cte,
            "J": d.J, "solver_status": d.solver_status or cmd.flag,
            "cycle_ms": 0.0 if mode == "lockstep" else 1e3 * d.cycle_time,
        })

    summary = run_pipeline(source(), controller, sink, mode=mode)
    log.pipeline = summary
    log.finished = summary.finished
    return log


__all__ = [
    "NoiseConfig", "SimConfig", "RunLog", "RUNLOG_COLUMNS", "SimulationAborted",
    "integrate_plant", "lateral_stiffness", "measure", "run_closed_loop", "default_initial_state",
]
