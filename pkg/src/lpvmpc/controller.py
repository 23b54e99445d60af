"""Receding-horizon tracking controller and its two-stage pipeline."""

from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .mpc_assembly import (
    DA_MAX, DDELTA_MAX, DELTA_MAX, VX_MIN, WeightSet, acceleration_envelope, build_constraints,
    build_cost, build_prediction,
)
from .qp_solver import INFEASIBLE, MAX_ITERATIONS, QpError, QpSettings, QpSolver
from .trajectory import ReferenceTrajectory, reference_window
from .tuner import DEFAULT_TABLE, TuningTable, select_weights
from .vehicle_model import (
    C_OUT, LPV_VX_MIN, NU, NX, ControlInput, VehicleParams, VehicleState, discretize,
    lpv_matrices, wrap_angle,
)

# Command flags.
OK = "ok"
DEGRADED = "degraded"
FINISHED = "finished"
HELD = "held"
# Solver status recorded when the QP data itself is refused.
REJECTED = "rejected"

# max_iterations results with residuals below this are still applied.
USABLE_RESIDUAL = 1e-4
# Open paths end once the vehicle is this close to the final sample.
FINISH_RADIUS = 2.0
# An Euler map with a larger spectral radius is replaced by ZOH for the cycle.
EULER_RADIUS_MAX = 1.0 + 1e-6


@dataclass(frozen=True)
class ControllerConfig:
    N: int = 25
    Ts: float = 0.05
    # A WeightSet, or "auto" to pick from `tuning` by the path's peak curvature.
    weights: WeightSet | str = "auto"
    tuning: TuningTable = DEFAULT_TABLE
    solver: QpSettings = QpSettings()
    soft_state_constraints: bool = True
    slack_weight: float = 1e4
    discretization: str = "euler"
    # Closed paths finish after this many laps.
    laps: float = 1.0
    anchor_window: float = 10.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"horizon N must be >= 2, got {self.N}")
        if not self.Ts > 0:
            raise ValueError(f"Ts must be positive, got {self.Ts}")
        if not (isinstance(self.weights, WeightSet) or self.weights == "auto"):
            raise ValueError("weights must be a WeightSet or 'auto'")
        if self.discretization not in ("euler", "zoh"):
            raise ValueError(f"unknown discretization {self.discretization!r}")
        if not self.laps > 0:
            raise ValueError("laps must be positive")


@dataclass
class Diagnostics:
    J: float = math.nan
    solver_status: str = ""
    iterations: int = 0
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    cycle_time: float = 0.0
    soft: bool = False
    anchor: int = -1
    discretization: str = ""
    # (N, 6) predicted states x_1..x_N and the (N, 4) references they track.
    predicted: np.ndarray | None = None
    refs: np.ndarray | None = None
    z: np.ndarray | None = None
    warm_start: np.ndarray | None = None


@dataclass
class ControlCommand:
    a: float
    delta: float
    flag: str = OK
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def input(self) -> ControlInput:
        return ControlInput(self.a, self.delta)

    @property
    def degraded(self) -> bool:
        return self.flag == DEGRADED

    @property
    def finished(self) -> bool:
        return self.flag == FINISHED


def _usable(sol) -> bool:
    return sol.solved or (
        sol.status == MAX_ITERATIONS
        and max(sol.primal_residual, sol.dual_residual) <= USABLE_RESIDUAL
    )


def _shift(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z[NU:], z[-NU:]])


def _clamp_command(a: float, delta: float, prev: ControlInput, a_lo: float, a_hi: float):
    """Project onto the absolute and per-step rate limits (removes solver-tolerance slop)."""
    d_lo = max(-DELTA_MAX, prev.delta - DDELTA_MAX)
    d_hi = min(DELTA_MAX, prev.delta + DDELTA_MAX)
    delta = min(max(delta, d_lo), d_hi) if d_lo <= d_hi else min(max(delta, -DELTA_MAX), DELTA_MAX)
    lo, hi = max(a_lo, prev.a - DA_MAX), min(a_hi, prev.a + DA_MAX)
    a = min(max(a, lo), hi) if lo <= hi else min(max(a, a_lo), a_hi)
    return a, delta


class MpcController:
    """LPV-MPC path tracker.

    Each call to :meth:`step` freezes the LPV model at the measured state and
    previous input, assembles the condensed QP, solves it warm-started from
    the previous solution shifted by one step, and returns the first input.
    The instance owns the warm start, the path anchor and the lap counter, so
    one instance serves one run.
    """

    def __init__(self, traj: ReferenceTrajectory, cfg: ControllerConfig = ControllerConfig(),
                 params: VehicleParams = VehicleParams(),
                 clock: Callable[[], float] = time.perf_counter):
        self.traj = traj
        self.cfg = cfg
        self.params = params
        self.clock = clock
        if cfg.weights == "auto":
            self.weights = select_weights(traj.kappa_max, cfg.tuning)
        else:
            self.weights = cfg.weights
        self.solver = QpSolver(cfg.solver)
        self.reset()

    def reset(self) -> None:
        self._warm: np.ndarray | None = None
        self._anchor: int | None = None
        self._progress = 0.0

    @property
    def progress(self) -> float:
        """Arc length covered by the anchor since the last reset (m)."""
        return self._progress

    def _update_anchor(self, state: VehicleState) -> int:
        traj = self.traj
        idx = traj.nearest_index(state.X, state.Y, hint=self._anchor, window=self.cfg.anchor_window)
        if self._anchor is not None:
            ds = traj.s[idx] - traj.s[self._anchor]
            if traj.closed:
                ds = (ds + 0.5 * traj.length) % traj.length - 0.5 * traj.length
            self._progress += ds
        self._anchor = idx
        return idx

    def _is_finished(self, state: VehicleState, anchor: int) -> bool:
        traj = self.traj
        if traj.closed:
            return self._progress >= self.cfg.laps * traj.length
        if anchor != len(traj) - 1:
            return False
        return math.hypot(state.X - traj.x[-1], state.Y - traj.y[-1]) < FINISH_RADIUS

    def step(self, measured: VehicleState, prev: ControlInput) -> ControlCommand:
        t0 = self.clock()
        cfg, params = self.cfg, self.params
        state = measured.replace(vx=max(measured.vx, VX_MIN), psi=wrap_angle(measured.psi))
        a_lo, a_hi = acceleration_envelope(state, prev, params)

        anchor = self._update_anchor(state)
        if self._is_finished(state, anchor):
            diag = Diagnostics(anchor=anchor, cycle_time=self.clock() - t0, solver_status="")
            return ControlCommand(a_lo, 0.0, FINISHED, diag)

        s0 = self.traj.project(state.X, state.Y, anchor)[0]
        refs = reference_window(self.traj, state, cfg.N, cfg.Ts, anchor=anchor, s0=s0)
        # Heading references continue from the measured heading without 2*pi jumps.
        psi_ref = np.unwrap(refs[:, 1])
        psi_ref += state.psi + wrap_angle(psi_ref[0] - state.psi) - psi_ref[0]
        refs[:, 1] = psi_ref
        ref0 = self.traj.sample(s0)[0]
        ref0[1] = state.psi + wrap_angle(ref0[1] - state.psi)

        lpv = lpv_matrices(state, prev, params)
        method = cfg.discretization
        A_d, B_d = discretize(lpv, cfg.Ts, method)
        # At low speed the Euler map of the stiff lateral modes is unstable and
        # the stacked powers of A_d overflow; ZOH keeps them bounded.
        if method == "euler" and np.abs(np.linalg.eigvals(A_d)).max() > EULER_RADIUS_MAX:
            method = "zoh"
            A_d, B_d = discretize(lpv, cfg.Ts, method)
        pred = build_prediction(A_d, B_d, cfg.N)
        H, g, J_const = build_cost(pred, self.weights, C_OUT, state, refs, ref0=ref0)
        Aineq, lb, ub, rows = build_constraints(state, prev, pred, params, cfg.N)

        warm = self._warm
        if warm is None:
            warm = np.tile(prev.as_array(), cfg.N)
        try:
            sol = self.solver.solve(H, g, Aineq, lb, ub, warm_start=warm)
        except QpError:
            # Overflowing predictions or crossed scheduled bounds: no usable QP.
            diag = Diagnostics(solver_status=REJECTED, anchor=anchor, refs=refs,
                               warm_start=warm, discretization=method)
            return self._fallback(prev, a_lo, a_hi, diag, t0)
        soft = False
        usable = _usable(sol)
        flag = OK if sol.solved else DEGRADED
        if not usable and cfg.soft_state_constraints:
            try:
                sol = self._solve_soft(H, g, Aineq, lb, ub, rows, warm)
            except QpError:
                pass
            soft = True
            usable = _usable(sol)
            flag = DEGRADED

        diag = Diagnostics(
            solver_status=sol.status, iterations=sol.iterations,
            primal_residual=sol.primal_residual, dual_residual=sol.dual_residual,
            soft=soft, anchor=anchor, refs=refs, warm_start=warm, discretization=method,
        )
        if usable:
            z = sol.z[: NU * cfg.N]
            a, delta = _clamp_command(float(z[0]), float(z[1]), prev, a_lo, a_hi)
            diag.z = z
            diag.J = float(0.5 * z @ H @ z + g @ z + J_const)
            diag.predicted = (pred.Phi @ state.as_array() + pred.Gamma @ z).reshape(cfg.N, NX)
            self._warm = _shift(z)
        else:
            return self._fallback(prev, a_lo, a_hi, diag, t0)
        diag.cycle_time = self.clock() - t0
        return ControlCommand(a, delta, flag, diag)

    def _fallback(self, prev, a_lo, a_hi, diag, t0) -> ControlCommand:
        """Hold the steering and brake as hard as the rate limit allows."""
        a, delta = _clamp_command(-np.inf, prev.delta, prev, a_lo, a_hi)
        self._warm = None
        diag.cycle_time = self.clock() - t0
        return ControlCommand(a, delta, DEGRADED, diag)

    def _solve_soft(self, H, g, Aineq, lb, ub, rows, warm):
        """Re-solve with the predicted-velocity rows relaxed by one shared slack >= 0."""
        n = H.shape[0]
        w = self.cfg.slack_weight
        Hs = np.zeros((n + 1, n + 1))
        Hs[:n, :n] = H
        Hs[n, n] = w
        gs = np.append(g, w)
        soft_idx = np.r_[rows["vx"], rows["vy"]]
        hard = np.ones(len(lb), dtype=bool)
        hard[soft_idx] = False
        A_hard = np.hstack([Aineq[hard], np.zeros((hard.sum(), 1))])
        S = Aineq[soft_idx]
        A_lo = np.hstack([S, np.ones((len(soft_idx), 1))])
        A_hi = np.hstack([S, -np.ones((len(soft_idx), 1))])
        e = np.zeros((1, n + 1))
        e[0, n] = 1.0
        A = np.vstack([A_hard, A_lo, A_hi, e])
        inf = np.full(len(soft_idx), np.inf)
        lo = np.concatenate([lb[hard], lb[soft_idx], -inf, [0.0]])
        hi = np.concatenate([ub[hard], inf, ub[soft_idx], [np.inf]])
        return self.solver.solve(Hs, gs, A, lo, hi, warm_start=np.append(warm, 0.0))


# -- pipeline -------------------------------------------------------------------

@dataclass(frozen=True)
class Measurement:
    t: float
    state: VehicleState


@dataclass
class CycleRecord:
    tick: int
    state_stamp: float
    compute_stamp: float
    command: ControlCommand
    stale: bool = False


@dataclass
class PipelineSummary:
    cycles: int = 0
    stale: int = 0
    degraded: int = 0
    finished: bool = False
    records: list = field(default_factory=list)


def refine(msg: Measurement) -> Measurement:
    """State intake: reject non-finite data, wrap heading, keep vx in the LPV domain."""
    x = msg.state.as_array()
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite state at t={msg.t}")
    st = msg.state.replace(psi=wrap_angle(msg.state.psi), vx=max(msg.state.vx, VX_MIN))
    return Measurement(msg.t, st)


_STOP = object()


def run_pipeline(source: Iterable[Measurement], controller: MpcController,
                 sink: Callable[[Measurement, ControlCommand], None],
                 mode: str = "lockstep", clock: Callable[[], float] | None = None,
                 prev: ControlInput = ControlInput(), queue_size: int = 1) -> PipelineSummary:
    """Drive ``controller`` from a stream of measurements.

    ``lockstep`` runs intake and optimisation one after the other for every
    message and time-stamps with the message time, so runs are reproducible.
    ``concurrent`` runs intake in a worker thread feeding a bounded queue
    that keeps only the newest messages; the optimisation stage (the calling
    thread) stamps with ``clock`` and holds the previous command whenever a
    state is older than ``2 * Ts``. The loop ends when the source is
    exhausted or the controller reports the path finished.
    """
    if mode not in ("lockstep", "concurrent"):
        raise ValueError(f"unknown pipeline mode {mode!r}")
    Ts = controller.cfg.Ts
    summary = PipelineSummary()
    last = ControlCommand(prev.a, prev.delta, HELD)

    def handle(msg: Measurement, stamp: float, now_fn) -> bool:
        nonlocal last
        now = now_fn()
        stale = now - stamp > 2.0 * Ts
        if stale:
            cmd = ControlCommand(last.a, last.delta, HELD)
            summary.stale += 1
        else:
            cmd = controller.step(msg.state, last.input)
            if cmd.finished:
                summary.finished = True
                return False
            last = cmd
        summary.degraded += cmd.degraded
        summary.records.append(CycleRecord(summary.cycles, stamp, now, cmd, stale))
        summary.cycles += 1
        sink(msg, cmd)
        return True

    if mode == "lockstep":
        for msg in source:
            msg = refine(msg)
            if not handle(msg, msg.t, lambda m=msg: m.t):
                break
        return summary

    clock = clock or time.monotonic
    q: queue.Queue = queue.Queue(maxsize=queue_size)
    stop = threading.Event()
    errors: list = []

    def intake():
        try:
            for msg in source:
                if stop.is_set():
                    break
                item = (refine(msg), clock())
                while True:
                    try:
                        q.put_nowait(item)
                        break
                    except queue.Full:
                        try:
                            q.get_nowait()
                        except queue.Empty:
                            pass
        except Exception as exc:  # surfaced in the calling thread
            errors.append(exc)
        finally:
            q.put(_STOP)

    worker = threading.Thread(target=intake, name="state-intake", daemon=True)
    worker.start()
    try:
        while True:
            item = q.get()
            if item is _STOP:
                break
            msg, stamp = item
            if not handle(msg, stamp, clock):
                break
    finally:
        stop.set()
        # Unblock the producer if it is waiting on a full queue.
        while worker.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                pass
            worker.join(timeout=0.01)
    if errors:
        raise errors[0]
    return summary


__all__ = [
    "ControllerConfig", "ControlCommand", "Diagnostics", "MpcController", "Measurement",
    "PipelineSummary", "CycleRecord", "run_pipeline", "refine",
    "OK", "DEGRADED", "FINISHED", "HELD", "REJECTED", "INFEASIBLE",
]
