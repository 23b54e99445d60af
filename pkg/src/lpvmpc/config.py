"""Run configuration: plain-text ``section.key = value`` files.

Lines starting with ``#`` are comments. Vector values are comma separated.
Relative file paths are resolved against the configuration file's folder.
Every key, its default and meaning is listed in :data:`SCHEMA`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

from .controller import ControllerConfig
from .mpc_assembly import WeightSet
from .qp_solver import QpSettings
from .simulator import NoiseConfig, SimConfig
from .trajectory import ReferenceTrajectory, SpeedLimits, load_trajectory
from .tuner import TuningTable, TuningTier
from .vehicle_model import VehicleParams, VehicleState


class ConfigError(ValueError):
    pass


def _vec(n: int | None = None):
    def parse(text: str) -> tuple:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} comma-separated numbers")
        return vals
    return parse


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError("expected on/off")


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _closed(text: str):
    t = text.strip().lower()
    return None if t == "auto" else _bool(t)


# key: (parser, default, description). A default of None means "unset".
SCHEMA: dict[str, tuple] = {
    "trajectory.file": (str, None, "trajectory CSV (x,y[,v]); required for simulate"),
    "trajectory.closed": (_closed, None, "auto | on | off"),
    "trajectory.speed_mode": (_choice("fixed", "curvature_limited"), "fixed",
                              "speed profile used when the CSV has no v column"),
    "trajectory.v_fixed": (float, 10.0, "fixed-mode speed (m/s)"),
    "trajectory.v_min": (float, 2.0, "curvature-limited lower speed (m/s)"),
    "trajectory.v_max": (float, 15.0, "curvature-limited upper speed (m/s)"),
    "trajectory.a_lat_max": (float, 2.0, "lateral acceleration limit for the profile (m/s^2)"),
    "trajectory.a_long_max": (float, 1.0, "longitudinal acceleration limit for the profile (m/s^2)"),
    "trajectory.smooth": (int, 1, "moving-average window applied to curvature"),
    "vehicle.m": (float, 1500.0, "mass (kg)"),
    "vehicle.I_z": (float, 2500.0, "yaw inertia (kg m^2)"),
    "vehicle.l_f": (float, 1.2, "CG to front axle (m)"),
    "vehicle.l_r": (float, 1.6, "CG to rear axle (m)"),
    "vehicle.C_alpha_f": (float, 60000.0, "front cornering stiffness (N/rad)"),
    "vehicle.C_alpha_r": (float, 60000.0, "rear cornering stiffness (N/rad)"),
    "vehicle.mu": (float, 0.02, "rolling resistance coefficient"),
    "vehicle.g": (float, 9.81, "gravity (m/s^2)"),
    "controller.N": (int, 25, "horizon steps"),
    "controller.Ts": (float, 0.05, "control period (s)"),
    "controller.weights": (_choice("auto", "explicit"), None,
                           "auto (curvature tiers) or explicit (weights.*); inferred when unset"),
    "controller.soft_state_constraints": (_bool, True, "soft retry on infeasible QPs"),
    "controller.slack_weight": (float, 1e4, "penalty on the shared slack"),
    "controller.discretization": (_choice("euler", "zoh"), "euler", "LPV discretization"),
    "controller.laps": (float, 1.0, "laps driven on closed paths"),
    "controller.anchor_window": (float, 10.0, "arc-length window of the path search (m)"),
    "weights.Q": (_vec(4), None, "stage weights on (vx, psi, X, Y)"),
    "weights.S": (_vec(4), None, "terminal weights on (vx, psi, X, Y)"),
    "weights.R": (_vec(2), None, "input weights on (a, delta)"),
    "tuning.thresholds": (_vec(), (0.5, 2.0), "curvature thresholds (1/m), increasing"),
    "tuning.Q0": (_vec(4), (1.0, 10.0, 50.0, 50.0), "Q of tier 0 (below the first threshold)"),
    "tuning.Q1": (_vec(4), (1.0, 20.0, 120.0, 120.0), "Q of tier 1"),
    "tuning.Q2": (_vec(4), (0.5, 40.0, 250.0, 250.0), "Q of tier 2"),
    "tuning.S_factor": (float, 5.0, "S = S_factor * Q for tiers without tuning.S<k>"),
    "tuning.R": (_vec(2), (5.0, 100.0), "input weights shared by all tiers"),
    "solver.tol": (float, 1e-6, "KKT tolerance"),
    "solver.max_iter": (int, 4000, "iteration cap"),
    "solver.rho": (float, 0.1, "initial ADMM step"),
    "solver.polish": (_bool, True, "active-set polishing"),
    "sim.Ts_sim": (float, 0.01, "plant step (s); must divide controller.Ts"),
    "sim.integrator": (_choice("rk4", "euler"), "rk4", "plant integrator"),
    "sim.seed": (int, 0, "noise seed"),
    "sim.max_steps": (int, 100_000, "control cycles before the run stops"),
    "sim.noise_position": (float, 0.0, "std of X and Y noise (m)"),
    "sim.noise_heading": (float, 0.0, "std of psi noise (rad)"),
    "sim.noise_velocity": (float, 0.0, "std of vx and vy noise (m/s)"),
    "sim.noise_yaw_rate": (float, 0.0, "std of psi_dot noise (rad/s)"),
    "sim.initial": (_vec(6), None, "initial state vx,vy,psi,psi_dot,X,Y; default: on the path"),
    "sim.mismatch_m": (float, 1.0, "plant mass factor"),
    "sim.mismatch_I_z": (float, 1.0, "plant yaw inertia factor"),
    "sim.mismatch_C_alpha": (float, 1.0, "plant cornering stiffness factor (both axles)"),
    "output.dir": (str, "out", "output folder"),
    "output.name": (str, "run", "base name of output files"),
}
# Optional per-tier terminal weights and extra tiers are accepted too.
_PATTERN_KEYS = ("tuning.Q", "tuning.S")


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; later lines override earlier ones."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def _known(key: str) -> bool:
    if key in SCHEMA:
        return True
    return any(key.startswith(p) and key[len(p):].isdigit() for p in _PATTERN_KEYS)


def parse_values(raw: dict[str, str]) -> dict:
    values = {k: v[1] for k, v in SCHEMA.items()}
    for key, text in raw.items():
        if not _known(key):
            raise ConfigError(f"unknown configuration key {key!r}")
        parser = SCHEMA[key][0] if key in SCHEMA else _vec(4)
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"{key}: invalid value {text!r} ({exc})") from None
    return values


@dataclass(frozen=True)
class RunConfig:
    trajectory_file: str | None
    closed: bool | None
    speed_mode: str
    limits: SpeedLimits
    smooth: int
    vehicle: VehicleParams
    controller: ControllerConfig
    sim: SimConfig
    out_dir: str
    name: str

    def load_trajectory(self) -> ReferenceTrajectory:
        if not self.trajectory_file:
            raise ConfigError("trajectory.file is not set")
        if not os.path.isfile(self.trajectory_file):
            raise ConfigError(f"trajectory file not found: {self.trajectory_file}")
        return load_trajectory(self.trajectory_file, closed=self.closed, smooth=self.smooth,
                               speed_mode=self.speed_mode, limits=self.limits)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, sim=replace(self.sim, seed=seed))


def _tuning_table(v: dict) -> TuningTable:
    th = v["tuning.thresholds"]
    tiers, factor = [], v["tuning.S_factor"]

    def tier_q(k):
        q = v.get(f"tuning.Q{k}")
        if q is None:
            raise ConfigError(f"tuning.Q{k} is required for {len(th)} thresholds")
        s = v.get(f"tuning.S{k}") or tuple(factor * x for x in q)
        return q, s

    q0, s0 = tier_q(0)
    for k, kappa in enumerate(th, 1):
        q, s = tier_q(k)
        tiers.append(TuningTier(kappa, q, s))
    names = ("straight", "moderate", "sharp") if len(th) == 2 else ()
    return TuningTable(fallback_Q=q0, fallback_S=s0, tiers=tuple(tiers), R=v["tuning.R"],
                       names=names)


def build(values: dict, base_dir: str = ".") -> RunConfig:
    v = values
    try:
        explicit = [k for k in ("weights.Q", "weights.S", "weights.R") if v[k] is not None]
        mode = v["controller.weights"] or ("explicit" if explicit else "auto")
        if mode == "auto":
            if explicit:
                raise ConfigError("controller.weights = auto conflicts with explicit "
                                  f"{', '.join(explicit)}; choose one")
            weights = "auto"
        else:
            missing = [k for k in ("weights.Q", "weights.S", "weights.R") if v[k] is None]
            if missing:
                raise ConfigError(f"explicit weights need {', '.join(missing)}")
            weights = WeightSet(Q=v["weights.Q"], S=v["weights.S"], R=v["weights.R"])

        solver = QpSettings(tol=v["solver.tol"], max_iter=v["solver.max_iter"],
                            rho=v["solver.rho"], polish=v["solver.polish"])
        ctrl = ControllerConfig(
            N=v["controller.N"], Ts=v["controller.Ts"], weights=weights,
            tuning=_tuning_table(v), solver=solver,
            soft_state_constraints=v["controller.soft_state_constraints"],
            slack_weight=v["controller.slack_weight"],
            discretization=v["controller.discretization"], laps=v["controller.laps"],
            anchor_window=v["controller.anchor_window"],
        )
        vehicle = VehicleParams(**{k.split(".", 1)[1]: v[k] for k in SCHEMA
                                   if k.startswith("vehicle.")})
        mismatch = {}
        for key, names in (("sim.mismatch_m", ("m",)), ("sim.mismatch_I_z", ("I_z",)),
                           ("sim.mismatch_C_alpha", ("C_alpha_f", "C_alpha_r"))):
            if v[key] != 1.0:
                mismatch.update({n: v[key] for n in names})
        init = v["sim.initial"]
        sim = SimConfig(
            Ts_sim=v["sim.Ts_sim"], integrator=v["sim.integrator"],
            noise=NoiseConfig(position=v["sim.noise_position"], heading=v["sim.noise_heading"],
                              velocity=v["sim.noise_velocity"], yaw_rate=v["sim.noise_yaw_rate"]),
            seed=v["sim.seed"], initial_state=VehicleState(*init) if init else None,
            max_steps=v["sim.max_steps"], plant_mismatch=mismatch,
        )
        sim.substeps(ctrl.Ts)
        limits = SpeedLimits(v_fixed=v["trajectory.v_fixed"], v_min=v["trajectory.v_min"],
                             v_max=v["trajectory.v_max"], a_lat_max=v["trajectory.a_lat_max"],
                             a_long_max=v["trajectory.a_long_max"])
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None

    traj_file = v["trajectory.file"]
    if traj_file and not os.path.isabs(traj_file):
        traj_file = os.path.join(base_dir, traj_file)
    return RunConfig(
        trajectory_file=traj_file, closed=v["trajectory.closed"],
        speed_mode=v["trajectory.speed_mode"], limits=limits, smooth=v["trajectory.smooth"],
        vehicle=vehicle, controller=ctrl, sim=sim,
        out_dir=v["output.dir"], name=v["output.name"],
    )


def load_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read ``path`` (optional), apply ``overrides`` and validate."""
    raw, base = {}, "."
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = parse_text(fh.read(), path)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        base = os.path.dirname(os.path.abspath(path))
    raw.update(overrides or {})
    return build(parse_values(raw), base)


def schema_text() -> str:
    """Documented defaults in configuration-file syntax."""
    lines = []
    for key, (_, default, doc) in SCHEMA.items():
        if isinstance(default, tuple):
            shown = ", ".join(f"{x:g}" for x in default)
        elif default is None:
            shown = ""
        elif isinstance(default, bool):
            shown = "on" if default else "off"
        else:
            shown = str(default)
        lines.append(f"# {doc}")
        lines.append(f"{key} = {shown}" if shown else f"# {key} =")
    return "\n".join(lines) + "\n"
