"""Dynamic bicycle model, its LPV embedding and discretization.

State ordering is ``[vx, vy, psi, psi_dot, X, Y]`` (body-frame velocities,
heading, yaw rate, global position) and input ordering is ``[a, delta]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import scipy.linalg

NX = 6
NU = 2
NY = 4

# LPV construction divides by vx and is refused below this speed.
LPV_VX_MIN = 0.5

# Output map: (vx, psi, X, Y).
C_OUT = np.array(
    [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ]
)
C_OUT.setflags(write=False)


class DomainError(ValueError):
    """Raised when a state lies outside the domain of the model (vx too small)."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    a = np.asarray(angle, dtype=float)
    wrapped = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    # Values already in range come back bit-for-bit.
    wrapped = np.where((a > -np.pi) & (a <= np.pi), a, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the single-track vehicle.

    Defaults describe a generic mid-size car; they are not measured values.
    """

    m: float = 1500.0
    I_z: float = 2500.0
    l_f: float = 1.2
    l_r: float = 1.6
    C_alpha_f: float = 60000.0
    C_alpha_r: float = 60000.0
    mu: float = 0.02
    g: float = 9.81

    def __post_init__(self):
        for name in ("m", "I_z", "l_f", "l_r", "C_alpha_f", "C_alpha_r", "g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"VehicleParams.{name} must be positive, got {value}")
        if not (0.0 <= self.mu <= 1.5):
            raise ValueError(f"VehicleParams.mu must lie in [0, 1.5], got {self.mu}")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    def scaled(self, **factors: float) -> "VehicleParams":
        """Copy with selected fields multiplied by the given factors."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        for name, factor in factors.items():
            values[name] = values[name] * factor
        return VehicleParams(**values)


@dataclass(frozen=True)
class VehicleState:
    vx: float
    vy: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0
    X: float = 0.0
    Y: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.psi, self.psi_dot, self.X, self.Y])

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float).ravel()
        if x.size != NX:
            raise ValueError(f"state vector must have {NX} entries, got {x.size}")
        return cls(*(float(v) for v in x))

    def replace(self, **changes) -> "VehicleState":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return VehicleState(**values)


@dataclass(frozen=True)
class ControlInput:
    a: float = 0.0
    delta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.delta])


@dataclass(frozen=True)
class LpvMatrices:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray = C_OUT


def _check_vx(vx: float, floor: float = 0.0, inclusive: bool = False) -> None:
    ok = vx >= floor if inclusive else vx > floor
    if not ok:
        bound = "be at least" if inclusive else "exceed"
        raise DomainError(f"longitudinal velocity must {bound} {floor} m/s, got {vx}")


def lateral_tire_forces(state: VehicleState, delta: float, params: VehicleParams):
    """Linear front and rear lateral tire forces ``(F_yf, F_yr)`` in newtons."""
    _check_vx(state.vx)
    vx, vy, r = state.vx, state.vy, state.psi_dot
    F_yf = params.C_alpha_f * (delta - vy / vx - r * params.l_f / vx)
    F_yr = params.C_alpha_r * (-vy / vx + r * params.l_r / vx)
    return F_yf, F_yr


def nonlinear_derivative(
    state: VehicleState, u: ControlInput, params: VehicleParams
) -> np.ndarray:
    """Time derivative of the full state under the nonlinear single-track model."""
    F_yf, F_yr = lateral_tire_forces(state, u.delta, params)
    m, Iz = params.m, params.I_z
    sd, cd = math.sin(u.delta), math.cos(u.delta)
    sp, cp = math.sin(state.psi), math.cos(state.psi)
    vx, vy, r = state.vx, state.vy, state.psi_dot
    return np.array(
        [
            u.a - params.mu * params.g - F_yf * sd / m + r * vy,
            F_yr / m + F_yf * cd / m - r * vx,
            r,
            F_yf * cd * params.l_f / Iz - F_yr * params.l_r / Iz,
            vx * cp - vy * sp,
            vx * sp + vy * cp,
        ]
    )


def lpv_matrices(
    state: VehicleState, u: ControlInput, params: VehicleParams
) -> LpvMatrices:
    """Scheduling-dependent ``A``, ``B`` with ``A @ x + B @ u == f(x, u)``.

    The friction term ``-mu*g`` is carried as ``-mu*g/vx`` times ``vx``, so
    construction is refused below ``LPV_VX_MIN``.
    """
    _check_vx(state.vx, LPV_VX_MIN, inclusive=True)
    m, Iz = params.m, params.I_z
    lf, lr = params.l_f, params.l_r
    Cf, Cr = params.C_alpha_f, params.C_alpha_r
    vx, vy = state.vx, state.vy
    sd, cd = math.sin(u.delta), math.cos(u.delta)
    sp, cp = math.sin(state.psi), math.cos(state.psi)

    A = np.zeros((NX, NX))
    A[0, 0] = -params.mu * params.g / vx
    A[0, 1] = Cf * sd / (m * vx)
    A[0, 3] = Cf * lf * sd / (m * vx) + vy
    A[1, 1] = -(Cr + Cf * cd) / (m * vx)
    A[1, 3] = -(Cf * lf * cd - Cr * lr) / (m * vx) - vx
    A[2, 3] = 1.0
    A[3, 1] = -(Cf * lf * cd - Cr * lr) / (Iz * vx)
    A[3, 3] = -(Cf * lf**2 * cd + Cr * lr**2) / (Iz * vx)
    A[4, 0], A[4, 1] = cp, -sp
    A[5, 0], A[5, 1] = sp, cp

    B = np.zeros((NX, NU))
    B[0, 0] = 1.0
    B[0, 1] = -Cf * sd / m
    B[1, 1] = Cf * cd / m
    B[3, 1] = Cf * lf * cd / Iz
    return LpvMatrices(A=A, B=B, C=C_OUT)


def discretize(lpv: LpvMatrices, Ts: float, method: str = "euler"):
    """Discrete-time ``(A_d, B_d)`` for sampling period ``Ts``.

    ``method="euler"`` gives ``I + Ts*A, Ts*B``. ``method="zoh"`` holds the
    frozen matrices over the period and uses the matrix exponential; it
    stays stable where Euler does not (large ``Ts*|eig(A)|`` at low speed).
    """
    if not Ts > 0:
        raise ValueError(f"sampling period must be positive, got {Ts}")
    A, B = np.asarray(lpv.A, dtype=float), np.asarray(lpv.B, dtype=float)
    n, nu = B.shape
    if method == "euler":
        return np.eye(n) + Ts * A, Ts * B
    if method == "zoh":
        M = np.zeros((n + nu, n + nu))
        M[:n, :n] = A
        M[:n, n:] = B
        E = scipy.linalg.expm(M * Ts)
        return E[:n, :n], E[:n, n:]
    raise ValueError(f"unknown discretization method {method!r}")
