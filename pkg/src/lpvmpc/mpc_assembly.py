"""Condensed QP assembly for one control cycle.

The decision vector stacks the input sequence ``z = [u_0, u_1, ..., u_{N-1}]``
with ``u_k = [a_k, delta_k]``. Predicted states ``x_1..x_N`` are eliminated
through ``x_stack = Phi @ x0 + Gamma @ z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .vehicle_model import (
    NU, NX, ControlInput, VehicleParams, VehicleState, lateral_tire_forces,
)

# Input and rate limits per control step.
DELTA_MAX = math.pi / 6
DDELTA_MAX = math.pi / 300
DA_MAX = 0.1
# Net longitudinal acceleration envelope (m/s^2).
XDDOT_MIN = -4.0
XDDOT_MAX = 2.0
# Predicted velocity limits.
VX_MIN = 1.0
VX_MAX = 30.0
VY_RATIO = 0.17


@dataclass(frozen=True)
class WeightSet:
    """Diagonals of the stage (Q), terminal (S) and input (R) weights.

    Q and S act on the output error ``[e_vx, e_psi, e_X, e_Y]``; R acts on
    ``[a, delta]``.
    """

    Q: tuple = (1.0, 10.0, 50.0, 50.0)
    S: tuple = (5.0, 50.0, 250.0, 250.0)
    R: tuple = (5.0, 100.0)

    def __post_init__(self):
        q, s, r = (np.asarray(w, dtype=float) for w in (self.Q, self.S, self.R))
        if q.shape != (4,) or s.shape != (4,) or r.shape != (2,):
            raise ValueError("WeightSet needs 4 Q, 4 S and 2 R diagonal entries")
        for name, w in (("Q", q), ("S", s), ("R", r)):
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise ValueError(f"WeightSet.{name} entries must be finite and >= 0")
        if not (np.any(q > 0) or np.any(s > 0)):
            raise ValueError("WeightSet needs at least one positive Q or S entry")
        object.__setattr__(self, "Q", tuple(map(float, q)))
        object.__setattr__(self, "S", tuple(map(float, s)))
        object.__setattr__(self, "R", tuple(map(float, r)))


@dataclass(frozen=True)
class PredictionMatrices:
    Phi: np.ndarray
    Gamma: np.ndarray

    @property
    def N(self) -> int:
        return self.Phi.shape[0] // self.Phi.shape[1]


@dataclass
class MpcProblem:
    H: np.ndarray
    grad: np.ndarray
    Aineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    N: int
    Ts: float
    J_const: float = 0.0
    # Row slices into Aineq, by constraint family.
    rows: dict | None = None


def build_prediction(A_d, B_d, N: int) -> PredictionMatrices:
    """Stacked ``Phi`` (powers of A) and block lower-triangular ``Gamma``."""
    if N < 1:
        raise ValueError(f"horizon must be >= 1, got {N}")
    A_d, B_d = np.asarray(A_d, dtype=float), np.asarray(B_d, dtype=float)
    n, m = B_d.shape
    if A_d.shape != (n, n):
        raise ValueError("A_d and B_d dimensions do not match")
    Phi = np.zeros((n * N, n))
    Gamma = np.zeros((n * N, m * N))
    # AkB[j] = A^j B
    AkB = [B_d]
    Ak = np.eye(n)
    for k in range(N):
        Ak = A_d @ Ak
        Phi[k * n:(k + 1) * n] = Ak
        if k > 0:
            AkB.append(A_d @ AkB[-1])
    for k in range(N):
        for i in range(k + 1):
            Gamma[k * n:(k + 1) * n, i * m:(i + 1) * m] = AkB[k - i]
    return PredictionMatrices(Phi=Phi, Gamma=Gamma)


def _block_diag(block: np.ndarray, N: int) -> np.ndarray:
    return np.kron(np.eye(N), block)


def build_cost(pred: PredictionMatrices, weights: WeightSet, C, x0, refs, ref0=None):
    """Condensed cost ``0.5 z'Hz + grad'z + J_const``.

    The stage weight Q applies to predicted outputs ``y_1..y_{N-1}`` and the
    terminal weight S to ``y_N``; ``refs`` holds the N matching references.
    The current-output term ``0.5 e_0'Q e_0`` does not depend on ``z`` and is
    folded into ``J_const`` only when ``ref0`` is given.

    Returns ``(H, grad, J_const)``.
    """
    C = np.asarray(C, dtype=float)
    x0 = x0.as_array() if isinstance(x0, VehicleState) else np.asarray(x0, dtype=float)
    refs = np.asarray(refs, dtype=float)
    ny, nx = C.shape
    N = pred.N
    if pred.Phi.shape[1] != nx or x0.shape != (nx,):
        raise ValueError("state dimension mismatch between C, x0 and prediction matrices")
    if refs.shape != (N, ny):
        raise ValueError(f"refs must have shape ({N}, {ny}), got {refs.shape}")
    nu = pred.Gamma.shape[1] // N

    Cbar = _block_diag(C, N)
    qdiag = np.concatenate([np.tile(weights.Q, N - 1), weights.S])
    rdiag = np.tile(weights.R, N)
    CG = Cbar @ pred.Gamma
    free = Cbar @ pred.Phi @ x0 - refs.ravel()
    H = CG.T @ (qdiag[:, None] * CG) + np.diag(rdiag)
    H = 0.5 * (H + H.T)
    grad = CG.T @ (qdiag * free)
    J_const = 0.5 * float(free @ (qdiag * free))
    if ref0 is not None:
        e0 = np.asarray(ref0, dtype=float) - C @ x0
        J_const += 0.5 * float(e0 @ (np.asarray(weights.Q) * e0))
    assert H.shape == (nu * N, nu * N)
    return H, grad, J_const


def acceleration_envelope(state: VehicleState, prev: ControlInput,
                          params: VehicleParams) -> tuple[float, float]:
    """Bounds on the commanded ``a`` keeping the net ``x_ddot`` in its envelope.

    Scheduling terms are evaluated at the measured state and the previous
    steering command.
    """
    F_yf, _ = lateral_tire_forces(state, prev.delta, params)
    shift = F_yf * math.sin(prev.delta) / params.m + params.mu * params.g \
        - state.psi_dot * state.vy
    return XDDOT_MIN + shift, XDDOT_MAX + shift


def build_constraints(state: VehicleState, prev_input: ControlInput,
                      pred: PredictionMatrices, params: VehicleParams, N: int | None = None):
    """Inequality system ``lb <= Aineq @ z <= ub`` for the whole horizon.

    Row families, each N rows long and in this order: steering angle,
    steering rate, acceleration rate, scheduled acceleration, predicted
    ``vx`` and predicted ``vy`` (bounded by ``0.17 * vx`` at the measured
    speed). Rates at step 0 are measured against ``prev_input``.

    Returns ``(Aineq, lb, ub, rows)`` where ``rows`` maps family names to
    row slices.
    """
    N = pred.N if N is None else N
    if N != pred.N:
        raise ValueError("N does not match the prediction matrices")
    n = N * NU
    I = np.eye(n)
    a_cols, d_cols = I[0::2], I[1::2]
    diff = np.eye(N) - np.eye(N, k=-1)
    D = np.kron(diff, np.eye(NU))
    da_rows, dd_rows = D[0::2], D[1::2]

    a_lo, a_hi = acceleration_envelope(state, prev_input, params)
    x0 = state.as_array()
    free = pred.Phi @ x0
    vx_rows = pred.Gamma[0::NX]
    vy_rows = pred.Gamma[1::NX]
    vx_free, vy_free = free[0::NX], free[1::NX]
    vy_lim = VY_RATIO * state.vx

    ones = np.ones(N)
    first = np.zeros(N)
    first[0] = 1.0
    blocks = [
        ("delta", d_cols, -DELTA_MAX * ones, DELTA_MAX * ones),
        ("ddelta", dd_rows, -DDELTA_MAX * ones + prev_input.delta * first,
         DDELTA_MAX * ones + prev_input.delta * first),
        ("da", da_rows, -DA_MAX * ones + prev_input.a * first,
         DA_MAX * ones + prev_input.a * first),
        ("accel", a_cols, a_lo * ones, a_hi * ones),
        ("vx", vx_rows, VX_MIN - vx_free, VX_MAX - vx_free),
        ("vy", vy_rows, -vy_lim - vy_free, vy_lim - vy_free),
    ]
    rows, start = {}, 0
    for name, M, _, _ in blocks:
        rows[name] = slice(start, start + M.shape[0])
        start += M.shape[0]
    Aineq = np.vstack([b[1] for b in blocks])
    lb = np.concatenate([b[2] for b in blocks])
    ub = np.concatenate([b[3] for b in blocks])
    return Aineq, lb, ub, rows
