"""Dense convex QP solver.

Solves::

    minimize    0.5 z'Hz + g'z
    subject to  lb <= A z <= ub

with an operator-splitting (ADMM) iteration in the style of OSQP, run on a
Ruiz-equilibrated copy of the problem with an adaptive step size. Whenever
the iterates are close, an active-set guess is taken from them and the
equality-constrained KKT system is solved exactly ("polishing"); the
polished point is accepted only if its unscaled KKT residuals pass the
tolerance. This turns the slow tail of ADMM into a single linear solve, so
``solved`` results carry residuals near machine precision in practice.

Convergence: for convex H and a feasible set the ADMM iterates converge to a
KKT point for any positive step size; for an empty feasible set the dual
increments converge to a certificate of primal infeasibility, which is what
``infeasible`` reports.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

SOLVED = "solved"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"

_INF = 1e20
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_EQ_RHO_SCALE = 1e3


class QpError(ValueError):
    """Rejected problem data (shape mismatch, crossed bounds, indefinite H)."""


@dataclass(frozen=True)
class QpSettings:
    tol: float = 1e-6
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    check_every: int = 10
    polish: bool = True
    scaling_iters: int = 10
    eps_infeasible: float = 1e-6
    # Iterate accuracy at which polishing is attempted.
    polish_trigger: float = 1e-3


@dataclass
class QpSolution:
    z: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def kkt_residuals(H, g, A, lb, ub, z, y):
    """Unscaled ``(primal, dual)`` residuals of a candidate KKT pair.

    The primal residual is the largest bound violation of ``A z``. The dual
    residual is the larger of the stationarity error ``|Hz + g + A'y|_inf``
    and the complementarity error, measured as ``min(|y_i|, gap_i)`` against
    the bound that the sign of ``y_i`` points at (so a wrong-signed or
    inactive multiplier counts in full).
    """
    Az = A @ z if A.size else np.zeros(0)
    viol = np.concatenate([[0.0], lb - Az, Az - ub])
    primal = float(np.max(viol))
    stat = H @ z + g + (A.T @ y if A.size else 0.0)
    dual = float(np.max(np.abs(stat))) if stat.size else 0.0
    if y.size:
        ypos, yneg = np.maximum(y, 0.0), np.maximum(-y, 0.0)
        gap_u = np.where(ub >= _INF, np.inf, np.abs(ub - Az))
        gap_l = np.where(lb <= -_INF, np.inf, np.abs(Az - lb))
        comp = np.maximum(np.minimum(ypos, gap_u), np.minimum(yneg, gap_l))
        dual = max(dual, float(np.max(comp)))
    return max(primal, 0.0), dual


class QpSolver:
    """Reusable solver; holds its own workspace and is not thread-safe.

    Use one instance per thread. Results depend only on the inputs and
    settings.
    """

    def __init__(self, settings: QpSettings | None = None):
        self.settings = settings or QpSettings()

    # -- data checks ---------------------------------------------------------

    @staticmethod
    def _prepare(H, g, A, lb, ub):
        H = np.array(H, dtype=float, ndmin=2)
        g = np.asarray(g, dtype=float).ravel()
        n = g.size
        if H.shape != (n, n):
            raise QpError(f"H must be {n}x{n}, got {H.shape}")
        if A is None:
            A = np.zeros((0, n))
            lb = np.zeros(0)
            ub = np.zeros(0)
        A = np.array(A, dtype=float, ndmin=2).reshape(-1, n)
        m = A.shape[0]
        lb = np.full(m, -np.inf) if lb is None else np.asarray(lb, dtype=float).ravel()
        ub = np.full(m, np.inf) if ub is None else np.asarray(ub, dtype=float).ravel()
        if lb.shape != (m,) or ub.shape != (m,):
            raise QpError(f"bounds must have {m} entries")
        if np.any(lb > ub):
            i = int(np.flatnonzero(lb > ub)[0])
            raise QpError(f"lb > ub at row {i}: {lb[i]} > {ub[i]}")
        for name, arr in (("H", H), ("g", g), ("A", A)):
            if not np.all(np.isfinite(arr)):
                raise QpError(f"{name} contains non-finite entries")
        if not np.allclose(H, H.T, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise QpError("H is not symmetric")
        H = 0.5 * (H + H.T)
        lb = np.clip(lb, -_INF, _INF)
        ub = np.clip(ub, -_INF, _INF)
        if n:
            eig_min = float(scipy.linalg.eigvalsh(H, subset_by_index=[0, 0])[0])
            scale = max(1.0, float(np.abs(H).max()))
            if eig_min < -1e-9 * scale:
                raise QpError(f"H is not positive semidefinite (min eigenvalue {eig_min:.3e})")
            if eig_min < 1e-10:
                H = H + 1e-9 * np.eye(n)
        return H, g, A, lb, ub

    # -- scaling -------------------------------------------------------------

    def _ruiz(self, H, g, A):
        n, m = H.shape[0], A.shape[0]
        D, E = np.ones(n), np.ones(m)
        Hs, As, gs = H.copy(), A.copy(), g.copy()
        c = 1.0
        for _ in range(self.settings.scaling_iters):
            col = np.maximum(np.abs(Hs).max(axis=0), np.abs(As).max(axis=0) if m else 0.0)
            d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            e = 1.0 / np.sqrt(np.clip(np.abs(As).max(axis=1), 1e-4, 1e4)) if m else np.ones(0)
            Hs = d[:, None] * Hs * d[None, :]
            As = e[:, None] * As * d[None, :]
            gs = d * gs
            D *= d
            E *= e
            # Cost scaling keeps the objective terms near unit size.
            mean_h = float(np.mean(np.abs(Hs).max(axis=0))) if n else 1.0
            gmax = float(np.abs(gs).max()) if n else 0.0
            gamma = 1.0 / np.clip(max(mean_h, gmax), 1e-4, 1e4)
            Hs *= gamma
            gs *= gamma
            c *= gamma
        return Hs, gs, As, D, E, c

    # -- main entry ----------------------------------------------------------

    def solve(self, H, g, A=None, lb=None, ub=None, warm_start=None, warm_dual=None) -> QpSolution:
        st = self.settings
        H, g, A, lb, ub = self._prepare(H, g, A, lb, ub)
        n, m = g.size, A.shape[0]

        if m == 0:
            z = scipy.linalg.solve(H, -g, assume_a="pos") if n else np.zeros(0)
            return self._finish(H, g, A, lb, ub, z, np.zeros(0), SOLVED, 0, True)

        if warm_start is not None:
            z0 = np.asarray(warm_start, dtype=float).ravel()
            if z0.shape != (n,):
                raise QpError(f"warm start must have {n} entries")
            y0 = None if warm_dual is None else np.asarray(warm_dual, dtype=float).ravel()
            if st.polish:
                sol = self._polish(H, g, A, lb, ub, z0, y0)
                if sol is not None:
                    z, y = sol
                    return self._finish(H, g, A, lb, ub, z, y, SOLVED, 0, True)
        else:
            z0, y0 = np.zeros(n), None

        Hs, gs, As, D, E, c = self._ruiz(H, g, A)
        ls = np.where(lb <= -_INF, -_INF, E * lb)
        us = np.where(ub >= _INF, _INF, E * ub)
        eq = (ub - lb) <= 1e-12 * np.maximum(1.0, np.abs(lb))

        x = z0 / D
        w = np.clip(As @ x, ls, us)
        y = np.zeros(m) if y0 is None or y0.shape != (m,) else c * y0 / E
        rho = st.rho

        def factor(rho_val):
            rho_vec = np.where(eq, _EQ_RHO_SCALE * rho_val, rho_val)
            K = Hs + st.sigma * np.eye(n) + As.T @ (rho_vec[:, None] * As)
            return rho_vec, _factorize(K)

        rho_vec, lin_solve = factor(rho)
        status, it = MAX_ITERATIONS, 0
        best = None
        strikes = 0
        for it in range(1, st.max_iter + 1):
            x_prev, y_prev = x, y
            rhs = st.sigma * x - gs + As.T @ (rho_vec * w - y)
            x_t = lin_solve(rhs)
            w_t = As @ x_t
            x = st.alpha * x_t + (1 - st.alpha) * x_prev
            w_relax = st.alpha * w_t + (1 - st.alpha) * w
            w_new = np.clip(w_relax + y / rho_vec, ls, us)
            y = y + rho_vec * (w_relax - w_new)
            w = w_new

            if it % st.check_every and it != st.max_iter:
                continue

            # Unscaled iterate.
            z_u = D * x
            y_u = E * y / c
            Az_s = As @ x
            r_prim_s = float(np.abs(Az_s - w).max())
            r_dual_s = float(np.abs(Hs @ x + gs + As.T @ y).max())
            prim_ref = max(float(np.abs(Az_s).max()), float(np.abs(w).max()), 1e-12)
            dual_ref = max(float(np.abs(Hs @ x).max()), float(np.abs(As.T @ y).max()),
                           float(np.abs(gs).max()), 1e-12)

            if self._certifies_infeasible(A, lb, ub, E * (y - y_prev) / c, z_u):
                strikes += 1
                if strikes >= 3:
                    status = INFEASIBLE
                    z_final, y_final = z_u, y_u
                    break
            else:
                strikes = 0

            rp_u, rd_u = kkt_residuals(H, g, A, lb, ub, z_u, y_u)
            if best is None or max(rp_u, rd_u) < max(best[2], best[3]):
                best = (z_u, y_u, rp_u, rd_u)
            converged = rp_u <= st.tol and rd_u <= st.tol
            close = (r_prim_s <= st.polish_trigger * (1 + prim_ref)
                     and r_dual_s <= st.polish_trigger * (1 + dual_ref))
            if st.polish and (close or converged):
                # Even a converged iterate is polished: tol-level residuals
                # can still leave the objective off by more than tol.
                sol = self._polish(H, g, A, lb, ub, z_u, y_u)
                if sol is not None:
                    return self._finish(H, g, A, lb, ub, sol[0], sol[1], SOLVED, it, True)
            if converged:
                return self._finish(H, g, A, lb, ub, z_u, y_u, SOLVED, it, False)

            # Step-size adaptation balances the relative residuals.
            ratio = np.sqrt((r_prim_s / prim_ref) / max(r_dual_s / dual_ref, 1e-30))
            new_rho = float(np.clip(rho * ratio, _RHO_MIN, _RHO_MAX))
            if new_rho > 5 * rho or new_rho < rho / 5:
                rho = new_rho
                rho_vec, lin_solve = factor(rho)
        else:
            z_final, y_final = best[0], best[1]

        return self._finish(H, g, A, lb, ub, z_final, y_final, status, it, False)

    def _certifies_infeasible(self, A, lb, ub, dy, z) -> bool:
        """Whether the dual step ``dy`` proves ``{z : lb <= Az <= ub}`` empty.

        For any feasible point ``x`` and ``A'dy = 0`` the support value
        ``ub'dy+ + lb'dy-`` is at least ``(Ax)'dy = 0``. Since ``A'dy`` is only
        approximately zero, the support value must be negative by a margin
        that also covers ``|A'dy|_inf * |z|_1`` at the current iterate.
        """
        norm = float(np.abs(dy).max())
        if norm < 1e-14:
            return False
        eps = self.settings.eps_infeasible
        leak = float(np.abs(A.T @ dy).max())
        if leak > eps * norm:
            return False
        pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
        tiny = 1e-12 * norm
        if np.any((pos > tiny) & (ub >= _INF)) or np.any((neg < -tiny) & (lb <= -_INF)):
            return False
        support = float(np.sum(np.where(ub >= _INF, 0.0, ub) * pos)
                        + np.sum(np.where(lb <= -_INF, 0.0, lb) * neg))
        margin = max(eps * norm, 2.0 * leak * (1.0 + float(np.abs(z).sum())))
        return support < -margin

    def _polish(self, H, g, A, lb, ub, z, y):
        """Solve the KKT system on a guessed active set; None if the guess fails."""
        tol = self.settings.tol
        Az = A @ z
        if y is None:
            band = 1e-7 * (1.0 + np.abs(Az))
            low = (Az - lb) <= band
            up = ((ub - Az) <= band) & ~low
        else:
            low = (Az - lb) < -y
            up = ((ub - Az) < y) & ~low
        eqrows = (ub - lb) <= 1e-12 * np.maximum(1.0, np.abs(lb))
        low |= eqrows
        up &= ~eqrows
        act = np.flatnonzero(low | up)
        n = g.size
        Aa = A[act]
        b = np.where(low[act], lb[act], ub[act])
        k = act.size
        K = np.zeros((n + k, n + k))
        K[:n, :n] = H
        K[:n, n:] = Aa.T
        K[n:, :n] = Aa
        rhs = np.concatenate([-g, b])
        sol = _solve_kkt(K, rhs)
        zp = sol[:n]
        yp = np.zeros(A.shape[0])
        yp[act] = sol[n:]
        rp, rd = kkt_residuals(H, g, A, lb, ub, zp, yp)
        if rp <= tol and rd <= tol:
            return zp, yp
        return None

    @staticmethod
    def _finish(H, g, A, lb, ub, z, y, status, iterations, polished) -> QpSolution:
        rp, rd = kkt_residuals(H, g, A, lb, ub, z, y)
        obj = float(0.5 * z @ H @ z + g @ z)
        return QpSolution(z=z, status=status, iterations=iterations, primal_residual=rp,
                          dual_residual=rd, objective=obj, y=y, polished=polished)


def _factorize(K):
    """Solver for ``K x = b``: Cholesky, or LU when rounding breaks definiteness."""
    try:
        cho = scipy.linalg.cho_factor(K)
        return lambda b: scipy.linalg.cho_solve(cho, b)
    except np.linalg.LinAlgError:
        lu = scipy.linalg.lu_factor(K, check_finite=False)
        return lambda b: scipy.linalg.lu_solve(lu, b, check_finite=False)


def _solve_kkt(K, rhs):
    """LU solve with two refinement steps; least squares if K is singular."""
    scale = max(1.0, float(np.abs(rhs).max()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            lu = scipy.linalg.lu_factor(K, check_finite=False)
            sol = scipy.linalg.lu_solve(lu, rhs)
            for _ in range(2):
                sol = sol + scipy.linalg.lu_solve(lu, rhs - K @ sol)
            if np.all(np.isfinite(sol)) and np.abs(K @ sol - rhs).max() <= 1e-10 * scale:
                return sol
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            pass
    return np.linalg.lstsq(K, rhs, rcond=None)[0]


def solve(H, g, Aineq=None, lb=None, ub=None, warm_start=None,
          settings: QpSettings | None = None, warm_dual=None) -> QpSolution:
    """One-shot convenience wrapper around :class:`QpSolver`."""
    return QpSolver(settings).solve(H, g, Aineq, lb, ub, warm_start=warm_start, warm_dual=warm_dual)
