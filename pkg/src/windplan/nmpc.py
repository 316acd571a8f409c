"""Corridor-constrained receding-horizon control by multiple-shooting SQP.

All stage states and inputs are decision variables tied together by the RK4
dynamics. Each Gauss-Newton iteration linearizes those defects and condenses
the state increments onto the input increments, giving the affine map
``dX = G dU + g``. The costs are quadratic and, because the ellipsoid shapes
are fixed ahead of the solve, the corridor rows ``a.p + sqrt(a^T Q a) <= b``
are linear in position. This makes the QP subproblem exact apart from the
dynamics, which are the only nonlinearity. Steps are damped Levenberg-Marquardt
style and accepted on a merit-ratio test.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import kernels
from .corridor import Corridor
from .dynamics import NU, NX, ControlInput, QuadState, rotation, wrap_angle
from .frontend import ReferenceWindow
from .frs import FrsSequence
from .params import PlannerParams
from .qp import QPInfeasibleError, solve_qp

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE_SLACK = "infeasible-slack-active"

_DEFECT_TOL = 1e-9


# ----------------------------------------------------------------------- costs

def stage_cost(x, u, u_next, refs, params: PlannerParams) -> float:
    """Tracking, input and input-rate cost of one stage.

    ``refs`` is ``(p_ref, psi_ref)``; ``u_next`` may be None (last stage).
    Thrust is penalized about hover thrust and the yaw error is wrapped.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p_ref, psi_ref = refs
    ep = x[0:3] - np.asarray(p_ref, dtype=float)
    epsi = float(wrap_angle(x[8] - psi_ref))
    du = u - np.array([0.0, 0.0, 0.0, params.hover_thrust])
    c = float(ep @ (np.asarray(params.l_p) * ep) + params.l_psi * epsi ** 2
              + du @ (np.asarray(params.l_u) * du))
    if u_next is not None:
        dd = np.asarray(u_next, dtype=float) - u
        c += float(dd @ (np.asarray(params.l_du) * dd))
    return c


def terminal_cost(x, refs, params: PlannerParams, beyond_horizon: bool) -> float:
    x = np.asarray(x, dtype=float)
    p_ref, psi_ref = refs
    ep = x[0:3] - np.asarray(p_ref, dtype=float)
    epsi = float(wrap_angle(x[8] - psi_ref))
    c = float(ep @ (np.asarray(params.l_p_N) * ep) + params.l_psi_N * epsi ** 2)
    if beyond_horizon:
        v = x[3:6]
        c += float(v @ (np.asarray(params.l_v_N) * v))
    return c


# ------------------------------------------------------------------- problem

@dataclass
class OcpProblem:
    x0: QuadState
    b_ext: np.ndarray
    window: ReferenceWindow
    corridor: Corridor
    frs: FrsSequence
    params: PlannerParams
    u_prev: Optional[np.ndarray] = None   # last applied command, for the first rate term

    def __post_init__(self):
        n = self.params.N + 1
        self.b_ext = np.asarray(self.b_ext, dtype=float).reshape(3)
        if len(self.window.positions) != n or len(self.frs) != n:
            raise ValueError(f"window and FRS must both have N+1 = {n} stages")
        if len(self.corridor.stage_assignment) != n:
            raise ValueError("every stage needs an assigned polytope")
        if not np.all(np.isfinite(self.x0.as_array())):
            raise ValueError("x0 must be finite")


@dataclass
class OcpSolution:
    X: np.ndarray                 # (N+1, 9), angles unwrapped along the horizon
    U: np.ndarray                 # (N, 4)
    status: str
    stage_costs: np.ndarray       # (N+1,), last entry is the terminal cost
    solve_time: float
    slack_max: float
    iterations: int = 0
    kkt: float = np.inf
    dyn_residual: float = np.inf
    merit_history: List[float] = field(default_factory=list)
    qp_fallback: bool = False

    @property
    def states(self) -> List[QuadState]:
        return [QuadState.from_array(x) for x in self.X]

    @property
    def inputs(self) -> List[ControlInput]:
        return [ControlInput.from_array(u) for u in self.U]

    @property
    def cost(self) -> float:
        return float(np.sum(self.stage_costs))

    def diagnostics(self) -> dict:
        return {"iterations": self.iterations, "kkt": self.kkt, "slack_max": self.slack_max,
                "solve_time": self.solve_time, "status": self.status,
                "dyn_residual": self.dyn_residual}


def first_command(sol: OcpSolution, params: PlannerParams):
    """First input and the world acceleration it commands at the stage-0 attitude."""
    if sol.status not in (CONVERGED, MAX_ITER):
        raise ValueError(f"no command from a solution with status {sol.status!r}")
    u = sol.U[0]
    R = rotation(*sol.X[0, 6:9])
    a_e = R @ np.array([0.0, 0.0, u[3]]) / params.m - np.array([0.0, 0.0, params.g])
    return ControlInput.from_array(u), a_e


# -------------------------------------------------------------------- solver

class NmpcSolver:
    """Gauss-Newton SQP; keeps per-problem workspaces, so one instance per planner loop."""

    def __init__(self, params: PlannerParams, rho_dyn: Optional[float] = None):
        self.params = params
        self.rho_dyn = params.rho_dyn if rho_dyn is None else rho_dyn
        N = params.N
        self._lo = np.tile([-params.rate_max] * 3 + [0.0], N)
        self._hi = np.tile([params.rate_max] * 3 + [params.thrust_max], N)
        self._u_hover = np.array([0.0, 0.0, 0.0, params.hover_thrust])
        # input-rate difference operator over k = 0..N-2
        Dm = np.zeros(((N - 1) * NU, N * NU))
        for k in range(N - 1):
            Dm[k * NU:(k + 1) * NU, k * NU:(k + 1) * NU] = -np.eye(NU)
            Dm[k * NU:(k + 1) * NU, (k + 1) * NU:(k + 2) * NU] = np.eye(NU)
        self._D = Dm
        self._Wdu = np.tile(np.asarray(params.l_du, dtype=float), N - 1)
        self._Wu = np.tile(np.asarray(params.l_u, dtype=float), N)

    # ---- problem setup
    def _setup(self, prob: OcpProblem):
        P = self.params
        N = P.N
        Wx = np.zeros((N + 1, NX))
        Wx[1:N, 0:3] = P.l_p
        Wx[1:N, 8] = P.l_psi
        Wx[N, 0:3] = P.l_p_N
        Wx[N, 8] = P.l_psi_N
        if prob.window.beyond_horizon:
            Wx[N, 3:6] = P.l_v_N
        self._Wx = Wx
        xr = np.zeros((N + 1, NX))
        xr[:, 0:3] = prob.window.positions
        xr[:, 8] = prob.window.yaws
        self._xr = xr
        # corridor rows for stages 1..N: a.p <= b - sigma
        rows_A, rows_rhs, rows_k = [], [], []
        for k in range(1, N + 1):
            poly = prob.corridor.stage_poly(k)
            sig = prob.frs.margins(k, poly.A)
            rows_A.append(poly.A)
            rows_rhs.append(poly.b - sig)
            rows_k.append(np.full(poly.b.size, k))
        self._cA = np.vstack(rows_A)
        self._cb = np.concatenate(rows_rhs)
        self._ck = np.concatenate(rows_k)
        self._u_prev = None if prob.u_prev is None else np.asarray(prob.u_prev, dtype=float)

    # ---- evaluation
    def _state_err(self, X):
        E = X - self._xr
        E[:, 8] = wrap_angle(E[:, 8])
        return E

    def _cost_terms(self, X, U):
        E = self._state_err(X)
        cx = np.sum(self._Wx * E * E, axis=1)
        dU = U - self._u_hover
        cu = np.sum(np.asarray(self.params.l_u) * dU * dU, axis=1)
        dd = np.diff(U, axis=0)
        cdu = np.sum(np.asarray(self.params.l_du) * dd * dd, axis=1)
        stage = cx.copy()
        stage[:-1] += cu
        stage[:-2] += cdu
        if self._u_prev is not None:
            e = U[0] - self._u_prev
            stage[0] += float(e @ (np.asarray(self.params.l_du) * e))
        # stage-0 position/yaw terms are constant (x0 fixed) and carry zero weight in Wx
        return stage

    def _violations(self, X):
        """Per-stage smallest slack making the corridor rows hold (index 0 unused)."""
        viol = np.einsum("ij,ij->i", self._cA, X[self._ck, 0:3]) - self._cb
        s = np.zeros(self.params.N + 1)
        np.maximum.at(s, self._ck, np.maximum(viol, 0.0))
        return s

    def _merit(self, X, U, defects):
        P = self.params
        s = self._violations(X)
        return float(np.sum(self._cost_terms(X, U)) + P.rho_slack * s.sum()
                     + 0.5 * P.slack_reg * float(s @ s) + self.rho_dyn * np.abs(defects).sum())

    def _defects(self, X, U, b):
        P = self.params
        Xn = kernels.rk4(X[:-1], U, b, P.t_s, P.m, P.g, P.k_d)
        return Xn - X[1:]

    # ---- QP assembly
    def _condense(self, X, U, b):
        P = self.params
        N = P.N
        Xn, Ad, Bd = kernels.rk4_sens(X[:-1], U, b, P.t_s, P.m, P.g, P.k_d)
        defects = Xn - X[1:]
        G = np.zeros((N, NX, N * NU))
        g = np.zeros((N, NX))
        G[0, :, 0:NU] = Bd[0]
        g[0] = defects[0]
        for k in range(1, N):
            G[k, :, :k * NU] = Ad[k] @ G[k - 1, :, :k * NU]
            G[k, :, k * NU:(k + 1) * NU] = Bd[k]
            g[k] = Ad[k] @ g[k - 1] + defects[k]
        return G, g, defects

    def _qp(self, X, U, G, g, mu, with_state_bounds=True):
        P = self.params
        N = P.N
        nu = N * NU
        nz = nu + N
        E = self._state_err(X)[1:]                   # (N, 9)
        Wx = self._Wx[1:]
        Gf = G.reshape(N * NX, nu)
        w = Wx.reshape(-1)
        r0 = (E + g).reshape(-1)
        Hu = np.diag(self._Wu) + self._D.T @ (self._Wdu[:, None] * self._D)
        u_flat = U.reshape(-1)
        gu = self._Wu * (u_flat - np.tile(self._u_hover, N)) + self._D.T @ (self._Wdu * (self._D @ u_flat))
        if self._u_prev is not None:
            Wd = np.asarray(P.l_du, dtype=float)
            Hu[:NU, :NU] += np.diag(Wd)
            gu[:NU] += Wd * (U[0] - self._u_prev)
        H = np.zeros((nz, nz))
        c = np.zeros(nz)
        GW = Gf.T * w
        H[:nu, :nu] = 2.0 * (GW @ Gf + Hu)
        self._hscale = float(np.mean(np.diag(H[:nu, :nu])))
        H[:nu, :nu] += mu * self._hscale * np.eye(nu)
        c[:nu] = 2.0 * (GW @ r0 + gu)
        H[nu:, nu:] = P.slack_reg * np.eye(N)
        c[nu:] = P.rho_slack

        blocks_C, blocks_d = [], []
        # inputs within bounds
        I = np.eye(nu)
        blocks_C += [np.hstack([I, np.zeros((nu, N))]), np.hstack([-I, np.zeros((nu, N))])]
        blocks_d += [self._lo - u_flat, u_flat - self._hi]
        # slacks nonnegative
        blocks_C.append(np.hstack([np.zeros((N, nu)), np.eye(N)]))
        blocks_d.append(np.zeros(N))
        # corridor: -a.dp + s_k >= a.(p + g_p) - rhs
        kk = self._ck - 1
        Gp = G[kk, 0:3, :]                                # (rows, 3, nu)
        aG = np.einsum("ij,ijk->ik", self._cA, Gp)
        S = np.zeros((kk.size, N))
        S[np.arange(kk.size), kk] = 1.0
        base = np.einsum("ij,ij->i", self._cA, X[self._ck, 0:3] + g[kk, 0:3]) - self._cb
        blocks_C.append(np.hstack([-aG, S]))
        blocks_d.append(base)
        if with_state_bounds:
            idx = [3, 4, 5, 6, 7]
            lim = np.array([P.v_max] * 3 + [P.tilt_max] * 2)
            Gs = G[:, idx, :].reshape(N * 5, nu)
            cur = (X[1:, idx] + g[:, idx]).reshape(-1)
            L = np.tile(lim, N)
            Z = np.zeros((N * 5, N))
            blocks_C += [np.hstack([-Gs, Z]), np.hstack([Gs, Z])]
            blocks_d += [cur - L, -L - cur]
        C = np.vstack(blocks_C)
        d = np.concatenate(blocks_d)
        res = solve_qp(H, c, C, d)
        return res.z[:nu].reshape(N, NU)

    # ---- main entry
    def _initial_guess(self, prob: OcpProblem, warm: Optional[OcpSolution], shift: bool = True):
        P = self.params
        N = P.N
        x0 = prob.x0.as_array()
        if warm is None:
            X = np.tile(x0, (N + 1, 1))
            U = np.tile(self._u_hover, (N, 1))
            return X, U
        if shift:
            X = np.vstack([warm.X[1:], warm.X[-1:]])
            U = np.vstack([warm.U[1:], warm.U[-1:]])
        else:
            X, U = warm.X.copy(), warm.U.copy()
        # keep the unwrapped angles continuous with the (wrapped) measurement
        for j in (6, 7, 8):
            X[:, j] -= 2.0 * np.pi * np.round((X[0, j] - x0[j]) / (2.0 * np.pi))
        X[0] = x0
        return X, U

    def solve(self, prob: OcpProblem, warm: Optional[OcpSolution] = None,
              shift: bool = True) -> OcpSolution:
        """Solve ``prob``, warm-started from ``warm`` shifted by one stage (or as is with ``shift=False``)."""
        t_start = time.perf_counter()
        P = self.params
        self._setup(prob)
        b = prob.b_ext
        X, U = self._initial_guess(prob, warm, shift)
        defects = self._defects(X, U, b)
        merit = self._merit(X, U, defects)
        history = [merit]
        self.trace = []   # (iteration, damping, predicted, actual, max |dU|) per trial step
        mu = 0.0      # damping relative to the mean Hessian diagonal
        mu0 = 1e-4
        status = MAX_ITER
        kkt = np.inf
        fallback = False
        it = 0
        while it < P.max_sqp_iter:
            it += 1
            G, g, defects = self._condense(X, U, b)
            accepted = False
            for _ in range(16):
                try:
                    dU = self._qp(X, U, G, g, mu, with_state_bounds=not fallback)
                except QPInfeasibleError:
                    if fallback:
                        raise
                    fallback = True
                    dU = self._qp(X, U, G, g, mu, with_state_bounds=False)
                dX = np.einsum("kij,j->ki", G, dU.reshape(-1)) + g
                Xn = X.copy()
                Xn[1:] += dX
                Un = U + dU
                model = self._merit(Xn, Un, np.zeros_like(defects))
                dn = self._defects(Xn, Un, b)
                new = self._merit(Xn, Un, dn)
                pred = merit - model
                act = merit - new
                self.trace.append((it, mu, pred, act, float(np.max(np.abs(dU)))))
                scale = 1e-12 * (1.0 + abs(merit))
                if pred <= scale or act >= 1e-4 * pred:
                    accepted = True
                    break
                mu = max(10.0 * mu, mu0)
            if not accepted:
                break
            step = max(float(np.max(np.abs(dU))), float(np.max(np.abs(dX))))
            X, U, defects, merit = Xn, Un, dn, new
            history.append(new)
            ratio = act / pred if pred > scale else 1.0
            if ratio > 0.75:
                mu = mu / 10.0 if mu > mu0 else 0.0
            elif ratio < 0.25:
                mu = max(4.0 * mu, mu0)
            kkt = max(step, float(np.max(np.abs(defects))))
            if step < P.kkt_tol and np.max(np.abs(defects)) < _DEFECT_TOL:
                status = CONVERGED
                break

        slack = self._violations(X)
        slack_max = float(slack.max())
        if slack_max > P.slack_tol:
            status = INFEASIBLE_SLACK
        costs = self._cost_terms(X, U)
        return OcpSolution(X, U, status, costs, time.perf_counter() - t_start, slack_max,
                           it, kkt, float(np.max(np.abs(defects))), history, fallback)


def solve(problem: OcpProblem, warm: Optional[OcpSolution] = None, shift: bool = True) -> OcpSolution:
    """Convenience wrapper building a throwaway solver."""
    return NmpcSolver(problem.params).solve(problem, warm, shift)
