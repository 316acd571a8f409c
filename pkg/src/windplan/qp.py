"""Dense dual active-set QP solver (Goldfarb-Idnani).

Solves ``min 1/2 z^T H z + c^T z  s.t.  C z >= d`` with ``H`` positive
definite. The method starts from the unconstrained minimizer and adds the
most violated constraint each outer step, keeping the factorization
``L^-1 N_A = Q [R; 0]`` (``H = L L^T``) up to date with one Householder
reflection per addition and Givens rotations per deletion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class QPInfeasibleError(RuntimeError):
    pass


@dataclass
class QPResult:
    z: np.ndarray
    lam: np.ndarray          # multipliers, one per row of C (zero when inactive)
    active: np.ndarray       # indices of active rows
    iterations: int
    objective: float


def _householder_tail(J: np.ndarray, d: np.ndarray, q: int) -> float:
    """Reflect columns ``q:`` of J so ``J^T n`` has zeros below entry q; return that entry."""
    x = d[q:]
    alpha = np.linalg.norm(x)
    if alpha == 0.0:
        return 0.0
    if x.size == 1:
        return float(x[0])
    s = -alpha if x[0] >= 0 else alpha
    v = x.copy()
    v[0] -= s
    vn = v @ v
    if vn > 0:
        Jt = J[:, q:]
        Jt -= np.outer(Jt @ v, v * (2.0 / vn))
    return float(s)


def solve_qp(H: np.ndarray, c: np.ndarray, C: np.ndarray, d: np.ndarray,
             tol: float = 1e-10, max_iter: int = 2000) -> QPResult:
    """Solve ``min 1/2 z^T H z + c^T z`` subject to ``C z >= d``.

    Raises
    ------
    QPInfeasibleError
        When the constraints admit no point (detected by a dual direction
        without any primal step), or the iteration budget runs out.
    numpy.linalg.LinAlgError
        When ``H`` is not positive definite.
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    n = H.shape[0]
    m = d.size
    if C.size == 0:
        C = np.zeros((0, n))

    L = np.linalg.cholesky(H)
    J = scipy.linalg.solve_triangular(L, np.eye(n), lower=True).T     # L^-T
    z = -(J @ (J.T @ c))
    R = np.zeros((n, n))
    active: list = []
    u = np.zeros(0)
    is_active = np.zeros(m, dtype=bool)
    row_scale = np.maximum(np.linalg.norm(C, axis=1), 1e-300)
    it = 0

    while True:
        slack = (C @ z - d) / row_scale
        slack[is_active] = np.inf
        p = int(np.argmin(slack)) if m else -1
        if m == 0 or slack[p] >= -tol:
            break
        n_p = C[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                raise QPInfeasibleError(f"active-set budget of {max_iter} iterations exhausted")
            q = len(active)
            dv = J.T @ n_p
            zdir = J[:, q:] @ dv[q:]
            r = scipy.linalg.solve_triangular(R[:q, :q], dv[:q]) if q else np.zeros(0)
            # partial (dual) step limit
            t1, k_drop = np.inf, -1
            for j in range(q):
                if r[j] > 1e-14:
                    tj = u_plus[j] / r[j]
                    if tj < t1:
                        t1, k_drop = tj, j
            curv = zdir @ n_p
            s_p = n_p @ z - d[p]
            t2 = -s_p / curv if curv > 1e-14 * (n_p @ n_p) else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                raise QPInfeasibleError(f"constraint {p} cannot be satisfied together with the active set")
            t = min(t1, t2)
            if np.isfinite(t2):
                z = z + t * zdir
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t2 <= t1:
                # full step: add p
                R[:q, q] = dv[:q]
                R[q, q] = _householder_tail(J, dv, q)
                active.append(p)
                is_active[p] = True
                u = u_plus
                break
            # partial step: drop active constraint k_drop and retry p
            is_active[active[k_drop]] = False
            del active[k_drop]
            u_plus = np.delete(u_plus, k_drop)
            R[:, k_drop:q - 1] = R[:, k_drop + 1:q].copy()
            R[:, q - 1] = 0.0
            for j in range(k_drop, q - 1):
                a, b = R[j, j], R[j + 1, j]
                h = np.hypot(a, b)
                if h == 0.0:
                    continue
                cs, sn = a / h, b / h
                G = np.array([[cs, sn], [-sn, cs]])
                R[j:j + 2, j:] = G @ R[j:j + 2, j:]
                J[:, j:j + 2] = J[:, j:j + 2] @ G.T
                R[j + 1, j] = 0.0

    lam = np.zeros(m)
    if active:
        lam[np.asarray(active)] = u
    obj = float(0.5 * z @ H @ z + c @ z)
    return QPResult(z, lam, np.asarray(active, dtype=int), it, obj)
