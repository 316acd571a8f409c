"""Ellipsoidal forward reachable sets of the tracking error.

An ellipsoid ``xi(c, Q) = {x : (x - c)^T Q^-1 (x - c) <= 1}`` is carried by
its shape matrix only; all ellipsoids here are centered on the planned
position. Support function: ``max_{x in xi(0, Q)} a.x = sqrt(a^T Q a)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from . import kernels
from .dynamics import NX, rotation
from .params import PlannerParams


def symmetrize(Q: np.ndarray) -> np.ndarray:
    return 0.5 * (Q + np.swapaxes(Q, -1, -2))


def outer_sum(Q1: np.ndarray, Q2: np.ndarray) -> np.ndarray:
    """Trace-optimal outer ellipsoid of the Minkowski sum of two co-centered ellipsoids.

    A zero-trace operand is a point and the other operand is returned as is
    (both zero gives the zero matrix).
    """
    t1 = float(np.trace(Q1))
    t2 = float(np.trace(Q2))
    if t1 <= 0.0:
        return np.array(Q2, dtype=float, copy=True)
    if t2 <= 0.0:
        return np.array(Q1, dtype=float, copy=True)
    beta = np.sqrt(t2 / t1)
    return symmetrize((1.0 + beta) * Q1 + (1.0 + 1.0 / beta) * Q2)


def ego_shape(R: np.ndarray, r: float, h: float) -> np.ndarray:
    return symmetrize(R @ np.diag([r * r, r * r, h * h]) @ R.T)


def disturbance_shape(D: np.ndarray, w_bound: float, t_s: float) -> np.ndarray:
    """One-step error ellipsoid of a held disturbance ``|w|_inf <= w_bound`` (N).

    The box of admissible forces is enclosed by the ball of radius
    ``sqrt(3) * w_bound``; the resulting displacement ``D w t_s`` then lies in
    ``xi(0, t_s^2 D (3 w_bound^2 I) D^T)``.
    """
    if w_bound < 0 or t_s <= 0:
        raise ValueError("need w_bound >= 0 and t_s > 0")
    W = 3.0 * w_bound * w_bound * np.eye(D.shape[1])
    return symmetrize(t_s * t_s * D @ W @ D.T)


def propagate(Q0: np.ndarray, Qd: np.ndarray, Gamma: np.ndarray, t_s: float):
    """Return ``(Q_ext, Q0_next)`` for one stage.

    ``Q_ext`` is the position block of ``exp(Gamma t_s) (Q0 [+] Qd) exp(Gamma t_s)^T``
    and ``Q0_next = Q0 [+] Qd``.
    """
    Q0_next = outer_sum(Q0, Qd)
    Phi = scipy.linalg.expm(Gamma * t_s)
    M = symmetrize(Phi @ Q0_next @ Phi.T)
    return M[:3, :3].copy(), Q0_next


def support(Q: np.ndarray, a: np.ndarray) -> np.ndarray:
    """sqrt(a^T Q a) for each row of ``a``."""
    a = np.atleast_2d(a)
    return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", a, Q, a), 0.0))


def halfspace_margin(p, Q: np.ndarray, a) -> float:
    """Largest value of ``a.x`` over ``xi(p, Q)``; the ellipsoid satisfies ``a.x <= b`` iff this is <= b."""
    a = np.asarray(a, dtype=float)
    return float(support(Q, a)[0] + a @ np.asarray(p, dtype=float))


def psd_sqrt(Q: np.ndarray) -> np.ndarray:
    """Symmetric square root, for reporting only (eigenvalues clamped at zero)."""
    w, V = np.linalg.eigh(symmetrize(Q))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def principal_radii(Q: np.ndarray) -> np.ndarray:
    return np.sqrt(np.clip(np.linalg.eigvalsh(symmetrize(Q)), 0.0, None))[::-1]


@dataclass
class FrsSequence:
    Q_ego: np.ndarray   # (N+1, 3, 3)
    Q_ext: np.ndarray   # (N+1, 3, 3)
    Q: np.ndarray       # (N+1, 3, 3), Q_ego [+] Q_ext
    Q0: np.ndarray      # (N+2, 9, 9), carried initial error shapes

    def __len__(self) -> int:
        return self.Q.shape[0]

    def margins(self, k: int, A: np.ndarray) -> np.ndarray:
        """sqrt(a_i^T Q^k a_i) for every row a_i of A."""
        return support(self.Q[k], A)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "trace_Q_ext", "radius_1", "radius_2", "radius_3"])
            for k in range(len(self)):
                r = principal_radii(self.Q[k])
                w.writerow([k, repr(float(np.trace(self.Q_ext[k])))] + [repr(float(x)) for x in r])


def build_frs_sequence(states: np.ndarray, inputs: np.ndarray, K: np.ndarray,
                       params: PlannerParams, w_m: Optional[float] = None) -> FrsSequence:
    """Pre-compute the safe-ellipsoid shapes along a planned trajectory.

    ``states`` (N+1, 9) and ``inputs`` (N, 4) are the previous cycle's plan;
    the last stage reuses the last input. ``w_m`` (mass-normalized) defaults
    to ``params.w_m``. The nominal force does not change A or B.
    """
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    n = states.shape[0]
    U = np.vstack([inputs, inputs[-1:]])[:n]
    A, B = kernels.jac(states, U, params.m, params.g, params.k_d)
    Gam = A + B @ K
    D = np.zeros((NX, 3))
    D[3:6, :] = np.eye(3) / params.m
    wm = params.w_m if w_m is None else w_m
    Qd = disturbance_shape(D, params.m * wm, params.t_s)

    Q_ego = np.empty((n, 3, 3))
    Q_ext = np.empty((n, 3, 3))
    Q = np.empty((n, 3, 3))
    Q0 = np.empty((n + 1, NX, NX))
    Q0[0] = params.frs_delta * np.eye(NX)
    for k in range(n):
        R = rotation(*states[k, 6:9])
        Q_ego[k] = ego_shape(R, params.r, params.h)
        Q_ext[k], Q0[k + 1] = propagate(Q0[k], Qd, Gam[k], params.t_s)
        Q[k] = outer_sum(Q_ego[k], Q_ext[k])
    return FrsSequence(Q_ego, Q_ext, Q, Q0)
