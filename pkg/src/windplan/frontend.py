"""Kinodynamic hybrid-state A* on a force-biased double integrator.

Primitives hold a control acceleration ``r`` for a fixed duration while the
nominal force adds the drift ``b_ext / m``; positions are therefore exact
quadratics in time. Search states are deduplicated by position/velocity
voxels and the open list breaks ties on (f, g, voxel index).
"""
from __future__ import annotations

import csv
import heapq
import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .dynamics import QuadState
from .params import PlannerParams
from .world import OccupancyGrid


class SearchError(RuntimeError):
    pass


class NoPathError(SearchError):
    pass


@dataclass(eq=False)
class PrimitiveNode:
    s: np.ndarray                       # (6,) position, velocity
    parent: Optional["PrimitiveNode"] = None
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau: float = 0.0
    g_cost: float = 0.0
    f_cost: float = 0.0


@dataclass(frozen=True, eq=False)
class Segment:
    s0: np.ndarray        # (6,)
    r: np.ndarray         # control acceleration
    drift: np.ndarray     # b_ext / m
    duration: float

    def state(self, t):
        """Position and velocity at local times ``t`` (array), each (n, 3)."""
        t = np.asarray(t, dtype=float)[:, None]
        a = self.r + self.drift
        p = self.s0[:3] + self.s0[3:] * t + 0.5 * a * t * t
        v = self.s0[3:] + a * t
        return p, v

    def end(self) -> np.ndarray:
        p, v = self.state([self.duration])
        return np.concatenate([p[0], v[0]])


@dataclass(frozen=True, eq=False)
class ReferencePath:
    segments: Tuple[Segment, ...]
    t0: float = 0.0
    start: Optional[np.ndarray] = None   # (6,) used when there are no segments

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def endpoint(self) -> np.ndarray:
        if not self.segments:
            return np.asarray(self.start, dtype=float)
        return self.segments[-1].end()

    def sample(self, times):
        """Positions and velocities at mission times, clamped to the path span."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if not self.segments:
            s = np.asarray(self.start, dtype=float)
            return np.tile(s[:3], (times.size, 1)), np.zeros((times.size, 3))
        bounds = np.cumsum([0.0] + [s.duration for s in self.segments])
        local = np.clip(times - self.t0, 0.0, bounds[-1])
        seg_idx = np.clip(np.searchsorted(bounds, local, side="right") - 1, 0, len(self.segments) - 1)
        P = np.empty((times.size, 3))
        V = np.empty((times.size, 3))
        for i in np.unique(seg_idx):
            sel = seg_idx == i
            p, v = self.segments[i].state(local[sel] - bounds[i])
            P[sel], V[sel] = p, v
        return P, V

    def to_csv(self, path, dt: float = 0.01) -> None:
        ts = self.t0 + np.arange(0.0, self.duration + 1e-12, dt)
        P, V = self.sample(ts)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z"])
            for t, p, v in zip(ts, P, V):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in np.concatenate([p, v])])


@dataclass(frozen=True, eq=False)
class ReferenceWindow:
    positions: np.ndarray     # (N+1, 3)
    yaws: np.ndarray          # (N+1,)
    beyond_horizon: bool
    velocities: Optional[np.ndarray] = None


# ------------------------------------------------------------------ primitives

def control_set(params: PlannerParams, b_ext=None) -> np.ndarray:
    """Control accelerations: a per-axis grid in [-a_max, a_max], combined over axes.

    With a nominal force, each axis also gets the drift-cancelling level
    ``-b_ext/m`` (when it is within ``a_max``), so the lattice can hold a
    velocity under the force. Without force the set is the plain grid.
    """
    base = np.linspace(-params.a_max, params.a_max, params.accel_levels)
    base[params.accel_levels // 2] = 0.0
    drift = np.zeros(3) if b_ext is None else np.asarray(b_ext, dtype=float) / params.m
    axes = []
    for i in range(3):
        if i == 2 and params.planar:
            lv = np.array([0.0]) if drift[2] == 0.0 or abs(drift[2]) > params.a_max else np.array([-drift[2]])
        else:
            lv = base
            c = -drift[i]
            if c != 0.0 and abs(c) <= params.a_max and np.min(np.abs(base - c)) > 1e-9:
                lv = np.sort(np.append(base, c))
        axes.append(lv)
    return np.array([(ax, ay, az) for ax in axes[0] for ay in axes[1] for az in axes[2]])


def _children(s: np.ndarray, b_ext: np.ndarray, params: PlannerParams):
    """All (control, duration) children of ``s`` before pruning."""
    R = control_set(params, b_ext)
    taus = np.asarray(params.durations, dtype=float)
    rr = np.repeat(R, taus.size, axis=0)
    tt = np.tile(taus, R.shape[0])
    a = rr + np.asarray(b_ext, dtype=float) / params.m
    p0, v0 = s[:3], s[3:]
    p1 = p0 + v0 * tt[:, None] + 0.5 * a * tt[:, None] ** 2
    v1 = v0 + a * tt[:, None]
    return rr, tt, a, p1, v1


def _collides(grid: OccupancyGrid, s: np.ndarray, a: np.ndarray, tt: np.ndarray,
              v1: np.ndarray, radius: float) -> np.ndarray:
    """Per-child collision flag, sampling each primitive at spacing <= resolution."""
    speed = np.maximum(np.linalg.norm(s[3:]), np.linalg.norm(v1, axis=1))
    n_s = int(np.ceil(np.max(tt * speed) / grid.resolution)) + 1
    frac = np.arange(1, n_s + 1) / n_s
    t = tt[:, None] * frac[None, :]                           # (c, n_s)
    pts = s[:3] + s[3:] * t[..., None] + 0.5 * a[:, None, :] * t[..., None] ** 2
    hit = grid.inflated_occupied(pts.reshape(-1, 3), radius).reshape(t.shape)
    return hit.any(axis=1)


def expand(node: PrimitiveNode, b_ext, params: PlannerParams, grid: Optional[OccupancyGrid] = None,
           goal=None, radius: Optional[float] = None) -> List[PrimitiveNode]:
    """Children of ``node`` that respect the velocity bound and avoid the inflated grid."""
    rr, tt, a, p1, v1 = _children(node.s, b_ext, params)
    ok = np.all(np.abs(v1) <= params.v_max + 1e-9, axis=1)
    if grid is not None:
        rad = params.r if radius is None else radius
        ok &= ~_collides(grid, node.s, a, tt, v1, rad)
    idx = np.flatnonzero(ok)
    g = node.g_cost + (np.einsum("ij,ij->i", rr[idx], rr[idx]) + params.rho_time) * tt[idx]
    if goal is not None:
        h = params.heuristic_weight * heuristic_batch(p1[idx], v1[idx], goal, params.rho_time)
    else:
        h = np.zeros(idx.size)
    out = []
    for j, i in enumerate(idx):
        out.append(PrimitiveNode(np.concatenate([p1[i], v1[i]]), node, rr[i], float(tt[i]),
                                 float(g[j]), float(g[j] + h[j])))
    return out


# ------------------------------------------------------------------- heuristic

def heuristic_batch(P: np.ndarray, V: np.ndarray, goal, rho: float) -> np.ndarray:
    """Optimal force-free cost ``int |r|^2 dt + rho T`` from (P, V) to (goal, rest).

    For fixed T the minimum-energy cubic costs ``c3/T^3 + c2/T^2 + c1/T``;
    the optimal T is a positive root of ``rho T^4 - c1 T^2 - 2 c2 T - 3 c3``.
    """
    P = np.atleast_2d(P)
    V = np.atleast_2d(V)
    dp = np.asarray(goal, dtype=float) - P
    c3 = 12.0 * np.einsum("ij,ij->i", dp, dp)
    c2 = -12.0 * np.einsum("ij,ij->i", V, dp)
    c1 = 4.0 * np.einsum("ij,ij->i", V, V)
    n = P.shape[0]
    out = np.zeros(n)
    live = (c3 + np.abs(c2) + c1) > 1e-14
    if not np.any(live):
        return out
    # companion matrices of T^4 + 0 T^3 - (c1/rho) T^2 - (2 c2/rho) T - 3 c3/rho
    m = int(live.sum())
    C = np.zeros((m, 4, 4))
    C[:, 1, 0] = C[:, 2, 1] = C[:, 3, 2] = 1.0
    C[:, 0, 0] = 0.0
    C[:, 0, 1] = c1[live] / rho
    C[:, 0, 2] = 2.0 * c2[live] / rho
    C[:, 0, 3] = 3.0 * c3[live] / rho
    roots = np.linalg.eigvals(C)
    T = np.where((np.abs(roots.imag) < 1e-9 * (1 + np.abs(roots.real))) & (roots.real > 1e-9),
                 roots.real, np.nan)
    J = c3[live, None] / T ** 3 + c2[live, None] / T ** 2 + c1[live, None] / T + rho * T
    best = np.nanmin(np.where(np.isfinite(J), J, np.nan), axis=1)
    out[live] = np.maximum(np.nan_to_num(best, nan=0.0), 0.0)
    return out


def heuristic(s, goal, params: PlannerParams) -> float:
    s = np.asarray(s, dtype=float)
    return float(heuristic_batch(s[None, :3], s[None, 3:], goal, params.rho_time)[0])


# ---------------------------------------------------------------------- search

def _voxel(s: np.ndarray, res_p: float, res_v: float) -> tuple:
    return tuple(np.floor(s[:3] / res_p + 0.5).astype(int).tolist()
                 + np.floor(s[3:] / res_v + 0.5).astype(int).tolist())


def at_goal(s: np.ndarray, goal, params: PlannerParams) -> bool:
    return bool(np.linalg.norm(s[:3] - goal) <= params.goal_tol_pos
                and np.linalg.norm(s[3:]) <= params.goal_tol_vel)


def _reconstruct(node: PrimitiveNode, drift: np.ndarray) -> List[Segment]:
    segs = []
    while node.parent is not None:
        segs.append(Segment(node.parent.s.copy(), node.r.copy(), drift.copy(), node.tau))
        node = node.parent
    return segs[::-1]


def search(grid: OccupancyGrid, start, goal, b_ext, params: PlannerParams,
           t0: float = 0.0) -> ReferencePath:
    """Minimum ``sum (|r|^2 + rho) tau`` primitive sequence from ``start`` to the goal region.

    ``start`` is a QuadState or a 6-vector (position, velocity). The start
    itself is exempt from the inflated collision test; when it sits inside
    the inflation the radius is reduced to its clearance for this call.
    """
    if isinstance(start, QuadState):
        s0 = np.concatenate([start.p, start.v])
    else:
        s0 = np.asarray(start, dtype=float).reshape(6)
    goal = np.asarray(goal, dtype=float)
    b_ext = np.asarray(b_ext, dtype=float)
    drift = b_ext / params.m
    if grid.occupied(s0[None, :3])[0]:
        raise SearchError(f"start {s0[:3].tolist()} is occupied")
    if grid.occupied(goal[None])[0]:
        raise SearchError(f"goal {goal.tolist()} is occupied")
    if at_goal(s0, goal, params):
        return ReferencePath((), t0, s0.copy())

    radius = params.r
    start_clear = grid.clearance_at(s0[None, :3])[0] - 0.5 * grid.resolution
    if start_clear < radius:
        radius = max(start_clear - grid.resolution, 0.0)

    res_p, res_v = grid.resolution, params.vel_voxel
    root = PrimitiveNode(s0.copy(), None, np.zeros(3), 0.0, 0.0,
                         params.heuristic_weight * heuristic(s0, goal, params))
    counter = itertools.count()
    root_key = _voxel(s0, res_p, res_v)
    open_heap = [(root.f_cost, 0.0, root_key, next(counter), root)]
    best_g = {root_key: 0.0}
    closed = set()
    expanded = 0
    while open_heap:
        _, g, key, _, node = heapq.heappop(open_heap)
        if key in closed:
            continue
        closed.add(key)
        if at_goal(node.s, goal, params):
            return ReferencePath(tuple(_reconstruct(node, drift)), t0, s0.copy())
        expanded += 1
        if expanded > params.node_budget:
            break
        for child in expand(node, b_ext, params, grid, goal, radius):
            ck = _voxel(child.s, res_p, res_v)
            if ck in closed or best_g.get(ck, np.inf) <= child.g_cost:
                continue
            best_g[ck] = child.g_cost
            heapq.heappush(open_heap, (child.f_cost, child.g_cost, ck, next(counter), child))
    raise NoPathError(f"no path to {goal.tolist()} after expanding {expanded} nodes")


# ---------------------------------------------------------------------- window

def sample_window(path: ReferencePath, t_now: float, params: PlannerParams,
                  psi_now: float = 0.0) -> ReferenceWindow:
    """Reference positions and yaws at ``t_now + k t_s`` for k = 0..N.

    Yaw follows the reference velocity heading outside a speed dead-band and
    is held otherwise; the sequence is unwrapped starting from ``psi_now``.
    """
    times = t_now + params.t_s * np.arange(params.N + 1)
    P, V = path.sample(times)
    yaw = np.empty(params.N + 1)
    prev = psi_now
    for k in range(params.N + 1):
        if np.hypot(V[k, 0], V[k, 1]) > params.yaw_deadband:
            prev = float(np.arctan2(V[k, 1], V[k, 0]))
        yaw[k] = prev
    yaw = np.unwrap(np.concatenate([[psi_now], yaw]))[1:]
    beyond = bool(times[-1] > path.t_end)
    return ReferenceWindow(P, yaw, beyond, V)
