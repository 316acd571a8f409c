"""Event-triggered planning loop and closed-loop mission runner.

Every planner tick checks the replanning triggers, re-runs the front-end
search when one fires, then rebuilds the corridor and reachable sets, solves
the NMPC and dispatches the first command. The plant runs in lockstep at
``sim_dt`` with the command held between ticks.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, FrozenSet, List, Optional

import numpy as np

from .corridor import CorridorError, assign_stages, build_corridor
from .dynamics import ControlInput, QuadState, hover_gain, rk4_array, rotation
from .frontend import NoPathError, ReferencePath, SearchError, at_goal, sample_window, search
from .frs import build_frs_sequence, ego_shape, halfspace_margin
from .nmpc import CONVERGED, INFEASIBLE_SLACK, MAX_ITER, NmpcSolver, OcpProblem, first_command
from .params import PlannerParams
from .plant import ForceEstimate, ForceObserver, PlantState, sim_step
from .qp import QPInfeasibleError
from .world import OccupancyGrid, Scenario, body_collides, clearance

FORCE_BOUND = "force-bound-exceeded"
REFERENCE_COLLISION = "reference-collision"
TRACKING_DIVERGENCE = "tracking-divergence"
GOAL_CHANGED = "goal-changed"
SOLVER_INFEASIBLE = "solver-infeasible"
REASONS = (FORCE_BOUND, REFERENCE_COLLISION, TRACKING_DIVERGENCE, GOAL_CHANGED, SOLVER_INFEASIBLE)

PROPOSED = "proposed"
FORCE_UNAWARE = "force-unaware"
VARIANTS = (PROPOSED, FORCE_UNAWARE)

BRAKE = "brake"
_UNAWARE_W_M = 1e-6
_ZERO_SLACK = 1e-9


class MissionAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class ReplanDecision:
    triggered: bool
    reasons: FrozenSet[str] = frozenset()

    def __post_init__(self):
        if self.triggered != bool(self.reasons):
            raise ValueError("triggered must be true exactly when reasons is nonempty")
        unknown = set(self.reasons) - set(REASONS)
        if unknown:
            raise ValueError(f"unknown trigger reasons {sorted(unknown)}")


def _path_collides(path: ReferencePath, grid: OccupancyGrid, t_now: float) -> bool:
    if not path.segments:
        return bool(grid.occupied(path.endpoint()[None, :3])[0])
    t_from = max(t_now, path.t0)
    if t_from >= path.t_end:
        return bool(grid.occupied(path.endpoint()[None, :3])[0])
    n = max(int(math.ceil((path.t_end - t_from) / 0.02)), 1)
    P, _ = path.sample(np.linspace(t_from, path.t_end, n + 1))
    return bool(np.any(grid.occupied(P)))


def check_triggers(F_est, b_ext, path: Optional[ReferencePath], grid: OccupancyGrid,
                   x_now: QuadState, t_now: float, params: PlannerParams, *,
                   goal_changed: bool = False, solver_infeasible: bool = False,
                   force_trigger: bool = True) -> ReplanDecision:
    """Evaluate the replanning conditions at ``t_now``.

    The force test is on mass-normalized values: ``|F_est - b_ext|_inf / m > w_m``.
    Remaining path points are tested against the raw (uninflated) grid.
    """
    reasons = set()
    dev = np.max(np.abs(np.asarray(F_est, dtype=float) - np.asarray(b_ext, dtype=float))) / params.m
    if force_trigger and dev > params.w_m:
        reasons.add(FORCE_BOUND)
    if path is not None:
        if _path_collides(path, grid, t_now):
            reasons.add(REFERENCE_COLLISION)
        p_ref, _ = path.sample([t_now])
        if np.linalg.norm(x_now.p - p_ref[0]) > params.d_track:
            reasons.add(TRACKING_DIVERGENCE)
    if goal_changed:
        reasons.add(GOAL_CHANGED)
    if solver_infeasible:
        reasons.add(SOLVER_INFEASIBLE)
    return ReplanDecision(bool(reasons), frozenset(reasons))


def brake_command(x: QuadState, params: PlannerParams) -> ControlInput:
    """Level the attitude as fast as the rate limits allow while holding hover thrust."""
    rates = np.clip(-np.array([x.phi, x.theta]) / params.t_s, -params.rate_max, params.rate_max)
    return ControlInput(float(rates[0]), float(rates[1]), 0.0, params.hover_thrust)


def commanded_accel(x: QuadState, u: ControlInput, params: PlannerParams) -> np.ndarray:
    R = rotation(x.phi, x.theta, x.psi)
    return R @ np.array([0.0, 0.0, u.thrust_c]) / params.m - np.array([0.0, 0.0, params.g])


@dataclass
class TickInfo:
    decision: ReplanDecision
    replanned: bool
    status: str
    b_ext: np.ndarray
    diagnostics: Dict[str, float] = field(default_factory=dict)
    trace_q_ext: float = 0.0


def variant_settings(params: PlannerParams, variant: str) -> dict:
    """Everything that differs between planner variants.

    The force-unaware ablation keeps ``b_ext`` at zero, shrinks the FRS
    disturbance bound to ``1e-6`` and therefore never fires the force trigger.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r} (known: {VARIANTS})")
    aware = variant == PROPOSED
    return {"force_aware": aware, "frs_w_m": params.w_m if aware else _UNAWARE_W_M}


class Planner:
    """Mission context for :meth:`plan_cycle`: reference, nominal force, last solution."""

    def __init__(self, grid: OccupancyGrid, targets, params: PlannerParams, variant: str = PROPOSED):
        self.grid = grid
        self.targets = [np.asarray(t, dtype=float).reshape(3) for t in targets]
        if not self.targets:
            raise ValueError("need at least one target")
        self.params = params
        self.variant = variant
        cfg = variant_settings(params, variant)
        self.force_aware = cfg["force_aware"]
        self.frs_w_m = cfg["frs_w_m"]
        self.solver = NmpcSolver(params)
        self.K = hover_gain(params)
        self.b_ext = np.zeros(3)
        self.path: Optional[ReferencePath] = None
        self.prev = None            # last usable OcpSolution
        self.prev_corridor = None
        self.target_idx = 0
        self.u_prev: Optional[np.ndarray] = None
        self.brake_ticks = 0
        self.force_replan = False
        self.replans = 0

    @property
    def goal(self) -> np.ndarray:
        return self.targets[self.target_idx]

    @property
    def done(self) -> bool:
        return self.target_idx >= len(self.targets)

    def reached(self, x: QuadState) -> bool:
        s = np.concatenate([x.p, x.v])
        return at_goal(s, self.goal, self.params)

    def _shifted_plan(self, x_now: QuadState):
        N = self.params.N
        if self.prev is None:
            X = np.tile(x_now.as_array(), (N + 1, 1))
            U = np.tile([0.0, 0.0, 0.0, self.params.hover_thrust], (N, 1))
            return X, U
        X = np.vstack([self.prev.X[1:], self.prev.X[-1:]])
        U = np.vstack([self.prev.U[1:], self.prev.U[-1:]])
        return X, U

    def _replan(self, x_now: QuadState, t_now: float, grid: OccupancyGrid):
        P = self.params
        _, U = self._shifted_plan(x_now)
        x_pred = rk4_array(x_now.as_array(), U[0], self.b_ext, P.t_s, P)
        if grid.occupied(x_pred[None, :3])[0]:
            x_pred = x_now.as_array()
        try:
            self.path = search(grid, x_pred[:6], self.goal, self.b_ext, P, t0=t_now + P.t_s)
        except (NoPathError, SearchError) as exc:
            raise MissionAbort(f"front-end search failed: {exc}") from exc
        self.replans += 1

    def plan_cycle(self, x_now: QuadState, F_est: ForceEstimate, t_now: float,
                   grid: Optional[OccupancyGrid] = None):
        """One planner tick; returns ``(command, a_e, TickInfo)``.

        Raises
        ------
        MissionAbort
            On front-end failure or when braking lasts longer than allowed.
        """
        P = self.params
        grid = self.grid if grid is None else grid
        goal_changed = self.path is None
        if self.reached(x_now) and self.target_idx < len(self.targets) - 1:
            self.target_idx += 1
            goal_changed = True
        if self.force_aware and P.continuous_b_update:
            self.b_ext = F_est.F_est.copy()
        dec = check_triggers(F_est.F_est, self.b_ext, self.path, grid, x_now, t_now, P,
                             goal_changed=goal_changed, solver_infeasible=self.force_replan,
                             force_trigger=self.force_aware)
        self.force_replan = False
        if dec.triggered:
            if self.force_aware:
                self.b_ext = F_est.F_est.copy()
            self._replan(x_now, t_now, grid)

        window = sample_window(self.path, t_now, P, psi_now=x_now.psi)
        X, U = self._shifted_plan(x_now)
        X[0] = x_now.as_array()
        frs = build_frs_sequence(X, U, self.K, P, w_m=self.frs_w_m)
        status = BRAKE
        diag: Dict[str, float] = {}
        sol = None
        try:
            corridor = build_corridor(grid, window, P, p_now=x_now.p)
            if self.prev is not None:
                corridor = assign_stages(corridor, X[:, 0:3], frs.margins)
            prob = OcpProblem(x_now, self.b_ext, window, corridor, frs, P, self.u_prev)
            sol = self.solver.solve(prob, self.prev)
            diag = sol.diagnostics()
            status = sol.status
        except (CorridorError, QPInfeasibleError, np.linalg.LinAlgError) as exc:
            diag = {"error": str(exc)}
        if sol is not None and sol.status in (CONVERGED, MAX_ITER):
            u, a_e = first_command(sol, P)
            self.prev = sol
            self.prev_corridor = corridor
            self.brake_ticks = 0
        else:
            self.brake_ticks += 1
            self.force_replan = True
            self.prev = None
            self.prev_corridor = None
            if self.brake_ticks > P.max_brake_ticks:
                raise MissionAbort(f"solver infeasible for more than {P.max_brake_ticks} ticks")
            u = brake_command(x_now, P)
            a_e = commanded_accel(x_now, u, P)
            status = BRAKE if sol is None else status
        self.u_prev = u.as_array()
        info = TickInfo(dec, dec.triggered, status, self.b_ext.copy(), diag,
                        float(np.trace(frs.Q_ext[-1])))
        return u, a_e, info

    def safety_violation(self, x_truth: QuadState, tol: float = 1e-9) -> Optional[bool]:
        """Whether the truth body ellipsoid left the polytope the last solve assigned to its stage 1.

        Returns None when the last cycle gives no guarantee (no converged
        zero-slack solution).
        """
        sol = self.prev
        if sol is None or self.prev_corridor is None:
            return None
        if sol.status != CONVERGED or sol.slack_max > _ZERO_SLACK:
            return None
        poly = self.prev_corridor.stage_poly(1)
        Q = ego_shape(rotation(*x_truth.angles), self.params.r, self.params.h)
        margins = np.array([halfspace_margin(x_truth.p, Q, a) for a in poly.A])
        return bool(np.any(margins > poly.b + tol))


# ----------------------------------------------------------------------- log

LOG_FIELDS = (["t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "phi", "theta", "psi",
               "cmd_phi_rate", "cmd_theta_rate", "cmd_psi_rate", "cmd_thrust",
               "a_e_x", "a_e_y", "a_e_z", "F_est_x", "F_est_y", "F_est_z",
               "F_applied_x", "F_applied_y", "F_applied_z", "b_ext_x", "b_ext_y", "b_ext_z",
               "status", "triggers", "replanned", "iterations", "kkt", "slack_max",
               "solve_time", "dyn_residual", "clearance", "safety_checked", "safety_violation",
               "trace_Q_ext"])


@dataclass
class MissionLog:
    records: List[dict]
    summary: dict
    t_s: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            for r in self.records:
                w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                            for k, v in r.items()})

    @staticmethod
    def read_csv(path) -> List[dict]:
        out = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rec = {}
                for k, v in row.items():
                    if k in ("status", "triggers"):
                        rec[k] = v
                    else:
                        rec[k] = float(v)
                out.append(rec)
        return out

    def summary_line(self) -> str:
        s = self.summary
        return (f"success={s['success']} reason={s['reason']} time_s={s['trajectory_time']:.3f} "
                f"ctrl_cost={s['control_cost']:.4f} min_clearance_m={s['min_clearance']:.3f} "
                f"replans={s['replan_count']} safety_violations={s['safety_violations']}")


def summarize(records: List[dict], t_s: float, success: bool, reason: str) -> dict:
    """Mission summary computed from tick records alone."""
    a = np.array([[r["a_e_x"], r["a_e_y"], r["a_e_z"]] for r in records]) if records else np.zeros((0, 3))
    cost = float(np.sum(np.einsum("ij,ij->i", a, a)) * t_s)
    clear = [r["clearance"] for r in records]
    return {
        "success": bool(success),
        "reason": reason,
        "trajectory_time": float(records[-1]["t"]) if (success and records) else float("nan"),
        "control_cost": cost,
        "min_clearance": float(min(clear)) if clear else float("nan"),
        "replan_count": int(sum(int(r["replanned"]) for r in records)),
        "safety_violations": int(sum(int(r["safety_violation"]) for r in records)),
        "ticks": len(records),
    }


def _record(t, x: QuadState, u, a_e, F_est, F_app, info: Optional[TickInfo], clear, checked, viol):
    d = info.diagnostics if info else {}
    rec = {"t": float(t)}
    for k, v in zip(LOG_FIELDS[1:10], x.as_array()):
        rec[k] = float(v)
    ua = np.zeros(4) if u is None else u.as_array()
    for k, v in zip(LOG_FIELDS[10:14], ua):
        rec[k] = float(v)
    for k, v in zip(LOG_FIELDS[14:17], a_e):
        rec[k] = float(v)
    for k, v in zip(LOG_FIELDS[17:20], F_est):
        rec[k] = float(v)
    for k, v in zip(LOG_FIELDS[20:23], F_app):
        rec[k] = float(v)
    b = info.b_ext if info else np.zeros(3)
    for k, v in zip(LOG_FIELDS[23:26], b):
        rec[k] = float(v)
    rec["status"] = info.status if info else "arrived"
    rec["triggers"] = ";".join(sorted(info.decision.reasons)) if info else ""
    rec["replanned"] = int(info.replanned) if info else 0
    rec["iterations"] = int(d.get("iterations", 0))
    rec["kkt"] = float(d.get("kkt", 0.0))
    rec["slack_max"] = float(d.get("slack_max", 0.0))
    rec["solve_time"] = float(d.get("solve_time", 0.0))
    rec["dyn_residual"] = float(d.get("dyn_residual", 0.0))
    rec["clearance"] = float(clear)
    rec["safety_checked"] = int(checked)
    rec["safety_violation"] = int(viol)
    rec["trace_Q_ext"] = info.trace_q_ext if info else 0.0
    return rec


def run_mission(scenario: Scenario, variant: str = PROPOSED,
                grid_provider: Optional[Callable[[float], OccupancyGrid]] = None,
                extra_force: Optional[Callable[[float], np.ndarray]] = None,
                log_path=None, max_time: Optional[float] = None) -> MissionLog:
    """Fly ``scenario`` in closed loop until arrival, collision, abort or timeout.

    ``grid_provider(t)`` may reveal obstacles over time; the planner and the
    collision check both use the grid it returns. ``extra_force(t)`` adds a
    scripted mass-normalized force on top of wind and payload.
    """
    P = scenario.params
    n_sub = int(round(P.t_s / P.sim_dt))
    if abs(n_sub * P.sim_dt - P.t_s) > 1e-12:
        raise ValueError("t_s must be a whole number of simulation steps")
    grid0 = scenario.grid
    records: List[dict] = []
    success, reason = False, "timeout"
    x0 = scenario.start_state
    if grid0.occupied(x0.p[None])[0] or body_collides(grid0, x0.p, ego_shape(rotation(*x0.angles), P.r, P.h)):
        return MissionLog([], summarize([], P.t_s, False, "start-occupied: start collides with an obstacle"), P.t_s)

    planner = Planner(grid0, scenario.targets, P, variant)
    plant = PlantState(x0, np.zeros(3), 0.0)
    obs = ForceObserver(P)
    rng = np.random.default_rng(scenario.seed)
    horizon = scenario.timeout if max_time is None else max_time
    n_ticks = int(math.floor(horizon / P.t_s + 1e-9))
    dev_max = 0.0
    for tick in range(n_ticks):
        t = tick * P.t_s
        grid = grid0 if grid_provider is None else grid_provider(t)
        x = plant.truth
        viol = planner.safety_violation(x)
        checked = viol is not None and dev_max <= P.m * P.w_m + 1e-12
        viol = bool(viol) and checked
        F_est = obs.estimate
        try:
            u, a_e, info = planner.plan_cycle(x, F_est, t, grid)
        except MissionAbort as exc:
            success, reason = False, f"abort: {exc}"
            break
        records.append(_record(t, x, u, a_e, F_est.F_est, plant.applied_force, info,
                               clearance(grid, x.p), checked, viol))
        b_used = info.b_ext
        dev_max = 0.0
        collided = False
        for i in range(n_sub):
            prev = plant
            ts = t + i * P.sim_dt
            payload = scenario.payload_accel if extra_force is None else scenario.payload_accel + extra_force(ts)
            plant = sim_step(plant, u, scenario.wind_zones, P.sim_dt, P, payload,
                             scenario.force_noise, rng)
            plant = replace(plant, t=ts + P.sim_dt)
            obs.update(prev.truth, plant.truth, u, P.sim_dt, plant.t)
            dev_max = max(dev_max, float(np.max(np.abs(plant.applied_force - b_used))))
            xb = plant.truth
            if body_collides(grid, xb.p, ego_shape(rotation(*xb.angles), P.r, P.h)):
                collided = True
                break
        if collided:
            success, reason = False, f"collision at t={plant.t:.3f} p={np.round(plant.truth.p, 3).tolist()}"
            break
        if planner.target_idx == len(planner.targets) - 1 and planner.reached(plant.truth):
            t_end = (tick + 1) * P.t_s
            g = grid0 if grid_provider is None else grid_provider(t_end)
            records.append(_record(t_end, plant.truth, None, np.zeros(3), obs.estimate.F_est,
                                   plant.applied_force, None, clearance(g, plant.truth.p), False, False))
            success, reason = True, "arrived"
            break
    summary = summarize(records, P.t_s, success, reason)
    log = MissionLog(records, summary, P.t_s)
    if log_path is not None:
        log.to_csv(log_path)
    return log
