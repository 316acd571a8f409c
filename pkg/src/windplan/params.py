"""Planner and vehicle parameters shared by every module."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Tuple

import numpy as np


def _vec(*vals):
    return field(default_factory=lambda: tuple(vals))


@dataclass(frozen=True)
class PlannerParams:
    """Physical constants, solver knobs and cost weights.

    Weights are the diagonals of the weighting matrices. ``w_m`` and
    ``a_max`` are mass-normalized (m/s^2); ``k_d`` is in N s/m so that drag
    is a force.
    """

    # vehicle
    m: float = 1.0
    g: float = 9.81
    k_d: float = 0.33
    r: float = 0.22
    h: float = 0.13
    # horizon
    t_s: float = 0.05
    N: int = 20
    # disturbance bound on the mass-normalized force residual
    w_m: float = 0.5
    # state / input envelope
    v_max: float = 2.0
    tilt_max: float = 0.6
    rate_max: float = 3.0
    thrust_max_factor: float = 2.5
    # cost weights
    l_p: Tuple[float, ...] = _vec(100.0, 100.0, 100.0)
    l_psi: float = 10.0
    l_p_N: Tuple[float, ...] = _vec(200.0, 200.0, 200.0)
    l_psi_N: float = 20.0
    l_v_N: Tuple[float, ...] = _vec(10.0, 10.0, 10.0)
    l_u: Tuple[float, ...] = _vec(1.0, 1.0, 1.0, 0.1)
    l_du: Tuple[float, ...] = _vec(5.0, 5.0, 5.0, 0.2)
    # solver
    rho_slack: float = 1.0e4
    slack_reg: float = 1.0
    rho_dyn: float = 100.0           # merit weight on the shooting defects
    slack_tol: float = 0.01
    kkt_tol: float = 1.0e-6
    max_sqp_iter: int = 30
    frs_delta: float = 1.0e-6
    lqr_q: Tuple[float, ...] = _vec(10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    lqr_r: Tuple[float, ...] = _vec(1.0, 1.0, 1.0, 1.0)
    # front end
    a_max: float = 2.0
    accel_levels: int = 3            # odd; evenly spaced in [-a_max, a_max] per axis
    durations: Tuple[float, ...] = _vec(0.25, 0.5)
    rho_time: float = 10.0
    heuristic_weight: float = 1.0
    goal_tol_pos: float = 0.3
    goal_tol_vel: float = 0.3
    node_budget: int = 20000
    vel_voxel: float = 0.2
    yaw_deadband: float = 0.2
    planar: bool = False
    # corridor
    max_extent: float = 2.0
    box_budget: int = 12
    corridor_overlap: float = 0.55   # m, width of the overlap between consecutive boxes
    # orchestration
    d_track: float = 0.8
    tau_f: float = 0.1
    sim_dt: float = 0.005
    max_brake_ticks: int = 3
    continuous_b_update: bool = False

    def __post_init__(self):
        for name in ("m", "g", "k_d", "r", "h", "t_s", "v_max", "tilt_max",
                     "rate_max", "thrust_max_factor", "a_max", "sim_dt", "tau_f"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"parameter {name} must be > 0, got {val}")
        if self.N < 2:
            raise ValueError(f"horizon N must be >= 2, got {self.N}")
        if self.w_m < 0:
            raise ValueError(f"w_m must be >= 0, got {self.w_m}")
        for name in ("l_p", "l_p_N", "l_v_N", "l_u", "l_du", "lqr_q", "lqr_r"):
            if min(getattr(self, name)) < 0:
                raise ValueError(f"weight {name} must be positive semidefinite")
        if min(self.l_psi, self.l_psi_N) < 0:
            raise ValueError("yaw weights must be nonnegative")
        if not self.durations or min(self.durations) <= 0:
            raise ValueError("primitive durations must be positive")
        if self.accel_levels < 3 or self.accel_levels % 2 == 0:
            raise ValueError(f"accel_levels must be odd and >= 3, got {self.accel_levels}")

    @property
    def thrust_max(self) -> float:
        return self.thrust_max_factor * self.m * self.g

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g

    def scaled_weights(self, c: float) -> "PlannerParams":
        """Copy with every cost weight multiplied by ``c`` (slack penalty included)."""
        kw = {}
        for name in ("l_p", "l_p_N", "l_v_N", "l_u", "l_du"):
            kw[name] = tuple(c * w for w in getattr(self, name))
        kw["l_psi"] = c * self.l_psi
        kw["l_psi_N"] = c * self.l_psi_N
        kw["rho_slack"] = c * self.rho_slack
        kw["slack_reg"] = c * self.slack_reg
        kw["rho_dyn"] = c * self.rho_dyn
        return replace(self, **kw)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = list(val) if isinstance(val, tuple) else val
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerParams":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, val in data.items():
            if key not in known:
                raise KeyError(f"unknown planner parameter '{key}'")
            kw[key] = tuple(float(v) for v in val) if isinstance(val, (list, tuple)) else val
        return cls(**kw)
