"""Ground-truth plant with wind zones, and a lagged external-force observer.

The plant advances with the same RK4 dynamics as the planner. The observer
is a momentum residual (measured acceleration minus modelled thrust, drag
and gravity) passed through a first-order low-pass filter, which gives the
planner a realistically delayed force estimate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dynamics import ControlInput, QuadState, drag_force, rotation, step
from .params import PlannerParams
from .world import WindZone


@dataclass(frozen=True)
class PlantState:
    truth: QuadState
    applied_force: np.ndarray    # N, world frame, total external force over the last step
    t: float

    def __post_init__(self):
        object.__setattr__(self, "applied_force", np.asarray(self.applied_force, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.applied_force)) or not np.isfinite(self.t):
            raise ValueError("plant state must be finite")


@dataclass(frozen=True)
class ForceEstimate:
    F_est: np.ndarray
    timestamp: float

    def __post_init__(self):
        object.__setattr__(self, "F_est", np.asarray(self.F_est, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.F_est)):
            raise ValueError("force estimate must be finite")


def wind_force(zones: Sequence[WindZone], p, m: float) -> np.ndarray:
    """Mass times the summed mass-normalized forces of every zone containing ``p``."""
    f = np.zeros(3)
    for z in zones:
        if z.contains(p):
            f += z.force
    return m * f


def sim_step(plant: PlantState, inp: ControlInput, zones: Sequence[WindZone], dt: float,
             params: PlannerParams, payload_accel=None, noise_bound: float = 0.0,
             rng: Optional[np.random.Generator] = None) -> PlantState:
    """Advance the truth by one RK4 step of length ``dt``.

    Wind is evaluated at every RK4 stage position, so a zone edge crossed
    mid-step contributes partially. ``payload_accel`` (mass-normalized, world
    frame) is constant. Noise, when enabled, is a per-axis clipped Gaussian
    (sigma = bound / 2) held over the step. ``applied_force`` records the
    force at the start of the step.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    m = params.m
    extra = np.zeros(3) if payload_accel is None else m * np.asarray(payload_accel, dtype=float)
    if noise_bound > 0:
        if rng is None:
            raise ValueError("noise needs an explicit random generator")
        extra = extra + m * np.clip(rng.normal(0.0, 0.5 * noise_bound, 3), -noise_bound, noise_bound)

    def field(p):
        return wind_force(zones, p, m) + extra

    applied = field(plant.truth.p)
    nxt = step(plant.truth, inp, field, dt, params)
    return PlantState(nxt, applied, plant.t + dt)


def momentum_residual(prev: QuadState, cur: QuadState, inp, dt: float,
                      params: PlannerParams, accel_noise=None) -> np.ndarray:
    """Raw force estimate over one sample interval.

    Uses the finite-difference acceleration and trapezoid averages of the
    thrust direction and drag at both ends of the interval.
    """
    u = inp.as_array() if hasattr(inp, "as_array") else np.asarray(inp, dtype=float)
    acc = (cur.v - prev.v) / dt
    if accel_noise is not None:
        acc = acc + accel_noise
    e3 = np.array([0.0, 0.0, 1.0])
    thrust = 0.5 * (rotation(*prev.angles) @ e3 + rotation(*cur.angles) @ e3) * u[3]
    drag = 0.5 * (drag_force(prev, params) + drag_force(cur, params))
    return params.m * acc - thrust + drag + params.m * params.g * e3


class ForceObserver:
    """First-order low-pass over the momentum residual; exact discretization per sample."""

    def __init__(self, params: PlannerParams, tau_f: Optional[float] = None,
                 accel_noise_std: float = 0.0, rng: Optional[np.random.Generator] = None):
        self.params = params
        self.tau_f = params.tau_f if tau_f is None else tau_f
        if self.tau_f <= 0:
            raise ValueError("tau_f must be > 0")
        self.accel_noise_std = accel_noise_std
        if accel_noise_std > 0 and rng is None:
            raise ValueError("noise needs an explicit random generator")
        self.rng = rng
        self._F = np.zeros(3)
        self._t = 0.0

    @property
    def estimate(self) -> ForceEstimate:
        return ForceEstimate(self._F.copy(), self._t)

    def reset(self, F0=None, t: float = 0.0):
        self._F = np.zeros(3) if F0 is None else np.asarray(F0, dtype=float).copy()
        self._t = t

    def update(self, prev: QuadState, cur: QuadState, inp, dt: float, t: float) -> ForceEstimate:
        noise = None
        if self.accel_noise_std > 0:
            noise = self.rng.normal(0.0, self.accel_noise_std, 3)
        raw = momentum_residual(prev, cur, inp, dt, self.params, noise)
        alpha = 1.0 - np.exp(-dt / self.tau_f)
        self._F = self._F + alpha * (raw - self._F)
        self._t = t
        return self.estimate


def observe_force(history: Sequence[PlantState], inputs: Sequence, params: PlannerParams,
                  tau_f: Optional[float] = None) -> ForceEstimate:
    """Run the observer over a state history; ``inputs[i]`` drives ``history[i] -> history[i+1]``."""
    if len(history) < 2:
        raise ValueError("force observation needs at least two history samples")
    if len(inputs) < len(history) - 1:
        raise ValueError("one input per history interval is required")
    obs = ForceObserver(params, tau_f)
    obs.reset(t=history[0].t)
    for i in range(len(history) - 1):
        a, b = history[i], history[i + 1]
        obs.update(a.truth, b.truth, inputs[i], b.t - a.t, b.t)
    return obs.estimate
