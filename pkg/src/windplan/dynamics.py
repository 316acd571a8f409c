"""Quadrotor translational model driven by Euler-rate and thrust commands.

Euler convention is ZYX: ``R = Rz(psi) @ Ry(theta) @ Rx(phi)``. The angle
rates equal the commanded rates (no rate-transformation matrix), and drag is
first order in the body x-y plane. States and inputs travel as numpy arrays
in the hot paths; :class:`QuadState` and :class:`ControlInput` are the
value-typed wrappers used at module boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg

from . import kernels
from .params import PlannerParams

NX = 9
NU = 4

ForceField = Callable[[np.ndarray], np.ndarray]


class FeedbackGainError(RuntimeError):
    """Raised when no stabilizing feedback gain can be synthesized."""


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class QuadState:
    p: np.ndarray
    v: np.ndarray
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        for name in ("phi", "theta", "psi"):
            object.__setattr__(self, name, float(wrap_angle(getattr(self, name))))
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("state must be finite")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, [self.phi, self.theta, self.psi]])

    @classmethod
    def from_array(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6], x[7], x[8])

    @classmethod
    def at_rest(cls, p, psi: float = 0.0) -> "QuadState":
        return cls(p, np.zeros(3), 0.0, 0.0, psi)

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.phi, self.theta, self.psi])


@dataclass(frozen=True)
class ControlInput:
    phi_rate_c: float
    theta_rate_c: float
    psi_rate_c: float
    thrust_c: float

    def __post_init__(self):
        if self.thrust_c < 0:
            raise ValueError(f"thrust must be nonnegative, got {self.thrust_c}")

    def as_array(self) -> np.ndarray:
        return np.array([self.phi_rate_c, self.theta_rate_c, self.psi_rate_c, self.thrust_c])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]), float(u[2]), float(max(u[3], 0.0)))

    @classmethod
    def hover(cls, params: PlannerParams) -> "ControlInput":
        return cls(0.0, 0.0, 0.0, params.hover_thrust)


@dataclass(frozen=True)
class ExternalForce:
    """Nominal world-frame force and the infinity-norm bound of its residual (both N)."""

    b_ext: np.ndarray
    w_bound: float

    def __post_init__(self):
        object.__setattr__(self, "b_ext", np.asarray(self.b_ext, dtype=float).reshape(3))
        if self.w_bound < 0:
            raise ValueError("w_bound must be >= 0")


@dataclass
class LinearizedSystem:
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    K: Optional[np.ndarray] = None
    Gamma: Optional[np.ndarray] = None

    def with_gain(self, K: np.ndarray) -> "LinearizedSystem":
        return LinearizedSystem(self.A, self.B, self.D, K, self.A + self.B @ K)


def rotation(phi: float, theta: float, psi: float) -> np.ndarray:
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    Rz = np.array([[cpsi, -spsi, 0.0], [spsi, cpsi, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cth, 0.0, sth], [0.0, 1.0, 0.0], [-sth, 0.0, cth]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cphi, -sphi], [0.0, sphi, cphi]])
    return Rz @ Ry @ Rx


def _arr(x):
    return x.as_array() if hasattr(x, "as_array") else np.asarray(x, dtype=float)


def drag_force(state, params: PlannerParams) -> np.ndarray:
    x = _arr(state)
    R = rotation(*x[6:9])
    K = np.diag([params.k_d, params.k_d, 0.0])
    return R @ K @ R.T @ x[3:6]


def derivative(state, inp, f_ext, params: PlannerParams) -> np.ndarray:
    x, u = _arr(state), _arr(inp)
    return kernels.deriv(x, u, np.asarray(f_ext, dtype=float), params.m, params.g, params.k_d)[0]


def rk4_array(x, u, f_ext: Union[np.ndarray, ForceField], dt: float,
              params: PlannerParams) -> np.ndarray:
    """Unwrapped RK4 step on arrays; ``f_ext`` may be a position-dependent field."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    m, g, kd = params.m, params.g, params.k_d
    if not callable(f_ext):
        return kernels.rk4(x, u, np.asarray(f_ext, dtype=float), dt, m, g, kd)[0]
    # the field is sampled at each RK4 stage position
    f = kernels.deriv
    k1 = f(x, u, f_ext(x[0:3]), m, g, kd)[0]
    x2 = x + 0.5 * dt * k1
    k2 = f(x2, u, f_ext(x2[0:3]), m, g, kd)[0]
    x3 = x + 0.5 * dt * k2
    k3 = f(x3, u, f_ext(x3[0:3]), m, g, kd)[0]
    x4 = x + dt * k3
    k4 = f(x4, u, f_ext(x4[0:3]), m, g, kd)[0]
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(state, inp, f_ext, dt: float, params: PlannerParams):
    """Discrete dynamics ``f_d``: one RK4 step with angles re-wrapped.

    Returns the same kind as ``state`` (QuadState or array).
    """
    xn = rk4_array(_arr(state), _arr(inp), f_ext, dt, params)
    xn[6:9] = wrap_angle(xn[6:9])
    if isinstance(state, QuadState):
        return QuadState.from_array(xn)
    return xn


def linearize(state, inp, b_ext, params: PlannerParams) -> LinearizedSystem:
    """Continuous Jacobians of the model at ``(state, input, b_ext)``.

    ``b_ext`` enters the model additively, so A and B do not depend on it.
    """
    A, B = kernels.jac(_arr(state), _arr(inp), params.m, params.g, params.k_d)
    D = np.zeros((NX, 3))
    D[3:6, :] = np.eye(3) / params.m
    return LinearizedSystem(A[0], B[0], D)


def hover_linearization(params: PlannerParams, psi: float = 0.0) -> LinearizedSystem:
    x = np.zeros(NX)
    x[8] = psi
    u = np.array([0.0, 0.0, 0.0, params.hover_thrust])
    return linearize(x, u, np.zeros(3), params)


def feedback_gain(A: np.ndarray, B: np.ndarray, Q=None, R=None) -> np.ndarray:
    """Infinite-horizon LQR gain ``K`` for the policy ``u = K e`` (note the sign).

    The closed loop ``A + B K`` is Hurwitz on success.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.eye(A.shape[0]) if Q is None else np.diag(Q) if np.ndim(Q) == 1 else np.asarray(Q)
    R = np.eye(B.shape[1]) if R is None else np.diag(R) if np.ndim(R) == 1 else np.asarray(R)
    if not np.any(B):
        raise FeedbackGainError("input matrix is zero; system is not stabilizable")
    try:
        P = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FeedbackGainError(f"Riccati solve failed: {exc}") from exc
    K = -np.linalg.solve(R, B.T @ P)
    abscissa = np.max(np.linalg.eigvals(A + B @ K).real)
    if not np.isfinite(abscissa) or abscissa >= 0:
        raise FeedbackGainError(f"closed loop not stable (spectral abscissa {abscissa:.3g})")
    return K


def hover_gain(params: PlannerParams) -> np.ndarray:
    lin = hover_linearization(params)
    return feedback_gain(lin.A, lin.B, params.lqr_q, params.lqr_r)
