import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windplan.dynamics import hover_gain, hover_linearization, rotation
from windplan.frs import (build_frs_sequence, disturbance_shape, ego_shape, halfspace_margin, outer_sum,
                          propagate, support)
from windplan.params import PlannerParams

P = PlannerParams()
D = np.zeros((9, 3))
D[3:6] = np.eye(3) / P.m


def random_pd(rng, n=3):
    M = rng.normal(size=(n, n))
    return M @ M.T + 1e-3 * np.eye(n)


def unit_dirs(rng, n, dim=3):
    a = rng.normal(size=(n, dim))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def test_outer_sum_examples():
    assert np.allclose(outer_sum(np.eye(3), np.eye(3)), 4 * np.eye(3))
    assert np.allclose(outer_sum(4 * np.eye(3), np.eye(3)), 9 * np.eye(3), atol=1e-12)
    Z = np.zeros((3, 3))
    Q = random_pd(np.random.default_rng(0))
    assert np.array_equal(outer_sum(Z, Q), Q) and np.array_equal(outer_sum(Q, Z), Q)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.01, 100.0))
def test_outer_sum_algebra(seed, c):
    rng = np.random.default_rng(seed)
    Q1, Q2 = random_pd(rng), random_pd(rng)
    S = outer_sum(Q1, Q2)
    assert np.allclose(S, outer_sum(Q2, Q1), rtol=1e-12, atol=1e-12)
    assert np.allclose(outer_sum(c * Q1, c * Q2), c * S, rtol=1e-10)
    assert np.min(np.linalg.eigvalsh(S)) > 0
    a = unit_dirs(rng, 200)
    assert np.all(support(S, a) >= support(Q1, a) + support(Q2, a) - 1e-9)


def test_ego_shape():
    assert np.allclose(ego_shape(np.eye(3), 0.22, 0.13), np.diag([0.0484, 0.0484, 0.0169]))
    R = rotation(0.3, -0.2, 1.0)
    ev = np.sort(np.linalg.eigvalsh(ego_shape(R, 0.22, 0.13)))
    assert np.allclose(ev, [0.0169, 0.0484, 0.0484])
    assert np.allclose(ego_shape(rotation(0, 0, 0.7), 0.22, 0.13), ego_shape(np.eye(3), 0.22, 0.13))


def test_disturbance_shape_values():
    assert np.array_equal(disturbance_shape(D, 0.0, 0.05), np.zeros((9, 9)))
    Qd = disturbance_shape(D, 0.5, 0.05)
    assert np.allclose(np.diag(Qd)[3:6], 1.875e-3)
    assert np.allclose(np.delete(np.delete(Qd, [3, 4, 5], 0), [3, 4, 5], 1), 0.0)


def test_propagate_trivial_cases():
    rng = np.random.default_rng(1)
    Q0 = random_pd(rng, 9)
    Qd = disturbance_shape(D, 0.5, 0.05)
    Qe, Qn = propagate(Q0, Qd, np.zeros((9, 9)), 0.05)
    assert np.allclose(Qe, outer_sum(Q0, Qd)[:3, :3])
    Qe, Qn = propagate(Q0, np.zeros((9, 9)), np.zeros((9, 9)), 0.05)
    assert np.allclose(Qe, Q0[:3, :3]) and np.allclose(Qn, Q0)


def test_propagate_contraction_bound():
    lin = hover_linearization(P)
    Gam = lin.A + lin.B @ hover_gain(P)
    rng = np.random.default_rng(2)
    Q0 = random_pd(rng, 9)
    Qe, _ = propagate(Q0, np.zeros((9, 9)), Gam, 0.05)
    # eigen-decomposition oracle of exp(Gamma t)
    w, V = np.linalg.eig(Gam)
    Phi = (V * np.exp(w * 0.05)) @ np.linalg.inv(V)
    kappa = np.linalg.norm(Phi.real, 2) ** 2
    assert np.trace(Qe) <= np.trace(Q0) * kappa + 1e-12
    assert np.allclose(Qe, (Phi.real @ Q0 @ Phi.real.T)[:3, :3], atol=1e-10)


def test_halfspace_margin_examples():
    assert halfspace_margin([3, 0, 0], np.eye(3), [1, 0, 0]) == pytest.approx(4.0)
    assert halfspace_margin([4, 0, 0], np.eye(3), [1, 0, 0]) == pytest.approx(5.0)


def test_halfspace_margin_lagrangian_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(100):
        Q = random_pd(rng)
        a = unit_dirs(rng, 1)[0]
        p = rng.normal(size=3)
        # maximizer of a.x on xi(p, Q): x* = p + Q a / sqrt(a^T Q a)
        x_star = p + Q @ a / np.sqrt(a @ Q @ a)
        assert abs(halfspace_margin(p, Q, a) - a @ x_star) < 1e-10


def test_containment_chain():
    X = np.tile(np.zeros(9), (P.N + 1, 1))
    X[:, 8] = 0.3
    U = np.tile([0, 0, 0, P.hover_thrust], (P.N, 1))
    frs = build_frs_sequence(X, U, hover_gain(P), P)
    a = unit_dirs(np.random.default_rng(4), 500)
    for k in range(P.N + 1):
        assert np.all(support(frs.Q[k], a) >= support(frs.Q_ego[k], a) - 1e-12)
        assert np.all(support(frs.Q[k], a) >= support(frs.Q_ext[k], a) - 1e-12)


def test_sequence_no_uncertainty_is_body_shape():
    X = np.zeros((P.N + 1, 9))
    U = np.tile([0, 0, 0, P.hover_thrust], (P.N, 1))
    Pz = PlannerParams(frs_delta=1e-14)
    frs = build_frs_sequence(X, U, hover_gain(Pz), Pz, w_m=0.0)
    assert np.allclose(frs.Q, frs.Q_ego, atol=1e-10)


def test_trace_nondecreasing_without_feedback():
    Qd = disturbance_shape(D, 0.5, 0.05)
    Q0 = 1e-6 * np.eye(9)
    traces = []
    for _ in range(P.N + 1):
        Qe, Q0 = propagate(Q0, Qd, np.zeros((9, 9)), 0.05)
        traces.append(np.trace(Qe))
    assert np.all(np.diff(traces) >= -1e-15)


def test_long_run_trace_bounded():
    K = hover_gain(P)
    rng = np.random.default_rng(5)
    cap = 1.0
    for _ in range(100):
        X = np.zeros((P.N + 1, 9))
        X[:, 3:6] = rng.uniform(-1, 1, 3)
        X[:, 6:8] = rng.uniform(-0.3, 0.3, 2)
        U = np.tile([0, 0, 0, P.hover_thrust], (P.N, 1))
        frs = build_frs_sequence(X, U, K, P)
        t = np.trace(frs.Q_ext[-1])
        assert np.isfinite(t) and t < cap
