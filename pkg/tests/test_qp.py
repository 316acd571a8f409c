import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windplan.qp import QPInfeasibleError, solve_qp


def random_qp(rng, n, m):
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n)
    C = rng.normal(size=(m, n))
    z0 = rng.normal(size=n)
    d = C @ z0 - rng.uniform(0, 1, m)       # z0 strictly feasible
    return H, c, C, d


def reference(H, c, C, d):
    z = cp.Variable(H.shape[0])
    cons = [C @ z >= d] if C.shape[0] else []
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(z, cp.psd_wrap(H)) + c @ z), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return z.value, prob.value


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 30), st.integers(0, 60))
def test_matches_interior_point_reference(seed, n, m):
    rng = np.random.default_rng(seed)
    H, c, C, d = random_qp(rng, n, m)
    res = solve_qp(H, c, C, d)
    z_ref, obj_ref = reference(H, c, C, d)
    assert np.all(C @ res.z >= d - 1e-8)
    assert res.objective <= obj_ref + 1e-6 * (1 + abs(obj_ref))
    assert np.allclose(res.z, z_ref, atol=1e-5 * (1 + np.max(np.abs(z_ref))))


def test_kkt_conditions():
    rng = np.random.default_rng(7)
    H, c, C, d = random_qp(rng, 12, 30)
    res = solve_qp(H, c, C, d)
    assert np.all(res.lam >= -1e-12)
    assert np.allclose(H @ res.z + c, C.T @ res.lam, atol=1e-8)
    assert np.allclose(res.lam * (C @ res.z - d), 0.0, atol=1e-8)


def test_unconstrained():
    H = np.diag([2.0, 4.0])
    res = solve_qp(H, np.array([-2.0, -4.0]), np.zeros((0, 2)), np.zeros(0))
    assert np.allclose(res.z, [1.0, 1.0]) and res.active.size == 0


def test_infeasible_detected():
    H = np.eye(2)
    C = np.array([[1.0, 0.0], [-1.0, 0.0]])
    d = np.array([1.0, 0.0])          # x >= 1 and x <= 0
    with pytest.raises(QPInfeasibleError):
        solve_qp(H, np.zeros(2), C, d)


def test_not_positive_definite():
    with pytest.raises(np.linalg.LinAlgError):
        solve_qp(-np.eye(2), np.zeros(2), np.zeros((0, 2)), np.zeros(0))
