import numpy as np
import pytest

from conftest import closed_loop_hover, hover_problem, rest_window
from windplan.corridor import Corridor, Polytope, build_corridor
from windplan.dynamics import QuadState, hover_gain, step
from windplan.frs import build_frs_sequence, halfspace_margin
from windplan.nmpc import (CONVERGED, INFEASIBLE_SLACK, NmpcSolver, OcpProblem, OcpSolution, first_command,
                           solve, stage_cost, terminal_cost)
from windplan.params import PlannerParams
from windplan.world import empty_map, wall_gap

P = PlannerParams()
HOVER_U = np.array([0.0, 0.0, 0.0, P.hover_thrust])


def moving_problem(params=P):
    """Cruise toward a rest point through the wall gap from a moving, tilted start."""
    x0 = QuadState([4.0, 2.1, 1.0], [1.0, 0.2, 0.0], 0.05, 0.1, 0.2)
    return hover_problem(params, p=(5.4, 2.0, 1.0), x0=x0, grid=wall_gap())


def test_stage_cost_examples():
    x = np.zeros(9)
    assert stage_cost(x, HOVER_U, HOVER_U, (np.zeros(3), 0.0), P) == 0.0
    x[1] = 1.0
    assert stage_cost(x, HOVER_U, HOVER_U, (np.zeros(3), 0.0), P) == pytest.approx(P.l_p[1])
    u = np.array([0.3, -0.1, 0.2, 11.0])
    un = np.array([0.1, 0.1, 0.0, 9.0])
    c = stage_cost(x, u, un, (np.array([0.2, 0.1, 0.0]), 0.1), P)
    P2 = P.scaled_weights(2.0)
    assert stage_cost(x, u, un, (np.array([0.2, 0.1, 0.0]), 0.1), P2) == pytest.approx(2 * c)


def test_terminal_cost_examples():
    x = np.zeros(9)
    assert terminal_cost(x, (np.zeros(3), 0.0), P, False) == 0.0
    x[3] = 1.0
    assert terminal_cost(x, (np.zeros(3), 0.0), P, True) == pytest.approx(P.l_v_N[0])
    y = np.zeros(9)
    y[8] = np.pi
    assert terminal_cost(y, (np.zeros(3), -np.pi), P, False) == pytest.approx(0.0, abs=1e-20)


def test_hover_fixed_point():
    sol = solve(hover_problem(P))
    assert sol.status == CONVERGED
    assert np.allclose(sol.U, HOVER_U, atol=1e-8)
    assert np.allclose(sol.X, sol.X[0], atol=1e-8)
    assert sol.cost < 1e-6
    _, a_e = first_command(sol, P)
    assert np.allclose(a_e, 0.0, atol=1e-8)


def test_tilted_equilibrium_cancels_force():
    x, u, sols = closed_loop_hover(P, [0.0, 2.0, 0.0], ticks=100)
    _, a_e = first_command(sols[-1], P)
    assert np.allclose(a_e, [0.0, -2.0, 0.0], atol=1e-3)


def test_free_fall_command():
    X = np.zeros((P.N + 1, 9))
    U = np.zeros((P.N, 4))
    sol = OcpSolution(X, U, CONVERGED, np.zeros(P.N + 1), 0.0, 0.0)
    _, a_e = first_command(sol, P)
    assert np.allclose(a_e, [0, 0, -P.g])


def test_shrunk_corridor_reports_slack():
    prob = hover_problem(P)
    tiny = Polytope.box([4.97, 1.97, 0.97], [5.03, 2.03, 1.03])
    prob.corridor = Corridor([tiny], np.zeros(P.N + 1, dtype=int))
    sol = solve(prob)
    assert sol.status == INFEASIBLE_SLACK and sol.slack_max > P.slack_tol


def test_dynamics_and_corridor_at_convergence():
    prob = moving_problem()
    sol = solve(prob)
    assert sol.status == CONVERGED and sol.slack_max <= 1e-9
    for k in range(P.N):
        xn = step(sol.X[k], sol.U[k], prob.b_ext, P.t_s, P)
        d = xn - sol.X[k + 1]
        d[6:9] = np.angle(np.exp(1j * d[6:9]))
        assert np.max(np.abs(d)) < 1e-8
    for k in range(1, P.N + 1):
        poly = prob.corridor.stage_poly(k)
        for a, b in zip(poly.A, poly.b):
            assert halfspace_margin(sol.X[k, :3], prob.frs.Q[k], a) <= b + 1e-6


def test_merit_non_increasing():
    sol = solve(moving_problem())
    h = np.asarray(sol.merit_history)
    assert len(h) >= 2
    assert np.all(np.diff(h) <= 1e-9 * (1 + np.abs(h[:-1])))


def test_warm_resolve_terminates_quickly():
    prob = moving_problem()
    solver = NmpcSolver(P)
    sol = solver.solve(prob)
    again = solver.solve(prob, sol, shift=False)
    assert again.status == CONVERGED and again.iterations <= 2


@pytest.mark.parametrize("c", [0.1, 10.0])
def test_argmin_invariant_under_weight_scaling(c):
    base = solve(moving_problem())
    Pc = P.scaled_weights(c)
    scaled = solve(moving_problem(Pc))
    assert scaled.status == CONVERGED
    assert np.max(np.abs(scaled.X - base.X)) < 1e-6
    assert np.max(np.abs(scaled.U - base.U)) < 1e-6


def test_problem_validation():
    prob = hover_problem(P)
    with pytest.raises(ValueError):
        OcpProblem(prob.x0, prob.b_ext, rest_window([5, 2, 1], PlannerParams(N=10)), prob.corridor, prob.frs, P)
