import numpy as np
import pytest

from windplan.dynamics import QuadState
from windplan.frontend import ReferencePath, Segment
from windplan.orchestrator import (FORCE_BOUND, FORCE_UNAWARE, PROPOSED, REFERENCE_COLLISION,
                                   TRACKING_DIVERGENCE, MissionLog, ReplanDecision, brake_command,
                                   check_triggers, run_mission, summarize, variant_settings)
from windplan.params import PlannerParams
from windplan.world import Scenario, empty_map, wall_gap

P = PlannerParams(a_max=3.0, heuristic_weight=2.0, planar=True)


def straight_path():
    return ReferencePath((Segment(np.array([1.0, 2.0, 1.0, 1.0, 0.0, 0.0]), np.zeros(3), np.zeros(3), 4.0),), 0.0)


def test_replan_decision_invariant():
    with pytest.raises(ValueError):
        ReplanDecision(True, frozenset())
    with pytest.raises(ValueError):
        ReplanDecision(False, frozenset({FORCE_BOUND}))


def test_trigger_examples():
    g = empty_map()
    x = QuadState.at_rest([1.0, 2.0, 1.0])
    path = straight_path()
    d = check_triggers([0, 0.6 * P.m, 0], np.zeros(3), path, g, x, 0.0, P)
    assert d.triggered and d.reasons == {FORCE_BOUND}
    d = check_triggers([0, 0.3 * P.m, 0], np.zeros(3), path, g, x, 0.0, P)
    assert not d.triggered
    cells = g.cells.copy()
    cells[30, 20, 10] = True
    d = check_triggers(np.zeros(3), np.zeros(3), path, g.with_cells(cells), x, 0.0, P)
    assert d.reasons == {REFERENCE_COLLISION}
    far = QuadState.at_rest([1.0, 3.0, 1.0])
    d = check_triggers(np.zeros(3), np.zeros(3), path, g, far, 0.0, P)
    assert d.reasons == {TRACKING_DIVERGENCE}
    d = check_triggers([0, 0.6 * P.m, 0], np.zeros(3), path, g, x, 0.0, P, force_trigger=False)
    assert not d.triggered


def test_control_cost_definition():
    recs = [{"t": 0.05 * i, "a_e_x": 1.0, "a_e_y": 0.0, "a_e_z": 0.0, "clearance": 1.0,
             "replanned": 0, "safety_violation": 0} for i in range(40)]
    assert summarize(recs, 0.05, True, "arrived")["control_cost"] == pytest.approx(2.0)


def test_start_occupied_fails_immediately():
    sc = Scenario(wall_gap(), QuadState.at_rest([5.0, 0.5, 1.0]), [8.0, 2.0, 1.0], params=P)
    log = run_mission(sc)
    assert not log.summary["success"] and "start" in log.summary["reason"]
    assert log.records == []


def test_empty_map_mission(tmp_path):
    sc = Scenario(empty_map(), QuadState.at_rest([1.0, 2.0, 1.0]), [6.0, 2.0, 1.0], params=P, timeout=15.0)
    path = tmp_path / "log.csv"
    log = run_mission(sc, log_path=path)
    s = log.summary
    assert s["success"] and s["trajectory_time"] >= 2.5
    # steady cruise without wind: only the initial plan
    assert s["replan_count"] == 1
    assert all(r["status"] in ("converged", "arrived") for r in log.records)
    recs = MissionLog.read_csv(path)
    again = summarize(recs, P.t_s, True, "arrived")
    for k in ("trajectory_time", "control_cost", "min_clearance", "replan_count", "safety_violations"):
        assert again[k] == s[k]
    log2 = run_mission(sc)
    assert log2.summary == s


def test_force_step_updates_nominal_force():
    sc = Scenario(empty_map(), QuadState.at_rest([1.0, 2.0, 1.0]), [6.0, 2.0, 1.0], params=P, timeout=15.0)
    log = run_mission(sc, extra_force=lambda t: np.array([0.0, 2.0, 0.0]) if t >= 1.0 else np.zeros(3))
    first = next(r for r in log.records if FORCE_BOUND in r["triggers"])
    assert 1.0 <= first["t"] <= 1.0 + P.t_s + 1e-9
    assert first["b_ext_y"] == pytest.approx(first["F_est_y"])
    assert log.summary["success"]


def test_revealed_obstacle_triggers_replan():
    g0 = empty_map()
    cells = g0.cells.copy()
    cells[33:36, 18:23, 8:13] = True
    g1 = g0.with_cells(cells)
    sc = Scenario(g0, QuadState.at_rest([1.0, 2.0, 1.0]), [6.0, 2.0, 1.0], params=P, timeout=15.0)
    log = run_mission(sc, grid_provider=lambda t: g0 if t < 0.5 else g1)
    hits = [r for r in log.records if REFERENCE_COLLISION in r["triggers"]]
    assert hits and hits[0]["t"] == pytest.approx(0.5)
    assert log.summary["success"]


def test_variants_differ_only_in_force_handling():
    a = variant_settings(P, PROPOSED)
    b = variant_settings(P, FORCE_UNAWARE)
    assert set(a) == set(b)
    diff = {k for k in a if a[k] != b[k]}
    assert diff == {"force_aware", "frs_w_m"}
    assert b["frs_w_m"] == 1e-6
    with pytest.raises(ValueError):
        variant_settings(P, "other")


def test_brake_command_levels_attitude():
    x = QuadState([0, 0, 0], [1, 0, 0], 0.05, -0.1, 0.3)
    u = brake_command(x, P)
    assert u.thrust_c == pytest.approx(P.m * P.g)
    assert u.phi_rate_c < 0 < u.theta_rate_c and u.psi_rate_c == 0.0
