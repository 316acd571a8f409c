import numpy as np
import pytest

from windplan.dynamics import QuadState
from windplan.frs import ego_shape
from windplan.world import (OccupancyGrid, Scenario, ScenarioError, WindZone, body_collides, dump_scenario,
                            empty_map, generate_map, is_occupied, load_scenario, random_pillars,
                            segment_free, wall_gap, wind_corridor)

MINIMAL = """
windplan_scenario: 1
map:
  generator: {name: empty, args: {}}
start: {position_m: [1.0, 2.0, 1.0]}
goal_m: [6.0, 2.0, 1.0]
"""


def test_minimal_scenario_defaults(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(MINIMAL)
    sc = load_scenario(p)
    assert sc.wind_zones == []
    assert sc.params.w_m == 0.5


def test_start_in_obstacle_rejected(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(MINIMAL.replace("generator: {name: empty, args: {}}",
                                 "generator: {name: wall_gap, args: {}}").replace("[1.0, 2.0, 1.0]", "[5.0, 0.5, 1.0]"))
    with pytest.raises(ScenarioError, match="occupied"):
        load_scenario(p)


def test_parse_errors_are_located(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("windplan_scenario: 1\nmap: [1, 2\n")
    with pytest.raises(ScenarioError, match="line"):
        load_scenario(p)
    p.write_text(MINIMAL.replace("goal_m: [6.0, 2.0, 1.0]", "goal_m: [6.0, 2.0]"))
    with pytest.raises(ScenarioError, match="goal_m"):
        load_scenario(p)
    p.write_text(MINIMAL + "planner: {w_m: 0.3}\n")
    with pytest.raises(ScenarioError, match="w_m_mps2"):
        load_scenario(p)


def test_round_trip(tmp_path):
    sc = Scenario(wind_corridor(3), QuadState.at_rest([0.5, 2, 1]), [9.5, 2, 1], [WindZone([3, 0, 0], [7, 4, 2], [0, 2, 0])], seed=3, timeout=12.0)
    a = tmp_path / "a.yaml"
    dump_scenario(sc, a)
    sc2 = load_scenario(a)
    assert sc2.params == sc.params
    assert np.array_equal(sc2.grid.cells, sc.grid.cells)
    assert np.allclose(sc2.wind_zones[0].force, [0, 2, 0]) and sc2.timeout == 12.0
    b = tmp_path / "b.yaml"
    dump_scenario(sc2, b)
    assert a.read_text() == b.read_text()


def test_occupancy_conventions():
    g = empty_map((2.0, 2.0, 2.0), 0.5)
    assert not is_occupied(g, [1.0, 1.0, 1.0])
    assert is_occupied(g, [-0.01, 1.0, 1.0]) and is_occupied(g, [2.0, 1.0, 1.0])
    cells = np.zeros(g.dims, dtype=bool)
    cells[2, 2, 2] = True
    g2 = g.with_cells(cells)
    # upper boundary of cell 1 belongs to cell 2 under floor indexing
    assert is_occupied(g2, [1.0, 1.0, 1.0])
    assert not is_occupied(g2, [0.999, 1.0, 1.0])
    assert is_occupied(g2, [1.0, 1.0, 1.0]) == is_occupied(g2, [1.0, 1.0, 1.0])


def test_segment_free():
    g = empty_map()
    a = np.array([1.0, 2.0, 1.0])
    assert segment_free(g, a, a, 0.05)
    assert segment_free(g, a, [8.0, 2.0, 1.0], 0.05)
    cells = np.zeros(g.dims, dtype=bool)
    cells[40, 20, 10] = True
    g2 = g.with_cells(cells)
    b = np.array([8.0, 2.05, 1.05])
    a2 = np.array([1.0, 2.05, 1.05])
    assert not segment_free(g2, a2, b, 0.05)
    assert segment_free(g2, a2, b, 0.05) == segment_free(g2, b, a2, 0.05)


def test_generators_deterministic_and_jittered():
    assert np.array_equal(wind_corridor(1).cells, wind_corridor(1).cells)
    assert not np.array_equal(wind_corridor(1).cells, wind_corridor(2).cells)
    assert random_pillars(4).cells.any() and wall_gap().cells.any()
    with pytest.raises(ScenarioError):
        generate_map("nope")


def test_body_collision():
    g = wall_gap()
    Q = ego_shape(np.eye(3), 0.22, 0.13)
    assert body_collides(g, [4.9, 0.5, 1.0], Q)
    assert not body_collides(g, [2.0, 2.0, 1.0], Q)


def test_wind_zone_validation():
    with pytest.raises(ValueError):
        WindZone([1, 0, 0], [0, 1, 1], [0, 0, 0])
    z = WindZone([0, 0, 0], [1, 1, 1], [0, 2, 0])
    assert z.contains([0.5, 0.5, 0.5]) and not z.contains([1.5, 0.5, 0.5])


def test_grid_validation():
    with pytest.raises(ValueError):
        OccupancyGrid(np.zeros(3), -0.1, np.zeros((2, 2, 2), dtype=bool))
