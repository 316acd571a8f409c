import numpy as np
import pytest

from windplan.corridor import (Corridor, CorridorError, Polytope, assign_stages, boxes_overlap,
                               build_corridor, contains, grow_box)
from windplan.params import PlannerParams
from windplan.world import empty_map, wall_gap, wind_corridor

P = PlannerParams()


def cell_centers_inside(grid, poly):
    idx = np.argwhere(grid.cells)
    if idx.size == 0:
        return 0
    centers = grid.origin + (idx + 0.5) * grid.resolution
    return int(np.sum(np.all(centers @ poly.A.T <= poly.b, axis=1)))


def test_polytope_contains():
    cube = Polytope.box([0, 0, 0], [1, 1, 1])
    assert contains(cube, [0.5, 0.5, 0.5])
    assert contains(cube, [1.0, 0.5, 0.5])
    assert not contains(cube, [1.01, 0.5, 0.5])
    assert np.allclose(np.linalg.norm(cube.A, axis=1), 1.0)
    with pytest.raises(ValueError):
        Polytope(np.array([[2.0, 0, 0]]), np.array([1.0]))


def test_grow_box_empty_map():
    g = empty_map((10.0, 10.0, 10.0))
    box = grow_box(g, [5.0, 5.0, 5.0], 2.0)
    lo, hi = box.bounds()
    assert np.allclose(lo, 4.0) and np.allclose(hi, 6.0)
    lo, hi = grow_box(g, [0.5, 5.0, 5.0], 2.0).bounds()
    assert lo[0] == pytest.approx(0.0)


def test_grow_box_wall_offset():
    g = wall_gap()          # wall block starts at x = 4.9
    box = grow_box(g, [4.4, 0.5, 1.0], 4.0)
    assert box.bounds()[1][0] == pytest.approx(4.9)


def test_grow_box_sound_on_maps():
    for g in (wall_gap(), wind_corridor(0), wind_corridor(5)):
        rng = np.random.default_rng(0)
        free = np.argwhere(~g.cells)
        for i in rng.choice(len(free), 20, replace=False):
            seed = g.origin + (free[i] + 0.5) * g.resolution
            assert cell_centers_inside(g, grow_box(g, seed, 2.0)) == 0


def test_straight_window_single_box():
    g = empty_map()
    wp = np.column_stack([np.linspace(2, 2.8, P.N + 1), np.full(P.N + 1, 2.0), np.full(P.N + 1, 1.0)])
    cor = build_corridor(g, wp, P)
    assert len(cor.polytopes) == 1 and np.all(cor.stage_assignment == 0)


def test_doorway_window_covered_by_overlapping_boxes():
    g = wall_gap()
    wp = np.column_stack([np.linspace(4.0, 6.0, P.N + 1), np.full(P.N + 1, 2.0), np.full(P.N + 1, 1.0)])
    cor = build_corridor(g, wp, P)
    assert len(cor.polytopes) >= 2
    for a, b in zip(cor.polytopes, cor.polytopes[1:]):
        assert boxes_overlap(a, b)
    for poly in cor.polytopes:
        assert cell_centers_inside(g, poly) == 0
    for k, w in enumerate(wp):
        assert cor.stage_poly(k).contains(w)
    assert np.all(np.diff(cor.stage_assignment) >= 0)


def test_occupied_waypoint_rejected():
    g = wall_gap()
    wp = np.tile([5.0, 0.5, 1.0], (P.N + 1, 1))
    with pytest.raises(CorridorError):
        build_corridor(g, wp, P)


def test_assign_stages_prefers_deepest_and_is_monotone():
    A = Polytope.box([0, 0, 0], [2, 1, 1])
    B = Polytope.box([1.5, 0, 0], [4, 1, 1])
    cor = Corridor([A, B], np.array([0, 0, 1, 1]))
    pos = np.array([[0.5, 0.5, 0.5], [1.9, 0.5, 0.5], [1.6, 0.5, 0.5], [3.0, 0.5, 0.5]])
    out = assign_stages(cor, pos)
    assert out.stage_assignment.tolist() == [0, 1, 1, 1]
