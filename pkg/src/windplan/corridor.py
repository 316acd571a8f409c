"""Safe flight corridors: overlapping free boxes covering the reference window.

Boxes are grown in the raw occupancy grid (no inflation); the body and
error ellipsoids are accounted for by the NMPC margins.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .params import PlannerParams
from .world import OccupancyGrid, is_occupied


class CorridorError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Polytope:
    """Halfspaces ``A p <= b`` with unit-norm rows."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape != (b.size, 3):
            raise ValueError("A must be (m, 3) and b (m,)")
        if not np.allclose(np.linalg.norm(A, axis=1), 1.0, atol=1e-12):
            raise ValueError("halfspace normals must have unit norm")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if not np.all(lo < hi):
            raise ValueError("box needs lo < hi componentwise")
        eye = np.eye(3)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    def contains(self, p, margin: float = 0.0) -> bool:
        return bool(np.all(self.A @ np.asarray(p, dtype=float) <= self.b - margin + 1e-12))

    def bounds(self):
        """Axis-aligned (lo, hi) when the polytope is a box produced by :meth:`box`."""
        return -self.b[3:6], self.b[0:3]


def contains(poly: Polytope, p) -> bool:
    return poly.contains(p)


def boxes_overlap(P1: Polytope, P2: Polytope, width: float = 0.0) -> bool:
    """True when the intersection is wider than ``width`` along every axis."""
    lo1, hi1 = P1.bounds()
    lo2, hi2 = P2.bounds()
    return bool(np.all(np.minimum(hi1, hi2) - np.maximum(lo1, lo2) > width))


@dataclass(frozen=True, eq=False)
class Corridor:
    polytopes: List[Polytope]
    stage_assignment: np.ndarray  # (N+1,) polytope index per stage

    def stage_poly(self, k: int) -> Polytope:
        return self.polytopes[int(self.stage_assignment[k])]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["polytope", "row", "a_x", "a_y", "a_z", "b"])
            for i, P in enumerate(self.polytopes):
                for j, (a, b) in enumerate(zip(P.A, P.b)):
                    w.writerow([i, j] + [repr(float(x)) for x in a] + [repr(float(b))])


def grow_box(grid: OccupancyGrid, seed, max_extent: float) -> Polytope:
    """Grow an axis-aligned box of whole free cells around ``seed``.

    Faces advance one cell at a time in the order -x, +x, -y, +y, -z, +z
    until blocked by an occupied cell, the map bound, or a face distance of
    ``max_extent / 2`` from the seed.
    """
    seed = np.asarray(seed, dtype=float)
    if is_occupied(grid, seed):
        raise CorridorError(f"box seed {seed.tolist()} is occupied")
    res = grid.resolution
    c = grid.index(seed)
    lo = c.copy()
    hi = c.copy()
    dims = np.array(grid.dims)
    half = 0.5 * max_extent
    cells = grid.cells
    # cell index limits implied by max_extent
    lim_lo = np.ceil((seed - half - grid.origin) / res - 1e-9).astype(int)
    lim_hi = np.floor((seed + half - grid.origin) / res + 1e-9).astype(int) - 1
    lim_lo = np.maximum(lim_lo, 0)
    lim_hi = np.minimum(lim_hi, dims - 1)
    grown = True
    while grown:
        grown = False
        for axis in range(3):
            for side in (-1, 1):
                if side < 0:
                    nxt = lo[axis] - 1
                    if nxt < lim_lo[axis]:
                        continue
                else:
                    nxt = hi[axis] + 1
                    if nxt > lim_hi[axis]:
                        continue
                sl = [slice(lo[i], hi[i] + 1) for i in range(3)]
                sl[axis] = slice(nxt, nxt + 1)
                if cells[tuple(sl)].any():
                    continue
                if side < 0:
                    lo[axis] = nxt
                else:
                    hi[axis] = nxt
                grown = True
    return Polytope.box(grid.origin + lo * res, grid.origin + (hi + 1) * res)


def _bridge(grid: OccupancyGrid, prev: Polytope, new: Polytope, seeds, params: PlannerParams,
            width: float) -> Optional[Polytope]:
    for seed in seeds:
        if is_occupied(grid, seed):
            continue
        cand = grow_box(grid, seed, params.max_extent)
        if boxes_overlap(prev, cand, width) and boxes_overlap(cand, new, width):
            return cand
    return None


def build_corridor(grid: OccupancyGrid, window, params: PlannerParams,
                   p_now: Optional[np.ndarray] = None) -> Corridor:
    """Greedy box cover of the window waypoints.

    ``window`` is a ReferenceWindow or an (N+1, 3) array of positions.
    When ``p_now`` is given a box seeded there comes first so the current
    position is covered. Consecutive boxes must overlap by at least
    ``params.corridor_overlap`` on every axis so the body fits in both near a
    transition; otherwise a bridging box is inserted, seeded at the last
    covered waypoint or at the midpoint to the uncovered one. A thinner
    overlap is accepted only when no bridge meets the width. Stage k gets the
    first polytope at or after the previous stage's polytope that contains
    waypoint k, so assignments never step backwards.
    """
    waypoints = np.asarray(getattr(window, "positions", window), dtype=float)
    for k, w in enumerate(waypoints):
        if is_occupied(grid, w):
            raise CorridorError(f"window waypoint {k} at {w.tolist()} is occupied")
    polys: List[Polytope] = []
    if p_now is not None and not is_occupied(grid, p_now):
        polys.append(grow_box(grid, p_now, params.max_extent))
    prev_w = waypoints[0] if p_now is None else np.asarray(p_now, dtype=float)
    width = params.corridor_overlap
    for w in waypoints:
        if polys and polys[-1].contains(w, margin=1e-9):
            prev_w = w
            continue
        new = grow_box(grid, w, params.max_extent)
        if polys and not boxes_overlap(polys[-1], new, width):
            mid = 0.5 * (prev_w + w)
            bridge = _bridge(grid, polys[-1], new, (prev_w, mid), params, width)
            if bridge is None and not boxes_overlap(polys[-1], new):
                bridge = _bridge(grid, polys[-1], new, (mid, prev_w), params, 0.0)
                if bridge is None:
                    raise CorridorError("cannot bridge consecutive corridor boxes")
            if bridge is not None:
                polys.append(bridge)
        polys.append(new)
        if len(polys) > params.box_budget:
            raise CorridorError(f"corridor needs more than {params.box_budget} boxes")
        prev_w = w
    assign = np.zeros(len(waypoints), dtype=int)
    j = 0
    for k, w in enumerate(waypoints):
        while not polys[j].contains(w):
            j += 1
            if j >= len(polys):
                raise CorridorError(f"waypoint {k} is not covered")
        assign[k] = j
    return Corridor(polys, assign)


def depth(poly: Polytope, p, sigma=None) -> float:
    """Smallest slack ``min_i b_i - sigma_i - a_i.p`` (negative outside)."""
    sig = 0.0 if sigma is None else sigma
    return float(np.min(poly.b - sig - poly.A @ np.asarray(p, dtype=float)))


def assign_stages(corridor: Corridor, positions, margins=None) -> Corridor:
    """Re-assign stages to the polytopes that best contain predicted stage positions.

    Stage k takes, among polytopes at or after stage k-1's, the one with the
    largest clearance ``min_i b_i - sigma_i - a_i.p`` for ``p = positions[k]``
    (the least violated one when no candidate has room). ``margins(k, A)``
    supplies the per-row ellipsoid margins ``sigma_i`` (zero when omitted).
    """
    positions = np.asarray(positions, dtype=float)
    polys = corridor.polytopes
    out = np.empty(len(positions), dtype=int)
    j = 0
    for k, p in enumerate(positions):
        best, best_d = -1, -np.inf
        for i in range(j, len(polys)):
            sig = None if margins is None else margins(k, polys[i].A)
            d = depth(polys[i], p, sig)
            if d > best_d:
                best, best_d = i, d
        out[k] = best
        j = best
    return Corridor(polys, out)
