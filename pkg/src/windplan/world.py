"""Occupancy grid, wind zones, scenario files and collision queries.

Grid indexing is ``floor((point - origin) / resolution)``: a point on an
upper cell boundary belongs to the next cell. Anything outside the grid is
occupied.

Scenario files are YAML with a versioned header::

    windplan_scenario: 1
    seed: 0
    map:
      origin_m: [0, 0, 0]
      resolution_m: 0.1
      dims_cells: [100, 40, 20]
      occupied_rle: [[1200, 40], ...]     # runs over C-order flat indices
      # or instead of occupied_rle:
      generator: {name: wall_gap, args: {gap_width_m: 1.0}}
    start: {position_m: [...], velocity_mps: [...], euler_rad: [...]}
    goal_m: [...]
    waypoints_m: [[...], ...]             # optional, visited before goal_m
    wind_zones:
      - {min_corner_m: [...], max_corner_m: [...], force_mps2: [0, 2, 0]}
    payload_accel_mps2: [0, 0, 0]         # optional constant body load
    force_noise_mps2: 0.0                 # optional truncated noise bound
    timeout_s: 30
    planner: {mass_kg: 1.0, w_m_mps2: 0.5, ...}
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import scipy.ndimage
import scipy.optimize
import yaml

from .dynamics import QuadState
from .params import PlannerParams

SCHEMA_VERSION = 1

# planner field -> scenario key (units in the key)
_PARAM_KEYS = {
    "m": "mass_kg",
    "g": "gravity_mps2",
    "k_d": "drag_coeff_Nspm",
    "r": "body_radius_m",
    "h": "body_height_m",
    "t_s": "sample_time_s",
    "N": "horizon_steps",
    "w_m": "w_m_mps2",
    "v_max": "v_max_mps",
    "tilt_max": "tilt_max_rad",
    "rate_max": "rate_max_radps",
    "a_max": "a_max_mps2",
    "durations": "durations_s",
    "goal_tol_pos": "goal_tol_m",
    "goal_tol_vel": "goal_tol_mps",
    "max_extent": "max_extent_m",
    "d_track": "d_track_m",
    "tau_f": "tau_f_s",
    "sim_dt": "sim_dt_s",
}
_KEY_PARAMS = {v: k for k, v in _PARAM_KEYS.items()}


class ScenarioError(ValueError):
    """Scenario file could not be parsed or violates an invariant."""


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    origin: np.ndarray
    resolution: float
    cells: np.ndarray  # bool, shape == dims

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        cells = np.asarray(self.cells, dtype=bool)
        if cells.ndim != 3 or min(cells.shape) < 1:
            raise ValueError("cells must be a 3-D array with every dimension >= 1")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def empty(cls, origin, resolution: float, dims) -> "OccupancyGrid":
        return cls(origin, resolution, np.zeros(tuple(int(d) for d in dims), dtype=bool))

    @property
    def dims(self) -> tuple:
        return self.cells.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.resolution * np.array(self.dims)

    def index(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.floor((pts - self.origin) / self.resolution).astype(np.int64)

    def in_bounds_index(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)

    def occupied_index(self, idx) -> np.ndarray:
        """Occupancy of integer indices; out of range counts as occupied."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        inside = self.in_bounds_index(idx)
        out = np.ones(idx.shape[0], dtype=bool)
        ii = idx[inside]
        out[inside] = self.cells[ii[:, 0], ii[:, 1], ii[:, 2]]
        return out

    def occupied(self, points) -> np.ndarray:
        """Vectorized :func:`is_occupied` over an (n, 3) array."""
        return self.occupied_index(self.index(np.atleast_2d(points)))

    def cell_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    @functools.cached_property
    def clearance_map(self) -> np.ndarray:
        """Distance (m) from each cell center to the nearest occupied or out-of-grid cell center."""
        padded = np.pad(~self.cells, 1, constant_values=False)
        dist = scipy.ndimage.distance_transform_edt(padded) * self.resolution
        return dist[1:-1, 1:-1, 1:-1]

    def clearance_at(self, points) -> np.ndarray:
        idx = self.index(np.atleast_2d(points))
        inside = self.in_bounds_index(idx)
        out = np.zeros(idx.shape[0])
        ii = idx[inside]
        out[inside] = self.clearance_map[ii[:, 0], ii[:, 1], ii[:, 2]]
        return out

    def inflated_occupied(self, points, radius: float) -> np.ndarray:
        """Collision test against the grid inflated by ``radius``.

        A cell is blocked when its center is closer than ``radius`` to the
        faces of the nearest occupied cell (center distance minus half a cell).
        """
        return self.clearance_at(points) - 0.5 * self.resolution < radius

    def with_cells(self, cells) -> "OccupancyGrid":
        return OccupancyGrid(self.origin, self.resolution, cells)


def is_occupied(grid: OccupancyGrid, point) -> bool:
    return bool(grid.occupied(np.asarray(point, dtype=float).reshape(1, 3))[0])


def segment_free(grid: OccupancyGrid, a, b, step: float) -> bool:
    if step <= 0:
        raise ValueError("step must be > 0")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # symmetric sampling: same point set for (a, b) and (b, a)
    n = max(int(np.ceil(np.linalg.norm(b - a) / step)), 1)
    k = np.arange(n + 1)[:, None]
    pts = np.where(2 * k < n, a + (k / n) * (b - a), b + ((n - k) / n) * (a - b))
    if n % 2 == 0:
        pts[n // 2] = 0.5 * (a + b)
    return not bool(np.any(grid.occupied(pts)))


def _neighbourhood(grid: OccupancyGrid, p: np.ndarray, radius: float):
    """Boxes (lo, hi) of occupied or out-of-grid cells within ``radius`` of p."""
    n = int(np.ceil(radius / grid.resolution)) + 1
    c = grid.index(p)
    rng = np.arange(-n, n + 1)
    offs = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    idx = c + offs
    occ = grid.occupied_index(idx)
    idx = idx[occ]
    lo = grid.origin + idx * grid.resolution
    hi = lo + grid.resolution
    d = np.linalg.norm(np.maximum(np.maximum(lo - p, p - hi), 0.0), axis=1)
    keep = d <= radius
    return lo[keep], hi[keep], d[keep]


def clearance(grid: OccupancyGrid, p, cap: float = 1.0) -> float:
    """Euclidean distance from p to the nearest occupied cell box, capped at ``cap``."""
    p = np.asarray(p, dtype=float)
    if grid.clearance_at(p)[0] - grid.resolution * np.sqrt(3.0) > cap:
        return cap
    _, _, d = _neighbourhood(grid, p, cap)
    return float(min(d.min(), cap)) if d.size else cap


def body_collides(grid: OccupancyGrid, p, Q_body: np.ndarray) -> bool:
    """True iff the ellipsoid {x : (x-p)^T Q^-1 (x-p) <= 1} meets an occupied cell."""
    p = np.asarray(p, dtype=float)
    evals = np.linalg.eigvalsh(Q_body)
    r_out, r_in = np.sqrt(evals.max()), np.sqrt(max(evals.min(), 0.0))
    if grid.clearance_at(p)[0] - grid.resolution * np.sqrt(3.0) > r_out:
        return False
    lo, hi, d = _neighbourhood(grid, p, r_out)
    if d.size == 0:
        return False
    if np.any(d <= r_in):
        return True
    # separating axes along the grid axes rule out most remaining cells
    ext = np.sqrt(np.diag(Q_body))
    keep = np.all((hi >= p - ext) & (lo <= p + ext), axis=1)
    lo, hi = lo[keep], hi[keep]
    L_inv = np.linalg.inv(np.linalg.cholesky(Q_body))
    for l, u in zip(lo, hi):
        res = scipy.optimize.lsq_linear(L_inv, L_inv @ p, bounds=(l, u))
        if 2.0 * res.cost <= 1.0:
            return True
    return False


@dataclass(frozen=True)
class WindZone:
    min_corner: np.ndarray
    max_corner: np.ndarray
    force: np.ndarray  # mass-normalized, m/s^2

    def __post_init__(self):
        for name in ("min_corner", "max_corner", "force"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if not np.all(self.min_corner < self.max_corner):
            raise ValueError("wind zone min_corner must be < max_corner componentwise")

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.min_corner) and np.all(p <= self.max_corner))


@dataclass(frozen=True, eq=False)
class Scenario:
    grid: OccupancyGrid
    start_state: QuadState
    goal: np.ndarray
    wind_zones: List[WindZone] = field(default_factory=list)
    params: PlannerParams = field(default_factory=PlannerParams)
    seed: int = 0
    waypoints: List[np.ndarray] = field(default_factory=list)
    payload_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    force_noise: float = 0.0
    timeout: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(3))
        object.__setattr__(self, "payload_accel", np.asarray(self.payload_accel, dtype=float).reshape(3))
        object.__setattr__(self, "waypoints", [np.asarray(w, dtype=float).reshape(3) for w in self.waypoints])

    def validate(self) -> "Scenario":
        for name, pt in [("start", self.start_state.p), ("goal", self.goal)] + [
            (f"waypoint[{i}]", w) for i, w in enumerate(self.waypoints)
        ]:
            idx = self.grid.index(pt)
            if not self.grid.in_bounds_index(idx):
                raise ScenarioError(f"{name} {pt.tolist()} lies outside the grid bounds")
            if is_occupied(self.grid, pt):
                raise ScenarioError(f"{name} {pt.tolist()} lies in an occupied cell")
        if self.timeout <= 0:
            raise ScenarioError("timeout_s must be > 0")
        if self.force_noise < 0:
            raise ScenarioError("force_noise_mps2 must be >= 0")
        return self

    @property
    def targets(self) -> List[np.ndarray]:
        return list(self.waypoints) + [self.goal]


# --------------------------------------------------------------------- maps

def rle_encode(cells: np.ndarray) -> List[List[int]]:
    flat = np.asarray(cells, dtype=bool).ravel()
    if not flat.any():
        return []
    d = np.diff(np.concatenate([[0], flat.astype(np.int8), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs, dims) -> np.ndarray:
    flat = np.zeros(int(np.prod(dims)), dtype=bool)
    for start, count in runs:
        if start < 0 or count < 0 or start + count > flat.size:
            raise ScenarioError(f"occupied_rle run {[start, count]} exceeds the grid size {flat.size}")
        flat[start:start + count] = True
    return flat.reshape(tuple(dims))


def _box_fill(cells, grid_origin, res, lo, hi):
    i0 = np.clip(np.floor((np.asarray(lo) - grid_origin) / res).astype(int), 0, None)
    i1 = np.ceil((np.asarray(hi) - grid_origin) / res).astype(int)
    cells[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]] = True


def empty_map(size_m=(10.0, 4.0, 2.0), resolution_m: float = 0.1, origin_m=(0.0, 0.0, 0.0)):
    dims = np.round(np.asarray(size_m) / resolution_m).astype(int)
    return OccupancyGrid.empty(origin_m, resolution_m, dims)


def random_pillars(seed: int = 0, size_m=(10.0, 6.0, 2.0), resolution_m: float = 0.1,
                   n_pillars: int = 8, radius_m: float = 0.3, keep_clear_m=None):
    """Vertical square pillars at random xy positions; ``keep_clear_m`` lists points to avoid."""
    grid = empty_map(size_m, resolution_m)
    rng = np.random.default_rng(seed)
    cells = np.zeros(grid.dims, dtype=bool)
    keep = [np.asarray(k, dtype=float)[:2] for k in (keep_clear_m or [])]
    placed = 0
    while placed < n_pillars:
        c = rng.uniform([1.0, 0.5], [size_m[0] - 1.0, size_m[1] - 0.5])
        if any(np.linalg.norm(c - k) < radius_m + 1.0 for k in keep):
            continue
        _box_fill(cells, grid.origin, resolution_m, [c[0] - radius_m, c[1] - radius_m, 0.0],
                  [c[0] + radius_m, c[1] + radius_m, size_m[2]])
        placed += 1
    return grid.with_cells(cells)


def wall_gap(size_m=(10.0, 4.0, 2.0), resolution_m: float = 0.1, wall_x_m: float = 5.0,
             thickness_m: float = 0.2, gap_center_y_m: float = 2.0, gap_width_m: float = 1.0):
    """A full-height wall across y with a single gap."""
    grid = empty_map(size_m, resolution_m)
    cells = np.zeros(grid.dims, dtype=bool)
    x0, x1 = wall_x_m - thickness_m / 2, wall_x_m + thickness_m / 2
    _box_fill(cells, grid.origin, resolution_m, [x0, 0.0, 0.0], [x1, gap_center_y_m - gap_width_m / 2, size_m[2]])
    _box_fill(cells, grid.origin, resolution_m, [x0, gap_center_y_m + gap_width_m / 2, 0.0], [x1, size_m[1], size_m[2]])
    return grid.with_cells(cells)


def wind_corridor(seed: int = 0, size_m=(10.0, 4.0, 2.0), resolution_m: float = 0.1,
                  slot_x_m=(4.6, 5.8), slot_width_m: float = 0.8, jitter_m: float = 0.1,
                  pillars=((2.2, 1.2), (7.8, 2.8)), pillar_half_m: float = 0.25):
    """Corridor with a narrow slot between two wall blocks plus two pillars.

    ``seed`` jitters the slot center and width and the pillar positions by up
    to ``jitter_m``; widths are snapped to the grid resolution.
    """
    grid = empty_map(size_m, resolution_m)
    rng = np.random.default_rng(seed)
    cells = np.zeros(grid.dims, dtype=bool)
    cy = size_m[1] / 2 + rng.uniform(-jitter_m, jitter_m)
    w = slot_width_m + rng.uniform(-jitter_m / 2, jitter_m / 2)
    lo_edge = np.round((cy - w / 2) / resolution_m) * resolution_m
    hi_edge = np.round((cy + w / 2) / resolution_m) * resolution_m
    x0, x1 = slot_x_m
    _box_fill(cells, grid.origin, resolution_m, [x0, 0.0, 0.0], [x1, lo_edge, size_m[2]])
    _box_fill(cells, grid.origin, resolution_m, [x0, hi_edge, 0.0], [x1, size_m[1], size_m[2]])
    for px, py in pillars:
        c = np.array([px, py]) + rng.uniform(-jitter_m, jitter_m, 2)
        _box_fill(cells, grid.origin, resolution_m, [c[0] - pillar_half_m, c[1] - pillar_half_m, 0.0],
                  [c[0] + pillar_half_m, c[1] + pillar_half_m, size_m[2]])
    return grid.with_cells(cells)


GENERATORS = {
    "empty": empty_map,
    "random_pillars": random_pillars,
    "wall_gap": wall_gap,
    "wind_corridor": wind_corridor,
}


def generate_map(name: str, **args) -> OccupancyGrid:
    if name not in GENERATORS:
        raise ScenarioError(f"unknown map generator '{name}' (known: {sorted(GENERATORS)})")
    return GENERATORS[name](**args)


# ------------------------------------------------------------------ file I/O

def _vec3(data, key, where, default=None):
    if key not in data:
        if default is not None:
            return np.asarray(default, dtype=float)
        raise ScenarioError(f"{where}: missing required field '{key}'")
    try:
        v = np.asarray(data[key], dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{key}: expected a list of 3 numbers, got {data[key]!r}") from None
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ScenarioError(f"{where}.{key}: expected a list of 3 finite numbers, got {data[key]!r}")
    return v


def params_from_mapping(data: Optional[dict]) -> PlannerParams:
    kw = {}
    for key, val in (data or {}).items():
        name = _KEY_PARAMS.get(key, key)
        if name in _PARAM_KEYS and key == name:
            raise ScenarioError(f"planner.{key}: use the unit-suffixed key '{_PARAM_KEYS[name]}'")
        kw[name] = val
    try:
        return PlannerParams.from_dict(kw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"planner: {exc}") from None


def params_to_mapping(params: PlannerParams) -> dict:
    return {_PARAM_KEYS.get(k, k): v for k, v in params.to_dict().items()}


def scenario_from_mapping(doc) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: top level must be a mapping")
    version = doc.get("windplan_scenario")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"windplan_scenario: unsupported or missing schema version {version!r}")
    seed = int(doc.get("seed", 0))
    m = doc.get("map")
    if not isinstance(m, dict):
        raise ScenarioError("map: missing required mapping")
    if "generator" in m:
        gen = m["generator"]
        if not isinstance(gen, dict) or "name" not in gen:
            raise ScenarioError("map.generator: expected {name: ..., args: {...}}")
        args = dict(gen.get("args") or {})
        try:
            grid = generate_map(gen["name"], **args)
        except TypeError as exc:
            raise ScenarioError(f"map.generator.args: {exc}") from None
    else:
        origin = _vec3(m, "origin_m", "map")
        res = m.get("resolution_m")
        dims = m.get("dims_cells")
        if not isinstance(res, (int, float)) or res <= 0:
            raise ScenarioError(f"map.resolution_m: must be a positive number, got {res!r}")
        if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) and d >= 1 for d in dims)):
            raise ScenarioError(f"map.dims_cells: expected 3 integers >= 1, got {dims!r}")
        grid = OccupancyGrid(origin, float(res), rle_decode(m.get("occupied_rle") or [], dims))
    st = doc.get("start")
    if not isinstance(st, dict):
        raise ScenarioError("start: missing required mapping")
    ang = _vec3(st, "euler_rad", "start", default=[0.0, 0.0, 0.0])
    start = QuadState(_vec3(st, "position_m", "start"), _vec3(st, "velocity_mps", "start", default=[0, 0, 0]), *ang)
    zones = []
    for i, z in enumerate(doc.get("wind_zones") or []):
        where = f"wind_zones[{i}]"
        try:
            zones.append(WindZone(_vec3(z, "min_corner_m", where), _vec3(z, "max_corner_m", where),
                                  _vec3(z, "force_mps2", where)))
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{where}: {exc}") from None
    wps = []
    for i, w in enumerate(doc.get("waypoints_m") or []):
        wps.append(_vec3({"w": w}, "w", f"waypoints_m[{i}]"))
    scen = Scenario(
        grid=grid,
        start_state=start,
        goal=_vec3(doc, "goal_m", "scenario"),
        wind_zones=zones,
        params=params_from_mapping(doc.get("planner")),
        seed=seed,
        waypoints=wps,
        payload_accel=_vec3(doc, "payload_accel_mps2", "scenario", default=[0, 0, 0]),
        force_noise=float(doc.get("force_noise_mps2", 0.0)),
        timeout=float(doc.get("timeout_s", 30.0)),
    )
    return scen.validate()


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ScenarioError(f"{path}: parse error at {where}: {getattr(exc, 'problem', exc)}") from None
    return scenario_from_mapping(doc)


def scenario_to_mapping(scen: Scenario) -> dict:
    g = scen.grid
    return {
        "windplan_scenario": SCHEMA_VERSION,
        "seed": int(scen.seed),
        "map": {
            "origin_m": g.origin.tolist(),
            "resolution_m": float(g.resolution),
            "dims_cells": [int(d) for d in g.dims],
            "occupied_rle": rle_encode(g.cells),
        },
        "start": {
            "position_m": scen.start_state.p.tolist(),
            "velocity_mps": scen.start_state.v.tolist(),
            "euler_rad": scen.start_state.angles.tolist(),
        },
        "goal_m": scen.goal.tolist(),
        "waypoints_m": [w.tolist() for w in scen.waypoints],
        "wind_zones": [
            {"min_corner_m": z.min_corner.tolist(), "max_corner_m": z.max_corner.tolist(),
             "force_mps2": z.force.tolist()}
            for z in scen.wind_zones
        ],
        "payload_accel_mps2": scen.payload_accel.tolist(),
        "force_noise_mps2": float(scen.force_noise),
        "timeout_s": float(scen.timeout),
        "planner": params_to_mapping(scen.params),
    }


def dump_scenario(scen: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_mapping(scen), sort_keys=False, default_flow_style=None))


def with_wind(scen: Scenario, force_mps2: Sequence[float]) -> Scenario:
    """Copy of ``scen`` with every wind zone set to the given mass-normalized force."""
    zones = [WindZone(z.min_corner, z.max_corner, force_mps2) for z in scen.wind_zones]
    return replace(scen, wind_zones=zones)
