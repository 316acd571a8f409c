"""Seeded benchmark batches over force levels and planner variants.

A batch runs every (force level, variant, seed) cell of a scenario template,
writes one mission log per run, and aggregates success rate, trajectory time
and control cost into a table. Means are taken over successful runs only.
"""
from __future__ import annotations

import copy
import csv
import inspect
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .orchestrator import VARIANTS, MissionLog, run_mission, summarize
from .world import GENERATORS, Scenario, ScenarioError, scenario_from_mapping

TABLE_FIELDS = ["level_x", "level_y", "level_z", "variant", "runs", "successes",
                "success_rate", "mean_traj_time", "mean_ctrl_cost"]
RUN_FIELDS = ["level_x", "level_y", "level_z", "variant", "seed", "success", "reason",
              "trajectory_time", "control_cost", "min_clearance", "replan_count",
              "safety_violations", "log"]


@dataclass
class BenchmarkConfig:
    """One benchmark batch.

    ``template`` is a scenario mapping (as read from YAML). Run ``i`` uses
    seed ``seed_base + i`` for both the mission and, when the map is
    generated, the obstacle jitter.
    """
    template: dict
    levels: List[Tuple[float, float, float]] = field(default_factory=lambda: [(0.0, 2.0, 0.0)])
    variants: Tuple[str, ...] = VARIANTS
    runs: int = 10
    seed_base: int = 0
    out_dir: Path = Path("bench_out")

    def __post_init__(self):
        self.levels = [tuple(float(c) for c in lv) for lv in self.levels]
        self.variants = tuple(self.variants)
        self.out_dir = Path(self.out_dir)
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.variants:
            raise ValueError("at least one variant is required")
        for v in self.variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown variant {v!r} (known: {VARIANTS})")
        for lv in self.levels:
            if len(lv) != 3 or not np.all(np.isfinite(lv)):
                raise ValueError(f"force level must be 3 finite numbers, got {lv}")
        if not self.levels:
            raise ValueError("at least one force level is required")

    @classmethod
    def from_file(cls, path, **overrides) -> "BenchmarkConfig":
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        return cls(template=doc, **overrides)

    def seeds(self) -> List[int]:
        return [self.seed_base + i for i in range(self.runs)]


@dataclass
class MetricsTable:
    rows: List[dict]

    def row(self, level, variant: str) -> dict:
        lv = tuple(float(c) for c in level)
        for r in self.rows:
            if (r["level_x"], r["level_y"], r["level_z"]) == lv and r["variant"] == variant:
                return r
        raise KeyError(f"no row for level {lv} and variant {variant}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TABLE_FIELDS, quoting=csv.QUOTE_MINIMAL)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    @classmethod
    def read_csv(cls, path) -> "MetricsTable":
        rows = []
        with open(path, newline="") as fh:
            for raw in csv.DictReader(fh):
                r = {k: float(v) for k, v in raw.items() if k != "variant"}
                r["variant"] = raw["variant"]
                r["runs"] = int(r["runs"])
                r["successes"] = int(r["successes"])
                rows.append(r)
        return cls(rows)


def scenario_for(template: dict, level, seed: int) -> Scenario:
    """Instantiate the template with every wind zone set to ``level`` and obstacles jittered by ``seed``."""
    doc = copy.deepcopy(template)
    doc["seed"] = int(seed)
    gen = (doc.get("map") or {}).get("generator")
    if isinstance(gen, dict) and gen.get("name") in GENERATORS:
        if "seed" in inspect.signature(GENERATORS[gen["name"]]).parameters:
            gen["args"] = dict(gen.get("args") or {}, seed=int(seed))
    zones = doc.get("wind_zones") or []
    for z in zones:
        z["force_mps2"] = [float(c) for c in level]
    if not zones and any(float(c) != 0.0 for c in level):
        raise ScenarioError("a nonzero force level needs at least one wind zone in the template")
    return scenario_from_mapping(doc)


def _level_tag(level) -> str:
    return "_".join(f"{c:g}" for c in level).replace("-", "m")


def _run_one(args):
    template, level, variant, seed, log_path = args
    scen = scenario_for(template, level, seed)
    log = run_mission(scen, variant, log_path=log_path)
    return log.summary


def _aggregate(level, variant: str, summaries: Sequence[dict]) -> dict:
    ok = [s for s in summaries if s["success"]]
    n = len(summaries)
    return {
        "level_x": level[0], "level_y": level[1], "level_z": level[2],
        "variant": variant,
        "runs": n,
        "successes": len(ok),
        "success_rate": len(ok) / n if n else 0.0,
        "mean_traj_time": float(np.mean([s["trajectory_time"] for s in ok])) if ok else float("nan"),
        "mean_ctrl_cost": float(np.mean([s["control_cost"] for s in ok])) if ok else float("nan"),
    }


def run_benchmark(config: BenchmarkConfig, jobs: int = 1) -> MetricsTable:
    """Run every cell, write ``runs/*.csv``, ``runs.csv`` and ``table.csv`` under ``config.out_dir``.

    Results are merged in (level, variant, seed) order whatever ``jobs`` is.
    """
    out = config.out_dir
    (out / "runs").mkdir(parents=True, exist_ok=True)
    cells = []
    for level in config.levels:
        for variant in config.variants:
            for seed in config.seeds():
                name = f"L{_level_tag(level)}__{variant}__s{seed}.csv"
                cells.append((config.template, level, variant, seed, str(out / "runs" / name)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            summaries = list(ex.map(_run_one, cells))
    else:
        summaries = [_run_one(c) for c in cells]

    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RUN_FIELDS)
        w.writeheader()
        for (_, level, variant, seed, path), s in zip(cells, summaries):
            w.writerow({"level_x": repr(level[0]), "level_y": repr(level[1]), "level_z": repr(level[2]),
                        "variant": variant, "seed": seed, "success": int(s["success"]),
                        "reason": s["reason"], "trajectory_time": repr(s["trajectory_time"]),
                        "control_cost": repr(s["control_cost"]), "min_clearance": repr(s["min_clearance"]),
                        "replan_count": s["replan_count"], "safety_violations": s["safety_violations"],
                        "log": Path(path).name})

    rows = []
    k = 0
    n = config.runs
    for level in config.levels:
        for variant in config.variants:
            rows.append(_aggregate(level, variant, summaries[k:k + n]))
            k += n
    table = MetricsTable(rows)
    table.to_csv(out / "table.csv")
    return table


def summary_from_log(path, t_s: float) -> dict:
    """Recompute a mission summary from its CSV log; a run succeeded iff it ends with an arrival record."""
    recs = MissionLog.read_csv(path)
    ok = bool(recs) and recs[-1]["status"] == "arrived"
    return summarize(recs, t_s, ok, "arrived" if ok else "failed")


def table_from_logs(out_dir, t_s: float = 0.05) -> MetricsTable:
    """Rebuild the metrics table from ``runs.csv`` and the per-run logs alone."""
    out = Path(out_dir)
    groups: dict = {}
    order: list = []
    with open(out / "runs.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            key = (float(r["level_x"]), float(r["level_y"]), float(r["level_z"]), r["variant"])
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(summary_from_log(out / "runs" / r["log"], t_s))
    return MetricsTable([_aggregate(k[:3], k[3], groups[k]) for k in order])


def emit_plots(log_paths: Sequence, out_dir: Optional[Path] = None) -> List[Path]:
    """Write plot-ready CSVs for each mission log.

    ``<stem>_force.csv`` holds x-position against the force estimate and the
    commanded acceleration; ``<stem>_frs.csv`` holds time against the trace
    of the terminal reachable-set shape.
    """
    written = []
    for lp in log_paths:
        lp = Path(lp)
        dst = lp.parent if out_dir is None else Path(out_dir)
        dst.mkdir(parents=True, exist_ok=True)
        recs = MissionLog.read_csv(lp)
        f1 = dst / f"{lp.stem}_force.csv"
        with open(f1, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p_x", "F_est_x", "F_est_y", "F_est_z", "a_e_x", "a_e_y", "a_e_z"])
            for r in recs:
                w.writerow([repr(r[k]) for k in ("p_x", "F_est_x", "F_est_y", "F_est_z",
                                                 "a_e_x", "a_e_y", "a_e_z")])
        f2 = dst / f"{lp.stem}_frs.csv"
        with open(f2, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "trace_Q_ext"])
            for r in recs:
                w.writerow([repr(r["t"]), repr(r["trace_Q_ext"])])
        written += [f1, f2]
    return written
