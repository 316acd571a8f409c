"""Command-line entry point: ``windplan bench`` and ``windplan mission``."""
from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path
from typing import List, Optional

import yaml

from .bench import BenchmarkConfig, emit_plots, run_benchmark
from .orchestrator import VARIANTS, run_mission
from .world import ScenarioError, scenario_from_mapping


def builtin_scenarios() -> List[str]:
    root = resources.files("windplan") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_template(name_or_path: str) -> dict:
    """Load a scenario mapping from a file path or a built-in scenario name."""
    p = Path(name_or_path)
    if p.is_file():
        text = p.read_text()
    elif name_or_path in builtin_scenarios():
        text = (resources.files("windplan") / "scenarios" / f"{name_or_path}.yaml").read_text()
    else:
        raise ScenarioError(f"no scenario file or built-in named '{name_or_path}' "
                            f"(built-ins: {', '.join(builtin_scenarios())})")
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{name_or_path}: {exc}") from None


def parse_levels(text: str):
    """``"0,2,0;0,0,0"`` -> ``[(0, 2, 0), (0, 0, 0)]``."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        vals = [float(c) for c in chunk.split(",")]
        if len(vals) != 3:
            raise argparse.ArgumentTypeError(f"force level needs 3 components, got '{chunk}'")
        out.append(tuple(vals))
    if not out:
        raise argparse.ArgumentTypeError("no force levels given")
    return out


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="windplan", description="Force-resilient quadrotor planning")
    sub = ap.add_subparsers(dest="cmd", required=True)

    b = sub.add_parser("bench", help="run a seeded benchmark batch")
    b.add_argument("--config", default="wind_corridor", help="scenario YAML path or built-in name")
    b.add_argument("--out", default="bench_out", help="output directory")
    b.add_argument("--runs", type=int, default=10, help="runs per (level, variant) cell")
    b.add_argument("--seed", type=int, default=0, help="first seed")
    b.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    b.add_argument("--levels", type=parse_levels, default=None,
                   help="';'-separated force levels in m/s^2, e.g. '0,2,0;0,0,0'")
    b.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    b.add_argument("--plots", action="store_true", help="also write plot-data CSVs per run")

    m = sub.add_parser("mission", help="fly one scenario and print its summary")
    m.add_argument("--config", default="wind_corridor", help="scenario YAML path or built-in name")
    m.add_argument("--variant", choices=VARIANTS, default=VARIANTS[0])
    m.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    m.add_argument("--log", default=None, help="write the per-tick log CSV here")

    sub.add_parser("scenarios", help="list built-in scenarios")
    return ap


def _bench(args) -> int:
    template = read_template(args.config)
    levels = args.levels
    if levels is None:
        zones = template.get("wind_zones") or []
        levels = [tuple(zones[0]["force_mps2"])] if zones else [(0.0, 0.0, 0.0)]
    variants = VARIANTS if args.variant == "all" else (args.variant,)
    cfg = BenchmarkConfig(template, levels, variants, args.runs, args.seed, Path(args.out))
    table = run_benchmark(cfg, jobs=args.jobs)
    for r in table.rows:
        print(f"level=[{r['level_x']:g},{r['level_y']:g},{r['level_z']:g}] variant={r['variant']} "
              f"success={r['successes']}/{r['runs']} traj_time={r['mean_traj_time']:.3f} "
              f"ctrl_cost={r['mean_ctrl_cost']:.4f}")
    if args.plots:
        emit_plots(sorted((cfg.out_dir / "runs").glob("*.csv")), cfg.out_dir / "plots")
    return 0


def _mission(args) -> int:
    doc = read_template(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
        gen = (doc.get("map") or {}).get("generator")
        if isinstance(gen, dict) and "seed" in (gen.get("args") or {}):
            gen["args"]["seed"] = args.seed
    log = run_mission(scenario_from_mapping(doc), args.variant, log_path=args.log)
    print(log.summary_line())
    return 0 if log.summary["success"] else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "bench":
            return _bench(args)
        if args.cmd == "mission":
            return _mission(args)
        print("\n".join(builtin_scenarios()))
        return 0
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
