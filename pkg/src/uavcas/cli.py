"""Command-line front end.

`uavcas run` flies one configured scenario and writes the trajectory log,
metrics, and plot data.  `uavcas compare` sweeps seeds over both strategies
and both sensing modes and tabulates failures and mean collision-free
distance per configuration, the shape used in the evaluation writeup.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .engine import Metrics, Simulation, metrics_to_json, rows_to_csv
from .scenario import (Scenario, ScenarioError, default_scenario,
                       load_scenario)

log = logging.getLogger(__name__)

SENSING_MODES = ("deterministic", "probabilistic")


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _load(args) -> Scenario:
    sc = load_scenario(args.scenario) if args.scenario else default_scenario()
    if getattr(args, "strategy", None):
        if args.strategy not in ("hierarchical", "dmpc-only"):
            raise ScenarioError(f"strategy: unknown value {args.strategy!r}")
        sc.strategy = args.strategy
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    if getattr(args, "cycles", None) is not None:
        if args.cycles < 1:
            raise ScenarioError(f"cycles: must be positive, got {args.cycles}")
        sc.cycles = args.cycles
    if getattr(args, "sensing", None):
        sc.sensing = replace(sc.sensing, mode=args.sensing)
    if getattr(args, "udp", False):
        sc.bus = replace(sc.bus, transport="udp")
    if getattr(args, "parallel", False):
        sc.engine = replace(sc.engine, parallel=True)
    return sc


def _plot_data(sc: Scenario, rows) -> dict:
    trajectories: dict[int, list] = {}
    for row in rows:
        trajectories.setdefault(row[1], []).append([row[2], row[3]])
    return {
        "paths": [p.points.tolist() for p in sc.paths],
        "obstacles": [{"id": o.ident, "x": float(o.position[0]),
                       "y": float(o.position[1]), "radius": o.radius,
                       "vx": float(o.velocity[0]), "vy": float(o.velocity[1])}
                      for o in sc.obstacles],
        "trajectories": {str(k): v for k, v in sorted(trajectories.items())},
    }


def cmd_run(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics, rows = Simulation(sc).run()
    _write_atomic(out / "metrics.json", metrics_to_json(metrics))
    if sc.engine.log_trajectory:
        _write_atomic(out / "trajectory.csv", rows_to_csv(rows))
        _write_atomic(out / "plot_data.json",
                      json.dumps(_plot_data(sc, rows)) + "\n")
    print(f"{sc.strategy} / {sc.sensing.mode} / seed {sc.seed}: "
          f"{metrics.failures} failures, "
          f"acfd {metrics.avg_collision_free_distance}, "
          f"min separation {metrics.min_separation:.2f} m")
    return 0


def _mean_acfd(values: list[float]) -> float | str:
    """Mean of per-run distances, ignoring clean (infinite) runs."""
    finite = [v for v in values if not math.isinf(v)]
    if not finite:
        return "inf"
    return round(sum(finite) / len(finite), 2)


def cmd_compare(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise ScenarioError(f"seeds: expected comma-separated integers, got {args.seeds!r}")
    if not seeds:
        raise ScenarioError("seeds: list is empty")
    base = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    modes: dict[str, dict] = {}
    csv_lines = ["mode,seed,strategy,failures,acfd,failures_per_uav"]
    failed_runs = 0
    for mode in SENSING_MODES:
        runs = []
        for seed in seeds:
            for strategy in ("dmpc-only", "hierarchical"):
                sc = replace(base, strategy=strategy, seed=seed,
                             sensing=replace(base.sensing, mode=mode),
                             engine=replace(base.engine, log_trajectory=False))
                try:
                    metrics, _ = Simulation(sc).run()
                except Exception as exc:  # keep sweeping the other seeds
                    log.error("run failed (%s, seed %d, %s): %s",
                              mode, seed, strategy, exc)
                    failed_runs += 1
                    continue
                runs.append(metrics)
                tag = f"metrics_{mode}_{strategy}_seed{seed}.json"
                _write_atomic(out / tag, metrics_to_json(metrics))
                acfd = metrics.avg_collision_free_distance
                csv_lines.append(
                    f"{mode},{seed},{strategy},{metrics.failures},"
                    f"{'inf' if math.isinf(acfd) else acfd},"
                    + ";".join(str(v) for v in metrics.failures_per_uav))
        totals = {}
        for strategy in ("dmpc-only", "hierarchical"):
            mine: list[Metrics] = [m for m in runs if m.strategy == strategy]
            totals[strategy] = {
                "failures": sum(m.failures for m in mine),
                "mean_acfd": _mean_acfd(
                    [m.avg_collision_free_distance for m in mine]),
                "runs": len(mine),
            }
            csv_lines.append(
                f"{mode},total,{strategy},{totals[strategy]['failures']},"
                f"{totals[strategy]['mean_acfd']},")
        modes[mode] = {
            "runs": [m.to_dict() for m in runs],
            "totals": totals,
        }

    summary = {
        "scenario": base.name,
        "cycles": base.cycles,
        "seeds": seeds,
        "modes": modes,
    }
    _write_atomic(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    _write_atomic(out / "summary.csv", "\n".join(csv_lines) + "\n")

    for mode in SENSING_MODES:
        t = modes[mode]["totals"]
        print(f"{mode}: dmpc-only {t['dmpc-only']['failures']} failures "
              f"(mean acfd {t['dmpc-only']['mean_acfd']}), "
              f"hierarchical {t['hierarchical']['failures']} failures "
              f"(mean acfd {t['hierarchical']['mean_acfd']})")
    return 1 if failed_runs else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavcas",
        description="Multi-UAV collision avoidance simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="fly one scenario and write logs")
    p_run.add_argument("--scenario", help="scenario YAML (default: built-in five-vehicle layout)")
    p_run.add_argument("--strategy", choices=("hierarchical", "dmpc-only"))
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--cycles", type=int)
    p_run.add_argument("--sensing", choices=SENSING_MODES)
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--udp", action="store_true",
                       help="exchange state over loopback UDP instead of in-process")
    p_run.add_argument("--parallel", action="store_true",
                       help="decide vehicles on a thread pool")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare",
                           help="sweep seeds over both strategies and sensing modes")
    p_cmp.add_argument("--scenario")
    p_cmp.add_argument("--seeds", default="1,2,3,4,5",
                       help="comma-separated seed list")
    p_cmp.add_argument("--cycles", type=int)
    p_cmp.add_argument("--out", default="out", help="output directory")
    p_cmp.add_argument("--parallel", action="store_true")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
