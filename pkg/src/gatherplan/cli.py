"""``gatherplan`` command line: segment, plan, run, report.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from .collector_plan import PlanError, dumps_plan, loads_plan, plan_problems
from .executor import (METRIC_FIELDS, GoalError, SimulationError, read_metrics_summary, run_mission,
                       write_metrics_csv, write_trace)
from .planner import ALPHA, BETA, sweep, write_sweep_csv
from .scenario import ScenarioError, bundled_scenario_path, read_scenario
from .segmentation import METHODS, SegmentationError, segment, write_segmentation


class CliError(Exception):
    """Runtime or validation failure; reported on stderr with exit code 1."""


def _positive(raw: str) -> int:
    try:
        v = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {raw!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative(raw: str) -> int:
    try:
        v = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {raw!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _weight(raw: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {raw!r}") from None
    if not math.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"must be a finite number >= 0, got {raw}")
    return v


def _methods(raw: str) -> list[str]:
    out = [m.strip().upper() for m in raw.split(",") if m.strip()]
    bad = [m for m in out if m not in METHODS]
    if not out or bad:
        raise argparse.ArgumentTypeError(f"methods must be a comma list of {','.join(METHODS).lower()}")
    return out


def _load(path) -> "Scenario":  # noqa: F821
    p = Path(path)
    if not p.is_file():
        raise CliError(f"scenario file not found: {p}")
    return read_scenario(p)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _sweep(args, sc):
    return sweep(sc, args.methods, args.max_collectors, args.alpha, args.beta, args.cycle_time)


def cmd_segment(args) -> int:
    sc = _load(args.scenario)
    out = _out_dir(args.out)
    for method in args.method:
        seg = segment(sc, method, args.n_w)
        stem = f"{method.lower()}_{args.n_w}"
        pgm = out / f"segments_{stem}.pgm" if args.pgm else None
        write_segmentation(seg, out / f"labels_{stem}.csv", out / f"centroids_{stem}.csv", pgm)
        note = "" if seg.converged is None else f" converged={seg.converged}"
        print(f"{method} n_w={args.n_w} segments={seg.n_w}{note}")
    return 0


def cmd_plan(args) -> int:
    sc = _load(args.scenario)
    out = _out_dir(args.out)
    result = _sweep(args, sc)
    write_sweep_csv(result, out / "sweep.csv", sc.n_agents)
    best = result.best_evaluation
    if not best.feasible:
        raise CliError("no feasible configuration in the sweep")
    (out / "plan.json").write_text(dumps_plan(best.plan), encoding="utf-8")
    print(f"best method={best.method} n_c={best.n_c} U={best.utility:.6f}")
    return 0


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    out = _out_dir(args.out)
    if args.plan_from_sweep:
        result = _sweep(args, sc)
        best = result.best_evaluation
        if not best.feasible:
            raise CliError("no feasible configuration in the sweep")
        plan = best.plan
        (out / "plan.json").write_text(dumps_plan(plan), encoding="utf-8")
    else:
        p = Path(args.plan)
        if not p.is_file():
            raise CliError(f"plan file not found: {p}")
        plan = loads_plan(p.read_text(encoding="utf-8"))
    if plan.scenario_hash != sc.content_hash():
        raise CliError(f"plan was built for a different scenario (hash {plan.scenario_hash[:12]} "
                       f"!= {sc.content_hash()[:12]})")
    problems = plan_problems(plan, sc)
    if problems:
        raise CliError("invalid plan: " + "; ".join(problems))
    metrics, trace = run_mission(plan, sc, args.cycles, args.seed, args.cycle_time)
    write_metrics_csv(metrics, out / "metrics.csv")
    write_trace(trace, out / "trace.jsonl")
    print(f"T_refresh_mean={metrics.t_refresh_mean:.6f}")
    print(f"N_goals_rate={metrics.n_goals_rate:.6f}")
    return 0


def cmd_report(args) -> int:
    keys = METRIC_FIELDS[10:]
    rows = []
    for path in args.metrics:
        p = Path(path)
        if not p.is_file():
            raise CliError(f"metrics file not found: {p}")
        rows.append({"source": str(p), **read_metrics_summary(p)})
    mean = {"source": "mean"}
    for k in keys:
        vals = [r[k] for r in rows if not math.isnan(r[k])]
        mean[k] = sum(vals) / len(vals) if vals else math.nan
    dest = Path(args.output)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=("source", *keys), lineterminator="\n")
        w.writeheader()
        for r in (*rows, mean):
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    print(f"runs={len(rows)} T_refresh_mean={mean['t_refresh_mean']:.6f} "
          f"N_goals_rate={mean['n_goals_rate']:.6f}")
    return 0


def _sweep_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--methods", type=_methods, default=list(METHODS), help="comma list, e.g. bap,pap")
    p.add_argument("--max-collectors", type=_non_negative, default=None,
                   help="largest n_c in the sweep (default min(8, N-1))")
    p.add_argument("--alpha", type=_weight, default=ALPHA, help="weight of the refresh-time term")
    p.add_argument("--beta", type=_weight, default=BETA, help="weight of the goals-rate term")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatherplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--scenario", default=str(bundled_scenario_path()),
                       help="scenario file (default: bundled office map)")
        if out:
            p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("segment", help="partition the free space among n_w workers")
    common(p)
    p.add_argument("--method", type=_methods, default=["PAP"], help="bap, pap, rap or a comma list")
    p.add_argument("--n-w", type=_positive, required=True, help="number of segments")
    p.add_argument("--pgm", action="store_true", help="also write a PGM label image")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("plan", help="sweep methods and collector counts, keep the best plan")
    common(p)
    _sweep_options(p)
    p.add_argument("--cycle-time", type=float, default=None, help="override the scenario cycle time")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="simulate a plan")
    common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--plan", help="plan JSON written by 'plan'")
    src.add_argument("--plan-from-sweep", action="store_true", help="run the sweep first and use its best plan")
    _sweep_options(p)
    p.add_argument("--cycles", type=_positive, default=1, help="cycles to simulate (default 1)")
    p.add_argument("--seed", type=int, default=None, help="goal seed (default: scenario seed)")
    p.add_argument("--cycle-time", type=float, default=None, help="override the scenario cycle time")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate metrics CSVs of several runs")
    p.add_argument("metrics", nargs="+", help="metrics.csv files")
    p.add_argument("-o", "--output", default="report.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "cycle_time", None) is not None and not (math.isfinite(args.cycle_time)
                                                             and args.cycle_time > 0):
        parser.error("--cycle-time must be a positive number")
    try:
        return args.func(args)
    except (CliError, ScenarioError, SegmentationError, PlanError, SimulationError, GoalError,
            ValueError, OSError) as exc:
        print(f"gatherplan: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
