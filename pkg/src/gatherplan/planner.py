"""Configuration sweep: estimate, normalise, score and pick the plan to run."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .collector_plan import (OC_ID, DeploymentPlan, PlanError, assemble_plan, estimate_worker_time,
                             segment_field)
from .executor import (collector_schedule, collector_timetable, cycle_ticks, leg_ticks, oc_region_field,
                       required_contact, resolve_cycle_time, segment_entry, ticks)
from .scenario import Cell, Scenario
from .segmentation import METHODS, Segmentation, SegmentationError

ALPHA = 0.5
BETA = 0.5
MAX_COLLECTORS = 8
INFEASIBLE_U = -1.0


@dataclass
class ConfigEvaluation:
    method: str
    n_c: int
    est_t_refresh: float = math.nan  # time units
    est_n_goals: float = math.nan  # goals per cycle
    t_norm: float | None = None
    n_norm: float | None = None
    utility: float = INFEASIBLE_U
    feasible: bool = True
    error: str = ""
    plan: DeploymentPlan | None = field(default=None, repr=False, compare=False)


@dataclass
class SweepResult:
    evaluations: list[ConfigEvaluation]
    best: int
    alpha: float = ALPHA
    beta: float = BETA

    @property
    def best_evaluation(self) -> ConfigEvaluation:
        return self.evaluations[self.best]


# -- estimation ---------------------------------------------------------------

def _mean_dist(sc: Scenario, seg: Segmentation, seg_id: int, src: Cell) -> float:
    T = segment_field(seg, sc.grid, seg_id, src)
    return float(T[seg.mask(seg_id)].mean())


def _goal_tour(sc: Scenario, seg: Segmentation, seg_id: int, hub: Cell, n: int, lbar: float,
               back: bool = True):
    """(planned ticks, travel metres) for hub -> n goals (-> hub) under the mean-leg model."""
    if n == 0:
        return 0.0, 0.0
    hub_leg = _mean_dist(sc, seg, seg_id, hub)
    legs = 2 if back else 1
    planned = legs * float(leg_ticks(sc, hub_leg)) + (n - 1) * float(leg_ticks(sc, lbar))
    return planned, legs * hub_leg + (n - 1) * lbar


def _max_goals(sc: Scenario, fits) -> int:
    for m in range(sc.goals_per_cycle, 0, -1):
        if fits(m):
            return m
    return 0


def _direct_worker(sc: Scenario, seg: Segmentation, seg_id: int, C: int, lbar: float):
    """[(goals per cycle, refresh time)] for a worker uploading at the OC itself."""
    e = segment_entry(sc, seg, seg_id)
    d = float(oc_region_field(sc)[e.row, e.col])
    out = 2 * float(leg_ticks(sc, d))
    n = _max_goals(sc, lambda m: out + _goal_tour(sc, seg, seg_id, e, m, lbar)[0]
                   + max(required_contact(sc, m), 1) - 1 <= C)
    _, metres = _goal_tour(sc, seg, seg_id, e, n, lbar)
    return [(n, (2 * d + metres) / sc.agent_speed + sc.transfer_time * n)]


def _collector_workers(sc: Scenario, plan: DeploymentPlan, cid: int, C: int):
    """[(goals per cycle, refresh time)] for the members of collector ``cid``.

    Goals that fit before the first meeting ride that loop; the rest of
    what can be gathered before the goals expire waits one more loop.
    """
    seg = plan.segmentation
    tt = collector_timetable(sc, plan, cid)
    sched = collector_schedule(sc, plan, cid, C, tt)
    m_loops = sched.loop_ticks // C
    out = []
    for j in plan.groups[cid - 1].members:
        d0, d1 = tt.dwell[j]
        meet = sched.phase + d0  # loop departs ``phase`` ticks after a boundary
        mp = plan.meeting_point(j)
        g = ticks(sc, estimate_worker_time(sc, seg, j, mp))
        b_last = C * math.floor((meet - g) / C)  # latest boundary whose goals make this meeting
        budget = min(C, meet - b_last + (d1 - d0))
        lbar = _mean_dist(sc, seg, j, seg.centroid(j))
        n_first = _max_goals(sc, lambda m: _goal_tour(sc, seg, j, mp, m, lbar)[0] <= budget)
        n_all = _max_goals(sc, lambda m: _goal_tour(sc, seg, j, mp, m, lbar, back=False)[0] <= C)
        wait = sched.phase + sched.travel_ticks - b_last + C * (m_loops - 1) / 2
        out.append((n_first, wait * sc.tick))
        if n_all > n_first:
            out.append((n_all - n_first, (wait + sched.loop_ticks) * sc.tick))
    return out


def estimate_config(sc: Scenario, plan: DeploymentPlan, cycle_time: float | None = None):
    """(est_t_refresh in time units, est_n_goals per cycle) mirroring the simulator.

    Direct-upload workers run one out-and-back trip per cycle and take as
    many goals as still fit before the cycle ends.  Collector-bound workers
    hand over at the phase-locked meeting; a goal's refresh time runs from
    its request to the end of the collector loop that carries it.  Segment
    geometry enters through the mean leg length L-bar.  The refresh
    estimate is goal-weighted; with no deliverable goal it is infinite (0
    when no goal is requested at all).
    """
    C = cycle_ticks(sc, resolve_cycle_time(sc, cycle_time))
    if sc.goals_per_cycle == 0:
        return 0.0, 0.0
    seg = plan.segmentation
    per = []
    for j in range(1, plan.n_w + 1):
        if plan.association[j] == OC_ID:
            per.extend(_direct_worker(sc, seg, j, C, _mean_dist(sc, seg, j, seg.centroid(j))))
    for grp in plan.groups:
        per.extend(_collector_workers(sc, plan, grp.collector, C))
    n_total = sum(n for n, _ in per)
    if n_total == 0:
        return math.inf, 0.0
    return sum(n * t for n, t in per) / n_total, float(n_total)


# -- scoring ------------------------------------------------------------------

def normalize(evals: list[ConfigEvaluation]) -> list[ConfigEvaluation]:
    """Min-max over the feasible evaluations; an infinite time maps to 1."""
    ok = [e for e in evals if e.feasible]
    if not ok:
        return evals
    ts = [e.est_t_refresh for e in ok if math.isfinite(e.est_t_refresh)]
    ns = [e.est_n_goals for e in ok]
    t_lo, t_hi = (min(ts), max(ts)) if ts else (0.0, 0.0)
    n_lo, n_hi = min(ns), max(ns)
    for e in ok:
        if not math.isfinite(e.est_t_refresh):
            e.t_norm = 1.0
        elif t_hi > t_lo:
            e.t_norm = (e.est_t_refresh - t_lo) / (t_hi - t_lo)
        else:
            e.t_norm = 0.0
        e.n_norm = (e.est_n_goals - n_lo) / (n_hi - n_lo) if n_hi > n_lo else 1.0
    return evals


def utility(t_norm: float, n_norm: float, alpha: float = ALPHA, beta: float = BETA) -> float:
    return alpha * (1.0 - t_norm) + beta * n_norm


def _rank_key(e: ConfigEvaluation):
    return (e.utility, -e.n_c, -METHODS.index(e.method))


def score(evals: list[ConfigEvaluation], alpha: float = ALPHA, beta: float = BETA) -> int:
    """Normalise, fill in utilities and return the index of the best evaluation."""
    normalize(evals)
    for e in evals:
        e.utility = utility(e.t_norm, e.n_norm, alpha, beta) if e.feasible else INFEASIBLE_U
    return max(range(len(evals)), key=lambda i: _rank_key(evals[i]))


def sweep_threads() -> int:
    raw = os.environ.get("GATHERPLAN_THREADS", "1").strip() or "1"
    n = int(raw)
    if n < 0:
        raise ValueError("GATHERPLAN_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def evaluate_config(sc: Scenario, method: str, n_c: int, cycle_time: float | None = None) -> ConfigEvaluation:
    try:
        plan = assemble_plan(sc, method, n_c)
        t, n = estimate_config(sc, plan, cycle_time)
    except (PlanError, SegmentationError, ValueError) as exc:
        return ConfigEvaluation(method, n_c, feasible=False, error=str(exc))
    plan.est_t_refresh, plan.est_n_goals = t, n
    return ConfigEvaluation(method, n_c, t, n, plan=plan)


def sweep(sc: Scenario, methods=METHODS, max_c: int | None = None, alpha: float = ALPHA,
          beta: float = BETA, cycle_time: float | None = None, threads: int | None = None) -> SweepResult:
    """Every (method, n_c) for n_c in 0..max_c, scored; order fixed by (method, n_c)."""
    methods = [m.upper() for m in methods]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if max_c is None:
        max_c = min(MAX_COLLECTORS, sc.n_agents - 1)
    if not 0 <= max_c <= sc.n_agents - 1:
        raise ValueError(f"max collectors must lie in 0..{sc.n_agents - 1}")
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    jobs = [(m, c) for m in methods for c in range(max_c + 1)]
    threads = sweep_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            evals = list(pool.map(lambda j: evaluate_config(sc, j[0], j[1], cycle_time), jobs))
    else:
        evals = [evaluate_config(sc, m, c, cycle_time) for m, c in jobs]
    best = score(evals, alpha, beta)
    for e in evals:
        if e.plan is not None:
            e.plan.utility = e.utility
    return SweepResult(evals, best, alpha, beta)


SWEEP_FIELDS = ("method", "n_c", "n_w", "feasible", "est_t_refresh", "est_n_goals", "t_norm", "n_norm",
                "utility", "best", "error")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "nan" if math.isnan(v) else "-inf")
    return str(v)


def write_sweep_csv(result: SweepResult, path, n_agents: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        for i, e in enumerate(result.evaluations):
            w.writerow({"method": e.method, "n_c": e.n_c, "n_w": n_agents - e.n_c, "feasible": _fmt(e.feasible),
                        "est_t_refresh": _fmt(e.est_t_refresh), "est_n_goals": _fmt(e.est_n_goals),
                        "t_norm": _fmt(e.t_norm), "n_norm": _fmt(e.n_norm), "utility": _fmt(e.utility),
                        "best": _fmt(i == result.best), "error": e.error})


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def simulated_scores(rows, alpha: float = ALPHA, beta: float = BETA) -> list[float]:
    """Utilities of measured ``(t_refresh, n_goals)`` pairs, normalised among themselves."""
    evals = [ConfigEvaluation("BAP", i, t, n) for i, (t, n) in enumerate(rows)]
    score(evals, alpha, beta)
    return [e.utility for e in evals]
