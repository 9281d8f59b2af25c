"""Deterministic discrete-time mission simulator.

One tick is the time of one axis-aligned step (``cell_size / agent_speed``).
Diagonal steps cost sqrt(2) ticks, paid from a fractional movement budget.
Goals appear at every cycle boundary; workers pick the subset they can still
hand over in the coming synchronisation window, collectors replay a fixed
timetable and upload at the OC.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .collector_plan import OC_ID, DeploymentPlan, estimate_worker_time, geometry, segment_field
from .fmm import extract_path, fmm_solve, step_length
from .scenario import Cell, Scenario, in_comm
from .segmentation import Segmentation

# planning margin: planned leg ticks = STRETCH * T / h + OVERHEAD
LEG_STRETCH = 1.1
LEG_OVERHEAD = 1.5
PASS_LOOKAHEAD = 4  # collector passes considered when planning
EPS = 1e-9


class SimulationError(RuntimeError):
    pass


class GoalError(ValueError):
    pass


@dataclass(frozen=True)
class GoalRequest:
    id: int
    cell: Cell
    segment: int
    t_request: int


@dataclass
class GoalRecord:
    id: int
    cell: Cell
    segment: int
    t_request: int
    t_gathered: int | None = None
    t_delivered: int | None = None
    expired: bool = False  # still ungathered when its cycle ended


# -- goals --------------------------------------------------------------------

def _seg_cells(seg: Segmentation, seg_id: int) -> list[Cell]:
    key = ("cells", seg_id)
    if key not in seg._cache:
        seg._cache[key] = seg.cells_of(seg_id)
    return seg._cache[key]


def generate_goals(seed: int, seg: Segmentation, cycle: int, k: int,
                   t_request: int = 0, first_id: int = 0) -> list[GoalRequest]:
    """``k`` distinct uniform cells per segment; depends only on ``(seed, cycle)``."""
    if k < 0:
        raise GoalError("k must be non-negative")
    if seed < 0 or cycle < 0:
        raise GoalError("seed and cycle must be non-negative")
    rng = np.random.default_rng([seed, cycle])
    out = []
    for i in range(1, seg.n_w + 1):
        cells = _seg_cells(seg, i)
        if k > len(cells):
            raise GoalError(f"k={k} exceeds the {len(cells)} cells of segment {i}")
        for j in rng.choice(len(cells), size=k, replace=False):
            out.append(GoalRequest(first_id + len(out), cells[int(j)], i, t_request))
    return out


# -- timing -------------------------------------------------------------------

def ticks(sc: Scenario, duration: float) -> int:
    """Whole ticks needed to cover ``duration`` time units."""
    return max(0, math.ceil(duration / sc.tick - EPS))


def required_contact(sc: Scenario, n_items: int) -> int:
    return ticks(sc, sc.transfer_time * n_items)


def cycle_ticks(sc: Scenario, cycle_time: float) -> int:
    return max(1, ticks(sc, cycle_time))


def move_positions(path) -> list[Cell]:
    """Per-tick positions along ``path`` from a standing start (first entry = start)."""
    pos = [path[0]]
    budget = 0.0
    for a, b in zip(path, path[1:]):
        cost = step_length(a, b)
        while True:
            budget += 1.0
            if budget >= cost:
                budget -= cost
                pos.append(b)
                break
            pos.append(a)
    return pos


def leg_ticks(sc: Scenario, dist):
    """Planned ticks for a leg of geodesic length ``dist`` (metres); 0 for no move."""
    d = np.asarray(dist, dtype=float) / sc.cell_size
    return np.where(d > 0, LEG_STRETCH * d + LEG_OVERHEAD, 0.0)


@dataclass(frozen=True)
class Timetable:
    """A collector's loop, tick by tick; ``positions[0] == positions[-1] == OC``."""
    collector: int
    positions: tuple[Cell, ...]
    dwell: dict  # segment -> (first, last) offset spent at its meeting point

    @property
    def length(self) -> int:
        return len(self.positions) - 1


def collector_timetable(sc: Scenario, plan: DeploymentPlan, collector: int) -> Timetable:
    route = plan.route_of(collector)
    group = plan.groups[collector - 1]
    member_at = {p: m for m, p in group.meeting.items()}
    stops: dict[int, list[int]] = {}
    for w in range(1, len(route.waypoints) - 1):
        stops.setdefault(route.waypoint_index[w], []).append(member_at[route.waypoints[w]])
    dwell_len = ticks(sc, sc.transfer_time * sc.goals_per_cycle)
    path = route.path
    pos = [path[0]]
    dwell = {}
    budget = 0.0
    for i, cell in enumerate(path):
        for m in stops.get(i, []):
            first = len(pos) - 1
            pos.extend([cell] * dwell_len)
            dwell[m] = (first, len(pos) - 1)
            budget = 0.0
        if i + 1 < len(path):
            cost = step_length(cell, path[i + 1])
            while True:
                budget += 1.0
                if budget >= cost:
                    budget -= cost
                    pos.append(path[i + 1])
                    break
                pos.append(cell)
    return Timetable(collector, tuple(pos), dwell)


@dataclass(frozen=True)
class CollectorSchedule:
    """Phase-locked loop: departures at ``phase + n * loop_ticks``.

    ``loop_ticks`` is the travel loop rounded up to whole cycles, so every
    loop starts at the same offset from a cycle boundary.  The offset makes
    each meeting fall after the member is expected to have gathered the
    cycle's goals and walked to its meeting point.
    """
    collector: int
    travel_ticks: int
    loop_ticks: int
    phase: int
    slack: int  # ticks from a request to the start of the loop that carries it (may be negative)


def collector_schedule(sc: Scenario, plan: DeploymentPlan, collector: int, C: int,
                       timetable: Timetable | None = None) -> CollectorSchedule:
    tt = timetable or collector_timetable(sc, plan, collector)
    loop = max(1, math.ceil(tt.length / C)) * C
    seg = plan.segmentation
    slack = max(ticks(sc, estimate_worker_time(sc, seg, m, plan.meeting_point(m))) - tt.dwell[m][0]
                for m in plan.groups[collector - 1].members)
    return CollectorSchedule(collector, tt.length, loop, slack % C, slack)


# -- synchronisation windows ----------------------------------------------------

@dataclass(frozen=True)
class SyncWindow:
    worker: int  # segment id
    collector: int
    region: frozenset
    t_open: int
    t_close: int
    required_contact: int
    feasible: bool
    runs: dict = field(default_factory=dict, compare=False)  # cell -> (start, end) absolute ticks

    @property
    def contact_length(self) -> int:
        return self.t_close - self.t_open + 1


class _MemberContact:
    """Which cells of one segment see the collector at each timetable offset."""

    def __init__(self, sc: Scenario, seg: Segmentation, tt: Timetable, seg_id: int):
        cells = set(_seg_cells(seg, seg_id))
        self.sets = [frozenset(sc.comm_cells(p) & cells) for p in tt.positions]
        d0, d1 = tt.dwell[seg_id]
        a, b = d0, d1
        while a > 0 and self.sets[a - 1]:
            a -= 1
        while b < tt.length and self.sets[b + 1]:
            b += 1
        self.interval = (a, b)
        self.dwell = (d0, d1)
        # maximal contiguous runs per cell inside the interval
        runs: dict[Cell, list[tuple[int, int]]] = {}
        open_at: dict[Cell, int] = {}
        for i in range(a, b + 2):
            now = self.sets[i] if i <= b else frozenset()
            for c in list(open_at):
                if c not in now:
                    runs.setdefault(c, []).append((open_at.pop(c), i - 1))
            for c in now:
                if c not in open_at:
                    open_at[c] = i
        self.runs = runs

    def best_runs(self, base: int, lo: int) -> dict[Cell, tuple[int, int]]:
        """Longest run per cell in absolute ticks, ignoring ticks before ``lo``."""
        out = {}
        for c, rs in self.runs.items():
            best = None
            for s, e in rs:
                s, e = max(base + s, lo), base + e
                if e >= s and (best is None or e - s > best[1] - best[0]):
                    best = (s, e)
            if best is not None:
                out[c] = best
        return out


def _window_from(member: _MemberContact, seg_id: int, collector: int, base: int, lo: int,
                 req: int) -> SyncWindow:
    runs = member.best_runs(base, lo)
    a, b = member.interval
    feasible = any(e - s + 1 >= req for s, e in runs.values())
    return SyncWindow(seg_id, collector, frozenset(runs), max(base + a, lo), base + b, req, feasible, runs)


def compute_sync_window(sc: Scenario, plan: DeploymentPlan, worker: int, cycle: int, cargo: int,
                        loop_start: int | None = None, cycle_time: float | None = None) -> SyncWindow:
    """Contact window of segment ``worker`` with its collector on loop ``cycle``.

    On the nominal schedule loop ``cycle`` departs at ``phase + cycle *
    loop_ticks``; ``loop_start`` overrides that tick.  The window is the
    maximal run of ticks around the dwell at the meeting point during which
    some segment cell is in contact.
    """
    cid = plan.association[worker]
    if cid == OC_ID:
        raise SimulationError(f"segment {worker} uploads at the OC and has no collector window")
    tt = collector_timetable(sc, plan, cid)
    member = _MemberContact(sc, plan.segmentation, tt, worker)
    if loop_start is None:
        sched = collector_schedule(sc, plan, cid, cycle_ticks(sc, resolve_cycle_time(sc, cycle_time)), tt)
        base = sched.phase + cycle * sched.loop_ticks
    else:
        base = loop_start
    return _window_from(member, worker, cid, base, base, required_contact(sc, cargo))


def oc_region_field(sc: Scenario) -> np.ndarray:
    """Distance (metres) to the nearest cell in contact with the OC."""
    key = "__oc_region_field__"
    if key not in sc._comm_cache:
        sc._comm_cache[key] = fmm_solve(sc.grid, sorted(sc.comm_cells(sc.oc)))[0]
    return sc._comm_cache[key]


def segment_entry(sc: Scenario, seg: Segmentation, seg_id: int) -> Cell:
    """Segment cell closest to the OC contact region (direct-upload trips pass through it)."""
    key = ("entry", seg_id)
    if key not in seg._cache:
        f = oc_region_field(sc)
        seg._cache[key] = min(_seg_cells(seg, seg_id), key=lambda c: (f[c.row, c.col], c.row, c.col))
    return seg._cache[key]


# -- worker cycle planning ----------------------------------------------------

@dataclass
class TourChoice:
    order: list[int]  # candidate indices in visit order
    target: int | None  # index of the end target, None if infeasible
    arrival: float  # planned ticks from now to the target


def _evaluate(order, start_cost, pair, end_cost, start_end, limit_by_count, budget, gather_by=math.inf):
    """(arrival, target, lateness) of ``order`` with the best end target."""
    late_gather = 0.0
    if order:
        t = start_cost[order[0]] + sum(pair[a][b] for a, b in zip(order, order[1:]))
        late_gather = max(t - gather_by, 0.0)
        arr = t + end_cost[order[-1]]
    else:
        arr = start_end
    # the budget bounds goal tours; walking straight to the window never needs it
    lim = np.minimum(limit_by_count[len(order)], budget) if order else limit_by_count[0]
    late = np.maximum(arr - lim, 0.0) + late_gather
    ok = late <= EPS
    if ok.any():
        j = int(np.argmin(np.where(ok, arr, np.inf)))
        return float(arr[j]), j, 0.0
    j = int(np.argmin(late))
    return float(arr[j]), None, float(late[j])


def _local_search(order, ev):
    """Relocate and 2-opt moves on (lateness, arrival) until no move improves."""
    def key(o):
        arr, _, late = ev(o)
        return (late, arr)

    best = key(order)
    improved = True
    while improved:
        improved = False
        n = len(order)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                cand = order[:i] + order[i + 1:]
                cand.insert(j, order[i])
                k = key(cand)
                if k < best:
                    order, best, improved = cand, k, True
                    break
            if improved:
                break
        if improved:
            continue
        for i in range(n - 1):
            for j in range(i + 1, n):
                cand = order[:i] + order[i:j + 1][::-1] + order[j + 1:]
                k = key(cand)
                if k < best:
                    order, best, improved = cand, k, True
                    break
            if improved:
                break
    return order


def select_goals(start_cost, pair, end_cost, start_end, limit_by_count, budget=math.inf,
                 gather_by=math.inf) -> TourChoice:
    """Greedy cheapest insertion under per-target arrival limits.

    ``start_cost[g]``: ticks from the worker to goal g; ``pair[g][h]``: goal g
    to goal h; ``end_cost[g][t]``: goal g to end target t; ``start_end[t]``:
    worker straight to target t.  ``limit_by_count[m][t]`` is the latest
    allowed arrival at target t when m goals are carried (the contact needed
    for the handover grows with the cargo).  ``budget`` caps the arrival of
    any nonempty tour and every goal must be reached by ``gather_by`` (goals
    expire).
    Once plain insertion stalls, each left-over goal gets one more chance
    with the tour reordered by local search.
    """
    n = len(start_cost)
    start_cost = np.asarray(start_cost, float)
    end_cost = np.asarray(end_cost, float).reshape(n, -1) if n else np.zeros((0, len(start_end)))
    start_end = np.asarray(start_end, float)
    limit_by_count = np.asarray(limit_by_count, float).reshape(n + 1, -1)
    pair = np.asarray(pair, float).reshape(n, n) if n else np.zeros((0, 0))
    if budget < 0:
        raise ValueError("budget must be non-negative")

    def ev(o):
        return _evaluate(o, start_cost, pair, end_cost, start_end, limit_by_count, budget, gather_by)

    tour: list[int] = []
    left = list(range(n))
    while left:
        best = None
        for g in left:
            for p in range(len(tour) + 1):
                cand = tour[:p] + [g] + tour[p:]
                arr, tgt, _ = ev(cand)
                if tgt is not None and (best is None or (arr, g, p) < best):
                    best = (arr, g, p)
        if best is None:
            break
        _, g, p = best
        tour.insert(p, g)
        left.remove(g)

    # repair: cheapest remaining goals first, tour reordered around each
    progress = True
    while left and progress:
        progress = False
        ranked = sorted(left, key=lambda g: (min(ev(tour[:p] + [g] + tour[p:])[0]
                                                 for p in range(len(tour) + 1)), g))
        for g in ranked:
            cand = min((tour[:p] + [g] + tour[p:] for p in range(len(tour) + 1)),
                       key=lambda o: (ev(o)[2], ev(o)[0]))
            cand = _local_search(cand, ev)
            if ev(cand)[1] is not None:
                tour = cand
                left.remove(g)
                progress = True
                break

    arr, tgt, _ = ev(tour)
    return TourChoice(tour, tgt, arr)


def brute_force_goals(start_cost, pair, end_cost, start_end, limit_by_count, budget=math.inf,
                      gather_by=math.inf) -> TourChoice:
    """Exhaustive reference for ``select_goals`` (small instances only)."""
    n = len(start_cost)
    start_cost = np.asarray(start_cost, float)
    end_cost = np.asarray(end_cost, float).reshape(n, -1) if n else np.zeros((0, len(start_end)))
    start_end = np.asarray(start_end, float)
    limit_by_count = np.asarray(limit_by_count, float).reshape(n + 1, -1)
    pair = np.asarray(pair, float).reshape(n, n) if n else np.zeros((0, 0))
    best = TourChoice([], None, math.inf)
    arr, tgt, _ = _evaluate([], start_cost, pair, end_cost, start_end, limit_by_count, budget, gather_by)
    if tgt is not None:
        best = TourChoice([], tgt, arr)
    for m in range(1, n + 1):
        for order in itertools.permutations(range(n), m):
            arr, tgt, _ = _evaluate(list(order), start_cost, pair, end_cost, start_end, limit_by_count,
                                    budget, gather_by)
            if tgt is not None and (len(order), -arr) > (len(best.order), -best.arrival):
                best = TourChoice(list(order), tgt, arr)
    return best


def _join(path, leg):
    if path and leg and path[-1] == leg[0]:
        path.extend(leg[1:])
    else:
        path.extend(leg)


def worker_cycle_costs(sc: Scenario, seg: Segmentation, worker: int, position: Cell, goals,
                       window: SyncWindow, now: int = 0, cargo: int = 0):
    """Planning inputs of ``select_goals`` for one worker, or None without targets.

    Returns ``(targets, start_cost, pair, end_cost, start_end, limits)``.
    """
    grid = sc.grid
    targets = sorted(window.runs) if window.runs else sorted(window.region)
    if not targets:
        return None
    run_end = np.array([window.runs[c][1] if window.runs else window.t_close for c in targets], float)
    n = len(goals)
    f_pos = segment_field(seg, grid, worker, position)
    f_goal = [segment_field(seg, grid, worker, g) for g in goals]
    tcell = (np.array([c.row for c in targets]), np.array([c.col for c in targets]))
    start_cost = leg_ticks(sc, [f_pos[g.row, g.col] for g in goals])
    pair = leg_ticks(sc, [[f_goal[j][goals[i].row, goals[i].col] for j in range(n)] for i in range(n)])
    end_cost = leg_ticks(sc, [f[tcell] for f in f_goal]).reshape(n, len(targets))
    start_end = leg_ticks(sc, f_pos[tcell])
    limits = [run_end - now - max(required_contact(sc, cargo + m), 1) + 1 for m in range(n + 1)]
    return targets, start_cost, pair, end_cost, start_end, limits


def plan_worker_cycle(sc: Scenario, seg: Segmentation, worker: int, position: Cell, pending,
                      window: SyncWindow, budget: float, now: int = 0, cargo: int = 0,
                      gather_by: float = math.inf):
    """Goals to visit before meeting the collector, and the path to walk.

    ``pending`` is a list of goal cells (or ``GoalRequest``) in segment
    ``worker``; ``position`` must lie in that segment.  Targets are the
    window's region cells, each reachable until the end of its contact run
    minus the handover time; goals must be reached by ``gather_by`` (absolute
    tick).  Returns ``(ordered goal indices, path,
    target cell or None)``; with no feasible target the path is empty.
    """
    goals = [g.cell if isinstance(g, GoalRequest) else Cell(*g) for g in pending]
    costs = worker_cycle_costs(sc, seg, worker, position, goals, window, now, cargo)
    if costs is None:
        return [], [], None
    targets, start_cost, pair, end_cost, start_end, limits = costs
    choice = select_goals(start_cost, pair, end_cost, start_end, limits, budget, gather_by - now)
    if choice.target is None:
        return [], [], None
    target = targets[choice.target]
    grid = sc.grid
    f_pos = segment_field(seg, grid, worker, position)
    f_goal = [segment_field(seg, grid, worker, g) for g in goals]
    path = [position]
    cur, cur_field = position, f_pos
    for gi in choice.order:
        _join(path, extract_path(f_goal[gi], cur).cells)
        cur, cur_field = goals[gi], f_goal[gi]
    _join(path, extract_path(cur_field, target).cells[::-1])
    return choice.order, path, target


# -- world ------------------------------------------------------------------------

@dataclass
class WorkerState:
    name: str
    segment: int
    collector: int
    position: Cell
    path: deque = field(default_factory=deque)
    budget: float = 0.0
    cargo: dict = field(default_factory=dict)  # goal id -> t_gathered
    tour: list = field(default_factory=list)
    phase: str = "to-segment"
    contact: int = 0
    target_close: int | None = None
    needs_plan: bool = False


@dataclass
class CollectorState:
    name: str
    collector: int
    timetable: Timetable
    schedule: CollectorSchedule
    position: Cell
    idx: int = 0
    next_start: int = 0
    cargo: dict = field(default_factory=dict)
    contact: int = 0
    phase: str = "looping"
    loops: int = 0
    slips: int = 0


@dataclass
class MissionMetrics:
    goals: list  # GoalRecord
    per_cycle_delivered: list
    n_cycles: int
    tick: float
    cycle_ticks: int
    slips: int = 0

    @property
    def delivered(self) -> list[GoalRecord]:
        return [g for g in self.goals if g.t_delivered is not None]

    @property
    def n_requested(self) -> int:
        return len(self.goals)

    @property
    def n_gathered(self) -> int:
        return sum(g.t_gathered is not None for g in self.goals)

    @property
    def n_delivered(self) -> int:
        return len(self.delivered)

    @property
    def n_expired(self) -> int:
        return sum(g.expired for g in self.goals)

    @property
    def n_undelivered(self) -> int:
        return self.n_requested - self.n_delivered

    @property
    def t_refresh_mean(self) -> float:
        d = self.delivered
        if not d:
            return math.nan
        return self.tick * sum(g.t_delivered - g.t_request for g in d) / len(d)

    @property
    def n_goals_rate(self) -> float:
        return self.n_delivered / self.n_cycles

    def summary(self) -> dict:
        return {
            "n_cycles": self.n_cycles,
            "cycle_ticks": self.cycle_ticks,
            "n_requested": self.n_requested,
            "n_gathered": self.n_gathered,
            "n_delivered": self.n_delivered,
            "n_undelivered": self.n_undelivered,
            "n_expired": self.n_expired,
            "t_refresh_mean": self.t_refresh_mean,
            "n_goals_rate": self.n_goals_rate,
            "slips": self.slips,
        }


METRIC_FIELDS = ("kind", "goal", "segment", "col", "row", "t_request", "t_gathered", "t_delivered",
                 "refresh_time", "expired", "n_cycles", "cycle_ticks", "n_requested", "n_gathered", "n_delivered",
                 "n_undelivered", "n_expired", "t_refresh_mean", "n_goals_rate", "slips")


def _num(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics_csv(m: MissionMetrics, path) -> None:
    """Per-goal rows (``kind=goal``) followed by one ``kind=summary`` row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for g in m.goals:
            refresh = None if g.t_delivered is None else m.tick * (g.t_delivered - g.t_request)
            w.writerow({k: _num(v) for k, v in {
                "kind": "goal", "goal": g.id, "segment": g.segment, "col": g.cell.col, "row": g.cell.row,
                "t_request": g.t_request, "t_gathered": g.t_gathered, "t_delivered": g.t_delivered,
                "refresh_time": refresh, "expired": int(g.expired)}.items()})
        w.writerow({"kind": "summary", **{k: _num(v) for k, v in m.summary().items()}})


def read_metrics_summary(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["kind"] == "summary":
                return {k: float(row[k]) for k in METRIC_FIELDS[10:]}
    raise SimulationError(f"{path}: no summary row")


class World:
    """Mutable mission state; advanced one tick at a time by ``step``."""

    def __init__(self, sc: Scenario, plan: DeploymentPlan, seed: int | None = None,
                 n_cycles: int = 1, cycle_time: float | None = None, goal_source=None,
                 check: bool = True, trace: bool = True, phases: dict | None = None):
        if n_cycles < 1:
            raise SimulationError("n_cycles must be at least 1")
        if plan.n_c + plan.n_w != sc.n_agents:
            raise SimulationError("plan does not match the scenario team size")
        self.sc = sc
        self.plan = plan
        self.seg = plan.segmentation
        self.seed = sc.rng_seed if seed is None else seed
        self.n_cycles = n_cycles
        self.C = cycle_ticks(sc, resolve_cycle_time(sc, cycle_time))
        self.t_end = n_cycles * self.C
        self.goal_source = goal_source
        self.check = check
        self.trace: list[dict] | None = [] if trace else None
        self.t = 0
        self.goals: dict[int, GoalRecord] = {}
        self.ungathered: dict[int, set] = {i: set() for i in range(1, plan.n_w + 1)}
        self.at_cell: dict[Cell, set] = {}
        self.in_transit: set = set()
        self.slips = 0
        self.timetables = {r.collector: collector_timetable(sc, plan, r.collector) for r in plan.routes}
        self.collectors = []
        for c, tt in sorted(self.timetables.items()):
            sched = collector_schedule(sc, plan, c, self.C, tt)
            if phases and c in phases:
                sched = replace(sched, phase=int(phases[c]))
            self.collectors.append(CollectorState(f"c{c}", c, tt, sched, sc.oc, idx=tt.length,
                                                  next_start=sched.phase, phase="waiting"))
        self.contacts = {}
        for seg_id, cid in plan.association.items():
            if cid != OC_ID:
                self.contacts[seg_id] = _MemberContact(sc, self.seg, self.timetables[cid], seg_id)
        self.workers = []
        for seg_id in range(1, plan.n_w + 1):
            cid = plan.association[seg_id]
            w = WorkerState(f"w{seg_id}", seg_id, cid, sc.oc)
            if cid == OC_ID:
                w.phase = "idle"
                w.needs_plan = True
            else:
                w.path = deque(self._full_path(sc.oc, plan.meeting_point(seg_id))[1:])
                w.needs_plan = not w.path
                w.phase = "to-segment" if w.path else "idle"
            self.workers.append(w)
        if any(cid == OC_ID for cid in plan.association.values()):
            self.region = sc.comm_cells(sc.oc)
            self.region_field = oc_region_field(sc)
        self._new_cycle(0)
        self._replan()
        if self.check:
            self._check()

    # -- helpers
    def _emit(self, at: int | None = None, **rec):
        if self.trace is not None:
            self.trace.append({"t": self.t if at is None else at, **rec})

    def _full_path(self, a: Cell, b: Cell) -> list[Cell]:
        if a == b:
            return [a]
        return list(extract_path(geometry(self.sc).get(b), a).cells)

    def _new_cycle(self, cycle: int):
        expired = []
        for seg_id, ids in self.ungathered.items():
            for gid in sorted(ids):
                rec = self.goals[gid]
                rec.expired = True
                self.at_cell[rec.cell].discard(gid)
                expired.append(gid)
            ids.clear()
        first = len(self.goals)
        if self.goal_source is not None:
            reqs = list(self.goal_source(cycle, self.t, first))
        else:
            reqs = generate_goals(self.seed, self.seg, cycle, self.sc.goals_per_cycle, self.t, first)
        for r in reqs:
            if r.id in self.goals or self.seg.label_at(r.cell) != r.segment:
                raise SimulationError(f"bad goal request {r}")
            self.goals[r.id] = GoalRecord(r.id, r.cell, r.segment, r.t_request)
            self.ungathered[r.segment].add(r.id)
            self.at_cell.setdefault(r.cell, set()).add(r.id)
        self._emit(ev="cycle-start", cycle=cycle, goals=[r.id for r in reqs], expired=sorted(expired))
        for w in self.workers:
            if w.phase != "to-segment" and (w.collector != OC_ID or (w.phase == "idle" and not w.cargo)):
                w.needs_plan = True

    # -- one tick
    def step(self) -> None:
        sc = self.sc
        for c in self.collectors:
            self._advance_collector(c)
        for w in self.workers:
            if w.path and w.contact == 0:
                w.budget += 1.0
                cost = step_length(w.position, w.path[0])
                if w.budget >= cost:
                    w.budget -= cost
                    w.position = w.path.popleft()
                    self._emit(self.t + 1, ev="move", agent=w.name, cell=list(w.position))
                if not w.path:
                    w.budget = 0.0
                    if w.phase == "to-segment":
                        w.needs_plan = True
                    w.phase = "idle"
        self.t += 1
        if self.t % self.C == 0 and self.t < self.t_end:
            self._new_cycle(self.t // self.C)
        for w in self.workers:
            self._gather(w)
        for w in self.workers:
            self._worker_contact(w)
        for c in self.collectors:
            self._collector_contact(c)
        for w in self.workers:
            if w.cargo and w.target_close is not None and self.t > w.target_close and w.phase == "idle":
                w.needs_plan = True
        self._replan()
        if self.check:
            self._check()

    def _advance_collector(self, c: CollectorState):
        tt = c.timetable
        if tt.length == 0:
            return
        if c.idx == tt.length:
            if c.cargo:
                c.phase = "uploading"
                return
            if self.t < c.next_start:
                c.phase = "waiting"
                return
            sched = c.schedule
            c.idx = 0
            c.loops += 1
            c.next_start = sched.phase + sched.loop_ticks * ((self.t - sched.phase) // sched.loop_ticks + 1)
        for m, (_, last) in tt.dwell.items():
            if c.idx == last:
                w = self.workers[m - 1]
                if w.cargo and w.contact > 0 and in_comm(self.sc, w.position, c.position):
                    c.slips += 1
                    self.slips += 1
                    c.phase = "transferring"
                    self._emit(self.t + 1, ev="slip", agent=c.name, worker=w.name)
                    return
        c.phase = "looping"
        c.idx += 1
        nxt = tt.positions[c.idx]
        if nxt != c.position:
            c.position = nxt
            self._emit(self.t + 1, ev="move", agent=c.name, cell=list(nxt))

    def _gather(self, w: WorkerState):
        here = self.at_cell.get(w.position)
        if not here:
            return
        got = sorted(g for g in here if self.goals[g].segment == w.segment)
        for gid in got:
            rec = self.goals[gid]
            rec.t_gathered = self.t
            here.discard(gid)
            self.ungathered[w.segment].discard(gid)
            w.cargo[gid] = self.t
            self.in_transit.add(gid)
            if gid in w.tour:
                w.tour.remove(gid)
            self._emit(ev="gather", agent=w.name, goal=gid)

    def _worker_contact(self, w: WorkerState):
        if not w.cargo:
            w.contact = 0
            return
        if w.collector == OC_ID:
            peer, peer_pos = None, self.sc.oc
        else:
            peer = self.collectors[w.collector - 1]
            peer_pos = peer.position
        if not in_comm(self.sc, w.position, peer_pos):
            w.contact = 0
            return
        if max(w.cargo.values()) == self.t:
            # data sensed this tick cannot leave in the same tick; keeps refresh times positive
            w.contact = 0
            w.phase = "transferring"
            return
        w.contact += 1
        if w.contact < required_contact(self.sc, len(w.cargo)):
            w.phase = "transferring"
            return
        assert in_comm(self.sc, w.position, peer_pos), "transfer outside communication range"
        ids = sorted(w.cargo)
        if peer is None:
            for gid in ids:
                self._deliver(gid)
            self._emit(ev="deliver", agent=w.name, goals=ids)
        else:
            peer.cargo.update(w.cargo)
            self._emit(ev="transfer", **{"from": w.name, "to": peer.name, "goals": ids})
        w.cargo = {}
        w.contact = 0
        w.target_close = None
        w.needs_plan = True
        if not w.path:
            w.phase = "idle"

    def _collector_contact(self, c: CollectorState):
        if not c.cargo or not in_comm(self.sc, c.position, self.sc.oc):
            c.contact = 0
            return
        c.contact += 1
        if c.contact < required_contact(self.sc, len(c.cargo)):
            return
        assert in_comm(self.sc, c.position, self.sc.oc), "upload outside communication range"
        ids = sorted(c.cargo)
        for gid in ids:
            self._deliver(gid)
        self._emit(ev="deliver", agent=c.name, goals=ids)
        c.cargo = {}
        c.contact = 0

    def _deliver(self, gid: int):
        rec = self.goals[gid]
        rec.t_delivered = self.t
        self.in_transit.discard(gid)
        if not rec.t_request <= rec.t_gathered < rec.t_delivered:
            raise SimulationError(f"causality violated for goal {gid}: {rec}")

    # -- planning
    def _replan(self):
        for w in self.workers:
            if w.needs_plan:
                w.needs_plan = False
                if w.collector == OC_ID:
                    self._plan_direct(w)
                else:
                    self._plan_collector(w)

    def _set_path(self, w: WorkerState, path, tour, phase_if_moving: str, close):
        w.path = deque(path[1:] if path and path[0] == w.position else path)
        w.budget = 0.0
        w.tour = list(tour)
        w.target_close = close
        w.phase = phase_if_moving if w.path else "idle"

    def _gather_by(self) -> int:
        """Last tick at which this cycle's goals can still be gathered."""
        return min((self.t // self.C + 1) * self.C - 1, self.t_end)

    def _pending(self, w: WorkerState) -> list[int]:
        return sorted(self.ungathered[w.segment])

    def _plan_collector(self, w: WorkerState):
        sc = self.sc
        pend = self._pending(w)
        mp = self.plan.meeting_point(w.segment)
        if not pend and not w.cargo:
            self._set_path(w, self._seg_path(w, mp), [], "to-sync", None)
            return
        c = self.collectors[w.collector - 1]
        member = self.contacts[w.segment]
        if c.idx == c.timetable.length:
            first = max(c.next_start, self.t)
        else:
            first = self.t - c.idx
        cells = [self.goals[g].cell for g in pend]
        for q in range(PASS_LOOKAHEAD):
            base = first + q * c.schedule.loop_ticks
            win = _window_from(member, w.segment, c.collector, base, self.t + 1,
                               required_contact(sc, len(w.cargo)))
            if not win.runs:
                continue
            order, path, target = plan_worker_cycle(sc, self.seg, w.segment, w.position, cells, win,
                                                    math.inf, self.t, len(w.cargo), self._gather_by())
            if target is None or (not order and not w.cargo):
                continue
            tour = [pend[i] for i in order]
            self._set_path(w, path, tour, "gathering" if tour else "to-sync", win.runs[target][1])
            return
        # nothing fits the next passes: wait at the meeting point, the collector holds for us
        self.slips += 1
        self._emit(ev="slip", agent=w.name, worker=w.name)
        self._set_path(w, self._seg_path(w, mp), [], "to-sync", None)

    def _seg_path(self, w: WorkerState, dest: Cell) -> list[Cell]:
        if w.position == dest:
            return [dest]
        if self.seg.label_at(w.position) == w.segment:
            return list(extract_path(segment_field(self.seg, self.sc.grid, w.segment, dest), w.position).cells)
        return self._full_path(w.position, dest)

    def _plan_direct(self, w: WorkerState):
        """Out-and-back trip from the OC through the segment entry cell."""
        sc = self.sc
        pend = self._pending(w)
        if not pend:
            if w.cargo and w.position not in self.region:
                path = list(extract_path(self.region_field, w.position).cells)
                self._set_path(w, path, [], "to-sync", None)
            return
        seg, grid = self.seg, sc.grid
        e = segment_entry(sc, seg, w.segment)
        f_e = geometry(sc).get(e)
        cells = [self.goals[g].cell for g in pend]
        n = len(cells)
        f_goal = [segment_field(seg, grid, w.segment, g) for g in cells]
        offset = float(leg_ticks(sc, f_e[w.position.row, w.position.col]))
        back = float(leg_ticks(sc, self.region_field[e.row, e.col]))
        start_cost = offset + leg_ticks(sc, [f[e.row, e.col] for f in f_goal])
        pair = leg_ticks(sc, [[f_goal[j][cells[i].row, cells[i].col] for j in range(n)] for i in range(n)])
        end_cost = (leg_ticks(sc, [f[e.row, e.col] for f in f_goal]) + back).reshape(n, 1)
        start_end = np.array([0.0 if w.position in self.region else offset + back])
        # the whole out-and-back trip, upload included, must fit in the current cycle
        deadline = self._gather_by() + 1 - self.t
        limits = [[deadline - max(required_contact(sc, len(w.cargo) + j), 1) + 1] for j in range(n + 1)]
        choice = select_goals(start_cost, pair, end_cost, start_end, limits)
        if not choice.order:
            return
        path = [w.position]
        if w.position != e:
            _join(path, extract_path(f_e, w.position).cells)
        cur = e
        for gi in choice.order:
            _join(path, extract_path(f_goal[gi], cur).cells)
            cur = cells[gi]
        _join(path, extract_path(f_goal[choice.order[-1]], e).cells[::-1])
        _join(path, extract_path(self.region_field, e).cells)
        self._set_path(w, path, [pend[i] for i in choice.order], "gathering", None)

    # -- invariants
    def _check(self):
        grid = self.sc.grid
        for a in itertools.chain(self.workers, self.collectors):
            if not grid.is_free(a.position):
                raise SimulationError(f"t={self.t}: {a.name} on obstacle {tuple(a.position)}")
        held = []
        for a in itertools.chain(self.workers, self.collectors):
            held.extend(a.cargo)
        if len(held) != len(set(held)) or set(held) != self.in_transit:
            raise SimulationError(f"t={self.t}: goal data duplicated or lost")
        for gid in self.in_transit:
            rec = self.goals[gid]
            if rec.t_gathered is None or rec.t_delivered is not None:
                raise SimulationError(f"t={self.t}: goal {gid} carried in an impossible state")

    def metrics(self) -> MissionMetrics:
        recs = [self.goals[i] for i in sorted(self.goals)]
        per = [0] * self.n_cycles
        for g in recs:
            if g.t_delivered is not None:
                per[min(g.t_delivered // self.C, self.n_cycles - 1)] += 1
        return MissionMetrics(recs, per, self.n_cycles, self.sc.tick, self.C,
                              self.slips + sum(c.slips for c in self.collectors))


def resolve_cycle_time(sc: Scenario, cycle_time: float | None = None) -> float:
    if cycle_time is not None:
        return cycle_time
    return sc.cycle_time if sc.cycle_time is not None else default_cycle_time(sc)


def default_cycle_time(sc: Scenario) -> float:
    """Cycle length when the scenario does not fix one.

    Long enough for a worker to cross a typical segment and come back: the
    time to walk the map's geodesic radius around the OC, plus the handover
    of one cycle's goals.
    """
    key = "__default_cycle__"
    if key not in sc._comm_cache:
        T = geometry(sc).get(sc.oc)
        radius = float(np.max(T[np.isfinite(T)]))
        sc._comm_cache[key] = radius / sc.agent_speed + sc.transfer_time * sc.goals_per_cycle
    return sc._comm_cache[key]


def run_mission(plan: DeploymentPlan, sc: Scenario, n_cycles: int, seed: int | None = None,
                cycle_time: float | None = None, goal_source=None, check: bool = True,
                trace: bool = True, phases: dict | None = None):
    """Run ``n_cycles`` cycles; returns ``(MissionMetrics, trace records)``.

    ``goal_source(cycle, t_request, first_id)`` replaces random goals and
    ``phases`` ({collector: ticks}) the computed departure offsets; both are
    hooks for hand-checked test schedules.
    """
    world = World(sc, plan, seed, n_cycles, cycle_time, goal_source, check, trace, phases)
    while world.t < world.t_end:
        world.step()
    return world.metrics(), world.trace or []


def dumps_trace(trace) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in trace)


def write_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_trace(trace))
