"""Collector groups, cyclic collector routes and worker association."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .fmm import FieldCache, extract_path, path_length
from .scenario import Cell, Scenario
from .segmentation import Segmentation, segment, segment_stats

OC_ID = 0  # association target meaning "upload directly at the OC"
MAX_IMPROVE_MOVES = 100


class PlanError(ValueError):
    pass


@dataclass
class CollectorGroup:
    collector: int
    members: tuple[int, ...]
    meeting: dict[int, Cell]


@dataclass
class CollectorRoute:
    collector: int
    waypoints: tuple[Cell, ...]  # OC, m1, ..., mg, OC
    path: tuple[Cell, ...]  # concatenated geodesic sub-paths
    waypoint_index: tuple[int, ...]  # position of each waypoint inside ``path``
    travel_time: float
    period: float


@dataclass
class DeploymentPlan:
    method: str
    n_c: int
    n_w: int
    segmentation: Segmentation
    groups: list[CollectorGroup]
    routes: list[CollectorRoute]
    association: dict[int, int]  # segment id -> collector id (OC_ID for direct upload)
    scenario_hash: str = ""
    est_t_refresh: float | None = None
    est_n_goals: float | None = None
    utility: float | None = None
    extra: dict = field(default_factory=dict)

    def group_of(self, seg_id: int) -> CollectorGroup | None:
        cid = self.association[seg_id]
        if cid == OC_ID:
            return None
        return self.groups[cid - 1]

    def route_of(self, collector: int) -> CollectorRoute:
        return self.routes[collector - 1]

    def meeting_point(self, seg_id: int) -> Cell:
        g = self.group_of(seg_id)
        return self.segmentation.centroid(seg_id) if g is None else g.meeting[seg_id]


# -- geometry helpers -------------------------------------------------------

def geometry(sc: Scenario) -> FieldCache:
    """Full-map distance fields shared by every plan of a scenario."""
    cache = sc._comm_cache.get("__fields__")
    if cache is None:
        cache = FieldCache(sc.grid)
        sc._comm_cache["__fields__"] = cache
    return cache


def segment_field(seg: Segmentation, grid, seg_id: int, source: Cell) -> np.ndarray:
    """Distance field from ``source`` restricted to segment ``seg_id``."""
    cache = seg._cache.setdefault("fields", FieldCache(grid, maxsize=2048))
    return cache.get(source, region=seg_id, mask=seg.mask(seg_id))


def mean_centroid_distance(sc: Scenario, seg: Segmentation, seg_id: int) -> float:
    """Mean within-segment geodesic distance from the centroid (metres)."""
    key = ("lbar", seg_id)
    if key not in seg._cache:
        T = segment_field(seg, sc.grid, seg_id, seg.centroid(seg_id))
        seg._cache[key] = float(T[seg.mask(seg_id)].mean())
    return seg._cache[key]


def estimate_worker_time(sc: Scenario, seg: Segmentation, seg_id: int, meeting: Cell,
                         n_goals: int | None = None) -> float:
    """Estimated worker cycle: goal legs of mean length plus the walk to the meeting point."""
    k = sc.goals_per_cycle if n_goals is None else n_goals
    lbar = mean_centroid_distance(sc, seg, seg_id)
    d = segment_field(seg, sc.grid, seg_id, seg.centroid(seg_id))[meeting.row, meeting.col]
    return (k * lbar + d) / sc.agent_speed + sc.transfer_time * k


# -- adjacency and grouping -------------------------------------------------

def build_adjacency(seg: Segmentation, grid, cache: FieldCache | None = None) -> nx.Graph:
    cache = cache or FieldCache(grid)
    lab = seg.labels
    g = nx.Graph()
    areas = segment_stats(seg)
    for i in range(1, seg.n_w + 1):
        g.add_node(i, centroid=seg.centroid(i), area=areas[i - 1])
    pairs = set()
    for a, b in ((lab[:, :-1], lab[:, 1:]), (lab[:-1, :], lab[1:, :])):
        m = (a > 0) & (b > 0) & (a != b)
        for x, y in zip(a[m].tolist(), b[m].tolist()):
            pairs.add((min(x, y), max(x, y)))
    for i, j in sorted(pairs):
        ci, cj = seg.centroid(i), seg.centroid(j)
        T = cache.get(ci)
        g.add_edge(i, j, weight=float(T[cj.row, cj.col]))
    return g


def _connected_without(g: nx.Graph, members: set, v) -> bool:
    rest = members - {v}
    return bool(rest) and nx.is_connected(g.subgraph(rest))


def group_segments(g: nx.Graph, seg: Segmentation, n_c: int) -> list[CollectorGroup]:
    n_w = g.number_of_nodes()
    if not 1 <= n_c <= n_w:
        raise PlanError(f"n_c={n_c} must lie in 1..{n_w}")
    if not nx.is_connected(g):
        raise PlanError("segment adjacency graph is disconnected")
    nodes = sorted(g.nodes)
    dist = dict(nx.all_pairs_dijkstra_path_length(g, weight="weight"))
    area = {v: g.nodes[v]["area"] for v in nodes}

    # seeds: greedy farthest point on graph distances, from the most eccentric node
    first = max(nodes, key=lambda v: (max(dist[v].values()), -v))
    seeds = [first]
    while len(seeds) < n_c:
        seeds.append(max((v for v in nodes if v not in seeds),
                         key=lambda v: (min(dist[v][s] for s in seeds), -v)))

    groups = [{s} for s in seeds]
    owner = {s: k for k, s in enumerate(seeds)}
    while len(owner) < n_w:
        for k in sorted(range(n_c), key=lambda k: (sum(area[v] for v in groups[k]), k)):
            best = None
            for u in sorted(groups[k]):
                for v in g.neighbors(u):
                    if v in owner:
                        continue
                    key = (g[u][v]["weight"], v)
                    if best is None or key < best:
                        best = key
            if best is not None:
                groups[k].add(best[1])
                owner[best[1]] = k
                break

    # local improvement: single-node moves that lower the sorted area profile
    def profile(gs):
        return tuple(sorted((sum(area[v] for v in m) for m in gs), reverse=True))

    for _ in range(MAX_IMPROVE_MOVES):
        cur = profile(groups)
        best = None
        for v in nodes:
            a = owner[v]
            for b in sorted({owner[u] for u in g.neighbors(v)} - {a}):
                if not _connected_without(g, groups[a], v):
                    continue
                trial = [set(m) for m in groups]
                trial[a].discard(v)
                trial[b].add(v)
                p = profile(trial)
                if p < cur and (best is None or p < best[0]):
                    best = (p, v, a, b)
        if best is None:
            break
        _, v, a, b = best
        groups[a].discard(v)
        groups[b].add(v)
        owner[v] = b

    ordered = sorted((sorted(m) for m in groups), key=lambda m: m[0])
    return [CollectorGroup(k + 1, tuple(m), {i: seg.centroid(i) for i in m})
            for k, m in enumerate(ordered)]


# -- routes -----------------------------------------------------------------

def tour_length(order, D) -> float:
    return sum(D[a][b] for a, b in zip(order, order[1:]))


def nearest_neighbour_tour(D, n: int) -> list[int]:
    """Closed tour over nodes 0..n-1 starting and ending at node 0."""
    order = [0]
    left = set(range(1, n))
    while left:
        last = order[-1]
        nxt = min(left, key=lambda j: (D[last][j], j))
        order.append(nxt)
        left.discard(nxt)
    order.append(0)
    return order


def two_opt(order, D) -> list[int]:
    """2-opt on a closed tour whose endpoints (the depot) stay fixed."""
    order = list(order)
    best = tour_length(order, D)
    improved = True
    while improved:
        improved = False
        for i in range(1, len(order) - 2):
            for j in range(i + 1, len(order) - 1):
                a, b, c, d = order[i - 1], order[i], order[j], order[j + 1]
                delta = D[a][c] + D[b][d] - D[a][b] - D[c][d]
                if delta < -1e-9:
                    order[i:j + 1] = reversed(order[i:j + 1])
                    new = tour_length(order, D)
                    assert new <= best + 1e-9, "2-opt increased the tour length"
                    best = new
                    improved = True
    return order


def _route_through(sc: Scenario, collector: int, points: list[Cell], n_members: int) -> CollectorRoute:
    cache = geometry(sc)
    nodes = [sc.oc] + points
    fields = [cache.get(p) for p in nodes]
    raw = np.array([[fields[j][p.row, p.col] for j in range(len(nodes))] for p in nodes])
    for i, row in enumerate(raw):
        if not np.isfinite(row).all():
            raise PlanError(f"waypoint {tuple(nodes[i])} unreachable")
    # the two fast-marching directions differ by discretisation error; 2-opt needs symmetry
    D = ((raw + raw.T) / 2).tolist()
    order = two_opt(nearest_neighbour_tour(D, len(nodes)), D)
    path = [sc.oc]
    idx = [0]
    for a, b in zip(order, order[1:]):
        if a == b:
            idx.append(len(path) - 1)
            continue
        leg = extract_path(fields[b], nodes[a], 1.0).cells
        path.extend(leg[1:])
        idx.append(len(path) - 1)
    waypoints = tuple(nodes[i] for i in order)
    travel = path_length(path, sc.cell_size) / sc.agent_speed
    period = travel + sc.transfer_time * sc.goals_per_cycle * n_members
    return CollectorRoute(collector, waypoints, tuple(path), tuple(idx), travel, period)


def plan_route(sc: Scenario, group: CollectorGroup, seg: Segmentation | None = None,
               balance: bool = True) -> CollectorRoute:
    """Route OC -> meeting points -> OC; optionally slide meeting points toward the route.

    When ``seg`` is given and ``balance`` is set, each member whose estimated
    worker time leaves slack against the collector period has its meeting
    point moved cell by cell from its centroid toward the nearest point of the
    rest of the route, while the estimate stays within the period and the
    point stays inside the segment. ``group.meeting`` is updated in place.
    """
    if not group.members:
        raise PlanError("empty collector group")
    members = list(group.members)
    route = _route_through(sc, group.collector, [group.meeting[m] for m in members], len(members))
    if seg is None or not balance:
        return route

    cache = geometry(sc)
    for m in members:
        cen = seg.centroid(m)
        if estimate_worker_time(sc, seg, m, cen) > route.period:
            continue
        outside = [c for c in route.path if seg.labels[c.row, c.col] != m] or [sc.oc]
        Tc = cache.get(cen)
        target = min(outside, key=lambda c: (Tc[c.row, c.col], c.row, c.col))
        walk = extract_path(cache.get(target), cen).cells
        mp = cen
        for nxt in walk[1:]:
            if seg.labels[nxt.row, nxt.col] != m:
                break
            if estimate_worker_time(sc, seg, m, nxt) > route.period:
                break
            mp = nxt
        group.meeting[m] = mp
    return _route_through(sc, group.collector, [group.meeting[m] for m in members], len(members))


def assemble_plan(sc: Scenario, method: str, n_c: int, seg: Segmentation | None = None) -> DeploymentPlan:
    if not 0 <= n_c <= sc.n_agents - 1:
        raise PlanError(f"n_c={n_c} leaves no worker for {sc.n_agents} agents")
    n_w = sc.n_agents - n_c
    seg = seg if seg is not None else segment(sc, method, n_w)
    if seg.n_w != n_w:
        raise PlanError("segmentation size does not match n_agents - n_c")
    if n_c == 0:
        return DeploymentPlan(seg.method, 0, n_w, seg, [], [], {i: OC_ID for i in range(1, n_w + 1)},
                              sc.content_hash())
    graph = build_adjacency(seg, sc.grid, geometry(sc))
    groups = group_segments(graph, seg, n_c)
    routes = [plan_route(sc, grp, seg) for grp in groups]
    assoc = {i: grp.collector for grp in groups for i in grp.members}
    return DeploymentPlan(seg.method, n_c, n_w, seg, groups, routes, dict(sorted(assoc.items())),
                          sc.content_hash())


def plan_problems(plan: DeploymentPlan, sc: Scenario) -> list[str]:
    probs = []
    if plan.n_c + plan.n_w != sc.n_agents:
        probs.append("n_c + n_w != n_agents")
    if sorted(plan.association) != list(range(1, plan.n_w + 1)):
        probs.append("association not total over segments")
    seen = []
    graph = None
    for grp in plan.groups:
        seen.extend(grp.members)
        if graph is None:
            graph = build_adjacency(plan.segmentation, sc.grid, geometry(sc))
        if not nx.is_connected(graph.subgraph(grp.members)):
            probs.append(f"group {grp.collector} not connected")
        for m, p in grp.meeting.items():
            if plan.segmentation.labels[p.row, p.col] != m:
                probs.append(f"meeting point of segment {m} outside it")
    if plan.n_c and sorted(seen) != list(range(1, plan.n_w + 1)):
        probs.append("groups do not partition the segments")
    for r in plan.routes:
        if r.period < r.travel_time:
            probs.append(f"route {r.collector} period below travel time")
        if any(not sc.grid.is_free(c) for c in r.path):
            probs.append(f"route {r.collector} crosses an obstacle")
        grp = plan.groups[r.collector - 1]
        if sorted(r.waypoints[1:-1]) != sorted(grp.meeting.values()) or r.waypoints[0] != sc.oc \
                or r.waypoints[-1] != sc.oc:
            probs.append(f"route {r.collector} waypoints do not match its meeting points")
    return probs


# -- serialisation -----------------------------------------------------------

def _cell(c) -> list[int]:
    return [int(c[0]), int(c[1])]


def plan_to_dict(plan: DeploymentPlan) -> dict:
    seg = plan.segmentation
    return {
        "format": "gatherplan.plan/1",
        "scenario_hash": plan.scenario_hash,
        "method": plan.method,
        "n_c": plan.n_c,
        "n_w": plan.n_w,
        "segmentation": {
            "labels": seg.labels.tolist(),
            "centroids": [_cell(c) for c in seg.centroids],
            "converged": seg.converged,
            "iterations": seg.iterations,
        },
        "groups": [{"collector": g.collector, "members": list(g.members),
                    "meeting_points": {str(m): _cell(p) for m, p in sorted(g.meeting.items())}}
                   for g in plan.groups],
        "routes": [{"collector": r.collector, "waypoints": [_cell(c) for c in r.waypoints],
                    "path": [_cell(c) for c in r.path], "waypoint_index": list(r.waypoint_index),
                    "travel_time": r.travel_time, "period": r.period} for r in plan.routes],
        "association": {str(k): v for k, v in sorted(plan.association.items())},
        "est_t_refresh": plan.est_t_refresh,
        "est_n_goals": plan.est_n_goals,
        "utility": plan.utility,
        "extra": plan.extra,
    }


def plan_from_dict(d: dict) -> DeploymentPlan:
    s = d["segmentation"]
    seg = Segmentation(d["method"], d["n_w"], np.array(s["labels"], dtype=np.int64),
                       tuple(Cell(*c) for c in s["centroids"]), s.get("converged"), s.get("iterations", 0))
    groups = [CollectorGroup(g["collector"], tuple(g["members"]),
                             {int(m): Cell(*p) for m, p in g["meeting_points"].items()}) for g in d["groups"]]
    routes = [CollectorRoute(r["collector"], tuple(Cell(*c) for c in r["waypoints"]),
                             tuple(Cell(*c) for c in r["path"]), tuple(r["waypoint_index"]),
                             r["travel_time"], r["period"]) for r in d["routes"]]
    return DeploymentPlan(d["method"], d["n_c"], d["n_w"], seg, groups, routes,
                          {int(k): v for k, v in d["association"].items()}, d.get("scenario_hash", ""),
                          d.get("est_t_refresh"), d.get("est_n_goals"), d.get("utility"), d.get("extra", {}))


def dumps_plan(plan: DeploymentPlan) -> str:
    return json.dumps(plan_to_dict(plan), sort_keys=True, separators=(",", ":")) + "\n"


def loads_plan(text: str) -> DeploymentPlan:
    return plan_from_dict(json.loads(text))
