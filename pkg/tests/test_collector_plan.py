import itertools
import json
import math

import networkx as nx
import numpy as np
import pytest

from gatherplan.collector_plan import (OC_ID, CollectorGroup, PlanError, assemble_plan, build_adjacency, dumps_plan,
                                       estimate_worker_time, group_segments, loads_plan, mean_centroid_distance,
                                       nearest_neighbour_tour, plan_problems, plan_route, tour_length, two_opt)
from gatherplan.scenario import Cell, GridMap, Scenario
from gatherplan.segmentation import Segmentation, segment_stats
from maps import empty_scenario


def quadrants():
    sc = empty_scenario(20, 20, walls=False, oc=Cell(0, 0), n_agents=6)
    lab = np.zeros((20, 20), dtype=np.int64)
    lab[:10, :10], lab[:10, 10:], lab[10:, 10:], lab[10:, :10] = 1, 2, 3, 4
    seg = Segmentation("PAP", 4, lab, (Cell(4, 4), Cell(14, 4), Cell(14, 14), Cell(4, 14)))
    return sc, seg


def test_quadrant_adjacency_has_no_diagonal_edge():
    sc, seg = quadrants()
    g = build_adjacency(seg, sc.grid)
    assert sorted(g.edges) == [(1, 2), (1, 4), (2, 3), (3, 4)]
    assert all(d["weight"] > 0 for *_, d in g.edges(data=True))
    assert math.isclose(g[1][2]["weight"], 10.0)


def test_quadrant_grouping_matches_enumeration():
    sc, seg = quadrants()
    g = build_adjacency(seg, sc.grid)
    groups = group_segments(g, seg, 2)
    got = sorted(tuple(sorted(grp.members)) for grp in groups)
    # every balanced connected 2-partition of the 4-cycle
    valid = []
    for part in itertools.combinations(range(1, 5), 2):
        rest = tuple(sorted(set(range(1, 5)) - set(part)))
        if nx.is_connected(g.subgraph(part)) and nx.is_connected(g.subgraph(rest)):
            valid.append(sorted([part, rest]))
    assert got in valid
    areas = segment_stats(seg)
    assert [sum(areas[m - 1] for m in grp) for grp in got] == [200, 200]
    for grp in groups:
        assert all(grp.meeting[m] == seg.centroid(m) for m in grp.members)


def test_group_extremes():
    sc, seg = quadrants()
    g = build_adjacency(seg, sc.grid)
    assert [sorted(x.members) for x in group_segments(g, seg, 1)] == [[1, 2, 3, 4]]
    singles = group_segments(g, seg, 4)
    assert sorted(x.members for x in singles) == [(1,), (2,), (3,), (4,)]
    with pytest.raises(PlanError):
        group_segments(g, seg, 5)
    one = Segmentation("PAP", 1, np.ones((20, 20), dtype=np.int64), (Cell(9, 9),))
    g1 = build_adjacency(one, sc.grid)
    assert g1.number_of_nodes() == 1 and g1.number_of_edges() == 0


def test_corridor_mean_distance():
    free = np.zeros((3, 13), dtype=bool)
    free[1, 1:12] = True
    sc = Scenario(GridMap(13, 3, 1.0, free), Cell(1, 1), n_agents=2, goals_per_cycle=1, transfer_time=0.0)
    seg = Segmentation("PAP", 1, free.astype(np.int64), (Cell(6, 1),))
    assert math.isclose(mean_centroid_distance(sc, seg, 1), 30 / 11)
    assert math.isclose(estimate_worker_time(sc, seg, 1, Cell(6, 1)), 30 / 11)
    assert math.isclose(estimate_worker_time(sc, seg, 1, Cell(9, 1), n_goals=0), 3.0)
    ests = [estimate_worker_time(sc, seg, 1, Cell(6, 1), n_goals=k) for k in range(5)]
    assert ests == sorted(ests)


def test_single_segment_route_is_out_and_back():
    sc, seg = quadrants()
    route = plan_route(sc, CollectorGroup(1, (3,), {3: Cell(14, 14)}))
    assert route.waypoints == (sc.oc, Cell(14, 14), sc.oc)
    out = route.path[:route.waypoint_index[1] + 1]
    assert math.isclose(route.travel_time, 2 * sum(
        math.sqrt(2) if a.col != b.col and a.row != b.row else 1.0 for a, b in zip(out, out[1:])))
    assert route.period == route.travel_time + sc.transfer_time * sc.goals_per_cycle


def test_collinear_points_monotone_order():
    free = np.zeros((3, 40), dtype=bool)
    free[1, :] = True
    sc = Scenario(GridMap(40, 3, 1.0, free), Cell(0, 1), n_agents=4)
    pts = [Cell(30, 1), Cell(10, 1), Cell(20, 1)]
    route = plan_route(sc, CollectorGroup(1, (1, 2, 3), dict(zip((1, 2, 3), pts))))
    inner = route.waypoints[1:-1]
    best = min(itertools.permutations(pts), key=lambda o: sum(
        abs(a.col - b.col) for a, b in zip((sc.oc, *o), (*o, sc.oc))))
    assert sum(abs(a.col - b.col) for a, b in zip((sc.oc, *inner), (*inner, sc.oc))) == \
        sum(abs(a.col - b.col) for a, b in zip((sc.oc, *best), (*best, sc.oc)))
    assert [c.col for c in inner] in ([10, 20, 30], [30, 20, 10])


@pytest.mark.parametrize("seed", range(20))
def test_two_opt_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    pts = rng.random((n, 2)) * 50
    D = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1)).tolist()
    nn = nearest_neighbour_tour(D, n)
    opt = two_opt(nn, D)
    assert opt[0] == opt[-1] == 0 and sorted(opt[:-1]) == list(range(n))
    assert tour_length(opt, D) <= tour_length(nn, D) + 1e-9
    brute = min(tour_length([0, *p, 0], D) for p in itertools.permutations(range(1, n)))
    assert tour_length(opt, D) >= brute - 1e-9
    # 2-optimal: no improving segment reversal is left
    for i in range(1, len(opt) - 2):
        for j in range(i + 1, len(opt) - 1):
            cand = opt[:i] + opt[i:j + 1][::-1] + opt[j + 1:]
            assert tour_length(cand, D) >= tour_length(opt, D) - 1e-9


@pytest.mark.parametrize("n_c", [0, 1, 4, 8])
def test_office_plans_valid(office, n_c):
    plan = assemble_plan(office, "PAP", n_c)
    assert plan.n_c == n_c and plan.n_w == 20 - n_c
    assert plan_problems(plan, office) == []
    if n_c == 0:
        assert plan.routes == [] and set(plan.association.values()) == {OC_ID}
    for grp in plan.groups:
        for m, p in grp.meeting.items():
            assert plan.segmentation.label_at(p) == m
    for r in plan.routes:
        assert r.period >= r.travel_time
        assert r.path[0] == r.path[-1] == office.oc


def test_plan_round_trip_and_determinism(office):
    plan = assemble_plan(office, "BAP", 3)
    text = dumps_plan(plan)
    again = loads_plan(text)
    assert dumps_plan(again) == text
    assert dumps_plan(assemble_plan(office, "BAP", 3)) == text
    assert json.loads(text)["format"] == "gatherplan.plan/1"


def test_assemble_errors(office):
    with pytest.raises(PlanError):
        assemble_plan(office, "PAP", office.n_agents)
    with pytest.raises(PlanError):
        assemble_plan(office, "PAP", -1)
