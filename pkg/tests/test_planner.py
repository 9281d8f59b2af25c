import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from gatherplan.collector_plan import CollectorGroup, CollectorRoute, DeploymentPlan, assemble_plan
from gatherplan.planner import (ConfigEvaluation, estimate_config, evaluate_config, normalize, read_sweep_csv, score,
                                simulated_scores, sweep, sweep_threads, utility, write_sweep_csv)
from gatherplan.scenario import Cell, GridMap, Scenario
from gatherplan.segmentation import Segmentation
from maps import empty_scenario, random_scenario


def _evals(ts, ns):
    return [ConfigEvaluation("BAP", i, float(t), float(n)) for i, (t, n) in enumerate(zip(ts, ns))]


def test_utility_examples():
    assert utility(0, 1) == 1.0
    assert utility(1, 0) == 0.0
    assert math.isclose(utility(0.4, 0.7), 0.65)


def test_normalize_examples():
    (e,) = normalize(_evals([42], [3]))
    assert (e.t_norm, e.n_norm) == (0.0, 1.0)
    es = normalize(_evals([10, 20, 30], [1, 1, 1]))
    assert [e.t_norm for e in es] == [0.0, 0.5, 1.0] and [e.n_norm for e in es] == [1.0] * 3
    es = normalize(_evals([10, math.inf], [2, 0]))
    assert es[1].t_norm == 1.0 and es[0].t_norm == 0.0


def test_infeasible_excluded_from_bounds():
    es = _evals([10, 20, 1000], [1, 2, 50])
    es[2].feasible = False
    best = score(es)
    assert es[2].utility == -1.0 and es[2].t_norm is None
    assert [e.t_norm for e in es[:2]] == [0.0, 1.0] and best in (0, 1)


def test_tie_break():
    es = [ConfigEvaluation("RAP", 1, 5.0, 3.0), ConfigEvaluation("PAP", 1, 5.0, 3.0),
          ConfigEvaluation("BAP", 2, 5.0, 3.0)]
    assert score(es) == 1
    es.append(ConfigEvaluation("RAP", 0, 5.0, 3.0))
    assert score(es) == 3


# hundredths: distinct raw values stay distinct after the affine map in floating point
finite = st.integers(0, 10**6).map(lambda x: x / 100)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=12), st.floats(0.01, 100), st.floats(-1e3, 1e3))
def test_affine_invariance(rows, a, b):
    ts, ns = zip(*rows)
    assume(all(a * t + b >= 0 for t in ts))
    e1, e2 = _evals(ts, ns), _evals([a * t + b for t in ts], ns)
    best1, best2 = score(e1), score(e2)
    for x, y in zip(e1, e2):
        assert math.isclose(x.t_norm, y.t_norm, abs_tol=1e-6)
        assert math.isclose(x.utility, y.utility, abs_tol=1e-6)
    if len({round(e.utility, 6) for e in e1}) == len(e1):
        assert best1 == best2


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=10), st.integers(0, 9), finite, finite)
def test_monotone_and_bounded(rows, i, dt, dn):
    i %= len(rows)
    ts, ns = map(list, zip(*rows))
    base = _evals(ts, ns)
    score(base)
    assert all(0.0 <= e.utility <= 1.0 for e in base)
    ts2, ns2 = list(ts), list(ns)
    ts2[i] = max(0.0, ts[i] - dt)
    ns2[i] = ns[i] + dn
    better = _evals(ts2, ns2)
    score(better)
    assert better[i].utility >= base[i].utility - 1e-12


def test_estimator_zero_goals():
    sc = random_scenario(1, goals_per_cycle=0)
    for n_c in (0, 2):
        assert estimate_config(sc, assemble_plan(sc, "PAP", n_c)) == (0.0, 0.0)


def test_estimator_degenerate_single_cell():
    free = np.zeros((3, 3), dtype=bool)
    free[1, 1] = True
    sc = Scenario(GridMap(3, 3, 1.0, free), Cell(1, 1), n_agents=1, goals_per_cycle=1, transfer_time=0.0,
                  cycle_time=5.0)
    assert estimate_config(sc, assemble_plan(sc, "PAP", 0)) == (0.0, 1.0)


def _corridor(n_agents):
    free = np.zeros((3, 23), dtype=bool)
    free[1, 1:22] = True
    return Scenario(GridMap(23, 3, 1.0, free), Cell(1, 1), n_agents=n_agents, comm_range=1.0, goals_per_cycle=1,
                    transfer_time=1.0, cycle_time=30.0)


def test_estimator_corridor_direct():
    sc = _corridor(1)
    # entry at the OC, mean leg 10 m from it: T = 2 * 10 / v + tau
    assert estimate_config(sc, assemble_plan(sc, "PAP", 0)) == (21.0, 1.0)


def test_estimator_corridor_collector():
    sc = _corridor(2)
    seg = Segmentation("PAP", 1, sc.grid.free.astype(np.int64), (Cell(11, 1),))
    path = tuple([Cell(c, 1) for c in range(1, 12)] + [Cell(c, 1) for c in range(10, 0, -1)])
    route = CollectorRoute(1, (sc.oc, Cell(11, 1), sc.oc), path, (0, 10, 20), 20.0, 21.0)
    plan = DeploymentPlan("PAP", 1, 1, seg, [CollectorGroup(1, (1,), {1: Cell(11, 1)})], [route], {1: 1},
                          sc.content_hash())
    # L-bar = 110/21; phase = (ceil(110/21 + 1) - 10) mod 30 = 27; the meeting leaves 8 ticks,
    # less than one out-and-back goal leg, so the goal rides the next loop:
    # wait = 27 + 21 - 30 = 18 ticks, plus one 30-tick loop
    assert estimate_config(sc, plan) == (48.0, 1.0)


def test_sweep_single_pair_and_infeasible():
    sc = random_scenario(2, n_agents=3)
    res = sweep(sc, ["PAP"], 0)
    assert len(res.evaluations) == 1 and res.best == 0
    free = np.zeros((3, 5), dtype=bool)
    free[1, 1:4] = True
    tiny = Scenario(GridMap(5, 3, 1.0, free), Cell(1, 1), n_agents=5, goals_per_cycle=1)
    res = sweep(tiny, ["BAP"], 4)
    feas = [e.feasible for e in res.evaluations]
    # too many segments for 3 cells, or more collectors than worker segments
    assert feas == [False, False, True, False, False]
    assert [e.utility for e in res.evaluations if not e.feasible] == [-1.0] * 4
    assert res.best_evaluation.feasible


def test_sweep_weights(office):
    res = sweep(office, ["BAP", "PAP"], 3, alpha=1.0, beta=0.0)
    best = res.best_evaluation
    assert best.t_norm == min(e.t_norm for e in res.evaluations if e.feasible)
    assert best.plan.utility == best.utility


def test_sweep_threads_match(monkeypatch):
    sc = random_scenario(5, 40, 30, n_agents=6)
    a = sweep(sc, threads=1)
    b = sweep(sc, threads=4)
    key = lambda r: [(e.method, e.n_c, e.est_t_refresh, e.est_n_goals, e.utility) for e in r.evaluations]
    assert key(a) == key(b) and a.best == b.best
    monkeypatch.setenv("GATHERPLAN_THREADS", "0")
    assert sweep_threads() >= 1
    monkeypatch.setenv("GATHERPLAN_THREADS", "3")
    assert sweep_threads() == 3
    monkeypatch.setenv("GATHERPLAN_THREADS", "-2")
    with pytest.raises(ValueError):
        sweep_threads()


def test_sweep_validation():
    sc = random_scenario(2, n_agents=3)
    with pytest.raises(ValueError):
        sweep(sc, ["XYZ"])
    with pytest.raises(ValueError):
        sweep(sc, max_c=3)
    with pytest.raises(ValueError):
        sweep(sc, alpha=-1)


def test_sweep_csv(tmp_path):
    sc = random_scenario(2, n_agents=4)
    res = sweep(sc, ["BAP", "RAP"], 2)
    write_sweep_csv(res, tmp_path / "s.csv", sc.n_agents)
    rows = read_sweep_csv(tmp_path / "s.csv")
    assert len(rows) == 6 and sum(r["best"] == "1" for r in rows) == 1
    for r, e in zip(rows, res.evaluations):
        assert (r["method"], int(r["n_c"]), int(r["n_w"])) == (e.method, e.n_c, 4 - e.n_c)
        assert float(r["utility"]) == e.utility


def test_simulated_scores():
    assert simulated_scores([(10.0, 2.0), (20.0, 4.0)]) == [0.5, 0.5]
    assert simulated_scores([(10.0, 4.0), (20.0, 2.0)]) == [1.0, 0.0]


def test_evaluate_config_records_failure():
    sc = random_scenario(2, n_agents=3)
    e = evaluate_config(sc, "PAP", 5)
    assert not e.feasible and e.error
