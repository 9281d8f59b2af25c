import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatherplan.scenario import (Cell, GridMap, Scenario, ScenarioError, dumps_scenario, in_comm, line_of_sight,
                                 load_scenario, supercover)
from maps import empty_scenario, random_scenario

GRID = """n_agents = 3
comm_range = 4
seed = 5

#######
#O..#.#
#...#.#
#######
"""


def test_parse_header_and_prune_unreachable():
    sc = load_scenario(GRID)
    assert sc.n_agents == 3 and sc.comm_range == 4.0 and sc.rng_seed == 5
    assert sc.goals_per_cycle == 3 and sc.cycle_time is None
    assert sc.oc == Cell(1, 1)
    # the pocket behind the wall is unreachable and removed
    assert not sc.grid.is_free(Cell(5, 1))
    assert sc.grid.n_free == 6


@pytest.mark.parametrize("text, msg", [
    ("bogus = 1\n\n#O#\n", "unknown key"),
    ("seed = 1\nseed = 2\n\n#O#\n", "duplicate"),
    ("seed = 1\n\n#O#\n##\n", "length"),
    ("seed = 1\n\n#Ox\n", "character"),
    ("seed = 1\n\n#..#\n", "OC"),
    ("seed = 1\n\n#OO#\n", "OC"),
    ("n_agents = 0\n\n#O#\n", "n_agents"),
])
def test_malformed(text, msg):
    with pytest.raises(ScenarioError, match=msg):
        load_scenario(text)


def test_round_trip(office):
    again = load_scenario(dumps_scenario(office))
    assert np.array_equal(again.grid.free, office.grid.free)
    assert again.oc == office.oc and again.content_hash() == office.content_hash()
    assert office.with_params(rng_seed=8).content_hash() != office.content_hash()


def _touches(a: Cell, b: Cell, c: Cell, eps=1e-9) -> bool:
    """Does the closed unit square of ``c`` meet the segment a-b? (Liang-Barsky clip)"""
    x0, y0, dx, dy = a.col, a.row, b.col - a.col, b.row - a.row
    lo, hi = 0.0, 1.0
    for p, q in ((-dx, x0 - (c.col - 0.5)), (dx, c.col + 0.5 - x0),
                 (-dy, y0 - (c.row - 0.5)), (dy, c.row + 0.5 - y0)):
        if p == 0:
            if q < -eps:
                return False
        else:
            t = q / p
            if p < 0:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
    return lo <= hi + eps


@settings(max_examples=300, deadline=None)
@given(st.tuples(*[st.integers(-12, 12)] * 4))
def test_supercover_matches_geometric_oracle(xs):
    a, b = Cell(xs[0], xs[1]), Cell(xs[2], xs[3])
    got = supercover(a, b)
    assert len(got) == len(set(got))
    box = [Cell(c, r) for c in range(min(a.col, b.col) - 1, max(a.col, b.col) + 2)
           for r in range(min(a.row, b.row) - 1, max(a.row, b.row) + 2)]
    assert set(got) == {c for c in box if _touches(a, b, c)}
    assert set(supercover(b, a)) == set(got)


def test_line_of_sight_corner_rule():
    free = np.ones((3, 3), dtype=bool)
    free[0, 1] = False
    g = GridMap(3, 3, 1.0, free)
    # the diagonal (0,0)-(1,1) passes the corner next to the blocked cell (1,0)
    assert not line_of_sight(g, Cell(0, 0), Cell(1, 1))
    assert line_of_sight(g, Cell(1, 1), Cell(2, 2))
    assert line_of_sight(g, Cell(0, 1), Cell(2, 1))
    assert not line_of_sight(g, Cell(0, 0), Cell(2, 0))


def test_in_comm_basics():
    sc = empty_scenario(30, 30, comm_range=5.0)
    a = Cell(10, 10)
    assert in_comm(sc, a, a)
    assert in_comm(sc, a, Cell(13, 14))  # exactly 5
    assert not in_comm(sc, a, Cell(14, 14))
    wall = sc.grid.free.copy()
    wall[5:15, 12] = False
    sc2 = Scenario(GridMap(30, 30, 1.0, wall), Cell(3, 3), comm_range=5.0)
    assert not in_comm(sc2, a, Cell(14, 10))


@pytest.mark.parametrize("seed", range(4))
def test_comm_cells_match_pairwise(seed):
    sc = random_scenario(seed, 24, 18, comm_range=6.5)
    free = sc.grid.free_cells()
    rng = np.random.default_rng(seed)
    for i in rng.choice(len(free), 12, replace=False):
        a = free[int(i)]
        brute = {b for b in free if in_comm(sc, a, b)}
        assert sc.comm_cells(a) == brute
        assert all(in_comm(sc, b, a) for b in brute)


def test_cell_size_scales_range():
    sc = empty_scenario(30, 30, comm_range=5.0)
    big = Scenario(GridMap(30, 30, 2.0, sc.grid.free), sc.oc, comm_range=5.0)
    assert in_comm(big, Cell(10, 10), Cell(12, 11))
    assert not in_comm(big, Cell(10, 10), Cell(13, 10))
    assert math.isclose(big.tick, 2.0)
