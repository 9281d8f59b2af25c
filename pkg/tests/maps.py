"""Synthetic maps for tests."""
import numpy as np

from gatherplan.scenario import Cell, GridMap, Scenario, reachable_mask


def empty_scenario(width, height, oc=None, walls=True, **kw) -> Scenario:
    free = np.ones((height, width), dtype=bool)
    if walls:
        free[0, :] = free[-1, :] = False
        free[:, 0] = free[:, -1] = False
    oc = oc or Cell(width // 2, height // 2)
    return Scenario(GridMap(width, height, 1.0, free), Cell(*oc), **kw)


def random_scenario(seed: int, width=40, height=30, density=0.3, **kw) -> Scenario:
    """Random obstacles; free space trimmed to the 4-connected part around the OC.

    The OC is the free cell of the largest component closest to the map centre.
    """
    rng = np.random.default_rng(seed)
    free = rng.random((height, width)) >= density
    best = None
    seen = np.zeros_like(free)
    for r, c in zip(*np.nonzero(free)):
        if seen[r, c]:
            continue
        comp = reachable_mask(free, Cell(int(c), int(r)))
        seen |= comp
        if best is None or comp.sum() > best.sum():
            best = comp
    rows, cols = np.nonzero(best)
    d = (rows - height / 2) ** 2 + (cols - width / 2) ** 2
    i = int(np.argmin(d))
    kw.setdefault("n_agents", 4)
    return Scenario(GridMap(width, height, 1.0, best), Cell(int(cols[i]), int(rows[i])), **kw)
