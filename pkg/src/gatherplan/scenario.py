"""Grid scenario model: occupancy map, Operation Center, team parameters.

Scenario files are plain text::

    n_agents = 20
    comm_range = 10

    ##########
    #..O.....#
    ##########

Header lines are ``key = value``; after a blank line come the grid rows
(``#`` obstacle, ``.`` free, ``O`` the Operation Center, exactly one).
"""
from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numba
import numpy as np


class ScenarioError(ValueError):
    """Raised when a scenario file or scenario value is invalid."""


class Cell(NamedTuple):
    col: int
    row: int


# header key -> (attribute, type, default)
HEADER_KEYS = {
    "n_agents": ("n_agents", int, 20),
    "comm_range": ("comm_range", float, 10.0),
    "agent_speed": ("agent_speed", float, 1.0),
    "cell_size": ("cell_size", float, 1.0),
    "goals_per_segment_per_cycle": ("goals_per_cycle", int, 3),
    "transfer_time_per_goal": ("transfer_time", float, 1.0),
    "seed": ("rng_seed", int, 0),
    "cycle_time": ("cycle_time", float, None),
}


@dataclass(frozen=True, eq=False)
class GridMap:
    width: int
    height: int
    cell_size: float
    free: np.ndarray  # bool, shape (height, width), indexed [row, col]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ScenarioError("grid must be at least 1x1")
        if not self.cell_size > 0:
            raise ScenarioError("cell_size must be positive")
        if self.free.shape != (self.height, self.width):
            raise ScenarioError("occupancy shape does not match width/height")
        if not self.free.any():
            raise ScenarioError("grid has no free cell")
        self.free.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c.col < self.width and 0 <= c.row < self.height

    def is_free(self, c: Cell) -> bool:
        return self.in_bounds(c) and bool(self.free[c.row, c.col])

    def free_cells(self) -> list[Cell]:
        rows, cols = np.nonzero(self.free)
        return [Cell(int(c), int(r)) for r, c in zip(rows, cols)]

    @property
    def n_free(self) -> int:
        return int(self.free.sum())


@dataclass(frozen=True, eq=False)
class Scenario:
    grid: GridMap
    oc: Cell
    n_agents: int = 20
    comm_range: float = 10.0
    agent_speed: float = 1.0
    goals_per_cycle: int = 3
    transfer_time: float = 1.0
    rng_seed: int = 0
    cycle_time: float | None = None
    _comm_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.grid.is_free(self.oc):
            raise ScenarioError("OC on obstacle")
        if self.n_agents < 1:
            raise ScenarioError("n_agents must be at least 1")
        if not self.comm_range > 0:
            raise ScenarioError("comm_range must be positive")
        if not self.agent_speed > 0:
            raise ScenarioError("agent_speed must be positive")
        # k = 0 is allowed programmatically (test harnesses); files require k >= 1
        if self.goals_per_cycle < 0:
            raise ScenarioError("goals_per_segment_per_cycle must be non-negative")
        if self.transfer_time < 0:
            raise ScenarioError("transfer_time_per_goal must be non-negative")
        if self.cycle_time is not None and not self.cycle_time > 0:
            raise ScenarioError("cycle_time must be positive")

    @property
    def cell_size(self) -> float:
        return self.grid.cell_size

    @property
    def tick(self) -> float:
        """Duration of one axis-aligned step, in time units."""
        return self.grid.cell_size / self.agent_speed

    def with_params(self, **kw) -> "Scenario":
        return replace(self, _comm_cache={}, **kw)

    def content_hash(self) -> str:
        return hashlib.sha256(dumps_scenario(self).encode()).hexdigest()

    def comm_cells(self, c: Cell) -> frozenset[Cell]:
        """All free cells in communication with ``c`` (cached)."""
        hit = self._comm_cache.get(c)
        if hit is None:
            hit = frozenset(_comm_disk(self, c))
            self._comm_cache[c] = hit
        return hit


@numba.njit(cache=True, nogil=True)
def _los_kernel(free, x0, y0, x1, y1):
    # same traversal as ``supercover``; endpoints canonicalised the same way
    if (y0, x0) > (y1, x1):
        x0, y0, x1, y1 = x1, y1, x0, y0
    x, y = x0, y0
    dx, dy = x1 - x0, y1 - y0
    xstep = 1 if dx >= 0 else -1
    ystep = 1 if dy >= 0 else -1
    dx, dy = abs(dx), abs(dy)
    ddx, ddy = 2 * dx, 2 * dy
    if not free[y, x]:
        return False
    if ddx >= ddy:
        err = dx
        prev = dx
        for _ in range(dx):
            x += xstep
            err += ddy
            if err > ddx:
                y += ystep
                err -= ddx
                if err + prev < ddx:
                    if not free[y - ystep, x]:
                        return False
                elif err + prev > ddx:
                    if not free[y, x - xstep]:
                        return False
                else:
                    if not free[y - ystep, x] or not free[y, x - xstep]:
                        return False
            if not free[y, x]:
                return False
            prev = err
    else:
        err = dy
        prev = dy
        for _ in range(dy):
            y += ystep
            err += ddx
            if err > ddy:
                x += xstep
                err -= ddy
                if err + prev < ddy:
                    if not free[y, x - xstep]:
                        return False
                elif err + prev > ddy:
                    if not free[y - ystep, x]:
                        return False
                else:
                    if not free[y, x - xstep] or not free[y - ystep, x]:
                        return False
            if not free[y, x]:
                return False
            prev = err
    return True


@numba.njit(cache=True, nogil=True)
def _comm_disk_kernel(free, col, row, radius):
    h, w = free.shape
    ri = int(math.floor(radius))
    out = []
    for r in range(max(0, row - ri), min(h, row + ri + 1)):
        for c in range(max(0, col - ri), min(w, col + ri + 1)):
            if not free[r, c]:
                continue
            if math.hypot(c - col, r - row) > radius:
                continue
            if _los_kernel(free, col, row, c, r):
                out.append((c, r))
    return out


def _comm_disk(sc: Scenario, a: Cell):
    g = sc.grid
    # in_comm compares d * cell_size <= comm_range; keep the same rounding
    radius = sc.comm_range / g.cell_size
    while radius * g.cell_size > sc.comm_range:
        radius = math.nextafter(radius, 0.0)
    return [Cell(c, r) for c, r in _comm_disk_kernel(g.free, a.col, a.row, radius)]


def supercover(a: Cell, b: Cell) -> list[Cell]:
    """Cells touched by the segment joining the centres of ``a`` and ``b``.

    Corner crossings include both side cells, so a ray can never slip
    diagonally between two obstacles. The result does not depend on the
    direction of traversal.
    """
    if (a.row, a.col) > (b.row, b.col):
        a, b = b, a
    x, y = a.col, a.row
    dx, dy = b.col - a.col, b.row - a.row
    xstep = 1 if dx >= 0 else -1
    ystep = 1 if dy >= 0 else -1
    dx, dy = abs(dx), abs(dy)
    ddx, ddy = 2 * dx, 2 * dy
    out = [Cell(x, y)]
    if ddx >= ddy:
        err = prev = dx
        for _ in range(dx):
            x += xstep
            err += ddy
            if err > ddx:
                y += ystep
                err -= ddx
                if err + prev < ddx:
                    out.append(Cell(x, y - ystep))
                elif err + prev > ddx:
                    out.append(Cell(x - xstep, y))
                else:
                    out.append(Cell(x, y - ystep))
                    out.append(Cell(x - xstep, y))
            out.append(Cell(x, y))
            prev = err
    else:
        err = prev = dy
        for _ in range(dy):
            y += ystep
            err += ddx
            if err > ddy:
                x += xstep
                err -= ddy
                if err + prev < ddy:
                    out.append(Cell(x - xstep, y))
                elif err + prev > ddy:
                    out.append(Cell(x, y - ystep))
                else:
                    out.append(Cell(x - xstep, y))
                    out.append(Cell(x, y - ystep))
            out.append(Cell(x, y))
            prev = err
    return out


def line_of_sight(grid: GridMap, a: Cell, b: Cell) -> bool:
    free = grid.free
    for c in supercover(a, b):
        if not free[c.row, c.col]:
            return False
    return True


def in_comm(sc: Scenario, a: Cell, b: Cell) -> bool:
    d = math.hypot(a.col - b.col, a.row - b.row) * sc.grid.cell_size
    if d > sc.comm_range:
        return False
    return line_of_sight(sc.grid, a, b)


def reachable_mask(free: np.ndarray, start: Cell) -> np.ndarray:
    """4-connected flood fill of free space from ``start``."""
    h, w = free.shape
    seen = np.zeros_like(free, dtype=bool)
    seen[start.row, start.col] = True
    q = deque([(start.row, start.col)])
    while q:
        r, c = q.popleft()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < h and 0 <= nc < w and free[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                q.append((nr, nc))
    return seen


def _parse_value(key: str, raw: str):
    _, typ, _ = HEADER_KEYS[key]
    try:
        if typ is int:
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        return float(raw)
    except ValueError:
        raise ScenarioError(f"malformed header: bad value for {key!r}: {raw!r}") from None


def load_scenario(text: str) -> Scenario:
    lines = text.splitlines()
    i = 0
    params = {}
    while i < len(lines):
        line = lines[i].strip()
        if not line:
            i += 1
            if params:
                break
            continue
        if "=" not in line:
            break
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in HEADER_KEYS:
            raise ScenarioError(f"malformed header: unknown key {key!r}")
        if key in params:
            raise ScenarioError(f"malformed header: duplicate key {key!r}")
        params[key] = _parse_value(key, raw.strip())
        i += 1

    rows = [ln.rstrip("\r\n").strip() for ln in lines[i:]]
    rows = [r for r in rows if r]
    if not rows:
        raise ScenarioError("no grid rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ScenarioError("grid row length mismatch")
    bad = set("".join(rows)) - set("#.O")
    if bad:
        raise ScenarioError(f"malformed grid: unexpected characters {sorted(bad)}")
    ocs = [Cell(c, r) for r, row in enumerate(rows) for c, ch in enumerate(row) if ch == "O"]
    if not ocs:
        raise ScenarioError("OC missing")
    if len(ocs) > 1:
        raise ScenarioError("OC duplicated")
    free = np.array([[ch != "#" for ch in row] for row in rows], dtype=bool)

    for key, val in params.items():
        if key in ("n_agents", "goals_per_segment_per_cycle") and val < 1:
            raise ScenarioError(f"non-positive numeric parameter {key!r}")
        if key in ("comm_range", "agent_speed", "cell_size", "cycle_time") and not val > 0:
            raise ScenarioError(f"non-positive numeric parameter {key!r}")
        if key == "transfer_time_per_goal" and val < 0:
            raise ScenarioError(f"negative numeric parameter {key!r}")

    free &= reachable_mask(free, ocs[0])
    kw = {attr: params.get(key, default) for key, (attr, _, default) in HEADER_KEYS.items()}
    cell_size = kw.pop("cell_size")
    grid = GridMap(width, len(rows), cell_size, free)
    return Scenario(grid=grid, oc=ocs[0], **kw)


def dumps_scenario(sc: Scenario) -> str:
    vals = {
        "n_agents": sc.n_agents,
        "comm_range": sc.comm_range,
        "agent_speed": sc.agent_speed,
        "cell_size": sc.cell_size,
        "goals_per_segment_per_cycle": sc.goals_per_cycle,
        "transfer_time_per_goal": sc.transfer_time,
        "seed": sc.rng_seed,
        "cycle_time": sc.cycle_time,
    }
    out = [f"{k} = {v!r}" for k, v in vals.items() if v is not None]
    out.append("")
    g = sc.grid
    for r in range(g.height):
        row = ["." if g.free[r, c] else "#" for c in range(g.width)]
        if r == sc.oc.row:
            row[sc.oc.col] = "O"
        out.append("".join(row))
    return "\n".join(out) + "\n"


def read_scenario(path) -> Scenario:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def write_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(sc), encoding="utf-8")


def bundled_scenario_path(name: str = "office") -> Path:
    return Path(__file__).with_name("data") / f"{name}.txt"
