"""First-order Fast Marching on the occupancy grid.

The kernel solves |grad T| F = 1 with the standard upwind quadratic,
propagates source labels (multi-source competition), and optionally gives
each source its own speed multiplier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .scenario import Cell, GridMap

SQRT2 = math.sqrt(2.0)
INF = np.inf

# 8-neighbourhood, fixed order for deterministic tie-breaking
NEIGHBORS8 = ((0, -1), (-1, 0), (1, 0), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1))


class FMMError(ValueError):
    pass


@numba.njit(cache=True, nogil=True)
def _heap_less(hk, hi, i, j):
    if hk[i] < hk[j]:
        return True
    if hk[i] > hk[j]:
        return False
    return hi[i] < hi[j]


@numba.njit(cache=True, nogil=True)
def _heap_push(hk, hi, n, key, idx):
    hk[n] = key
    hi[n] = idx
    i = n
    while i > 0:
        p = (i - 1) >> 1
        if _heap_less(hk, hi, i, p):
            hk[i], hk[p] = hk[p], hk[i]
            hi[i], hi[p] = hi[p], hi[i]
            i = p
        else:
            break
    return n + 1


@numba.njit(cache=True, nogil=True)
def _heap_pop(hk, hi, n):
    key = hk[0]
    idx = hi[0]
    n -= 1
    hk[0] = hk[n]
    hi[0] = hi[n]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= n:
            break
        m = l
        r = l + 1
        if r < n and _heap_less(hk, hi, r, l):
            m = r
        if _heap_less(hk, hi, m, i):
            hk[i], hk[m] = hk[m], hk[i]
            hi[i], hi[m] = hi[m], hi[i]
            i = m
        else:
            break
    return key, idx, n


@numba.njit(cache=True, nogil=True)
def _upwind(a, b, f):
    if b < a:
        a, b = b, a
    if b - a < f:
        return 0.5 * (a + b + math.sqrt(2.0 * f * f - (a - b) * (a - b)))
    return a + f


@numba.njit(cache=True, nogil=True)
def _fmm_kernel(speed, width, height, h, src, src_label, mult, labelwise):
    n = width * height
    T = np.full(n, np.inf)
    L = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    cap = 5 * n + len(src) + 8
    hk = np.empty(cap)
    hi = np.empty(cap, dtype=np.int64)
    size = 0
    for s in range(len(src)):
        i = src[s]
        lab = src_label[s]
        if T[i] > 0.0 or lab < L[i]:
            if T[i] > 0.0:
                size = _heap_push(hk, hi, size, 0.0, i)
            T[i] = 0.0
            L[i] = lab
    last = 0.0
    monotone = True
    while size > 0:
        key, p, size = _heap_pop(hk, hi, size)
        if done[p] or key > T[p]:
            continue
        done[p] = True
        if key < last - 1e-9 * (1.0 + last):
            monotone = False
        last = key
        pr = p // width
        pc = p - pr * width
        plab = L[p]
        for k in range(4):
            if k == 0:
                nr, nc = pr - 1, pc
            elif k == 1:
                nr, nc = pr + 1, pc
            elif k == 2:
                nr, nc = pr, pc - 1
            else:
                nr, nc = pr, pc + 1
            if nr < 0 or nr >= height or nc < 0 or nc >= width:
                continue
            q = nr * width + nc
            if done[q] or speed[q] <= 0.0:
                continue
            # horizontal / vertical upwind minima over finalized neighbours
            a = np.inf
            alab = -1
            b = np.inf
            blab = -1
            for j in range(4):
                if j == 0:
                    mr, mc = nr, nc - 1
                elif j == 1:
                    mr, mc = nr, nc + 1
                elif j == 2:
                    mr, mc = nr - 1, nc
                else:
                    mr, mc = nr + 1, nc
                if mr < 0 or mr >= height or mc < 0 or mc >= width:
                    continue
                m = mr * width + mc
                if not done[m]:
                    continue
                if labelwise and L[m] != plab:
                    continue
                t = T[m]
                if j < 2:
                    if t < a or (t == a and L[m] < alab):
                        a = t
                        alab = L[m]
                else:
                    if t < b or (t == b and L[m] < blab):
                        b = t
                        blab = L[m]
            F = speed[q]
            if labelwise:
                F = F * mult[plab]
            cand = _upwind(a, b, h / F)
            if labelwise:
                clab = plab
            elif a < b:
                clab = alab
            elif b < a:
                clab = blab
            else:
                clab = min(alab, blab)
            if cand < T[q]:
                T[q] = cand
                L[q] = clab
                size = _heap_push(hk, hi, size, cand, q)
            elif cand == T[q] and clab < L[q]:
                L[q] = clab
    return T, L, monotone


def unit_speed(grid: GridMap) -> np.ndarray:
    return grid.free.astype(np.float64)


def fmm_solve(grid: GridMap, sources, speed=None, source_speed=None):
    """Arrival times and first-arrival labels from ``sources``.

    ``speed`` is a per-cell field (defaults to 1 on free cells; obstacles are
    always 0).  ``source_speed`` optionally scales the front of each source
    separately; each cell then keeps the earliest of the competing fronts.
    Returns ``(T, labels)`` as (height, width) arrays; labels are source
    indices, -1 where unreached.
    """
    sources = [Cell(*s) for s in sources]
    if not sources:
        raise FMMError("empty source set")
    F = unit_speed(grid) if speed is None else np.where(grid.free, np.asarray(speed, float), 0.0)
    if not np.all(np.isfinite(F)) or (F < 0).any():
        raise FMMError("speed must be finite and non-negative")
    flatF = np.ascontiguousarray(F.ravel())
    src = np.empty(len(sources), dtype=np.int64)
    for i, s in enumerate(sources):
        if not grid.is_free(s):
            raise FMMError(f"source on obstacle: {tuple(s)}")
        src[i] = s.row * grid.width + s.col
        if flatF[src[i]] <= 0:
            raise FMMError(f"source has zero speed: {tuple(s)}")
    if source_speed is None:
        mult = np.ones(len(sources))
        labelwise = False
    else:
        mult = np.asarray(source_speed, dtype=np.float64)
        if mult.shape != (len(sources),) or (mult <= 0).any():
            raise FMMError("source_speed must give one positive factor per source")
        labelwise = True
    T, L, monotone = _fmm_kernel(
        flatF, grid.width, grid.height, float(grid.cell_size),
        src, np.arange(len(sources), dtype=np.int64), mult, labelwise,
    )
    assert monotone, "fast marching finalized cells out of order"
    return T.reshape(grid.shape), L.reshape(grid.shape)


def distance_field(grid: GridMap, sources, mask=None) -> np.ndarray:
    """Unit-speed geodesic distance (metres), optionally restricted to ``mask``."""
    speed = None if mask is None else (grid.free & mask).astype(np.float64)
    return fmm_solve(grid, sources, speed=speed)[0]


@dataclass(frozen=True)
class GeodesicPath:
    cells: tuple[Cell, ...]
    length: float  # metres

    def __len__(self):
        return len(self.cells)


def step_length(a: Cell, b: Cell) -> float:
    return SQRT2 if (a.col != b.col and a.row != b.row) else 1.0


def path_length(cells, cell_size: float = 1.0) -> float:
    return cell_size * sum(step_length(a, b) for a, b in zip(cells, cells[1:]))


def extract_path(T: np.ndarray, start: Cell, cell_size: float = 1.0) -> GeodesicPath:
    """Steepest descent over 8-neighbours from ``start`` to a zero-time cell.

    Diagonal moves need both orthogonal cells reached, so the path never
    squeezes between two obstacle corners.
    """
    start = Cell(*start)
    h, w = T.shape
    if not np.isfinite(T[start.row, start.col]):
        raise FMMError(f"start {tuple(start)} is unreached")
    cells = [start]
    length = 0.0
    cur = start
    while T[cur.row, cur.col] > 0.0:
        tc = T[cur.row, cur.col]
        best = None
        best_slope = 0.0
        for dc, dr in NEIGHBORS8:
            nc, nr = cur.col + dc, cur.row + dr
            if not (0 <= nc < w and 0 <= nr < h):
                continue
            tn = T[nr, nc]
            if not tn < tc:
                continue
            if dc and dr and not (np.isfinite(T[cur.row, nc]) and np.isfinite(T[nr, cur.col])):
                continue
            step = SQRT2 if (dc and dr) else 1.0
            slope = (tc - tn) / step
            if slope > best_slope:
                best_slope = slope
                best = (Cell(nc, nr), step)
        if best is None:  # cannot happen for a valid arrival field
            raise FMMError(f"descent stalled at {tuple(cur)}")
        cur, step = best
        cells.append(cur)
        length += step
    return GeodesicPath(tuple(cells), length * cell_size)


def clearance_sources(grid: GridMap) -> list[Cell]:
    free = grid.free
    h, w = free.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = free
    near_obstacle = np.zeros_like(free)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            near_obstacle |= ~padded[1 + dr:h + 1 + dr, 1 + dc:w + 1 + dc]
    rows, cols = np.nonzero(free & near_obstacle)
    return [Cell(int(c), int(r)) for r, c in zip(rows, cols)]


def clearance_field(grid: GridMap) -> np.ndarray:
    """Approximate distance to the nearest obstacle or map border."""
    return fmm_solve(grid, clearance_sources(grid))[0]


class FieldCache:
    """Memoised unit-speed distance fields keyed by source cell and region."""

    def __init__(self, grid: GridMap, maxsize: int = 4096):
        self.grid = grid
        self.maxsize = maxsize
        self._fields: dict = {}

    def get(self, source: Cell, region: int | None = None, mask=None) -> np.ndarray:
        key = (Cell(*source), region)
        T = self._fields.get(key)
        if T is None:
            if len(self._fields) >= self.maxsize:
                self._fields.pop(next(iter(self._fields)))
            T = distance_field(self.grid, [source], mask=mask)
            self._fields[key] = T
        return T


def dump_matrix_csv(arr: np.ndarray, path) -> None:
    """Row-major CSV matrix; unreached cells are written as ``inf``."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in arr:
            fh.write(",".join("inf" if not np.isfinite(v) else _fmt(v) for v in row))
            fh.write("\n")


def _fmt(v) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def load_matrix_csv(path, dtype=float) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")])
    return np.array(rows, dtype=float).astype(dtype)
