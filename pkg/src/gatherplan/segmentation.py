"""Partition the operative free space into worker areas (BAP, PAP, RAP)."""
from __future__ import annotations

from dataclasses import dataclass, field
from collections import deque

import numpy as np

from .fmm import clearance_field, fmm_solve
from .scenario import Cell, GridMap, Scenario

METHODS = ("BAP", "PAP", "RAP")

# area balancing for BAP
BAP_GAMMA = 0.5
BAP_CLAMP = (0.25, 4.0)
BAP_TOL = 0.10
BAP_MAX_ITER = 20

RELAX_MAX_ITER = 25

# RAP speed law: F = max(RAP_MIN_SPEED, min(1, clearance / (RAP_C0_CELLS * h)))
RAP_C0_CELLS = 2.0
RAP_MIN_SPEED = 0.05


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Segmentation:
    method: str
    n_w: int
    labels: np.ndarray  # (height, width) ints; 0 = obstacle, 1..n_w
    centroids: tuple[Cell, ...]
    converged: bool | None = None  # BAP only
    iterations: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def cells_of(self, seg_id: int) -> list[Cell]:
        rows, cols = np.nonzero(self.labels == seg_id)
        return [Cell(int(c), int(r)) for r, c in zip(rows, cols)]

    def mask(self, seg_id: int) -> np.ndarray:
        return self.labels == seg_id

    def label_at(self, c: Cell) -> int:
        return int(self.labels[c.row, c.col])

    def centroid(self, seg_id: int) -> Cell:
        return self.centroids[seg_id - 1]


def segment_stats(seg: Segmentation) -> list[int]:
    counts = np.bincount(seg.labels.ravel(), minlength=seg.n_w + 1)
    return [int(x) for x in counts[1:seg.n_w + 1]]


def _argmax_cell(values: np.ndarray, mask: np.ndarray) -> Cell:
    v = np.where(mask, values, -np.inf)
    flat = int(np.argmax(v))  # first maximum in row-major order
    return Cell(flat % v.shape[1], flat // v.shape[1])


def _check_count(grid: GridMap, n_w: int):
    if n_w < 1:
        raise SegmentationError("n_w must be at least 1")
    if n_w > grid.n_free:
        raise SegmentationError(f"n_w={n_w} exceeds the {grid.n_free} free cells")


def farthest_point_seeds(grid: GridMap, n: int, first: Cell, candidates=None) -> list[Cell]:
    """Greedy geodesic farthest-point sampling starting at ``first``."""
    allowed = grid.free if candidates is None else candidates
    seeds = [first]
    dmin = fmm_solve(grid, [first])[0]
    while len(seeds) < n:
        pick_from = allowed.copy()
        for s in seeds:
            pick_from[s.row, s.col] = False
        nxt = _argmax_cell(np.where(np.isfinite(dmin), dmin, -1.0), pick_from)
        seeds.append(nxt)
        dmin = np.minimum(dmin, fmm_solve(grid, [nxt])[0])
    return seeds


def _region_centre(mask: np.ndarray) -> Cell:
    """Region cell nearest to the region's coordinate mean."""
    rows, cols = np.nonzero(mask)
    mr, mc = rows.mean(), cols.mean()
    d2 = (rows - mr) ** 2 + (cols - mc) ** 2
    k = int(np.argmin(d2))
    return Cell(int(cols[k]), int(rows[k]))


def segment_bap(sc: Scenario, n_w: int, seeds=None) -> Segmentation:
    grid = sc.grid
    if seeds is None:
        _check_count(grid, n_w)
        far = _argmax_cell(fmm_solve(grid, [sc.oc])[0], grid.free)
        seeds = farthest_point_seeds(grid, n_w, far)
    else:
        seeds = [Cell(*s) for s in seeds]
        n_w = len(seeds)
        _check_count(grid, n_w)
        for s in seeds:
            if not grid.is_free(s):
                raise SegmentationError(f"seed on obstacle: {tuple(s)}")
        if len(set(seeds)) != len(seeds):
            raise SegmentationError("duplicate seeds")

    mult = np.ones(n_w)
    converged = False
    it = 0
    for it in range(1, BAP_MAX_ITER + 1):
        _, lab = fmm_solve(grid, seeds, source_speed=mult)
        areas = np.bincount(lab[lab >= 0], minlength=n_w).astype(float)
        mean = areas.mean()
        if np.max(np.abs(areas - mean)) / mean < BAP_TOL:
            converged = True
            break
        if it == BAP_MAX_ITER:
            break
        mult = np.clip(mult * (mean / areas) ** BAP_GAMMA, *BAP_CLAMP)
    labels = np.where(grid.free, lab + 1, 0)
    centroids = tuple(_region_centre(labels == i) for i in range(1, n_w + 1))
    return Segmentation("BAP", n_w, labels, centroids, converged, it)


def _local_maxima(values: np.ndarray, free: np.ndarray) -> list[Cell]:
    """Plateau-collapsed 8-neighbourhood local maxima of ``values`` on free cells."""
    h, w = values.shape
    v = np.where(free, values, -np.inf)
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = v
    weak = free.copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                weak &= v >= padded[1 + dr:h + 1 + dr, 1 + dc:w + 1 + dc]
    seen = np.zeros_like(free)
    out = []
    for r, c in zip(*np.nonzero(weak)):
        if seen[r, c]:
            continue
        # flood the equal-value plateau; it is a maximum only if every member is
        val = v[r, c]
        comp = [(r, c)]
        seen[r, c] = True
        q = deque(comp)
        is_max = True
        while q:
            cr, cc = q.popleft()
            if not weak[cr, cc]:
                is_max = False
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    nr, nc = cr + dr, cc + dc
                    if 0 <= nr < h and 0 <= nc < w and not seen[nr, nc] and free[nr, nc] and v[nr, nc] == val:
                        seen[nr, nc] = True
                        comp.append((nr, nc))
                        q.append((nr, nc))
        if is_max:
            r0, c0 = min(comp)
            out.append(Cell(int(c0), int(r0)))
    return out


def init_centroids_distant(sc: Scenario, n_w: int) -> list[Cell]:
    grid = sc.grid
    _check_count(grid, n_w)
    clr = clearance_field(grid)
    start = _argmax_cell(clr, grid.free)
    cands = _local_maxima(clr, grid.free)
    if n_w > len(cands):
        return farthest_point_seeds(grid, n_w, start)
    mask = np.zeros_like(grid.free)
    for c in cands:
        mask[c.row, c.col] = True
    # the global argmax is always a plateau representative's value; start there
    best = max(cands, key=lambda c: (clr[c.row, c.col], -(c.row * grid.width + c.col)))
    return farthest_point_seeds(grid, n_w, best, candidates=mask)


def relax_centroids(sc: Scenario, centroids, max_iter: int = RELAX_MAX_ITER) -> list[Cell]:
    cents = [Cell(*c) for c in centroids]
    if len(set(cents)) != len(cents):
        raise SegmentationError("duplicate centroids")
    grid = sc.grid
    for _ in range(max_iter):
        _, lab = fmm_solve(grid, cents)
        moved = [_region_centre(lab == i) for i in range(len(cents))]
        shift = max(max(abs(a.col - b.col), abs(a.row - b.row)) for a, b in zip(cents, moved))
        if shift <= 1:
            break
        cents = moved
    return cents


def rap_speed(grid: GridMap, c0: float | None = None) -> np.ndarray:
    c0 = RAP_C0_CELLS * grid.cell_size if c0 is None else c0
    clr = clearance_field(grid)
    F = np.clip(np.where(np.isfinite(clr), clr, 0.0) / c0, RAP_MIN_SPEED, 1.0)
    return np.where(grid.free, F, 0.0)


def _voronoi(grid: GridMap, method: str, cents, speed=None) -> Segmentation:
    _, lab = fmm_solve(grid, cents, speed=speed)
    labels = np.where(grid.free, lab + 1, 0)
    return Segmentation(method, len(cents), labels, tuple(cents))


def pap_rap_centroids(sc: Scenario, n_w: int) -> list[Cell]:
    return relax_centroids(sc, init_centroids_distant(sc, n_w))


def segment_pap(sc: Scenario, n_w: int, centroids=None) -> Segmentation:
    cents = pap_rap_centroids(sc, n_w) if centroids is None else list(centroids)
    return _voronoi(sc.grid, "PAP", cents)


def segment_rap(sc: Scenario, n_w: int, centroids=None, c0: float | None = None) -> Segmentation:
    cents = pap_rap_centroids(sc, n_w) if centroids is None else list(centroids)
    return _voronoi(sc.grid, "RAP", cents, speed=rap_speed(sc.grid, c0))


def segment(sc: Scenario, method: str, n_w: int) -> Segmentation:
    method = method.upper()
    if method == "BAP":
        return segment_bap(sc, n_w)
    if method == "PAP":
        return segment_pap(sc, n_w)
    if method == "RAP":
        return segment_rap(sc, n_w)
    raise SegmentationError(f"unknown method {method!r}")


def four_connected(mask: np.ndarray) -> bool:
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        return False
    h, w = mask.shape
    seen = np.zeros_like(mask)
    seen[rows[0], cols[0]] = True
    q = deque([(rows[0], cols[0])])
    n = 1
    while q:
        r, c = q.popleft()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                n += 1
                q.append((nr, nc))
    return n == len(rows)


def segmentation_problems(seg: Segmentation, grid: GridMap) -> list[str]:
    """Invariant violations (empty list when the segmentation is valid)."""
    probs = []
    lab = seg.labels
    if ((lab > 0) != grid.free).any():
        probs.append("labels do not cover the free space exactly")
    if lab.max() > seg.n_w or lab.min() < 0:
        probs.append("label out of range")
    for i in range(1, seg.n_w + 1):
        m = lab == i
        if not m.any():
            probs.append(f"segment {i} empty")
        elif not four_connected(m):
            probs.append(f"segment {i} not 4-connected")
        c = seg.centroids[i - 1]
        if not grid.is_free(c) or lab[c.row, c.col] != i:
            probs.append(f"centroid of segment {i} not inside it")
    return probs


def write_segmentation(seg: Segmentation, labels_path, centroids_path, pgm_path=None) -> None:
    from .fmm import dump_matrix_csv

    dump_matrix_csv(seg.labels, labels_path)
    with open(centroids_path, "w", encoding="utf-8") as fh:
        fh.write("segment,col,row\n")
        for i, c in enumerate(seg.centroids, start=1):
            fh.write(f"{i},{c.col},{c.row}\n")
    if pgm_path is not None:
        h, w = seg.labels.shape
        gray = np.zeros((h, w), dtype=int)
        nz = seg.labels > 0
        # spread labels over 40..255, obstacles black
        gray[nz] = 40 + (seg.labels[nz] * 215) // max(seg.n_w, 1)
        with open(pgm_path, "w", encoding="ascii") as fh:
            fh.write(f"P2\n{w} {h}\n255\n")
            for row in gray:
                fh.write(" ".join(str(int(x)) for x in row) + "\n")
