"""Relative error of the FMM arrival field on an empty grid, by distance band.

    python scripts/fmm_accuracy.py [size]
"""
import sys
import time

import numpy as np

from gatherplan import Cell, GridMap, distance_field


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    n = int(argv[0]) if argv else 101
    g = GridMap(n, n, 1.0, np.ones((n, n), dtype=bool))
    c = n // 2
    distance_field(GridMap(3, 3, 1.0, np.ones((3, 3), dtype=bool)), [Cell(1, 1)])  # JIT / cache load
    t0 = time.perf_counter()
    T = distance_field(g, [Cell(c, c)])
    dt = time.perf_counter() - t0
    r, q = np.mgrid[0:n, 0:n]
    d = np.hypot(r - c, q - c)
    print(f"grid {n}x{n}, solve {dt * 1e3:.1f} ms")
    print(f"{'band':>10} {'max rel err':>12} {'mean rel err':>13}")
    for lo in range(10, c + 1, 10):
        m = (d >= lo) & (d < lo + 10)
        e = np.abs(T[m] - d[m]) / d[m]
        print(f"{lo:4d}-{lo + 10:<5d} {e.max():12.4f} {e.mean():13.4f}")


if __name__ == "__main__":
    sys.exit(main())
