"""Best configuration per segmentation method as the cycle time varies.

    python scripts/cycle_time_sensitivity.py [C ...]

Defaults to cycle times of 60, 90, 118 (the default for the office map), 150 and 200 ticks.
"""
import sys

from gatherplan import METHODS, bundled_scenario_path, read_scenario, sweep


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    cycles = [float(a) for a in argv] or [60.0, 90.0, 118.0, 150.0, 200.0]
    sc = read_scenario(bundled_scenario_path())
    print(f"{'C':>6} {'best':>10} " + " ".join(f"{m + '_U':>8}" for m in METHODS))
    for C in cycles:
        res = sweep(sc, cycle_time=C * sc.tick)
        per = {m: max(e.utility for e in res.evaluations if e.method == m) for m in METHODS}
        b = res.best_evaluation
        print(f"{C:6.0f} {b.method + ' ' + str(b.n_c):>10} " + " ".join(f"{per[m]:8.4f}" for m in METHODS))


if __name__ == "__main__":
    sys.exit(main())
