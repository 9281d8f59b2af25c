import subprocess
import sys

import numpy as np
import pytest

from gatherplan.cli import main
from gatherplan.collector_plan import loads_plan
from gatherplan.executor import read_metrics_summary, run_mission
from gatherplan.fmm import load_matrix_csv
from gatherplan.planner import read_sweep_csv
from gatherplan.scenario import write_scenario
from maps import random_scenario


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_segment(tmp_path, capsys, office):
    code, out, _ = run(["segment", "--method", "pap", "--n-w", "16", "--pgm", "--out", str(tmp_path)], capsys)
    assert code == 0 and "segments=16" in out
    labels = load_matrix_csv(tmp_path / "labels_pap_16.csv", dtype=int)
    assert labels.max() == 16 and np.array_equal(labels > 0, office.grid.free)
    assert len((tmp_path / "centroids_pap_16.csv").read_text().splitlines()) == 17
    assert (tmp_path / "segments_pap_16.pgm").exists()


@pytest.mark.parametrize("argv", [
    ["segment", "--n-w", "0"],
    ["segment", "--n-w", "x"],
    ["segment", "--method", "foo", "--n-w", "2"],
    ["plan", "--alpha", "-1"],
    ["run", "--cycles", "1"],
    ["run", "--plan", "p.json", "--cycles", "0"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == 2


def test_missing_scenario(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    code, _, err = run(["segment", "--scenario", str(missing), "--n-w", "2"], capsys)
    assert code == 1 and str(missing) in err


def test_plan_single_config(tmp_path, capsys):
    code, out, _ = run(["plan", "--methods", "bap", "--max-collectors", "0", "--out", str(tmp_path)], capsys)
    assert code == 0 and out.startswith("best method=BAP n_c=0 ")
    rows = read_sweep_csv(tmp_path / "sweep.csv")
    assert len(rows) == 1 and rows[0]["best"] == "1"
    assert loads_plan((tmp_path / "plan.json").read_text()).n_c == 0


def test_run_matches_library_and_is_deterministic(tmp_path, capsys, office):
    sc = random_scenario(8, 40, 30, n_agents=5, cycle_time=80.0)
    write_scenario(sc, tmp_path / "sc.txt")
    common = ["--scenario", str(tmp_path / "sc.txt")]
    assert run(["plan", *common, "--out", str(tmp_path / "p")], capsys)[0] == 0
    outs = []
    for k in range(2):
        code, out, _ = run(["run", *common, "--plan", str(tmp_path / "p" / "plan.json"), "--cycles", "3",
                            "--seed", "7", "--out", str(tmp_path / f"r{k}")], capsys)
        assert code == 0 and "T_refresh_mean=" in out and "N_goals_rate=" in out
        outs.append(out)
    assert outs[0] == outs[1]
    for name in ("metrics.csv", "trace.jsonl"):
        assert (tmp_path / "r0" / name).read_bytes() == (tmp_path / "r1" / name).read_bytes()
    plan = loads_plan((tmp_path / "p" / "plan.json").read_text())
    m, _ = run_mission(plan, sc, 3, seed=7)
    summary = read_metrics_summary(tmp_path / "r0" / "metrics.csv")
    assert summary["n_delivered"] == m.n_delivered and summary["n_goals_rate"] == m.n_goals_rate

    code, out, _ = run(["report", str(tmp_path / "r0" / "metrics.csv"), str(tmp_path / "r1" / "metrics.csv"),
                        "-o", str(tmp_path / "report.csv")], capsys)
    assert code == 0 and "runs=2" in out
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[-1].startswith("mean,")

    # the same plan against another scenario is refused
    write_scenario(sc.with_params(rng_seed=99), tmp_path / "other.txt")
    code, _, err = run(["run", "--scenario", str(tmp_path / "other.txt"), "--plan",
                        str(tmp_path / "p" / "plan.json"), "--out", str(tmp_path / "x")], capsys)
    assert code == 1 and "different scenario" in err


def test_run_plan_from_sweep(tmp_path, capsys):
    sc = random_scenario(9, 30, 20, n_agents=3)
    write_scenario(sc, tmp_path / "sc.txt")
    code, _, _ = run(["run", "--scenario", str(tmp_path / "sc.txt"), "--plan-from-sweep", "--out",
                      str(tmp_path)], capsys)
    assert code == 0
    assert {p.name for p in tmp_path.iterdir()} >= {"plan.json", "metrics.csv", "trace.jsonl"}


def test_missing_plan_and_metrics(tmp_path, capsys):
    assert run(["run", "--plan", str(tmp_path / "none.json"), "--out", str(tmp_path)], capsys)[0] == 1
    assert run(["report", str(tmp_path / "none.csv")], capsys)[0] == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gatherplan", "segment", "--n-w", "0"], capture_output=True,
                          text=True, cwd=tmp_path)
    assert proc.returncode == 2 and "--n-w" in proc.stderr
