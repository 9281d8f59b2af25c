"""Regenerate the bundled office scenario (100x60, 8 rooms, two corridors).

    python scripts/make_office_map.py [out_path]
"""
import sys
from pathlib import Path

import numpy as np

W, H = 100, 60

HEADER = """\
n_agents = 20
comm_range = 10
agent_speed = 1
cell_size = 1
goals_per_segment_per_cycle = 3
transfer_time_per_goal = 1
seed = 7
"""


def build():
    free = np.zeros((H, W), dtype=bool)
    free[1:-1, 1:-1] = True
    # main corridor rows 27..31, wall rows 26 and 32
    free[26, :] = False
    free[32, :] = False
    # left vertical corridor cols 1..6 runs full height; wall at col 7
    free[:, 7] = False
    free[26:33, 1:7] = True
    # room dividers above and below the corridor
    for col in (30, 52, 76):
        free[1:26, col] = False
    for col in (28, 54, 78):
        free[33:59, col] = False
    # north rooms: doors to the corridor
    for c0, c1 in ((14, 17), (38, 41), (62, 65), (86, 89)):
        free[26, c0:c1] = True
    # south rooms
    for c0, c1 in ((16, 19), (40, 43), (64, 67), (88, 91)):
        free[32, c0:c1] = True
    # two rooms also open onto the vertical corridor
    free[8:11, 7] = True
    free[48:51, 7] = True
    # a side door between two north rooms
    free[12:14, 52] = True
    # furniture blocks (desks) inside rooms
    for r0, c0, h, w in ((8, 14, 6, 6), (10, 40, 4, 8), (6, 86, 8, 3), (42, 34, 5, 10), (44, 60, 8, 4), (40, 88, 4, 4)):
        free[r0:r0 + h, c0:c0 + w] = False
    free[27:32, 7] = True
    return free


def render(free, oc=(3, 29)):
    rows = []
    for r in range(H):
        row = ["." if free[r, c] else "#" for c in range(W)]
        if r == oc[1]:
            row[oc[0]] = "O"
        rows.append("".join(row))
    return HEADER + "\n" + "\n".join(rows) + "\n"


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/gatherplan/data/office.txt"
    out.write_text(render(build()), encoding="utf-8")
    print(f"wrote {out}")
