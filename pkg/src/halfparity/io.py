"""CSV and JSON export with byte-stable formatting.

Floats are written with shortest round-trip repr so re-running a seeded
pipeline reproduces files byte for byte regardless of worker count.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .bayes import Trajectory
from .ensemble import Ensemble

TRAJ_HEADER = ["traj_id", "t", "v", "x1", "x2", "x3", "x4", "x5", "C"]


def _fmt(x) -> str:
    return repr(float(x))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Single trajectory: t, v, x1..x5, C; v is empty on the final row."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(TRAJ_HEADER[1:])
        for k in range(traj.times.size):
            v = _fmt(traj.readouts[k]) if k < traj.readouts.size else ""
            w.writerow([_fmt(traj.times[k]), v] +
                       [_fmt(x) for x in traj.states[k]] +
                       [_fmt(traj.concurrences[k])])


def write_ensemble_csv(path, e: Ensemble) -> None:
    """All trajectories in one file keyed by a traj_id column."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(TRAJ_HEADER)
        for i in range(e.n_traj):
            for k in range(e.times.size):
                v = _fmt(e.readouts[i, k]) if k < e.readouts.shape[1] else ""
                w.writerow([str(i), _fmt(e.times[k]), v] +
                           [_fmt(x) for x in e.states[i, k]] +
                           [_fmt(e.concurrences[i, k])])


def read_ensemble_csv(path) -> Ensemble:
    """Read the trajectory CSV format back into an ensemble."""
    rows_by_id: dict[int, list[list[str]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] == TRAJ_HEADER[:3]:
            for row in reader:
                rows_by_id.setdefault(int(row[0]), []).append(row[1:])
        elif header[:2] == TRAJ_HEADER[1:3]:
            rows_by_id[0] = [row for row in reader]
        else:
            raise ValueError(f"unrecognized trajectory CSV header: {header}")
    trajs = []
    for i in sorted(rows_by_id):
        rows = rows_by_id[i]
        times = np.array([float(r[0]) for r in rows])
        readouts = np.array([float(r[1]) for r in rows if r[1] != ""])
        states = np.array([[float(x) for x in r[2:7]] for r in rows])
        concs = np.array([float(r[7]) for r in rows])
        trajs.append(Trajectory(times=times, readouts=readouts, states=states,
                                concurrences=concs))
    return Ensemble.from_trajectories(trajs)


def write_path_csv(path, traj: Trajectory) -> None:
    """State path without the record: t, x1..x5, C."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["t", "x1", "x2", "x3", "x4", "x5", "C"])
        for k in range(traj.times.size):
            w.writerow([_fmt(traj.times[k])] +
                       [_fmt(x) for x in traj.states[k]] +
                       [_fmt(traj.concurrences[k])])


def write_branch_paths_csv(path, paths: dict[str, Trajectory]) -> None:
    """Per-branch paths stacked with a leading branch column."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["branch", "t", "x1", "x2", "x3", "x4", "x5", "C"])
        for name in sorted(paths):
            traj = paths[name]
            for k in range(traj.times.size):
                w.writerow([name, _fmt(traj.times[k])] +
                           [_fmt(x) for x in traj.states[k]] +
                           [_fmt(traj.concurrences[k])])


def write_scan_csv(path, vs, values) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["v", "log_like"])
        for v, val in zip(vs, values):
            w.writerow([_fmt(v), _fmt(val)])


def write_pdf_csv(path, cs, density) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["c", "pdf"])
        for c, d in zip(cs, density):
            w.writerow([_fmt(c), _fmt(d)])


def write_grid_csv(path, times, edges, mass) -> None:
    """Long-form (t, c_bin, mass) rows; c_bin is the lower bin edge."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["t", "c_bin", "mass"])
        for r, t in enumerate(times):
            for j in range(len(edges) - 1):
                w.writerow([_fmt(t), _fmt(edges[j]), _fmt(mass[r, j])])


def write_histogram_csv(path, edges, mass) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["t_bin", "mass"])
        for j in range(len(mass)):
            w.writerow([_fmt(edges[j]), _fmt(mass[j])])


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
