"""Trajectory CSV and summary files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .sim import Trajectory


def summary_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".summary.json")


def write_trajectory(path, traj: Trajectory):
    cols = ["t"]
    blocks = [traj.times[:, None]]
    for a in traj.agent_ids:
        cols += [f"state_{a}_{k}" for k in range(traj.states[a].shape[1])]
        blocks.append(traj.states[a])
    for a in traj.agent_ids:
        cols += [f"input_{a}_{k}" for k in range(traj.inputs[a].shape[1])]
        blocks.append(traj.inputs[a])
    for g in traj.group_names:
        cols.append(f"b_{g}")
        blocks.append(traj.barrier[g][:, None])
    for g in traj.group_names:
        cols.append(f"slack_{g}")
        blocks.append(traj.slack[g][:, None])
    data = np.hstack(blocks)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def write_summary(path, summary: dict):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


class TrajectoryFormatError(ValueError):
    pass


def read_trajectory(path) -> Trajectory:
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, StopIteration, ValueError) as exc:
        raise TrajectoryFormatError(f"cannot read trajectory {path}: {exc}") from exc
    if not header or header[0] != "t" or data.shape[1] != len(header):
        raise TrajectoryFormatError(f"{path} is not a trajectory file")
    idx = {name: i for i, name in enumerate(header)}
    agents: list[str] = []
    states, inputs = {}, {}
    for prefix, store in (("state_", states), ("input_", inputs)):
        for name in header:
            if not name.startswith(prefix):
                continue
            aid, _ = name[len(prefix):].rsplit("_", 1)
            if prefix == "state_" and aid not in agents:
                agents.append(aid)
            store.setdefault(aid, []).append(idx[name])
    groups = [n[2:] for n in header if n.startswith("b_")]
    return Trajectory(
        agent_ids=agents,
        group_names=groups,
        times=data[:, 0],
        states={a: data[:, states[a]] for a in agents},
        inputs={a: data[:, inputs.get(a, [])] for a in agents},
        barrier={g: data[:, idx[f"b_{g}"]] for g in groups},
        slack={g: data[:, idx[f"slack_{g}"]] for g in groups if f"slack_{g}" in idx},
        tick=np.zeros(len(data), dtype=bool),
    )
