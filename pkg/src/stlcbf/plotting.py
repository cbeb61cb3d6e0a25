"""Static SVG figures of simulated runs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

from .sim import Trajectory  # noqa: E402

KINDS = ("barrier", "paths", "inputs")


def plot_barrier(traj: Trajectory, ax, switch_times=()):
    for g in traj.group_names:
        (line,) = ax.plot(traj.times, traj.barrier[g], label=f"b ({g})", lw=1.2)
        line.set_gid(f"barrier_{g}")
    ax.axhline(0.0, color="k", lw=0.8, ls="--")
    for s in switch_times:
        ax.axvline(s, color="0.7", lw=0.6, ls=":")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("b(x(t), t)")
    ax.legend(loc="best")


def plot_paths(traj: Trajectory, ax, max_segments: int = 600):
    stride = max(1, len(traj.times) // max_segments)
    cmap = plt.get_cmap("tab10")
    for k, a in enumerate(traj.agent_ids):
        X = traj.states[a]
        if X.shape[1] < 2:
            continue
        pts = np.vstack([X[::stride, :2], X[-1:, :2]])
        segs = np.stack([pts[:-1], pts[1:]], axis=1)
        color = np.array(cmap(k % 10))
        colors = np.tile(color, (len(segs), 1))
        colors[:, 3] = np.linspace(0.15, 1.0, len(segs))
        lc = LineCollection(segs, colors=colors, lw=1.5, label=a)
        lc.set_gid(f"path_{a}")
        ax.add_collection(lc)
        ax.plot(*pts[0], "o", color=color, ms=4)
        ax.plot(*pts[-1], "s", color=color, ms=4)
    ax.autoscale()
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best")


def plot_inputs(traj: Trajectory, ax):
    for a in traj.agent_ids:
        U = traj.inputs[a]
        for k in range(U.shape[1]):
            (line,) = ax.step(traj.times, U[:, k], where="post", lw=0.8, label=f"u_{a}[{k}]")
            line.set_gid(f"input_{a}_{k}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("input")
    ax.legend(loc="best", ncol=2, fontsize="small")


def plot_trajectory(traj: Trajectory, out_path, kind: str, switch_times=()):
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {', '.join(KINDS)}")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if kind == "barrier":
        plot_barrier(traj, ax, switch_times)
    elif kind == "paths":
        plot_paths(traj, ax)
    else:
        plot_inputs(traj, ax)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
