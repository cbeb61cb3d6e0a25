"""Closed-loop simulation of coupled multi-agent systems.

Explicit Euler at ``sim_dt`` with the controller sampled at ``control_rate``
(zero-order hold). Disturbances are uniform in each component and held over
one control period; controllers never see them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import AgentModel, TaskGroup, centralized_check, group_inputs
from .stl import Signal, eval_robust, parse_formula


class SimulationAbort(RuntimeError):
    pass


def coupling_force(positions, radius: float, gain: float) -> np.ndarray:
    """Pairwise repulsion, active below ``radius``; antisymmetric per pair."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    P = np.asarray(positions, dtype=float)
    N, d = P.shape
    F = np.zeros_like(P)
    for i in range(N):
        for j in range(i + 1, N):
            diff = P[i] - P[j]
            dist = float(np.linalg.norm(diff))
            if dist >= radius:
                continue
            if dist == 0.0:
                # coincident agents: push the lower index along +e_(i mod d)
                unit = np.zeros(d)
                unit[i % d] = 1.0
                mag = gain / radius**2
            else:
                unit = diff / dist
                mag = gain * (1.0 / dist - 1.0 / radius) / dist**2
            F[i] += mag * unit
            F[j] -= mag * unit
    return F


@dataclass
class Trajectory:
    agent_ids: list[str]
    group_names: list[str]
    times: np.ndarray
    states: dict[str, np.ndarray]
    inputs: dict[str, np.ndarray]
    barrier: dict[str, np.ndarray]
    slack: dict[str, np.ndarray]
    tick: np.ndarray
    events: list[dict] = field(default_factory=list)
    disturbances: dict[str, np.ndarray] = field(default_factory=dict)
    aborted: str | None = None
    seed: int = 0

    def group_signal(self, layout_ids) -> Signal:
        X = np.hstack([self.states[a] for a in layout_ids])
        return Signal(self.times, X)

    def infeasible_ticks(self, group: str | None = None) -> set[int]:
        return {
            e["step"] for e in self.events if e["kind"] == "infeasible" and (group is None or e["group"] == group)
        }

    def feasible_slacks(self, group: str) -> np.ndarray:
        bad = self.infeasible_ticks(group)
        idx = [k for k in np.flatnonzero(self.tick) if k not in bad]
        return self.slack[group][idx]

    def discretization_tolerance(self, switch_times=()) -> float:
        """10 * sim_dt * largest logged |db/dt| away from switches."""
        if len(self.times) < 2:
            return 0.0
        dt = np.diff(self.times)
        mask = np.ones(len(dt), dtype=bool)
        for s in switch_times:
            mask &= ~((self.times[:-1] <= s + 1e-12) & (self.times[1:] >= s - 1e-12))
        rate = 0.0
        for b in self.barrier.values():
            r = np.abs(np.diff(b))[mask] / dt[mask]
            if r.size:
                rate = max(rate, float(r.max()))
        return 10.0 * float(np.median(dt)) * rate

    def min_distance(self, dims: int | None = None) -> float:
        ids = self.agent_ids
        best = np.inf
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                a, b = self.states[ids[i]], self.states[ids[j]]
                k = dims or min(a.shape[1], b.shape[1])
                best = min(best, float(np.linalg.norm(a[:, :k] - b[:, :k], axis=1).min()))
        return best


def barrier_trace(barrier, times, X) -> np.ndarray:
    """b(x(t), t) along a trajectory, vectorized over time."""
    times = np.asarray(times, dtype=float)
    X = np.asarray(X, dtype=float)
    cols, masks = [], []
    for term in barrier.terms:
        g = term.gamma
        gam = np.where(times < g.t_star, g.slope * times + g.gamma0, g.gamma_inf)
        cols.append(term.predicate.value(X) - gam)
        masks.append(times < term.deadline)
    if barrier.state_bound is not None:
        cols.append(barrier.state_bound - np.linalg.norm(X, axis=1))
        masks.append(np.ones(len(times), dtype=bool))
    V = np.column_stack(cols)
    M = np.column_stack(masks)
    Vm = np.where(M, V, np.inf)
    m = Vm.min(axis=1)
    with np.errstate(invalid="ignore", over="ignore"):
        E = np.where(M, np.exp(-barrier.eta * (V - m[:, None])), 0.0)
    return m - np.log(E.sum(axis=1)) / barrier.eta


def run(
    agents: dict[str, AgentModel],
    x0: dict[str, np.ndarray],
    groups: list[TaskGroup],
    horizon: float,
    sim_dt: float = 0.002,
    control_rate: float = 50.0,
    coupling: dict | None = None,
    disturbance_bound: float = 0.0,
    seed: int = 0,
    log_disturbance: bool = False,
) -> Trajectory:
    coupling = coupling or {"type": "none"}
    ids = list(agents)
    steps = int(round(horizon / sim_dt))
    per_tick = max(1, int(round(1.0 / (control_rate * sim_dt))))
    rng = np.random.default_rng(seed)
    repulsive = coupling.get("type") == "repulsive"
    radius = coupling.get("radius", 0.65)
    gain = coupling.get("gain", 0.0)
    known = coupling.get("known_to_controller", True)
    pdims = coupling.get("position_dims")

    def forces(states):
        if not repulsive:
            return {a: np.zeros(agents[a].state_dim) for a in ids}
        k = pdims or min(agents[a].state_dim for a in ids)
        F = coupling_force(np.array([states[a][:k] for a in ids]), radius, gain)
        out = {}
        for a, f in zip(ids, F):
            v = np.zeros(agents[a].state_dim)
            v[:k] = f
            out[a] = v
        return out

    states = {a: np.array(x0[a], dtype=float) for a in ids}
    times = np.arange(steps + 1) * sim_dt
    S = {a: np.zeros((steps + 1, agents[a].state_dim)) for a in ids}
    U = {a: np.zeros((steps + 1, agents[a].input_dim)) for a in ids}
    Cdist = {a: np.zeros((steps + 1, agents[a].state_dim)) for a in ids} if log_disturbance else {}
    slack = {g.name: np.full(steps + 1, np.nan) for g in groups}
    tick = np.zeros(steps + 1, dtype=bool)
    events: list[dict] = []
    inputs = {a: np.zeros(agents[a].input_dim) for a in ids}
    dist = {a: np.zeros(agents[a].state_dim) for a in ids}
    held_slack = {g.name: np.nan for g in groups}
    bounds = {g.name: 2.0 * g.barrier.state_bound for g in groups if g.barrier.state_bound}
    switch_marks = sorted({(s, g.name) for g in groups for s in g.barrier.switch_times})
    si = 0
    aborted = None
    last = steps

    for k in range(steps + 1):
        t = times[k]
        while si < len(switch_marks) and switch_marks[si][0] <= t + 1e-12:
            events.append({"t": float(switch_marks[si][0]), "kind": "switch", "group": switch_marks[si][1], "step": k})
            si += 1
        for g in groups:
            if g.name in bounds:
                xb = np.concatenate([states[a] for a in g.agent_ids])
                if np.linalg.norm(xb) > bounds[g.name]:
                    aborted = f"group {g.name} left the state box ||x|| <= {bounds[g.name]:g} at t={t:.3f}"
        F = forces(states)
        if k % per_tick == 0 and aborted is None:
            tick[k] = True
            for g in groups:
                xb = np.concatenate([states[a] for a in g.agent_ids])
                extra = {a: F[a] for a in g.agent_ids} if (repulsive and known) else None
                u, bad, ev, _ = group_inputs(g, agents, xb, t, extra)
                inputs.update(u)
                for a in bad:
                    events.append({"t": float(t), "kind": "infeasible", "group": g.name, "agent": a, "step": k})
                held_slack[g.name] = centralized_check(g, agents, xb, t, u, ev, extra)
            for a in ids:
                dist[a] = rng.uniform(-disturbance_bound, disturbance_bound, agents[a].state_dim) if disturbance_bound > 0 else np.zeros(agents[a].state_dim)
        for a in ids:
            S[a][k] = states[a]
            U[a][k] = inputs[a]
            if log_disturbance:
                Cdist[a][k] = dist[a]
        for name, v in held_slack.items():
            slack[name][k] = v
        if aborted is not None:
            events.append({"t": float(t), "kind": "abort", "message": aborted, "step": k})
            last = k
            break
        if k == steps:
            break
        for a in ids:
            ag = agents[a]
            x = states[a]
            xdot = ag.f(x, t) + ag.g(x, t) @ inputs[a] + F[a] + dist[a]
            states[a] = x + sim_dt * xdot

    n = last + 1
    times = times[:n]
    S = {a: v[:n] for a, v in S.items()}
    U = {a: v[:n] for a, v in U.items()}
    Cdist = {a: v[:n] for a, v in Cdist.items()}
    slack = {g: v[:n] for g, v in slack.items()}
    barrier = {
        g.name: barrier_trace(g.barrier, times, np.hstack([S[a] for a in g.agent_ids])) for g in groups
    }
    return Trajectory(ids, [g.name for g in groups], times, S, U, barrier, slack, tick[:n], events, Cdist, aborted, seed)


def run_scenario(scenario, groups: list[TaskGroup], seed: int | None = None, x0=None, **kw) -> Trajectory:
    """Run a loaded scenario with already-built task groups."""
    seed = scenario.disturbance.get("seed", 0) if seed is None else seed
    return run(
        scenario.agents,
        x0 or scenario.x0,
        groups,
        scenario.horizon,
        scenario.sim_dt,
        scenario.control_rate,
        scenario.coupling,
        scenario.disturbance.get("bound", 0.0),
        seed,
        **kw,
    )


def summarize(traj: Trajectory, results: dict, scenario=None) -> dict:
    """Summary numbers of a run."""
    b = np.min(np.vstack([traj.barrier[g] for g in traj.group_names]), axis=0)
    nonneg = np.flatnonzero(b >= 0)
    recovery = float(traj.times[nonneg[0]]) if nonneg.size else None
    after = b[nonneg[0]:] if nonneg.size else np.array([])
    logged = np.concatenate([v[~np.isnan(v)] for v in traj.slack.values()])
    rho = None
    if scenario is not None:
        rho = monitor_scenario(traj, scenario)[1]
    return {
        "r": min(res.r for res in results.values()) if results else None,
        "r_per_group": {k: res.r for k, res in results.items()},
        "rho_at_0": rho,
        "b_at_0": float(b[0]),
        "min_b_after_recovery": float(after.min()) if after.size else None,
        "recovery_time": recovery,
        "infeasible_steps": len(traj.infeasible_ticks()),
        "min_slack": float(np.min(logged)) if logged.size else None,
        "aborted": traj.aborted,
        "seed": traj.seed,
    }


def monitor_scenario(traj: Trajectory, scenario, t: float = 0.0) -> tuple[dict[str, float], float]:
    """Robustness of each group formula and of their conjunction."""
    rhos = {}
    for g in scenario.groups:
        rhos[g.name] = eval_robust(g.formula, traj.group_signal(g.agent_ids), t)
    return rhos, min(rhos.values())


def formula_robustness(traj: Trajectory, text: str, t: float = 0.0) -> float:
    """Robustness of a free-standing formula over the stacked agent state."""
    slices, pos = {}, 0
    for a in traj.agent_ids:
        d = traj.states[a].shape[1]
        slices[a] = (pos, pos + d)
        pos += d
    f = parse_formula(text, slices=slices, dim=pos)
    return eval_robust(f, traj.group_signal(traj.agent_ids), t)
