"""Decentralized min-norm barrier controllers.

Each agent ``i`` of a task group solves

    minimize u'u  subject to  a'u >= beta

with ``a = g_i' (db/dx_i)'`` and
``beta = -(db/dx_i) f_i - D_i omega + ||db/dx_i||_1 C``, which has a
closed-form solution. ``D_i`` shares the group condition among agents in
proportion to the 1-norm of their gradient slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .barrier import BarrierEval, CompositeBarrier

ZERO_GRAD = 1e-12
RANK_TOL = 1e-9
_GRID = 2.0**52


class InfeasibleStep(RuntimeError):
    """The per-agent constraint cannot be met (zero gradient, beta > 0)."""


@dataclass(frozen=True)
class AgentModel:
    """Control-affine agent: dx/dt = f(x, t) + g(x, t) u."""

    id: str
    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray, float], np.ndarray]
    input_map: Callable[[np.ndarray, float], np.ndarray]
    kind: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.input_dim < self.state_dim:
            raise ValueError(f"agent {self.id}: input_map cannot have full row rank with m < n")

    def f(self, x, t: float) -> np.ndarray:
        return np.asarray(self.drift(np.asarray(x, dtype=float), t), dtype=float)

    def g(self, x, t: float) -> np.ndarray:
        G = np.asarray(self.input_map(np.asarray(x, dtype=float), t), dtype=float)
        if G.shape != (self.state_dim, self.input_dim):
            raise ValueError(f"agent {self.id}: input_map has shape {G.shape}")
        return G

    def check_rank(self, x, t: float) -> float:
        """Smallest singular value of g; raises if below the rank tolerance."""
        sv = float(np.linalg.svd(self.g(x, t), compute_uv=False).min())
        if sv < RANK_TOL:
            raise ValueError(f"agent {self.id}: input_map loses full row rank (sigma_min = {sv:.2e})")
        return sv


def single_integrator(agent_id: str, dim: int = 2) -> AgentModel:
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return AgentModel(agent_id, dim, dim, lambda x, t: zero, lambda x, t: eye, "single_integrator", {})


def linear_agent(agent_id: str, A, B) -> AgentModel:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ValueError("A must be square and B must have as many rows as A")
    agent = AgentModel(
        agent_id, A.shape[0], B.shape[1], lambda x, t: A @ x, lambda x, t: B, "linear",
        {"A": A.tolist(), "B": B.tolist()},
    )
    agent.check_rank(np.zeros(A.shape[0]), 0.0)
    return agent


@dataclass(frozen=True)
class TaskGroup:
    name: str
    agent_ids: tuple[str, ...]
    barrier: CompositeBarrier
    C: float
    kappa: float
    layout: dict[str, tuple[int, int]]

    def __post_init__(self):
        ids = tuple(self.agent_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate agent in group")
        spans = sorted(self.layout[i] for i in ids)
        pos = 0
        for lo, hi in spans:
            if lo != pos or hi <= lo:
                raise ValueError("agent slices must partition the group state")
            pos = hi
        if pos != self.barrier.group_dim:
            raise ValueError("agent slices do not cover the group state")
        if self.C < 0:
            raise ValueError("C must be nonnegative")
        object.__setattr__(self, "agent_ids", ids)

    def slice(self, agent_id: str) -> slice:
        lo, hi = self.layout[agent_id]
        return slice(lo, hi)


def omega(group: TaskGroup, x_bar, t: float, ev: BarrierEval | None = None) -> float:
    """dt b + kappa b."""
    ev = ev or group.barrier.evaluate(x_bar, t)
    return ev.dt + group.kappa * ev.value


def load_share(group: TaskGroup, x_bar, t: float, ev: BarrierEval | None = None) -> np.ndarray:
    """Per-agent share D_i, in group agent order."""
    ev = ev or group.barrier.evaluate(x_bar, t)
    norms = np.array([np.abs(ev.grad[group.slice(i)]).sum() for i in group.agent_ids])
    total = norms.sum()
    if total == 0:
        return np.ones(len(norms))
    D = norms / total
    # Snap to multiples of 2^-52 so every partial sum is exact in floating
    # point; the shares then add up to one in any summation order.
    D = np.round(D * _GRID) / _GRID
    k = int(np.argmax(D))
    D[k] = 0.0
    D[k] = 1.0 - D.sum()
    return D


def min_norm_input(a, beta: float, beta_tol: float = 0.0) -> np.ndarray:
    """argmin u'u subject to a'u >= beta.

    With a numerically zero normal, ``beta <= beta_tol`` counts as satisfied.
    """
    a = np.asarray(a, dtype=float)
    na2 = float(a @ a)
    if np.sqrt(na2) <= ZERO_GRAD:
        if beta <= beta_tol:
            return np.zeros_like(a)
        raise InfeasibleStep(f"zero constraint normal with beta = {beta:.3e} > 0")
    return max(0.0, beta) * a / na2


@dataclass(frozen=True)
class AgentConstraint:
    a: np.ndarray
    beta: float
    share: float
    grad_slice: np.ndarray
    beta_tol: float = 0.0

    def solve(self) -> np.ndarray:
        return min_norm_input(self.a, self.beta, self.beta_tol)


def agent_constraint(
    agent: AgentModel,
    group: TaskGroup,
    x_bar,
    t: float,
    ev: BarrierEval | None = None,
    shares: np.ndarray | None = None,
    extra_drift=None,
) -> AgentConstraint:
    """Data of agent i's half-space constraint a'u >= beta.

    ``extra_drift`` is known additive drift (e.g. a collision-avoidance
    field) treated as part of f_i.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    ev = ev or group.barrier.evaluate(x_bar, t)
    shares = load_share(group, x_bar, t, ev) if shares is None else shares
    k = group.agent_ids.index(agent.id)
    sl = group.slice(agent.id)
    xi = x_bar[sl]
    gs = ev.grad[sl]
    f = agent.f(xi, t)
    if extra_drift is not None:
        f = f + extra_drift
    a = agent.g(xi, t).T @ gs
    om = omega(group, x_bar, t, ev)
    beta = -float(gs @ f) - shares[k] * om + float(np.abs(gs).sum()) * group.C
    # a slice below the zero threshold leaves beta at roundoff size
    tol = ZERO_GRAD * (1.0 + abs(om) + group.C + float(np.abs(f).sum()))
    return AgentConstraint(a, beta, float(shares[k]), gs, tol)


def agent_input(agent: AgentModel, group: TaskGroup, x_bar, t: float, **kw) -> np.ndarray:
    return agent_constraint(agent, group, x_bar, t, **kw).solve()


def feasible_fallback(agent: AgentModel, group: TaskGroup, x_bar, t: float, ev=None, extra_drift=None) -> np.ndarray:
    """Analytic feasible input gᵀ(ggᵀ)⁻¹(-f + sign(db/dx_i) C)."""
    x_bar = np.asarray(x_bar, dtype=float)
    ev = ev or group.barrier.evaluate(x_bar, t)
    sl = group.slice(agent.id)
    xi = x_bar[sl]
    gs = ev.grad[sl]
    f = agent.f(xi, t)
    if extra_drift is not None:
        f = f + extra_drift
    G = agent.g(xi, t)
    GG = G @ G.T
    if np.linalg.svd(G, compute_uv=False).min() < RANK_TOL:
        raise np.linalg.LinAlgError("g g' is singular")
    v = np.sign(gs) * group.C
    return G.T @ np.linalg.solve(GG, -f + v)


def group_inputs(group: TaskGroup, agents: dict[str, AgentModel], x_bar, t: float, extra_drift=None):
    """Inputs of every agent in the group plus diagnostics.

    Returns (inputs, infeasible ids, evaluation, constraints). Infeasible
    agents get the zero input.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    ev = group.barrier.evaluate(x_bar, t)
    shares = load_share(group, x_bar, t, ev)
    inputs, bad, cons = {}, [], {}
    for aid in group.agent_ids:
        ag = agents[aid]
        extra = None if extra_drift is None else extra_drift[aid]
        con = agent_constraint(ag, group, x_bar, t, ev, shares, extra)
        cons[aid] = con
        try:
            inputs[aid] = con.solve()
        except InfeasibleStep:
            bad.append(aid)
            inputs[aid] = np.zeros(ag.input_dim)
    return inputs, bad, ev, cons


def centralized_check(
    group: TaskGroup,
    agents: dict[str, AgentModel],
    x_bar,
    t: float,
    inputs: dict[str, np.ndarray],
    ev: BarrierEval | None = None,
    extra_drift=None,
) -> float:
    """Slack of the group-level barrier condition under the given inputs."""
    x_bar = np.asarray(x_bar, dtype=float)
    ev = ev or group.barrier.evaluate(x_bar, t)
    xdot = np.zeros_like(x_bar)
    for aid in group.agent_ids:
        sl = group.slice(aid)
        ag = agents[aid]
        xdot[sl] = ag.f(x_bar[sl], t) + ag.g(x_bar[sl], t) @ inputs[aid]
        if extra_drift is not None:
            xdot[sl] += extra_drift[aid]
    return float(ev.grad @ xdot + ev.dt + group.kappa * ev.value - np.abs(ev.grad).sum() * group.C)
