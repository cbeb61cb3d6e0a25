"""Time-varying barrier functions compiled from STL formulas.

Each predicate of each temporal operator becomes one term
``b_l(x, t) = -gamma_l(t) + h_l(x)``. Terms are combined by a smooth
minimum (log-sum-exp) together with a state-bound term ``D - ||x||`` that
is never removed. Term ``l`` is dropped once ``t >= deadline_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .stl.formula import (
    CENTER_RADIUS,
    Always,
    Eventually,
    Formula,
    Predicate,
    Until,
    temporal_operators,
)

ORIGINS = ("always", "eventually", "until_left", "until_right")


@dataclass(frozen=True)
class GammaFn:
    """Piecewise-linear, non-decreasing offset profile."""

    gamma0: float
    gamma_inf: float
    t_star: float

    def __post_init__(self):
        if self.t_star < 0:
            raise ValueError("t_star must be nonnegative")
        if self.gamma_inf < self.gamma0:
            raise ValueError(
                f"gamma must be non-decreasing: gamma_inf={self.gamma_inf} < gamma0={self.gamma0}"
            )

    @property
    def slope(self) -> float:
        if self.t_star == 0:
            return 0.0
        return (self.gamma_inf - self.gamma0) / self.t_star

    def __call__(self, t: float) -> float:
        if t < self.t_star:
            return self.slope * t + self.gamma0
        return self.gamma_inf

    def rate(self, t: float, side: str = "right") -> float:
        """One-sided time derivative; the right derivative is 0 at t_star."""
        if side == "left":
            return self.slope if 0 < t <= self.t_star else 0.0
        return self.slope if t < self.t_star else 0.0


@dataclass(frozen=True)
class TermSpec:
    """A barrier term before its gamma parameters are chosen."""

    predicate: Predicate
    t_star: float
    deadline: float
    origin: str

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown term origin {self.origin!r}")
        if self.deadline <= 0:
            raise ValueError("deadline must be positive")
        if not 0 <= self.t_star <= self.deadline:
            raise ValueError("t_star must lie in [0, deadline]")

    def with_gamma(self, gamma0: float, gamma_inf: float) -> BarrierTerm:
        return BarrierTerm(self.predicate, GammaFn(gamma0, gamma_inf, self.t_star), self.deadline, self.origin)


@dataclass(frozen=True)
class BarrierTerm:
    predicate: Predicate
    gamma: GammaFn
    deadline: float
    origin: str

    @property
    def t_star(self) -> float:
        return self.gamma.t_star

    @property
    def spec(self) -> TermSpec:
        return TermSpec(self.predicate, self.t_star, self.deadline, self.origin)

    def value(self, x, t: float) -> float:
        return self.predicate.value(x) - self.gamma(t)

    def to_dict(self) -> dict:
        return {
            "predicate": self.predicate.to_dict(),
            "gamma0": self.gamma.gamma0,
            "gamma_inf": self.gamma.gamma_inf,
            "t_star": self.gamma.t_star,
            "deadline": self.deadline,
            "origin": self.origin,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BarrierTerm:
        return cls(
            Predicate.from_dict(d["predicate"]),
            GammaFn(d["gamma0"], d["gamma_inf"], d["t_star"]),
            float(d["deadline"]),
            d["origin"],
        )


def decompose(formula: Formula, group_dim: int | None = None) -> list[TermSpec]:
    """One term per predicate per temporal operator, in formula order."""
    specs: list[TermSpec] = []
    for op in temporal_operators(formula):
        a, b = op.interval.a, op.interval.b
        if isinstance(op, Always):
            specs += [TermSpec(p, a, b, "always") for p in op.psi.conjuncts]
        elif isinstance(op, Eventually):
            specs += [TermSpec(p, b, b, "eventually") for p in op.psi.conjuncts]
        elif isinstance(op, Until):
            # the existential time is pinned to the interval end
            specs += [TermSpec(p, b, b, "until_right") for p in op.right.conjuncts]
            specs += [TermSpec(p, 0.0, b, "until_left") for p in op.left.conjuncts]
    if group_dim is not None:
        for s in specs:
            if s.predicate.dim != group_dim:
                raise ValueError(
                    f"predicate {s.predicate.label or s.predicate.kind} has dimension "
                    f"{s.predicate.dim}, group state has {group_dim}"
                )
    return specs


def switching_times(terms) -> list[float]:
    """Sorted distinct deadlines and interior always-kinks."""
    if not terms:
        raise ValueError("no barrier terms")
    last = max(t.deadline for t in terms)
    times = {float(t.deadline) for t in terms}
    times |= {float(t.t_star) for t in terms if t.origin == "always" and 0 < t.t_star <= last}
    return sorted(times)


def deadline_switches(terms) -> list[float]:
    return sorted({float(t.deadline) for t in terms})


@dataclass(frozen=True)
class BarrierEval:
    """Value and derivatives of a composite barrier at one (x, t)."""

    value: float
    grad: np.ndarray
    dt: float
    weights: np.ndarray
    term_values: np.ndarray
    hess: np.ndarray | None = None


@dataclass(frozen=True)
class CompositeBarrier:
    """Smooth minimum of the active terms and the state bound.

    ``state_bound=None`` drops the state-bound term (used in unit checks).
    """

    terms: tuple[BarrierTerm, ...]
    eta: float
    state_bound: float | None
    group_dim: int
    switch_times: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("a composite barrier needs at least one term")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.state_bound is not None and not self.state_bound > 0:
            raise ValueError("state bound D must be positive")
        for term in terms:
            if term.predicate.dim != self.group_dim:
                raise ValueError("term dimension differs from the group dimension")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "switch_times", tuple(switching_times(terms)))
        object.__setattr__(self, "_deadlines", np.array([t.deadline for t in terms]))

    @classmethod
    def from_specs(cls, specs, gamma0, gamma_inf, eta, state_bound, group_dim) -> CompositeBarrier:
        terms = tuple(s.with_gamma(g0, gi) for s, g0, gi in zip(specs, gamma0, gamma_inf))
        return cls(terms, eta, state_bound, group_dim)

    @property
    def last_switch(self) -> float:
        return self.switch_times[-1]

    @property
    def has_state_bound(self) -> bool:
        return self.state_bound is not None

    def mask(self, t: float, side: str = "right") -> np.ndarray:
        """Activity of each formula term; the state bound is always active.

        ``side="left"`` gives the mask just before ``t`` (active iff t <= deadline).
        """
        if side == "left":
            return t <= self._deadlines
        return t < self._deadlines

    def _parts(self, x: np.ndarray, t: float, side: str, order: int):
        """Active term values, gradients, time rates and optional hessians."""
        active = self.mask(t, side)
        vals, grads, rates, hess = [], [], [], []
        for term, on in zip(self.terms, active):
            if not on:
                continue
            p = term.predicate
            vals.append(p.value(x) - term.gamma(t))
            grads.append(p.gradient(x))
            rates.append(-term.gamma.rate(t, side))
            if order > 1:
                hess.append(p.hessian(x))
        if self.state_bound is not None:
            nx = float(np.linalg.norm(x))
            vals.append(self.state_bound - nx)
            grads.append(-x / nx if nx > CENTER_RADIUS else np.zeros_like(x))
            rates.append(0.0)
            if order > 1:
                if nx > CENTER_RADIUS:
                    xh = x / nx
                    hess.append(-(np.eye(len(x)) - np.outer(xh, xh)) / nx)
                else:
                    hess.append(np.zeros((len(x), len(x))))
        if not vals:
            raise ValueError(f"no active barrier term at t={t}")
        return np.array(vals), np.array(grads), np.array(rates), hess

    def evaluate(self, x, t: float, side: str = "right", order: int = 1) -> BarrierEval:
        x = np.asarray(x, dtype=float)
        vals, grads, rates, hess = self._parts(x, t, side, order)
        m = vals.min()
        e = np.exp(-self.eta * (vals - m))
        s = e.sum()
        value = m - np.log(s) / self.eta
        w = e / s
        grad = w @ grads
        dt = float(w @ rates)
        H = None
        if order > 1:
            H = np.tensordot(w, np.array(hess), axes=1)
            H -= self.eta * ((grads.T * w) @ grads - np.outer(grad, grad))
        return BarrierEval(float(value), grad, dt, w, vals, H)

    def value(self, x, t: float, side: str = "right") -> float:
        x = np.asarray(x, dtype=float)
        vals = self._parts(x, t, side, 0)[0]
        m = vals.min()
        return float(m - np.log(np.exp(-self.eta * (vals - m)).sum()) / self.eta)

    def values(self, xs, t: float, side: str = "right") -> np.ndarray:
        """Barrier value for a batch of states at one time."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        active = self.mask(t, side)
        cols = [term.predicate.value(xs) - term.gamma(t) for term, on in zip(self.terms, active) if on]
        if self.state_bound is not None:
            cols.append(self.state_bound - np.linalg.norm(xs, axis=1))
        vals = np.column_stack([np.atleast_1d(c) for c in cols])
        m = vals.min(axis=1)
        return m - np.log(np.exp(-self.eta * (vals - m[:, None])).sum(axis=1)) / self.eta

    def gradient(self, x, t: float, side: str = "right") -> np.ndarray:
        return self.evaluate(x, t, side).grad

    def time_derivative(self, x, t: float, side: str = "right") -> float:
        return self.evaluate(x, t, side).dt

    def hessian(self, x, t: float, side: str = "right") -> np.ndarray:
        return self.evaluate(x, t, side, order=2).hess

    def slice_gradient(self, x, t: float, index_range: tuple[int, int]) -> np.ndarray:
        lo, hi = index_range
        if not 0 <= lo < hi <= self.group_dim:
            raise IndexError(f"slice [{lo}, {hi}) outside a {self.group_dim}-dimensional state")
        return self.gradient(x, t)[lo:hi]

    def with_params(self, **kw) -> CompositeBarrier:
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "terms": [t.to_dict() for t in self.terms],
            "eta": self.eta,
            "state_bound": self.state_bound,
            "group_dim": self.group_dim,
            "switch_times": list(self.switch_times),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CompositeBarrier:
        return cls(
            tuple(BarrierTerm.from_dict(t) for t in d["terms"]),
            d["eta"],
            d["state_bound"],
            int(d["group_dim"]),
        )


def active_mask(barrier: CompositeBarrier, t: float) -> np.ndarray:
    """Term activity followed by the always-on state-bound bit."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return np.append(barrier.mask(t), True)


def eval_barrier(barrier: CompositeBarrier, x, t: float) -> float:
    return barrier.value(x, t)


def grad_x(barrier: CompositeBarrier, x, t: float) -> np.ndarray:
    return barrier.gradient(x, t)


def partial_t(barrier: CompositeBarrier, x, t: float) -> float:
    return barrier.time_derivative(x, t)


def slice_gradient(barrier: CompositeBarrier, x, t: float, index_range) -> np.ndarray:
    return barrier.slice_gradient(x, t, index_range)


def logsumexp_min(values, eta: float) -> float:
    """Smooth under-approximation of min(values), shifted for stability."""
    v = np.asarray(values, dtype=float)
    m = v.min()
    return float(m - np.log(np.exp(-eta * (v - m)).sum()) / eta)
