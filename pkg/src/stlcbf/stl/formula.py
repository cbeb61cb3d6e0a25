"""AST for the bounded STL fragment.

Boolean formulas are conjunctions of concave predicates. Temporal formulas
are single always / eventually / until operators over a boolean formula,
combined by top-level conjunction only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Union

import numpy as np

# Ball-predicate gradients vanish within this distance of the ball center.
CENTER_RADIUS = 1e-9


class FragmentError(ValueError):
    """Formula lies outside the supported fragment."""


class IntervalError(ValueError):
    """Time interval violates 0 <= a <= b < inf, b > 0."""


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise IntervalError(f"unbounded interval [{a}, {b}]")
        if a < 0:
            raise IntervalError(f"interval start {a} is negative")
        if a > b:
            raise IntervalError(f"interval [{a}, {b}] has a > b")
        if b <= 0:
            raise IntervalError(f"interval end {b} must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


def _as_tuple2(m) -> tuple[tuple[float, ...], ...]:
    arr = np.atleast_2d(np.asarray(m, dtype=float))
    return tuple(tuple(float(v) for v in row) for row in arr)


@dataclass(frozen=True)
class Predicate:
    """Concave predicate function ``h`` over a state of dimension ``dim``.

    ``ball``:   h(x) = radius - ||L x + o||   (matrix = L, offset = o)
    ``affine``: h(x) = w . x + beta           (matrix = [w], offset = (beta,))

    Arrays are stored as tuples so predicates hash and compare by value.
    """

    kind: str
    matrix: tuple[tuple[float, ...], ...]
    offset: tuple[float, ...]
    radius: float = 0.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in ("ball", "affine"):
            raise ValueError(f"unknown predicate kind {self.kind!r}")
        object.__setattr__(self, "matrix", _as_tuple2(self.matrix))
        object.__setattr__(self, "offset", tuple(float(v) for v in np.ravel(self.offset)))
        object.__setattr__(self, "radius", float(self.radius))
        rows = len(self.matrix)
        if self.kind == "affine" and (rows != 1 or len(self.offset) != 1):
            raise ValueError("affine predicate needs one weight row and a scalar offset")
        if self.kind == "ball":
            if len(self.offset) != rows:
                raise ValueError("ball offset length must match the rows of L")
            if self.radius < 0:
                raise ValueError("ball radius must be nonnegative")

    @classmethod
    def ball(cls, L, o, radius: float, label: str = "") -> Predicate:
        return cls("ball", L, o, radius, label)

    @classmethod
    def affine(cls, w, beta: float, label: str = "") -> Predicate:
        return cls("affine", [np.ravel(np.asarray(w, dtype=float))], [beta], 0.0, label)

    @cached_property
    def L(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)

    @cached_property
    def o(self) -> np.ndarray:
        return np.array(self.offset, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.matrix[0])

    def value(self, x) -> np.ndarray | float:
        """h(x); ``x`` may be a single state or an (N, dim) batch."""
        # Explicit products and reductions instead of BLAS keep each row's
        # rounding independent of the batch it is evaluated in.
        x = np.asarray(x, dtype=float)
        if self.kind == "affine":
            out = (x * self.L[0]).sum(axis=-1) + self.o[0]
        else:
            z = (x[..., None, :] * self.L).sum(axis=-1) + self.o
            out = self.radius - np.sqrt((z * z).sum(axis=-1))
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "affine":
            return self.L[0].copy()
        z = self.L @ x + self.o
        nz = np.linalg.norm(z)
        if nz <= CENTER_RADIUS:
            return np.zeros(self.dim)
        return -(self.L.T @ z) / nz

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.dim
        if self.kind == "affine":
            return np.zeros((n, n))
        z = self.L @ x + self.o
        nz = np.linalg.norm(z)
        if nz <= CENTER_RADIUS:
            return np.zeros((n, n))
        zh = z / nz
        P = np.eye(len(z)) - np.outer(zh, zh)
        return -(self.L.T @ P @ self.L) / nz

    @cached_property
    def center_point(self) -> np.ndarray | None:
        """Minimum-norm state minimizing ||L x + o|| (ball only)."""
        if self.kind != "ball":
            return None
        return -np.linalg.pinv(self.L) @ self.o

    @cached_property
    def h_opt(self) -> float:
        """Supremum of h over the whole state space."""
        if self.kind == "affine":
            return math.inf if np.any(self.L[0] != 0) else self.o[0]
        residual = self.L @ self.center_point + self.o
        return self.radius - float(np.linalg.norm(residual))

    def sup_within(self, bound: float) -> float:
        """Upper bound on h over the ball ||x|| <= bound."""
        if self.kind == "affine":
            return float(np.linalg.norm(self.L[0]) * bound + self.o[0])
        return self.h_opt

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "matrix": [list(r) for r in self.matrix],
            "offset": list(self.offset),
            "radius": self.radius,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Predicate:
        return cls(d["kind"], d["matrix"], d["offset"], d.get("radius", 0.0), d.get("label", ""))


@dataclass(frozen=True)
class BoolFormula:
    conjuncts: tuple[Predicate, ...]

    def __post_init__(self):
        conj = tuple(self.conjuncts)
        if not conj:
            raise FragmentError("boolean formula needs at least one predicate")
        for p in conj:
            if not isinstance(p, Predicate):
                raise FragmentError("boolean formulas may only contain predicates")
        object.__setattr__(self, "conjuncts", conj)

    def robustness(self, values: np.ndarray) -> np.ndarray:
        """Min over conjuncts of h, evaluated on an (N, dim) batch."""
        return np.min([np.atleast_1d(p.value(values)) for p in self.conjuncts], axis=0)

    def holds(self, values: np.ndarray) -> np.ndarray:
        return np.all([np.atleast_1d(p.value(values)) >= 0 for p in self.conjuncts], axis=0)


@dataclass(frozen=True)
class Always:
    interval: Interval
    psi: BoolFormula


@dataclass(frozen=True)
class Eventually:
    interval: Interval
    psi: BoolFormula


@dataclass(frozen=True)
class Until:
    interval: Interval
    left: BoolFormula
    right: BoolFormula


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


Formula = Union[Always, Eventually, Until, And]
TemporalOp = Union[Always, Eventually, Until]


def temporal_operators(formula: Formula) -> Iterator[TemporalOp]:
    """Leaves of the top-level conjunction, left to right."""
    if isinstance(formula, And):
        yield from temporal_operators(formula.left)
        yield from temporal_operators(formula.right)
    elif isinstance(formula, (Always, Eventually, Until)):
        yield formula
    else:
        raise FragmentError(f"not a temporal formula: {formula!r}")


def conjoin(ops: list[TemporalOp]) -> Formula:
    if not ops:
        raise ValueError("nothing to conjoin")
    out: Formula = ops[0]
    for op in ops[1:]:
        out = And(out, op)
    return out


def horizon(formula: Formula) -> float:
    return max(op.interval.b for op in temporal_operators(formula))


def predicates(formula: Formula) -> list[Predicate]:
    out = []
    for op in temporal_operators(formula):
        if isinstance(op, Until):
            out.extend(op.left.conjuncts)
            out.extend(op.right.conjuncts)
        else:
            out.extend(op.psi.conjuncts)
    return out


def state_dim(formula: Formula) -> int:
    dims = {p.dim for p in predicates(formula)}
    if len(dims) != 1:
        raise FragmentError(f"predicates disagree on state dimension: {sorted(dims)}")
    return dims.pop()
