"""Boolean and robust semantics over sampled signals.

Temporal operators quantify over the sample instants inside the shifted
interval plus its two endpoints, which are obtained by linear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formula import (
    Always,
    BoolFormula,
    Eventually,
    Formula,
    Until,
    temporal_operators,
)

TIME_TOL = 1e-9


class HorizonError(ValueError):
    """Signal does not cover the time window a formula needs."""


@dataclass(frozen=True)
class Signal:
    times: np.ndarray
    values: np.ndarray
    dimension: int = 0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if len(times) < 2:
            raise ValueError("a signal needs at least two samples")
        if values.shape[0] != len(times):
            raise ValueError("times and values differ in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        dim = self.dimension or values.shape[1]
        if values.shape[1] != dim:
            raise ValueError(f"values have dimension {values.shape[1]}, declared {dim}")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dimension", int(dim))

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def at(self, t) -> np.ndarray:
        """Linearly interpolated state(s) at time(s) ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.times, t)
        out = np.empty((len(t), self.dimension))
        for k, (tk, i) in enumerate(zip(t, idx)):
            if i < len(self.times) and self.times[i] == tk:
                out[k] = self.values[i]
            elif i == 0:
                out[k] = self.values[0]
            elif i >= len(self.times):
                out[k] = self.values[-1]
            else:
                t0, t1 = self.times[i - 1], self.times[i]
                lam = (tk - t0) / (t1 - t0)
                out[k] = (1 - lam) * self.values[i - 1] + lam * self.values[i]
        return out


def _window(signal: Signal, lo: float, hi: float, extra: tuple[float, ...] = ()):
    """Evaluation instants in [lo, hi] and the states there."""
    t0, t1 = signal.span
    if lo < t0 - TIME_TOL or hi > t1 + TIME_TOL:
        raise HorizonError(
            f"window [{lo:g}, {hi:g}] is outside the signal span [{t0:g}, {t1:g}]"
        )
    lo, hi = max(lo, t0), min(hi, t1)
    i0 = np.searchsorted(signal.times, lo - TIME_TOL, side="left")
    i1 = np.searchsorted(signal.times, hi + TIME_TOL, side="right")
    samples = signal.times[i0:i1]
    pts = [samples]
    for e in (lo, hi) + extra:
        e = min(max(e, lo), hi)
        if samples.size == 0 or np.min(np.abs(samples - e)) > TIME_TOL:
            pts.append(np.array([e]))
    times = np.unique(np.concatenate(pts))
    if times.size == 0:
        raise HorizonError(f"no evaluation instants in [{lo:g}, {hi:g}]")
    states = np.empty((len(times), signal.dimension))
    on_sample = np.isin(times, samples)
    states[on_sample] = signal.values[i0:i1]
    if np.any(~on_sample):
        states[~on_sample] = signal.at(times[~on_sample])
    return times, states


def _robust_op(op, signal: Signal, t: float) -> float:
    a, b = op.interval.a, op.interval.b
    if isinstance(op, (Always, Eventually)):
        _, states = _window(signal, t + a, t + b)
        rho = op.psi.robustness(states)
        return float(rho.min() if isinstance(op, Always) else rho.max())
    times, states = _window(signal, t, t + b, extra=(t + a,))
    left = np.minimum.accumulate(op.left.robustness(states))
    right = op.right.robustness(states)
    inside = times >= t + a - TIME_TOL
    return float(np.max(np.minimum(right, left)[inside]))


def _boolean_op(op, signal: Signal, t: float) -> bool:
    a, b = op.interval.a, op.interval.b
    if isinstance(op, Always):
        _, states = _window(signal, t + a, t + b)
        return bool(np.all(op.psi.holds(states)))
    if isinstance(op, Eventually):
        _, states = _window(signal, t + a, t + b)
        return bool(np.any(op.psi.holds(states)))
    times, states = _window(signal, t, t + b, extra=(t + a,))
    left_ok = np.logical_and.accumulate(op.left.holds(states))
    right_ok = op.right.holds(states)
    inside = times >= t + a - TIME_TOL
    return bool(np.any(left_ok & right_ok & inside))


def eval_robust(formula: Formula, signal: Signal, t: float = 0.0) -> float:
    """Robustness of ``formula`` on ``signal`` at time ``t``."""
    return min(_robust_op(op, signal, float(t)) for op in temporal_operators(formula))


def eval_boolean(formula: Formula, signal: Signal, t: float = 0.0) -> bool:
    """Satisfaction of ``formula`` on ``signal`` at time ``t``."""
    return all(_boolean_op(op, signal, float(t)) for op in temporal_operators(formula))


def robust_per_operator(formula: Formula, signal: Signal, t: float = 0.0) -> list[float]:
    return [_robust_op(op, signal, float(t)) for op in temporal_operators(formula)]


def psi_robustness(psi: BoolFormula, signal: Signal) -> np.ndarray:
    """Pointwise robustness of a boolean formula at every sample."""
    return psi.robustness(signal.values)
