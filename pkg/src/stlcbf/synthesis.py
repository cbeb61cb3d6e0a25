"""Parameter selection for composite barriers.

The outer variables (eta, D, gamma0, gamma_inf and the robustness r) are
found by a penalty pattern search. The witness states of the left-limit
constraints are eliminated by maximizing the concave map x -> b(x, t) at
each deadline, so every constraint is a function of the outer variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .barrier import CompositeBarrier, TermSpec, deadline_switches

STRICT_MARGIN = 1e-6  # strict inequalities must hold by this much
FEAS_TOL = 1e-9
GRAD_TOL = 1e-8
AGREE_TOL = 1e-6


class SynthesisError(ValueError):
    pass


class UnsatisfiablePredicate(SynthesisError):
    """Some predicate has h_opt < 0."""


class EmptyRobustnessInterval(SynthesisError):
    """No admissible r exists for the given initial state."""


class InnerMaxError(RuntimeError):
    """Concave maximization did not converge or starts disagree."""


# ---------------------------------------------------------------------------
# inner maximization


@dataclass(frozen=True)
class _Pieces:
    """Active terms at one time as stacked data; ball terms first."""

    balls: list  # (L, o, c) with term value c - ||L x + o||
    affine_w: np.ndarray  # (k, n)
    affine_c: np.ndarray  # (k,)
    eta: float


def _pieces(barrier: CompositeBarrier, t: float, side: str) -> _Pieces:
    active = barrier.mask(t, side)
    balls, aw, ac = [], [], []
    for term, on in zip(barrier.terms, active):
        if not on:
            continue
        p, g = term.predicate, term.gamma(t)
        if p.kind == "ball":
            balls.append((p.L, p.o, p.radius - g))
        else:
            aw.append(p.L[0])
            ac.append(p.o[0] - g)
    n = barrier.group_dim
    if barrier.state_bound is not None:
        balls.append((np.eye(n), np.zeros(n), barrier.state_bound))
    if not balls and not aw:
        raise ValueError(f"no active barrier term at t={t}")
    return _Pieces(balls, np.array(aw).reshape(-1, n), np.array(ac), barrier.eta)


def _smooth(pc: _Pieces, x: np.ndarray, delta: float, order: int = 2):
    """Barrier with ||z|| replaced by sqrt(||z||^2 + delta^2)."""
    n = len(x)
    vals, grads, hess = [], [], []
    for L, o, c in pc.balls:
        z = L @ x + o
        s = math.sqrt(z @ z + delta * delta)
        vals.append(c - s)
        if order:
            Lz = L.T @ z
            grads.append(-Lz / s)
            if order > 1:
                hess.append(-(L.T @ L) / s + np.outer(Lz, Lz) / s**3)
    if len(pc.affine_c):
        vals.extend(pc.affine_w @ x + pc.affine_c)
        if order:
            grads.extend(pc.affine_w)
            if order > 1:
                hess.extend(np.zeros((len(pc.affine_c), n, n)))
    v = np.array(vals)
    m = v.min()
    e = np.exp(-pc.eta * (v - m))
    s = e.sum()
    val = m - math.log(s) / pc.eta
    if not order:
        return val, None, None
    w = e / s
    G = np.array(grads)
    g = w @ G
    if order < 2:
        return val, g, None
    H = np.tensordot(w, np.array(hess), axes=1) - pc.eta * ((G.T * w) @ G - np.outer(g, g))
    return val, g, H


def _ascend(pc: _Pieces, x: np.ndarray, delta: float, tol: float, max_iter: int):
    """Levenberg-damped Newton ascent with Armijo backtracking."""
    n = len(x)
    v, g, H = _smooth(pc, x, delta)
    for _ in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return x, v, gn, True
        A = -H + gn * np.eye(n)
        try:
            d = np.linalg.solve(A, g)
        except np.linalg.LinAlgError:
            d = g / max(gn, 1e-300)
        slope = g @ d
        if not slope > 0:
            d, slope = g, gn * gn
        step = 1.0
        while step > 1e-20:
            xn = x + step * d
            vn = _smooth(pc, xn, delta, 0)[0]
            if vn >= v + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            # no ascent possible at working precision
            return x, v, gn, gn <= 1e2 * tol
        x = xn
        v, g, H = _smooth(pc, x, delta)
    return x, v, float(np.linalg.norm(g)), False


# smoothing continuation; below ~1e-7 roundoff in z / ||z|| dominates
_DELTAS = tuple(10.0**-k for k in range(0, 8))


# accepted stationarity at the sharpest smoothing level, where the Hessian
# near a cone apex is ill-conditioned
_FINAL_TOL = 1e-6


def _maximize_from(pc: _Pieces, x0: np.ndarray, max_iter: int = 60):
    x = np.array(x0, dtype=float)
    ok = True
    for delta in _DELTAS:
        x, _, gn, ok = _ascend(pc, x, delta, GRAD_TOL, max_iter)
    return x, ok or gn <= _FINAL_TOL, gn


def default_starts(barrier: CompositeBarrier, t: float, side: str, x0=None, n_random: int = 2, seed: int = 0):
    n = barrier.group_dim
    starts = [np.zeros(n)]
    for term, on in zip(barrier.terms, barrier.mask(t, side)):
        if on and term.predicate.kind == "ball":
            starts.append(np.asarray(term.predicate.center_point, dtype=float))
    if x0 is not None:
        starts.append(np.asarray(x0, dtype=float))
    scale = 0.5 * (barrier.state_bound or max(1.0, max(np.abs(s).max() for s in starts)))
    rng = np.random.default_rng(seed)
    starts += list(rng.uniform(-scale, scale, size=(n_random, n)))
    return starts


def inner_max(
    barrier: CompositeBarrier,
    t: float,
    side: str = "right",
    starts=None,
    certify: bool = True,
) -> tuple[np.ndarray, float]:
    """Maximizer of the concave map x -> b(x, t).

    ``side="left"`` uses the mask just before ``t``. With ``certify`` every
    start must reach the same maximum value.
    """
    side = "right" if side == "value" else side
    pc = _pieces(barrier, t, side)
    if starts is None:
        starts = default_starts(barrier, t, side)
    best_x, best_v, values = None, -math.inf, []
    failures = []
    for s in starts:
        x, ok, gn = _maximize_from(pc, s)
        v = barrier.value(x, t, side)
        if not ok:
            failures.append(gn)
        values.append(v)
        if v > best_v:
            best_x, best_v = x, v
    if certify:
        if failures and len(failures) == len(starts):
            raise InnerMaxError(f"inner maximization did not converge at t={t} (gradient {min(failures):.2e})")
        spread = max(values) - min(values)
        if spread > AGREE_TOL:
            raise InnerMaxError(f"starts disagree on max b at t={t} by {spread:.2e}")
    return best_x, float(best_v)


# ---------------------------------------------------------------------------
# problem and result


@dataclass
class SynthesisBounds:
    eta: tuple[float, float] = (0.5, 20.0)
    D: tuple[float, float] | None = None
    gamma_span: float = 5.0

    def to_dict(self) -> dict:
        return {"eta": list(self.eta), "D": None if self.D is None else list(self.D), "gamma_span": self.gamma_span}

    @classmethod
    def from_dict(cls, d: dict | None) -> SynthesisBounds:
        d = d or {}
        D = d.get("D")
        return cls(
            tuple(d.get("eta", (0.5, 20.0))),
            None if D is None else tuple(D),
            float(d.get("gamma_span", 5.0)),
        )


@dataclass
class SynthesisProblem:
    term_specs: list[TermSpec]
    x0: np.ndarray
    chi: float = 0.0
    mode: str = "maximize_r"
    r: float | None = None
    bounds: SynthesisBounds = field(default_factory=SynthesisBounds)
    restarts: int = 32
    seed: int = 0
    epsilon_margin: float | None = None
    max_evals: int = 3000

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.chi < 0:
            raise ValueError("chi must be nonnegative")
        if self.mode not in ("maximize_r", "feasibility"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "feasibility" and self.r is None:
            raise ValueError("feasibility mode needs a fixed r")
        if not self.term_specs:
            raise ValueError("no barrier terms")
        if self.restarts < 1:
            raise ValueError("restarts must be positive")

    @property
    def group_dim(self) -> int:
        return len(self.x0)

    def default_D(self) -> float:
        off = max(float(np.linalg.norm(s.predicate.o)) for s in self.term_specs)
        return 2.0 * (off + float(np.linalg.norm(self.x0))) or 1.0

    def D_bounds(self) -> tuple[float, float]:
        if self.bounds.D is not None:
            return tuple(float(v) for v in self.bounds.D)
        d = self.default_D()
        return (d, d)

    def h0(self) -> np.ndarray:
        return np.array([s.predicate.value(self.x0) for s in self.term_specs])

    def validate(self):
        for s in self.term_specs:
            if s.predicate.dim != self.group_dim:
                raise SynthesisError("initial state and predicates differ in dimension")
            if s.predicate.h_opt < 0:
                raise UnsatisfiablePredicate(
                    f"predicate {s.predicate.label or s.predicate.kind} is not satisfiable (h_opt = {s.predicate.h_opt:.4g} < 0)"
                )
        h0 = self.h0()
        for s, h in zip(self.term_specs, h0):
            if s.t_star == 0 and h <= 0:
                raise EmptyRobustnessInterval(
                    f"predicate {s.predicate.label or s.predicate.kind} must hold at t=0 but h(x0) = {h:.4g}"
                )
        if self.r is not None:
            if self.r <= 0:
                raise EmptyRobustnessInterval("r must be positive")
            for s, h in zip(self.term_specs, h0):
                if s.t_star == 0 and self.r > h:
                    raise EmptyRobustnessInterval(f"r = {self.r} exceeds h(x0) = {h:.4g} for a term required at t=0")
                if s.t_star > 0 and self.r >= s.predicate.h_opt:
                    raise EmptyRobustnessInterval(f"r = {self.r} is not below h_opt = {s.predicate.h_opt:.4g}")


@dataclass
class SynthesisResult:
    eta: float
    r: float
    D: float
    gamma0: tuple[float, ...]
    gamma_inf: tuple[float, ...]
    xi: list[tuple[float, tuple[float, ...]]]
    feasible: bool
    constraint_report: dict[str, float]
    barrier: CompositeBarrier
    chi: float = 0.0
    kappa: float | None = None
    epsilon_margin: float | None = None
    restart: int = -1
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "r": self.r,
            "D": self.D,
            "gamma0": list(self.gamma0),
            "gamma_inf": list(self.gamma_inf),
            "xi": [{"t": t, "x": list(x)} for t, x in self.xi],
            "feasible": self.feasible,
            "constraint_report": dict(self.constraint_report),
            "chi": self.chi,
            "kappa": self.kappa,
            "epsilon_margin": self.epsilon_margin,
            "restart": self.restart,
            "evaluations": self.evaluations,
            "barrier": self.barrier.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SynthesisResult:
        return cls(
            eta=d["eta"],
            r=d["r"],
            D=d["D"],
            gamma0=tuple(d["gamma0"]),
            gamma_inf=tuple(d["gamma_inf"]),
            xi=[(e["t"], tuple(e["x"])) for e in d["xi"]],
            feasible=d["feasible"],
            constraint_report=dict(d["constraint_report"]),
            barrier=CompositeBarrier.from_dict(d["barrier"]),
            chi=d.get("chi", 0.0),
            kappa=d.get("kappa"),
            epsilon_margin=d.get("epsilon_margin"),
            restart=d.get("restart", -1),
            evaluations=d.get("evaluations", 0),
        )


# ---------------------------------------------------------------------------
# constraints


def constraint_slacks(
    specs,
    x0,
    chi: float,
    eta: float,
    r: float,
    D: float,
    gamma0,
    gamma_inf,
    witness=None,
) -> tuple[dict[str, float], list, CompositeBarrier | None]:
    """Slack of every selection constraint (feasible iff all >= -1e-9).

    ``witness(barrier, t)`` returns the maximizer and maximum of b(., t) just
    before deadline ``t``; by default a certified multi-start maximization.
    """
    x0 = np.asarray(x0, dtype=float)
    rep: dict[str, float] = {}
    rep["eta>0"] = eta - STRICT_MARGIN
    rep["r>0"] = r - STRICT_MARGIN
    rep["D>0"] = D - STRICT_MARGIN
    for k, (s, g0, gi) in enumerate(zip(specs, gamma0, gamma_inf)):
        h0 = s.predicate.value(x0)
        rep[f"gamma0<h(x0)[{k}]"] = h0 - g0 - STRICT_MARGIN
        rep[f"gamma_inf>r[{k}]"] = gi - r - STRICT_MARGIN
        rep[f"gamma_inf>=gamma0[{k}]"] = gi - g0
        rep[f"gamma_inf<h_opt[{k}]"] = min(s.predicate.h_opt - gi - STRICT_MARGIN, 1e300)
        if s.t_star == 0:
            rep[f"r<=h(x0)[{k}]"] = h0 - r
    xi: list = []
    if min(rep.values()) < -FEAS_TOL and (eta <= 0 or D <= 0 or any(gi < g0 for g0, gi in zip(gamma0, gamma_inf))):
        return rep, xi, None
    barrier = CompositeBarrier.from_specs(
        specs, gamma0, np.maximum(gamma_inf, gamma0), eta, D, len(x0)
    )
    rep["b(x0,0)>=chi"] = barrier.value(x0, 0.0) - chi
    if witness is None:
        witness = lambda bar, t: inner_max(bar, t, "left", default_starts(bar, t, "left", x0))
    for t in deadline_switches(specs):
        xs, bs = witness(barrier, t)
        rep[f"b(xi,{t:g}-)>=chi"] = bs - chi
        xi.append((float(t), tuple(float(v) for v in xs)))
    return rep, xi, barrier


def _core_keys(rep: dict) -> list[str]:
    return [k for k in rep if k.startswith("b(")]


def verify_candidate(result: SynthesisResult, problem: SynthesisProblem) -> dict:
    """Recompute every constraint with fresh certified maximizations."""
    try:
        rep, xi, _ = constraint_slacks(
            problem.term_specs,
            problem.x0,
            problem.chi,
            result.eta,
            result.r,
            result.D,
            result.gamma0,
            result.gamma_inf,
        )
        error = None
    except (InnerMaxError, ValueError) as exc:
        rep, xi, error = {}, [], str(exc)
    feasible = error is None and bool(rep) and min(rep.values()) >= -FEAS_TOL
    return {"slacks": rep, "xi": xi, "feasible": feasible, "error": error}


# ---------------------------------------------------------------------------
# outer search


class _Layout:
    """Map normalized coordinates in [0, 1]^k to selection parameters."""

    def __init__(self, problem: SynthesisProblem):
        self.p = problem
        self.specs = problem.term_specs
        self.h0 = problem.h0()
        self.eta_lo, self.eta_hi = (float(v) for v in problem.bounds.eta)
        self.D_lo, self.D_hi = problem.D_bounds()
        span = problem.bounds.gamma_span
        caps = []
        for s, h0 in zip(self.specs, self.h0):
            cap = s.predicate.h_opt
            if not math.isfinite(cap):
                cap = max(h0, 0.0) + span
            if s.t_star == 0:
                cap = min(cap, h0)
            caps.append(cap - 2 * STRICT_MARGIN)
        self.caps = np.array(caps)
        self.ramp = [k for k, s in enumerate(self.specs) if s.t_star > 0]
        self.g0_lo = self.h0 - span
        self.dim = 2 + len(self.specs) + len(self.ramp)
        self.fixed_r = problem.r if problem.mode == "feasibility" else None

    def decode(self, u: np.ndarray):
        u = np.clip(u, 0.0, 1.0)
        eta = math.exp(math.log(self.eta_lo) + u[0] * (math.log(self.eta_hi) - math.log(self.eta_lo)))
        D = self.D_lo + u[1] * (self.D_hi - self.D_lo)
        P = len(self.specs)
        lo = (self.fixed_r if self.fixed_r is not None else 0.0) + 2 * STRICT_MARGIN
        gi = lo + u[2 : 2 + P] * (self.caps - lo)
        g0 = gi.copy()
        for j, k in enumerate(self.ramp):
            top = min(self.h0[k], gi[k]) - 2 * STRICT_MARGIN
            g0[k] = self.g0_lo[k] + u[2 + P + j] * (top - self.g0_lo[k])
        if self.fixed_r is not None:
            r = self.fixed_r
        else:
            r = float(gi.min()) - 2 * STRICT_MARGIN
            for s, h0 in zip(self.specs, self.h0):
                if s.t_star == 0:
                    r = min(r, float(h0))
        return eta, r, D, g0, gi

    def encode_heuristic(self, chi: float) -> np.ndarray:
        """Mid-box eta and gamma_inf, gamma0 a fixed margin below h(x0)."""
        u = np.full(self.dim, 0.5)
        u[1] = 1.0
        eta, _, _, _, gi = self.decode(u)
        margin = chi + 0.25 + math.log(len(self.specs) + 1) / eta
        P = len(self.specs)
        for j, k in enumerate(self.ramp):
            top = min(self.h0[k], gi[k]) - 2 * STRICT_MARGIN
            want = self.h0[k] - margin
            den = top - self.g0_lo[k]
            u[2 + P + j] = np.clip((want - self.g0_lo[k]) / den, 0, 1) if den > 0 else 0.0
        return u


class _Search:
    def __init__(self, problem: SynthesisProblem, layout: _Layout):
        self.p = problem
        self.lay = layout
        self.warm: dict[float, np.ndarray] = {}
        self.evals = 0

    def witness(self, barrier, t):
        starts = default_starts(barrier, t, "left", self.p.x0, n_random=0)
        if t in self.warm:
            starts = [self.warm[t]]
        x, v = inner_max(barrier, t, "left", starts=starts, certify=False)
        self.warm[t] = x
        return x, v

    def merit(self, u):
        self.evals += 1
        eta, r, D, g0, gi = self.lay.decode(u)
        try:
            rep, xi, _ = constraint_slacks(
                self.p.term_specs, self.p.x0, self.p.chi, eta, r, D, g0, gi, self.witness
            )
        except (InnerMaxError, ValueError):
            return math.inf, None
        core = [rep[k] for k in _core_keys(rep)]
        viol = sum(max(0.0, -v) for v in rep.values())
        slack = min(core) if core else 0.0
        # small slack bonus lets eta and D move when r is locally stuck
        val = 10.0 * viol - 1e-3 * min(slack, 0.1)
        if self.p.mode == "maximize_r":
            val -= r
        return val, (rep, xi, viol, slack)

    def done(self, info) -> bool:
        return self.p.mode == "feasibility" and info is not None and info[2] == 0 and info[3] >= 1e-7

    def run(self, u: np.ndarray, budget: int):
        k = len(u)
        dirs = [np.eye(k)[i] for i in range(k)]
        P = len(self.lay.specs)
        shift = np.zeros(k)
        shift[2 : 2 + P] = 1.0
        dirs.append(shift)
        f, info = self.merit(u)
        step = 0.25
        while step > 1e-4 and self.evals < budget and not self.done(info):
            improved = False
            for d in dirs:
                for sgn in (1.0, -1.0):
                    v = np.clip(u + sgn * step * d, 0.0, 1.0)
                    if np.array_equal(v, u):
                        continue
                    fv, iv = self.merit(v)
                    if fv < f - 1e-12:
                        u, f, info, improved = v, fv, iv, True
                        break
                if self.done(info) or self.evals >= budget:
                    break
            if not improved:
                step *= 0.5
        return u, f, info


def synthesize(problem: SynthesisProblem) -> SynthesisResult:
    """Multi-start penalty pattern search over the selection parameters."""
    problem.validate()
    lay = _Layout(problem)
    best = None
    total = 0
    for k in range(problem.restarts):
        if k == 0:
            u0 = lay.encode_heuristic(problem.chi)
        else:
            u0 = np.random.default_rng([problem.seed, k]).uniform(0, 1, lay.dim)
        search = _Search(problem, lay)
        u, f, info = search.run(u0, problem.max_evals)
        total += search.evals
        if info is None:
            continue
        feasible = info[2] == 0
        key = (not feasible, f)
        if best is None or key < best[0]:
            best = (key, k, u, info)
        if problem.mode == "feasibility" and feasible:
            break
    if best is None:
        raise SynthesisError("no restart produced an evaluable candidate")
    _, k, u, _ = best
    eta, r, D, g0, gi = lay.decode(u)
    barrier = CompositeBarrier.from_specs(problem.term_specs, g0, gi, eta, D, problem.group_dim)
    result = SynthesisResult(
        eta=float(eta),
        r=float(r),
        D=float(D),
        gamma0=tuple(float(v) for v in g0),
        gamma_inf=tuple(float(v) for v in gi),
        xi=[],
        feasible=False,
        constraint_report={},
        barrier=barrier,
        chi=problem.chi,
        restart=k,
        evaluations=total,
    )
    check = verify_candidate(result, problem)
    result.constraint_report = check["slacks"]
    result.xi = check["xi"]
    result.feasible = check["feasible"]
    if result.feasible and problem.chi > 0 and problem.epsilon_margin:
        result.epsilon_margin = problem.epsilon_margin
        result.kappa = select_kappa(result, problem.epsilon_margin)
    return result


def result_from_params(
    problem: SynthesisProblem, eta: float, r: float, D: float, gamma0, gamma_inf
) -> SynthesisResult:
    """Wrap hand-picked parameters as a result and verify them."""
    barrier = CompositeBarrier.from_specs(problem.term_specs, gamma0, gamma_inf, eta, D, problem.group_dim)
    res = SynthesisResult(
        eta=float(eta),
        r=float(r),
        D=float(D),
        gamma0=tuple(float(v) for v in gamma0),
        gamma_inf=tuple(float(v) for v in gamma_inf),
        xi=[],
        feasible=False,
        constraint_report={},
        barrier=barrier,
        chi=problem.chi,
    )
    check = verify_candidate(res, problem)
    res.constraint_report, res.xi, res.feasible = check["slacks"], check["xi"], check["feasible"]
    return res


def select_kappa(result: SynthesisResult, epsilon_margin: float, chi: float | None = None) -> float:
    """Linear class-K gain that makes dt b + kappa b >= epsilon at the maximizer."""
    chi = result.chi if chi is None else chi
    if not chi > 0:
        raise ValueError("gain selection needs chi > 0")
    if not epsilon_margin > 0:
        raise ValueError("epsilon_margin must be positive")
    bar = result.barrier
    rates = [(t.gamma.gamma_inf - t.gamma.gamma0) / t.t_star for t in bar.terms if t.t_star > 0]
    d_max = max(rates, default=0.0)
    b_max = max(t.predicate.sup_within(bar.state_bound or 0.0) - t.gamma.gamma0 for t in bar.terms)
    if bar.state_bound is not None:
        b_max = max(b_max, bar.state_bound)
    if d_max == 0:
        zeta = 0.0
    else:
        try:
            zeta = -d_max * math.exp(bar.eta * (b_max - chi))
        except OverflowError:
            return math.inf
    return (epsilon_margin - zeta) / chi
