import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlcbf.barrier import BarrierEval, CompositeBarrier, decompose
from stlcbf.control import (
    InfeasibleStep,
    TaskGroup,
    agent_constraint,
    centralized_check,
    feasible_fallback,
    group_inputs,
    linear_agent,
    load_share,
    min_norm_input,
    omega,
    single_integrator,
)
from stlcbf.stl import parse_formula

LAYOUT = {"p1": (0, 2), "p2": (2, 4), "p3": (4, 6)}


def team_group(C=0.5, kappa=1.5, eta=4.0) -> TaskGroup:
    f = parse_formula(
        "G[2,8](ball(p1 + [0.8,0] - p2, 0.4)) && F[3,6](ball(p3 - [1,-1], 0.3)) "
        "&& F[5,8](ball(p1 - [1,1], 0.3) & ball(p2 - p3, 0.5))",
        slices=LAYOUT,
        dim=6,
    )
    specs = decompose(f)
    g0 = [-2.0] * len(specs)
    gi = [0.05] * len(specs)
    bar = CompositeBarrier.from_specs(specs, g0, gi, eta, 8.0, 6)
    return TaskGroup("team", ("p1", "p2", "p3"), bar, C, kappa, LAYOUT)


AGENTS = {a: single_integrator(a, 2) for a in LAYOUT}

vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=4)


# min-norm QP ----------------------------------------------------------------


def test_inactive_constraint_gives_zero():
    np.testing.assert_array_equal(min_norm_input([1.0, 2.0], -3.0), [0.0, 0.0])


def test_active_constraint_on_boundary():
    a = np.array([3.0, 4.0])
    u = min_norm_input(a, 10.0)
    assert a @ u == pytest.approx(10.0)
    np.testing.assert_allclose(u, [1.2, 1.6])


def test_zero_normal():
    np.testing.assert_array_equal(min_norm_input([0.0, 0.0], 1e-13, beta_tol=1e-12), [0.0, 0.0])
    with pytest.raises(InfeasibleStep):
        min_norm_input([0.0, 0.0], 1.0)


@settings(max_examples=300, deadline=None)
@given(vec, st.floats(-20, 20), st.integers(0, 2**32 - 1))
def test_min_norm_is_optimal(a, beta, seed):
    a = np.array(a)
    if np.linalg.norm(a) < 1e-6:
        return
    u = min_norm_input(a, beta)
    assert a @ u >= beta - 1e-9 * max(1.0, abs(beta))
    # any other feasible point is at least as long
    rng = np.random.default_rng(seed)
    for _ in range(5):
        v = u + rng.normal(0, 1, len(a))
        if a @ v >= beta:
            assert v @ v >= u @ u - 1e-9


# load sharing ---------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False, allow_subnormal=False), min_size=6, max_size=6))
def test_shares_sum_to_one_exactly(grad):
    g = np.array(grad)
    group = team_group()
    ev = BarrierEval(0.0, g, 0.0, np.ones(1), np.zeros(1), None)
    D = load_share(group, np.zeros(6), 0.0, ev)
    if np.any(g):
        assert math.fsum(D) == 1.0
        assert sum(D) == 1.0
        assert sum(reversed(list(D))) == 1.0
        assert np.all(D >= 0)
    else:
        np.testing.assert_array_equal(D, [1.0, 1.0, 1.0])


def test_shares_proportional_to_gradient_norms():
    group = team_group()
    g = np.array([1.0, -1.0, 0.0, 2.0, 0.0, 0.0])
    ev = BarrierEval(0.0, g, 0.0, np.ones(1), np.zeros(1), None)
    np.testing.assert_allclose(load_share(group, np.zeros(6), 0.0, ev), [0.5, 0.5, 0.0])


# decentralized controller ---------------------------------------------------


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 7.9), st.floats(0, 2), st.floats(0.1, 5))
def test_decentralized_inputs_satisfy_group_condition(seed, t, C, kappa):
    rng = np.random.default_rng(seed)
    group = team_group(C=C, kappa=kappa)
    x = rng.uniform(-2, 2, 6)
    drift = {a: rng.normal(0, 0.3, 2) for a in LAYOUT}
    u, bad, ev, cons = group_inputs(group, AGENTS, x, t, drift)
    assert not bad
    for aid, con in cons.items():
        assert con.a @ u[aid] >= con.beta - 1e-9 * max(1.0, abs(con.beta))
    slack = centralized_check(group, AGENTS, x, t, u, ev, drift)
    assert slack >= -1e-9 * max(1.0, abs(omega(group, x, t, ev)))


def test_constraint_data_single_integrator():
    group = team_group(C=0.0, kappa=1.0)
    x = np.array([0.1, 0.2, 1.0, -0.5, 0.3, 0.9])
    ev = group.barrier.evaluate(x, 1.0)
    D = load_share(group, x, 1.0, ev)
    con = agent_constraint(AGENTS["p2"], group, x, 1.0, ev, D)
    np.testing.assert_allclose(con.a, ev.grad[2:4])
    assert con.beta == pytest.approx(-D[1] * (ev.dt + ev.value))


def test_linear_agent_and_fallback():
    ag = linear_agent("q", [[0.0, 1.0], [0.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(ag.f([1.0, 2.0], 0.0), [2.0, 0.0])
    f = parse_formula("G[0,5](ball(x - [1,0], 1))", dim=2)
    bar = CompositeBarrier.from_specs(decompose(f), [-1.0], [0.2], 2.0, 5.0, 2)
    group = TaskGroup("g", ("q",), bar, 0.2, 1.0, {"q": (0, 2)})
    u = feasible_fallback(ag, group, np.array([0.5, 0.5]), 1.0)
    assert u.shape == (2,)
    with pytest.raises(ValueError):
        linear_agent("bad", [[0.0]], [[0.0]])
    with pytest.raises(ValueError):
        linear_agent("bad", [[0.0, 0.0], [0.0, 0.0]], [[1.0], [0.0]])


def test_task_group_validation():
    bar = team_group().barrier
    with pytest.raises(ValueError):
        TaskGroup("g", ("p1", "p2", "p3"), bar, 0.0, 1.0, {"p1": (0, 2), "p2": (1, 4), "p3": (4, 6)})
    with pytest.raises(ValueError):
        TaskGroup("g", ("p1", "p2"), bar, 0.0, 1.0, {"p1": (0, 2), "p2": (2, 4)})
    with pytest.raises(ValueError):
        TaskGroup("g", ("p1", "p2", "p3"), bar, -1.0, 1.0, LAYOUT)
