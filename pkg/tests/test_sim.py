import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlcbf.io import read_trajectory, write_trajectory
from stlcbf.scenario import (
    ParameterMismatch,
    ScenarioError,
    build_task_groups,
    bundled_scenario,
    load_params,
    load_scenario,
    save_params,
    scenario_from_dict,
    scenario_hash,
    synthesize_group,
)
from stlcbf.sim import coupling_force, formula_robustness, run, run_scenario, summarize

BALL = json.loads(bundled_scenario("single_ball").read_text())


def ball_variant(**changes) -> dict:
    raw = copy.deepcopy(BALL)
    for path, value in changes.items():
        node = raw
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[int(k)] if k.isdigit() else node[k]
        node[keys[-1]] = value
    return raw


def ball_setup(raw=None):
    sc = scenario_from_dict(raw or BALL)
    res = {g.name: synthesize_group(sc, g) for g in sc.groups}
    return sc, res, build_task_groups(sc, res)


# coupling -------------------------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_coupling_is_antisymmetric(n, seed):
    P = np.random.default_rng(seed).uniform(-1, 1, (n, 2))
    F = coupling_force(P, 0.65, 0.1)
    np.testing.assert_allclose(F.sum(axis=0), 0.0, atol=1e-9 * max(1.0, np.abs(F).max()))


def test_coupling_range_and_direction():
    F = coupling_force([[0.0, 0.0], [0.5, 0.0]], 0.65, 0.1)
    assert F[0, 0] < 0 < F[1, 0]
    np.testing.assert_array_equal(coupling_force([[0.0, 0.0], [0.7, 0.0]], 0.65, 0.1), 0.0)
    G = coupling_force([[1.0, 1.0], [1.0, 1.0]], 0.65, 0.1)
    assert G[0, 0] > 0 and G[1, 0] < 0
    with pytest.raises(ValueError):
        coupling_force([[0.0, 0.0]], 0.0, 0.1)


# simulation -----------------------------------------------------------------


def test_single_ball_run_satisfies_task():
    sc, res, groups = ball_setup()
    traj = run_scenario(sc, groups)
    assert traj.aborted is None
    assert len(traj.times) == 5001
    assert formula_robustness(traj, "G[7.5,10](ball([0,0], 5))") >= 0.249
    s = summarize(traj, res, sc)
    assert s["rho_at_0"] >= 0.249
    assert s["infeasible_steps"] == 0
    assert s["min_slack"] >= -1e-9


def test_zero_order_hold():
    sc, _, groups = ball_setup()
    traj = run(sc.agents, sc.x0, groups, 1.0, 0.002, 50.0)
    U = traj.inputs["x1"]
    ticks = np.flatnonzero(traj.tick)
    assert np.all(np.diff(ticks) == 10)
    for k0, k1 in zip(ticks[:-1], ticks[1:]):
        assert np.all(U[k0:k1] == U[k0])


def test_disturbance_bounded_and_held():
    raw = ball_variant(groups__0__C=0.3, disturbance={"bound": 0.3, "seed": 5})
    sc, _, groups = ball_setup(raw)
    traj = run_scenario(sc, groups, log_disturbance=True)
    W = traj.disturbances["x1"]
    assert np.abs(W).max() <= 0.3
    assert np.abs(W).max() > 0.1
    ticks = np.flatnonzero(traj.tick)
    assert np.all(W[ticks[0]:ticks[1]] == W[ticks[0]])


def test_seeded_runs_are_reproducible():
    raw = ball_variant(groups__0__C=0.3, disturbance={"bound": 0.3, "seed": 5})
    sc, _, groups = ball_setup(raw)
    a = run_scenario(sc, groups)
    b = run_scenario(sc, groups)
    c = run_scenario(sc, groups, seed=6)
    np.testing.assert_array_equal(a.states["x1"], b.states["x1"])
    assert not np.array_equal(a.states["x1"], c.states["x1"])


def test_abort_outside_state_box():
    sc, _, groups = ball_setup()
    far = {"x1": np.array([40.0, 0.0])}
    traj = run_scenario(sc, groups, x0=far)
    assert traj.aborted is not None
    assert traj.events[-1]["kind"] == "abort"
    assert len(traj.times) == 1


def test_trajectory_csv_round_trip(tmp_path):
    sc, _, groups = ball_setup()
    traj = run(sc.agents, sc.x0, groups, 0.5, 0.002, 50.0)
    path = tmp_path / "t.csv"
    write_trajectory(path, traj)
    back = read_trajectory(path)
    assert back.agent_ids == ["x1"] and back.group_names == ["task"]
    np.testing.assert_array_equal(back.states["x1"], traj.states["x1"])
    np.testing.assert_array_equal(back.barrier["task"], traj.barrier["task"])
    header = path.read_text().splitlines()[0]
    assert header == "t,state_x1_0,state_x1_1,input_x1_0,input_x1_1,b_task,slack_task"


def test_barrier_log_matches_direct_evaluation():
    sc, _, groups = ball_setup()
    traj = run(sc.agents, sc.x0, groups, 2.0, 0.002, 50.0)
    bar = groups[0].barrier
    for k in (0, 137, 999):
        assert traj.barrier["task"][k] == pytest.approx(bar.value(traj.states["x1"][k], traj.times[k]), abs=1e-12)


# scenario files -------------------------------------------------------------


def test_bundled_scenarios_load():
    for name in ("single_ball", "three_robots", "three_robots_offset"):
        sc = load_scenario(bundled_scenario(name))
        sc.check_horizon()
    team = load_scenario(bundled_scenario("three_robots"))
    assert team.groups[0].layout == {"p1": (0, 2), "p2": (2, 4), "p3": (4, 6)}
    assert team.coupling["radius"] == 0.65


@pytest.mark.parametrize(
    "changes, message",
    [
        ({"timing": {"sim_dt": 0.1, "control_rate": 50, "horizon": 10}}, "control period"),
        ({"disturbance": {"bound": 0.5}}, "exceeds C"),
        ({"groups__0__kappa": "auto"}, "kappa 'auto'"),
        ({"groups__0__agents": ["nobody"]}, "unknown agent"),
        ({"groups__0__formula": "G[0,1](ball(q, 1))"}, "unknown state slice"),
        ({"agents__0__x0": [1, 2, 3]}, "x0 has 3 entries"),
        ({"extra": 1}, "schema violation"),
    ],
)
def test_invalid_scenarios(changes, message):
    with pytest.raises(ScenarioError, match=message):
        scenario_from_dict(ball_variant(**changes))


def test_duplicate_agent_rejected():
    raw = ball_variant()
    raw["agents"].append(copy.deepcopy(raw["agents"][0]))
    with pytest.raises(ScenarioError, match="duplicate agent"):
        scenario_from_dict(raw)


def test_short_horizon_rejected():
    sc = scenario_from_dict(ball_variant(timing={"horizon": 9.0}))
    with pytest.raises(ScenarioError, match="shorter than the last switch"):
        sc.check_horizon()


def test_params_hash(tmp_path):
    sc, res, _ = ball_setup()
    save_params(tmp_path / "p.json", sc, res)
    back = load_params(tmp_path / "p.json", sc)
    assert back["task"].barrier == res["task"].barrier
    other = scenario_from_dict(ball_variant(groups__0__formula="G[7.5,10](ball([0,0], 4))"))
    assert scenario_hash(other) != scenario_hash(sc)
    with pytest.raises(ParameterMismatch):
        load_params(tmp_path / "p.json", other)
