"""Scenario files: loading, validation, synthesis per group, parameter files."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .barrier import decompose, switching_times
from .control import AgentModel, TaskGroup, linear_agent, single_integrator
from .stl import Formula, parse_formula
from .synthesis import (
    STRICT_MARGIN,
    SynthesisBounds,
    SynthesisProblem,
    SynthesisResult,
    result_from_params,
    select_kappa,
    synthesize,
)

PARAMS_VERSION = 1


class ScenarioError(ValueError):
    """Scenario file is malformed or inconsistent."""


class ParameterMismatch(ValueError):
    """Parameter file was produced for a different scenario."""


def _schema() -> dict:
    text = resources.files("stlcbf").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


@dataclass
class GroupSpec:
    name: str
    agent_ids: tuple[str, ...]
    formula_text: str
    formula: Formula
    layout: dict[str, tuple[int, int]]
    C: float = 0.0
    chi: float = 0.0
    kappa: float | str = 1.0
    epsilon_margin: float | None = None
    synthesis: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return max(hi for _, hi in self.layout.values())


@dataclass
class Scenario:
    name: str
    agents: dict[str, AgentModel]
    x0: dict[str, np.ndarray]
    groups: list[GroupSpec]
    coupling: dict
    disturbance: dict
    sim_dt: float
    control_rate: float
    horizon: float
    raw: dict

    def group_state(self, group: GroupSpec, states: dict[str, np.ndarray] | None = None) -> np.ndarray:
        states = self.x0 if states is None else states
        return np.concatenate([states[a] for a in group.agent_ids])

    def last_switch(self) -> float:
        return max(switching_times(decompose(g.formula))[-1] for g in self.groups)

    def check_horizon(self):
        last = self.last_switch()
        if self.horizon < last - 1e-12:
            raise ScenarioError(f"horizon {self.horizon:g} s is shorter than the last switch time {last:g} s")


def _agent(d: dict) -> AgentModel:
    dyn = d.get("dynamics", {"type": "single_integrator"})
    if dyn["type"] == "single_integrator":
        return single_integrator(d["id"], d["dim"])
    if "A" not in dyn or "B" not in dyn:
        raise ScenarioError(f"agent {d['id']}: linear dynamics need A and B")
    try:
        agent = linear_agent(d["id"], dyn["A"], dyn["B"])
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    if agent.state_dim != d["dim"]:
        raise ScenarioError(f"agent {d['id']}: A is {agent.state_dim}x{agent.state_dim}, dim is {d['dim']}")
    return agent


def scenario_from_dict(raw: dict) -> Scenario:
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"schema violation at {where}: {exc.message}") from exc
    agents: dict[str, AgentModel] = {}
    x0: dict[str, np.ndarray] = {}
    for d in raw["agents"]:
        if d["id"] in agents:
            raise ScenarioError(f"duplicate agent id {d['id']!r}")
        if len(d["x0"]) != d["dim"]:
            raise ScenarioError(f"agent {d['id']}: x0 has {len(d['x0'])} entries, dim is {d['dim']}")
        agents[d["id"]] = _agent(d)
        x0[d["id"]] = np.array(d["x0"], dtype=float)

    top_syn = raw.get("synthesis", {})
    groups, seen = [], set()
    for g in raw["groups"]:
        ids = tuple(g["agents"])
        for a in ids:
            if a not in agents:
                raise ScenarioError(f"group {g['name']}: unknown agent {a!r}")
            if a in seen:
                raise ScenarioError(f"agent {a!r} belongs to more than one group")
            seen.add(a)
        layout, pos = {}, 0
        for a in ids:
            layout[a] = (pos, pos + agents[a].state_dim)
            pos += agents[a].state_dim
        slices = dict(layout)
        for name, (lo, hi) in g.get("slices", {}).items():
            if name in slices:
                raise ScenarioError(f"group {g['name']}: slice {name!r} shadows an agent id")
            slices[name] = (lo, hi)
        try:
            formula = parse_formula(g["formula"], slices=slices, dim=pos)
        except ValueError as exc:
            raise ScenarioError(f"group {g['name']}: {exc}") from exc
        syn = {**top_syn, **g.get("synthesis", {})}
        kappa = g.get("kappa", 1.0)
        eps = g.get("epsilon_margin")
        chi = float(g.get("chi", 0.0))
        if kappa == "auto" and (chi <= 0 or eps is None):
            raise ScenarioError(f"group {g['name']}: kappa 'auto' needs chi > 0 and epsilon_margin")
        groups.append(GroupSpec(g["name"], ids, g["formula"], formula, layout, float(g.get("C", 0.0)), chi, kappa, eps, syn))
    if len({g.name for g in groups}) != len(groups):
        raise ScenarioError("duplicate group name")

    timing = raw["timing"]
    sim_dt = float(timing.get("sim_dt", 0.002))
    rate = float(timing.get("control_rate", 50.0))
    if sim_dt > 1.0 / rate + 1e-12:
        raise ScenarioError("sim_dt must not exceed the control period")
    coupling = {"type": "none", **raw.get("coupling", {})}
    if coupling["type"] == "repulsive":
        coupling.setdefault("radius", 0.65)
        coupling.setdefault("gain", 0.1)
        coupling.setdefault("known_to_controller", True)
    disturbance = {"bound": 0.0, "seed": 0, **raw.get("disturbance", {})}
    for g in groups:
        if disturbance["bound"] > g.C:
            raise ScenarioError(f"disturbance bound {disturbance['bound']} exceeds C = {g.C} of group {g.name}")
    return Scenario(
        raw.get("name", "scenario"), agents, x0, groups, coupling, disturbance, sim_dt, rate,
        float(timing["horizon"]), copy.deepcopy(raw),
    )


def load_scenario(path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(raw)


def scenario_hash(scenario: Scenario) -> str:
    """Digest of everything the synthesized parameters depend on."""
    raw = scenario.raw
    keep = {
        "agents": raw["agents"],
        "groups": [
            {k: g.get(k) for k in ("name", "agents", "formula", "slices", "chi", "epsilon_margin", "synthesis")}
            for g in raw["groups"]
        ],
        "synthesis": raw.get("synthesis"),
    }
    blob = json.dumps(keep, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def synthesis_problem(scenario: Scenario, group: GroupSpec, feasibility_r: float | None = None) -> SynthesisProblem:
    syn = group.synthesis
    states = dict(scenario.x0)
    for aid, val in syn.get("initial_state", {}).items():
        if aid not in states or len(val) != len(states[aid]):
            raise ScenarioError(f"group {group.name}: bad initial_state override for {aid!r}")
        states[aid] = np.array(val, dtype=float)
    mode = syn.get("mode", "maximize_r")
    r = syn.get("r")
    if feasibility_r is not None:
        mode, r = "feasibility", feasibility_r
    return SynthesisProblem(
        decompose(group.formula, group.dim),
        scenario.group_state(group, states),
        chi=group.chi,
        mode="feasibility" if mode == "fixed" else mode,
        r=r if mode != "fixed" else (r or 1.0),
        bounds=SynthesisBounds.from_dict(syn.get("bounds")),
        restarts=int(syn.get("restarts", 32)),
        seed=int(syn.get("seed", 0)),
        epsilon_margin=group.epsilon_margin,
        max_evals=int(syn.get("max_evals", 3000)),
    )


def synthesize_group(scenario: Scenario, group: GroupSpec, feasibility_r: float | None = None) -> SynthesisResult:
    problem = synthesis_problem(scenario, group, feasibility_r)
    fixed = group.synthesis.get("fixed")
    if group.synthesis.get("mode") == "fixed" and feasibility_r is None:
        if fixed is None:
            raise ScenarioError(f"group {group.name}: mode 'fixed' needs a 'fixed' parameter block")
        P = len(problem.term_specs)
        if len(fixed["gamma0"]) != P or len(fixed["gamma_inf"]) != P:
            raise ScenarioError(f"group {group.name}: fixed gammas need {P} entries")
        problem.validate()
        r = fixed.get("r", min(fixed["gamma_inf"]) - 2 * STRICT_MARGIN)
        D = fixed.get("D", problem.D_bounds()[1])
        res = result_from_params(problem, fixed["eta"], r, D, fixed["gamma0"], fixed["gamma_inf"])
        if res.feasible and problem.chi > 0 and problem.epsilon_margin:
            res.epsilon_margin = problem.epsilon_margin
            res.kappa = select_kappa(res, problem.epsilon_margin)
        return res
    return synthesize(problem)


def save_params(path, scenario: Scenario, results: dict[str, SynthesisResult]):
    doc = {
        "version": PARAMS_VERSION,
        "scenario": scenario.name,
        "scenario_hash": scenario_hash(scenario),
        "groups": {name: res.to_dict() for name, res in results.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=True))


def load_params(path, scenario: Scenario) -> dict[str, SynthesisResult]:
    doc = json.loads(Path(path).read_text())
    if doc.get("scenario_hash") != scenario_hash(scenario):
        raise ParameterMismatch("parameter file was synthesized for a different scenario")
    missing = {g.name for g in scenario.groups} - set(doc["groups"])
    if missing:
        raise ParameterMismatch(f"parameter file lacks groups {sorted(missing)}")
    return {name: SynthesisResult.from_dict(d) for name, d in doc["groups"].items()}


def resolve_kappa(group: GroupSpec, result: SynthesisResult) -> float:
    if group.kappa != "auto":
        return float(group.kappa)
    if result.kappa is not None:
        return float(result.kappa)
    return select_kappa(result, group.epsilon_margin, group.chi)


def build_task_groups(scenario: Scenario, results: dict[str, SynthesisResult]) -> list[TaskGroup]:
    return [
        TaskGroup(g.name, g.agent_ids, results[g.name].barrier, g.C, resolve_kappa(g, results[g.name]), g.layout)
        for g in scenario.groups
    ]


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    return Path(str(resources.files("stlcbf").joinpath(f"scenarios/{name}.json")))
