"""Decentralized control of multi-agent systems under STL tasks with time-varying barrier functions."""

from .barrier import CompositeBarrier, GammaFn, TermSpec, decompose, logsumexp_min, switching_times
from .control import AgentModel, TaskGroup, group_inputs, linear_agent, load_share, min_norm_input, single_integrator
from .scenario import Scenario, ScenarioError, load_scenario
from .stl import Signal, eval_robust, format_formula, parse_formula
from .synthesis import SynthesisProblem, SynthesisResult, inner_max, select_kappa, synthesize

__version__ = "0.1.0"

__all__ = [
    "AgentModel",
    "CompositeBarrier",
    "GammaFn",
    "Scenario",
    "ScenarioError",
    "Signal",
    "SynthesisProblem",
    "SynthesisResult",
    "TaskGroup",
    "TermSpec",
    "decompose",
    "eval_robust",
    "format_formula",
    "group_inputs",
    "inner_max",
    "linear_agent",
    "load_scenario",
    "load_share",
    "logsumexp_min",
    "min_norm_input",
    "parse_formula",
    "select_kappa",
    "single_integrator",
    "switching_times",
    "synthesize",
]
