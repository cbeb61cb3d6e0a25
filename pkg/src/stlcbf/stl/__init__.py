from .formula import (
    CENTER_RADIUS,
    And,
    Always,
    BoolFormula,
    Eventually,
    Formula,
    FragmentError,
    Interval,
    IntervalError,
    Predicate,
    Until,
    conjoin,
    horizon,
    predicates,
    state_dim,
    temporal_operators,
)
from .monitor import HorizonError, Signal, eval_boolean, eval_robust, robust_per_operator
from .parser import FormulaSyntaxError, format_formula, format_predicate, parse_formula

__all__ = [
    "CENTER_RADIUS",
    "And",
    "Always",
    "BoolFormula",
    "Eventually",
    "Formula",
    "FormulaSyntaxError",
    "FragmentError",
    "HorizonError",
    "Interval",
    "IntervalError",
    "Predicate",
    "Signal",
    "Until",
    "conjoin",
    "eval_boolean",
    "eval_robust",
    "format_formula",
    "format_predicate",
    "horizon",
    "parse_formula",
    "predicates",
    "robust_per_operator",
    "state_dim",
    "temporal_operators",
]
