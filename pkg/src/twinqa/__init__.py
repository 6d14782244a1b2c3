"""twinqa: element-centric, event-sourced digital twin for construction-phase QA."""

__version__ = "0.1.0"

from .domain import (
    Element,
    ElementGraph,
    ElementKind,
    EventType,
    QaEvent,
    Quantity,
    SpatialRef,
    TemperatureHistory,
    TwinQaError,
    Unit,
    build_element_graph,
)
from .engine import QaState, TwinState, apply_event, evaluate_qa, replay, state_hash
from .maturity import (
    MaturityConfig,
    StrengthMaturityModel,
    calibrate,
    equivalent_age,
    forecast_readiness,
    nurse_saul_maturity,
    predict_strength,
)
from .rules import RuleSet, parse_ruleset

__all__ = [
    "Element",
    "ElementGraph",
    "ElementKind",
    "EventType",
    "MaturityConfig",
    "QaEvent",
    "QaState",
    "Quantity",
    "RuleSet",
    "SpatialRef",
    "StrengthMaturityModel",
    "TemperatureHistory",
    "TwinQaError",
    "TwinState",
    "Unit",
    "apply_event",
    "build_element_graph",
    "calibrate",
    "equivalent_age",
    "evaluate_qa",
    "forecast_readiness",
    "nurse_saul_maturity",
    "parse_ruleset",
    "predict_strength",
    "replay",
    "state_hash",
]
