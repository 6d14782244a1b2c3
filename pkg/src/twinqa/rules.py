"""Versioned, declarative specification requirements and their evaluation:
inspection completeness and material compliance per element.

Rule documents are plain JSON so revisions can travel through the event log
(SpecRevision events) and stay traceable to the version that produced every
evaluation result.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Mapping, Sequence

from .domain import Element, ElementKind, EventType, QaEvent, TwinQaError
from .maturity import StrengthPrediction


class ParseError(TwinQaError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"ruleset parse error at {path}: {reason}")
        self.path = path
        self.reason = reason


class InvalidThreshold(TwinQaError):
    def __init__(self, field: str, value: object):
        super().__init__(f"invalid threshold {field}={value!r}")
        self.field = field


class InspectionPhase(str, Enum):
    PRE_PLACEMENT = "pre-placement"
    PLACEMENT = "placement"
    POST_PLACEMENT = "post-placement"


class MaterialStatus(str, Enum):
    COMPLIANT_MEASURED = "CompliantMeasured"
    TRENDING_COMPLIANT = "TrendingCompliant"
    TRENDING_DEFICIENT = "TrendingDeficient"
    DEFICIENT_MEASURED = "DeficientMeasured"
    INSUFFICIENT_DATA = "InsufficientData"


@dataclass(frozen=True)
class InspectionRequirement:
    code: str
    phase: InspectionPhase
    hold_point: bool


@dataclass(frozen=True)
class Acceptance:
    property: str  # currently always "compressive_strength"
    limit_mpa: float
    age_days: float


@dataclass(frozen=True)
class KindRules:
    required_inspections: tuple[InspectionRequirement, ...]
    acceptance: Acceptance
    readiness_threshold: float  # fraction of design strength, (0, 1]
    testing_frequency: int  # specimens per placement


@dataclass(frozen=True)
class RuleSet:
    version: str
    kinds: Mapping[str, KindRules]

    def for_kind(self, kind: ElementKind) -> KindRules | None:
        return self.kinds.get(kind.value)


@dataclass(frozen=True)
class CompletenessResult:
    satisfied: bool
    missing: tuple[tuple[str, str], ...]  # (code, phase)
    failed: tuple[str, ...]
    out_of_sequence: tuple[str, ...]
    ruleset_version: str

    def to_json(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "missing": [{"code": c, "phase": p} for c, p in self.missing],
            "failed": list(self.failed),
            "out_of_sequence": list(self.out_of_sequence),
            "ruleset_version": self.ruleset_version,
        }


@dataclass(frozen=True)
class MeasuredStrength:
    strength_mpa: float
    age_days: float
    cured: str  # "lab" | "field"


@dataclass(frozen=True)
class MaterialResult:
    status: MaterialStatus
    prediction: StrengthPrediction | None
    measured: tuple[MeasuredStrength, ...]
    ruleset_version: str

    def to_json(self) -> dict:
        doc: dict = {
            "status": self.status.value,
            "measured": [
                {"strength_mpa": m.strength_mpa, "age_days": m.age_days, "cured": m.cured}
                for m in self.measured
            ],
            "ruleset_version": self.ruleset_version,
        }
        if self.prediction is not None:
            doc["prediction"] = {
                "mean_mpa": self.prediction.mean_mpa,
                "lower_mpa": self.prediction.lower_mpa,
                "upper_mpa": self.prediction.upper_mpa,
                "maturity_degc_h": self.prediction.maturity_degc_h,
                "basis": self.prediction.basis.value,
            }
        else:
            doc["prediction"] = None
        return doc


_KNOWN_KINDS = {k.value for k in ElementKind}
_PHASES = {p.value for p in InspectionPhase}


def _require(doc: Mapping, key: str, path: str) -> object:
    if not isinstance(doc, Mapping):
        raise ParseError(path, f"expected object, got {type(doc).__name__}")
    if key not in doc:
        raise ParseError(f"{path}.{key}", "missing")
    return doc[key]


def parse_ruleset(document: Mapping) -> RuleSet:
    """Parse and validate a ruleset document (see module docstring for shape)."""
    if not isinstance(document, Mapping) or not document:
        raise ParseError("$", "empty or non-object document")
    version = _require(document, "version", "$")
    if not isinstance(version, str) or not version:
        raise ParseError("$.version", "must be a non-empty string")
    rules_doc = _require(document, "rules", "$")
    if not isinstance(rules_doc, Mapping):
        raise ParseError("$.rules", "must be an object")

    kinds: dict[str, KindRules] = {}
    for kind_name, kind_doc in rules_doc.items():
        path = f"$.rules.{kind_name}"
        if kind_name not in _KNOWN_KINDS:
            raise ParseError(path, f"unknown element kind {kind_name!r}")

        req_docs = _require(kind_doc, "required_inspections", path)
        if not isinstance(req_docs, Sequence) or isinstance(req_docs, str):
            raise ParseError(f"{path}.required_inspections", "must be an array")
        required = []
        for i, req in enumerate(req_docs):
            rpath = f"{path}.required_inspections[{i}]"
            code = _require(req, "code", rpath)
            phase = _require(req, "phase", rpath)
            hold_point = _require(req, "hold_point", rpath)
            if not isinstance(code, str) or not code:
                raise ParseError(f"{rpath}.code", "must be a non-empty string")
            if phase not in _PHASES:
                raise ParseError(f"{rpath}.phase", f"unknown phase {phase!r}")
            if not isinstance(hold_point, bool):
                raise ParseError(f"{rpath}.hold_point", "must be a boolean")
            required.append(InspectionRequirement(code, InspectionPhase(phase), hold_point))

        acc_doc = _require(kind_doc, "acceptance", path)
        prop = _require(acc_doc, "property", f"{path}.acceptance")
        if prop != "compressive_strength":
            raise ParseError(f"{path}.acceptance.property", f"unsupported property {prop!r}")
        limit = _require(acc_doc, "limit_mpa", f"{path}.acceptance")
        age = _require(acc_doc, "age_days", f"{path}.acceptance")
        if not isinstance(limit, (int, float)) or limit <= 0:
            raise InvalidThreshold("limit_mpa", limit)
        if not isinstance(age, (int, float)) or age <= 0:
            raise InvalidThreshold("age_days", age)

        threshold = _require(kind_doc, "readiness_threshold", path)
        if not isinstance(threshold, (int, float)) or not (0.0 < threshold <= 1.0):
            raise InvalidThreshold("readiness_threshold", threshold)
        freq = _require(kind_doc, "testing_frequency", path)
        if not isinstance(freq, int) or isinstance(freq, bool) or freq < 1:
            raise InvalidThreshold("testing_frequency", freq)

        kinds[kind_name] = KindRules(
            required_inspections=tuple(required),
            acceptance=Acceptance("compressive_strength", float(limit), float(age)),
            readiness_threshold=float(threshold),
            testing_frequency=freq,
        )

    return RuleSet(version=version, kinds=kinds)


def ruleset_to_json(ruleset: RuleSet) -> dict:
    """Inverse of parse_ruleset, producing the on-disk document shape."""
    return {
        "version": ruleset.version,
        "rules": {
            kind: {
                "required_inspections": [
                    {"code": r.code, "phase": r.phase.value, "hold_point": r.hold_point}
                    for r in kr.required_inspections
                ],
                "acceptance": {
                    "property": kr.acceptance.property,
                    "limit_mpa": kr.acceptance.limit_mpa,
                    "age_days": kr.acceptance.age_days,
                },
                "readiness_threshold": kr.readiness_threshold,
                "testing_frequency": kr.testing_frequency,
            }
            for kind, kr in ruleset.kinds.items()
        },
    }


def _latest_by_code_phase(
    inspections: Sequence[QaEvent],
) -> dict[tuple[str, str], QaEvent]:
    """Latest inspection per (code, phase); a later record supersedes earlier
    ones with the same code, so re-inspections can clear an earlier fail."""
    latest: dict[tuple[str, str], QaEvent] = {}
    for event in inspections:
        code = str(event.payload["inspection_code"])
        phase = str(event.payload["phase"])
        key = (code, phase)
        cur = latest.get(key)
        if cur is None or (event.occurred_at, event.event_id) > (cur.occurred_at, cur.event_id):
            latest[key] = event
    return latest


def evaluate_completeness(
    element: Element,
    rules: RuleSet,
    inspections: Sequence[QaEvent],
    placement: QaEvent | None,
) -> CompletenessResult:
    """Missing / failed / out-of-sequence inspections for one element.

    out_of_sequence lists pre-placement inspections recorded with occurred_at
    after placement start: a hold-point violation is recorded, not rejected,
    since the twin reflects field reality.
    """
    kind_rules = rules.for_kind(element.kind)
    required = kind_rules.required_inspections if kind_rules else ()

    latest = _latest_by_code_phase(
        [e for e in inspections if e.event_type == EventType.INSPECTION_COMPLETED]
    )

    missing = []
    for req in required:
        observed = latest.get((req.code, req.phase.value))
        if observed is None or observed.payload["result"] != "pass":
            missing.append((req.code, req.phase.value))

    failed = sorted(
        code for (code, _phase), event in latest.items() if event.payload["result"] == "fail"
    )

    out_of_sequence: list[str] = []
    if placement is not None:
        started_raw = placement.payload.get("started_at")
        placement_start = started_raw if isinstance(started_raw, datetime) else placement.occurred_at
        out_of_sequence = sorted(
            code
            for (code, phase), event in latest.items()
            if phase == InspectionPhase.PRE_PLACEMENT.value
            and event.occurred_at > placement_start
        )

    # Missing entries the fail list already explains are still missing: a
    # failed required inspection is both failed and not passed.
    satisfied = not missing and not failed and not out_of_sequence
    return CompletenessResult(
        satisfied=satisfied,
        missing=tuple(missing),
        failed=tuple(failed),
        out_of_sequence=tuple(out_of_sequence),
        ruleset_version=rules.version,
    )


def evaluate_material(
    element: Element,
    rules: RuleSet,
    prediction: StrengthPrediction | None,
    measured: Sequence[MeasuredStrength],
) -> MaterialResult:
    """Material compliance with measured-supersedes-predicted precedence.

    Measured results at or past the acceptance age decide compliance by the
    specimen mean; otherwise the prediction's lower/upper confidence bounds
    are compared against the readiness limit (readiness_threshold times the
    element's design strength).
    """
    kind_rules = rules.for_kind(element.kind)
    measured = tuple(measured)
    if kind_rules is None:
        return MaterialResult(MaterialStatus.INSUFFICIENT_DATA, prediction, measured, rules.version)

    qualifying = [m for m in measured if m.age_days >= kind_rules.acceptance.age_days]
    if qualifying:
        mean = sum(m.strength_mpa for m in qualifying) / len(qualifying)
        status = (
            MaterialStatus.COMPLIANT_MEASURED
            if mean >= kind_rules.acceptance.limit_mpa
            else MaterialStatus.DEFICIENT_MEASURED
        )
        return MaterialResult(status, prediction, measured, rules.version)

    if prediction is not None and element.design_strength_mpa is not None:
        readiness_limit = kind_rules.readiness_threshold * element.design_strength_mpa
        if prediction.lower_mpa >= readiness_limit:
            status = MaterialStatus.TRENDING_COMPLIANT
        elif prediction.upper_mpa < readiness_limit:
            status = MaterialStatus.TRENDING_DEFICIENT
        else:
            status = MaterialStatus.INSUFFICIENT_DATA
        return MaterialResult(status, prediction, measured, rules.version)

    return MaterialResult(MaterialStatus.INSUFFICIENT_DATA, prediction, measured, rules.version)
