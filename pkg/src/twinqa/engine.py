"""Element-centric twin core: event-sourced state, the QA state machine,
stage gates over the dependency graph, human decisions, derived warnings,
evidence bundles, and the append-only audit trail.

State is a pure function of (graph, ruleset, ordered event log): applying the
same aligned log always reproduces a bit-identical state fingerprint. All
state values are immutable; apply_event returns a new state sharing structure
with the old one. A single logical writer applies events in one total order
per twin instance; readers may hold snapshots concurrently.

State machine (automatic transitions only between Pending and Provisional;
Released and NonConformance are entered exclusively through human decisions):

    Pending  <-> Provisional        automatic, from evidence
    Pending/Provisional -> Released human `release` (gate must be open; from
                                    Pending only with override=true recorded
                                    verbatim in the rationale)
    any except NC -> Hold           human `hold`, or forced automatically when
                                    a placement is recorded through a closed
                                    gate
    Hold -> Pending                 human `lift_hold` (then re-evaluated)
    any -> NonConformance           human `open_ncr`
    NonConformance -> Hold          human `close_ncr`

Gate safety is enforced at release time: no element ever *enters* Released
while a direct predecessor is not Released. Late failing evidence may later
demote a predecessor (the non-conformance path), which is exactly the
documented conflict the LateEvidenceConflict warning surfaces.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .canon import content_hash, format_utc
from .domain import (
    Element,
    ElementGraph,
    ElementId,
    EventType,
    QaEvent,
    TwinQaError,
    UnknownElement,
)
from .ingest import event_to_json
from .learning import (
    MeasuredResult,
    RecalibrationPolicy,
    ResidualLog,
    record_residual,
    recalibrate,
)
from .maturity import (
    MaturityConfig,
    StrengthMaturityModel,
    StrengthPrediction,
    TemperatureHistory,
    calibrate,
    forecast_readiness,
    hyperbolic_strength,
    nurse_saul_maturity,
    predict_strength,
    truncate_history,
)
from .rules import (
    CompletenessResult,
    MaterialResult,
    MaterialStatus,
    MeasuredStrength,
    RuleSet,
    evaluate_completeness,
    evaluate_material,
    parse_ruleset,
)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

# Relative deviation beyond which a measured result is treated as a
# batch-specific anomaly rather than a mix-wide validation anchor.
ANOMALY_REL_DEV = 0.25


class QaState(str, Enum):
    PENDING = "Pending"
    PROVISIONAL = "Provisional"
    RELEASED = "Released"
    HOLD = "Hold"
    NON_CONFORMANCE = "NonConformance"


class DecisionBasis(str, Enum):
    AUTOMATIC = "Automatic"
    HUMAN_DECISION = "HumanDecision"


class Role(str, Enum):
    INSPECTOR = "Inspector"
    ENGINEER = "Engineer"
    QA_MANAGER = "QaManager"
    SYSTEM = "System"


class WarningKind(str, Enum):
    STRENGTH_LAG = "StrengthLag"
    MISSING_INSPECTION = "MissingInspection"
    GATE_VIOLATION = "GateViolation"
    LATE_EVIDENCE_CONFLICT = "LateEvidenceConflict"
    PARTIAL_DATA = "PartialData"


class DecisionRejected(TwinQaError):
    """A human decision was refused; .state carries the twin state with the
    rejected attempt appended to the audit trail."""

    state: "TwinState"


class UnauthorizedRole(DecisionRejected):
    def __init__(self, role: str, action: str):
        super().__init__(f"role {role!r} is not authorized for action {action!r}")
        self.role = role
        self.action = action


class IllegalTransition(DecisionRejected):
    def __init__(self, from_state: "QaState", action: str):
        super().__init__(f"action {action!r} is illegal from state {from_state.value}")
        self.from_state = from_state
        self.action = action


class GateBlocked(DecisionRejected):
    def __init__(self, predecessors: Sequence[ElementId]):
        super().__init__(f"gate blocked by predecessors not Released: {sorted(predecessors)}")
        self.predecessors = sorted(predecessors)


@dataclass(frozen=True)
class QaStateRecord:
    element: ElementId
    state: QaState
    since: datetime
    basis: DecisionBasis
    rationale: str
    ruleset_version: str

    def to_json(self) -> dict:
        return {
            "element": self.element,
            "state": self.state.value,
            "since": format_utc(self.since),
            "basis": self.basis.value,
            "rationale": self.rationale,
            "ruleset_version": self.ruleset_version,
        }


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    at: datetime
    actor: str
    role: str
    element: ElementId
    from_state: QaState
    to_state: QaState
    rationale: str
    evidence_refs: tuple[str, ...]
    ruleset_version: str
    outcome: str = "accepted"  # "accepted" | "rejected"

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "at": format_utc(self.at),
            "actor": self.actor,
            "role": self.role,
            "element": self.element,
            "from": self.from_state.value,
            "to": self.to_state.value,
            "rationale": self.rationale,
            "evidence_refs": list(self.evidence_refs),
            "ruleset_version": self.ruleset_version,
            "outcome": self.outcome,
        }


@dataclass(frozen=True)
class Warning:
    kind: WarningKind
    element: ElementId
    detail: str
    raised_at: datetime

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "element": self.element,
            "detail": self.detail,
            "raised_at": format_utc(self.raised_at),
        }


@dataclass(frozen=True)
class ElementRecord:
    """Per-element stores: events by type plus running maturity bookkeeping."""

    element: Element
    state: QaStateRecord
    inspections: tuple[QaEvent, ...] = ()
    placement: QaEvent | None = None
    batch_tickets: tuple[QaEvent, ...] = ()
    results: tuple[QaEvent, ...] = ()
    decisions: tuple[QaEvent, ...] = ()
    linked_batches: tuple[str, ...] = ()
    sensor_readings: tuple[tuple[str, datetime, float], ...] = ()  # (event_id, at, degC)
    sensor_samples: tuple[tuple[datetime, float], ...] = ()  # time-sorted
    maturity_degc_h: float = 0.0  # running Nurse-Saul over sensor_samples
    max_gap_h: float = 0.0  # largest interval between consecutive samples
    placement_gate_violated: bool = False  # placement applied through a closed gate


@dataclass(frozen=True)
class MixState:
    mix_id: str
    residuals: ResidualLog
    model: StrengthMaturityModel | None = None
    pending_pairs: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class TwinState:
    graph: ElementGraph
    ruleset: RuleSet
    rulesets: Mapping[str, RuleSet]
    records: Mapping[ElementId, ElementRecord]
    audit: tuple[AuditEntry, ...] = ()
    mixes: Mapping[str, MixState] = field(default_factory=dict)
    seen_event_ids: frozenset[str] = frozenset()
    clock: datetime = EPOCH
    maturity_cfg: MaturityConfig = MaturityConfig()
    recal_policy: RecalibrationPolicy = RecalibrationPolicy()


@dataclass(frozen=True)
class QaEvaluation:
    """Everything the decision surfaces need about one element, derived."""

    element: ElementId
    recommended: QaState
    rationale: str
    warnings: tuple[Warning, ...]
    completeness: CompletenessResult
    material: MaterialResult
    gate_open: bool
    auto_target: QaState  # Pending/Provisional resting state per the evidence
    maturity_degc_h: float | None


def initial_state(
    graph: ElementGraph,
    ruleset: RuleSet,
    maturity_cfg: MaturityConfig | None = None,
    recal_policy: RecalibrationPolicy | None = None,
) -> TwinState:
    cfg = maturity_cfg or MaturityConfig()
    records = {
        eid: ElementRecord(
            element=element,
            state=QaStateRecord(
                element=eid,
                state=QaState.PENDING,
                since=EPOCH,
                basis=DecisionBasis.AUTOMATIC,
                rationale="initial state",
                ruleset_version=ruleset.version,
            ),
        )
        for eid, element in graph.elements.items()
    }
    return TwinState(
        graph=graph,
        ruleset=ruleset,
        rulesets={ruleset.version: ruleset},
        records=records,
        maturity_cfg=cfg,
        recal_policy=recal_policy or RecalibrationPolicy(),
    )


def gate_open(state: TwinState, element_id: ElementId) -> bool:
    """True iff every direct predecessor is Released."""
    return all(
        state.records[p].state.state is QaState.RELEASED
        for p in state.graph.predecessors(element_id)
    )


def _blocked_predecessors(state: TwinState, element_id: ElementId) -> list[ElementId]:
    return sorted(
        p
        for p in state.graph.predecessors(element_id)
        if state.records[p].state.state is not QaState.RELEASED
    )


def _evolve(state: TwinState, **changes) -> TwinState:
    """Structural-sharing copy of the (validation-free) TwinState dataclass.

    Equivalent to dataclasses.replace but skips __init__; this sits on the
    per-event hot path of the random-sequence model checks.
    """
    new = object.__new__(TwinState)
    new.__dict__.update(state.__dict__)
    new.__dict__.update(changes)
    return new


def _note_event(state: TwinState, event: QaEvent) -> TwinState:
    clock = max(state.clock, event.occurred_at, event.recorded_at)
    return _evolve(state, seen_event_ids=state.seen_event_ids | {event.event_id}, clock=clock)


def _with_record(state: TwinState, element_id: ElementId, record: ElementRecord) -> TwinState:
    records = dict(state.records)
    records[element_id] = record
    return _evolve(state, records=records)


def _recompute_maturity(
    samples: Sequence[tuple[datetime, float]], cfg: MaturityConfig
) -> tuple[float, float]:
    total = 0.0
    max_gap = 0.0
    datum = cfg.datum_temp_c
    for (t0, temp0), (t1, temp1) in zip(samples, samples[1:]):
        dt_h = (t1 - t0).total_seconds() / 3600.0
        max_gap = max(max_gap, dt_h)
        total += 0.5 * (max(temp0 - datum, 0.0) + max(temp1 - datum, 0.0)) * dt_h
    return total, max_gap


def _add_sensor(record: ElementRecord, event: QaEvent, cfg: MaturityConfig) -> ElementRecord:
    at = event.occurred_at
    temp = float(event.payload["temp"]["magnitude"])  # type: ignore[index]
    readings = record.sensor_readings + ((event.event_id, at, temp),)
    samples = record.sensor_samples

    if not samples:
        return replace(record, sensor_readings=readings, sensor_samples=((at, temp),))
    last_at, last_temp = samples[-1]
    if at > last_at:
        dt_h = (at - last_at).total_seconds() / 3600.0
        datum = cfg.datum_temp_c
        inc = 0.5 * (max(last_temp - datum, 0.0) + max(temp - datum, 0.0)) * dt_h
        return replace(
            record,
            sensor_readings=readings,
            sensor_samples=samples + ((at, temp),),
            maturity_degc_h=record.maturity_degc_h + inc,
            max_gap_h=max(record.max_gap_h, dt_h),
        )
    # Straggler: duplicate timestamps are ignored (first applied wins);
    # out-of-order samples force a full recompute.
    if any(s[0] == at for s in samples):
        return replace(record, sensor_readings=readings)
    merged = list(samples)
    bisect.insort(merged, (at, temp))
    total, max_gap = _recompute_maturity(merged, cfg)
    return replace(
        record,
        sensor_readings=readings,
        sensor_samples=tuple(merged),
        maturity_degc_h=total,
        max_gap_h=max_gap,
    )


def _mix_id_for(record: ElementRecord) -> str | None:
    if record.batch_tickets:
        return str(record.batch_tickets[-1].payload["mix_id"])
    return None


def _history(record: ElementRecord) -> TemperatureHistory | None:
    if len(record.sensor_samples) < 2:
        return None
    return TemperatureHistory(record.element.id, record.sensor_samples)


def _maturity_at(record: ElementRecord, at: datetime, cfg: MaturityConfig) -> float | None:
    """In-place maturity up to a past instant; None when data is unusable."""
    history = _history(record)
    if history is None or record.max_gap_h > cfg.max_gap_h:
        return None
    truncated = truncate_history(history, at)
    if len(truncated.samples) < 2:
        return None
    return nurse_saul_maturity(truncated, cfg).magnitude


def _lab_maturity(cfg: MaturityConfig, age_days: float) -> float:
    # Standard lab curing held at the reference temperature.
    return (cfg.ref_temp_c - cfg.datum_temp_c) * 24.0 * age_days


def _measured_list(record: ElementRecord) -> list[MeasuredStrength]:
    return [
        MeasuredStrength(
            strength_mpa=float(e.payload["strength"]["magnitude"]),  # type: ignore[index]
            age_days=float(e.payload["age_days"]),  # type: ignore[arg-type]
            cured=str(e.payload["cured"]),
        )
        for e in record.results
    ]


def _bias_ratio(
    record: ElementRecord, model: StrengthMaturityModel, cfg: MaturityConfig
) -> float | None:
    """Element-local measured/predicted ratio from early-age results.

    Conditions the mix-level model on this element's own specimens so a
    deviant batch shows up in the trend before acceptance-age results exist.
    Applied only once two comparisons are available.
    """
    ratios: list[float] = []
    for e in record.results:
        age = float(e.payload["age_days"])  # type: ignore[arg-type]
        cured = str(e.payload["cured"])
        strength = float(e.payload["strength"]["magnitude"])  # type: ignore[index]
        m = _lab_maturity(cfg, age) if cured == "lab" else _maturity_at(record, e.occurred_at, cfg)
        if m is None:
            continue
        base = hyperbolic_strength(model.su_mpa, model.k_rate, model.m0, m)
        if base > 1e-6:
            ratios.append(strength / base)
    if len(ratios) < 2:
        return None
    return sum(ratios) / len(ratios)


def _scale_prediction(pred: StrengthPrediction, ratio: float) -> StrengthPrediction:
    return StrengthPrediction(
        mean_mpa=pred.mean_mpa * ratio,
        lower_mpa=max(pred.lower_mpa * ratio, 0.0),
        upper_mpa=pred.upper_mpa * ratio,
        maturity_degc_h=pred.maturity_degc_h,
        basis=pred.basis,
    )


def _material_evidence(
    state: TwinState, element_id: ElementId
) -> tuple[list[MeasuredStrength], StrengthPrediction | None, float | None]:
    """Measured results plus the (bias-conditioned) prediction, if available."""
    record = state.records[element_id]
    cfg = state.maturity_cfg
    measured = _measured_list(record)

    prediction: StrengthPrediction | None = None
    maturity: float | None = None
    mix_id = _mix_id_for(record)
    model = state.mixes[mix_id].model if mix_id and mix_id in state.mixes else None
    usable = len(record.sensor_samples) >= 2 and record.max_gap_h <= cfg.max_gap_h
    if model is not None and usable:
        maturity = record.maturity_degc_h
        prediction = predict_strength(model, maturity)
        ratio = _bias_ratio(record, model, cfg)
        if ratio is not None:
            prediction = _scale_prediction(prediction, ratio)
    return measured, prediction, maturity


def evaluate_qa(state: TwinState, element_id: ElementId) -> QaEvaluation:
    """Derive the recommendation, rationale, and warnings for one element.

    Automatic transitions move only between Pending and Provisional; Hold is
    recommended (never forced here) on deficient trends or failed
    inspections, and a DeficientMeasured result after release recommends a
    non-conformance review.
    """
    if element_id not in state.records:
        raise UnknownElement(element_id)
    record = state.records[element_id]
    element = record.element
    cfg = state.maturity_cfg

    gate = gate_open(state, element_id)
    completeness = evaluate_completeness(
        element, state.ruleset, record.inspections, record.placement
    )
    measured, prediction, maturity = _material_evidence(state, element_id)
    material = evaluate_material(element, state.ruleset, prediction, measured)
    kind_rules = state.ruleset.for_kind(element.kind)

    material_ok = kind_rules is None or material.status in (
        MaterialStatus.TRENDING_COMPLIANT,
        MaterialStatus.COMPLIANT_MEASURED,
    )
    eligible = completeness.satisfied and material_ok and gate
    cur = record.state.state
    auto_target = QaState.PROVISIONAL if eligible else QaState.PENDING

    reasons: list[str] = []
    reasons.append("completeness satisfied" if completeness.satisfied else "completeness unsatisfied")
    if completeness.missing:
        reasons.append("missing: " + ", ".join(f"{c} ({p})" for c, p in completeness.missing))
    if completeness.failed:
        reasons.append("failed: " + ", ".join(completeness.failed))
    if completeness.out_of_sequence:
        reasons.append("out of sequence: " + ", ".join(completeness.out_of_sequence))
    reasons.append(f"material {material.status.value}")
    reasons.append("gate open" if gate else "gate closed (" + ", ".join(_blocked_predecessors(state, element_id)) + ")")

    recommended = auto_target if cur in (QaState.PENDING, QaState.PROVISIONAL) else cur
    if material.status is MaterialStatus.TRENDING_DEFICIENT or completeness.failed:
        if cur not in (QaState.NON_CONFORMANCE, QaState.HOLD):
            recommended = QaState.HOLD
    if cur is QaState.RELEASED and material.status is MaterialStatus.DEFICIENT_MEASURED:
        recommended = QaState.NON_CONFORMANCE
        reasons.append("measured deficiency after release: non-conformance review recommended")

    warnings = _element_warnings(
        state, element_id, completeness=completeness, material=material, gate=gate
    )

    return QaEvaluation(
        element=element_id,
        recommended=recommended,
        rationale="; ".join(reasons),
        warnings=tuple(warnings),
        completeness=completeness,
        material=material,
        gate_open=gate,
        auto_target=auto_target,
        maturity_degc_h=maturity,
    )


def _element_warnings(
    state: TwinState,
    element_id: ElementId,
    completeness: CompletenessResult,
    material: MaterialResult,
    gate: bool,
) -> list[Warning]:
    record = state.records[element_id]
    element = record.element
    cfg = state.maturity_cfg
    now = state.clock
    found: list[Warning] = []

    activity_started = record.placement is not None or element.planned_placement <= now
    if activity_started and completeness.missing:
        detail = "required inspections missing: " + ", ".join(
            f"{c} ({p})" for c, p in completeness.missing
        )
        found.append(Warning(WarningKind.MISSING_INSPECTION, element_id, detail, now))

    if record.placement_gate_violated and record.state.state is not QaState.RELEASED:
        blocked = _blocked_predecessors(state, element_id)
        detail = "placement recorded while gate closed" + (
            "; still blocked by: " + ", ".join(blocked) if blocked else "; predecessors since resolved"
        )
        found.append(Warning(WarningKind.GATE_VIOLATION, element_id, detail, now))

    if record.max_gap_h > cfg.max_gap_h:
        detail = (
            f"sensor gap {record.max_gap_h:.1f} h exceeds interpolation limit "
            f"{cfg.max_gap_h:.1f} h; prediction suspended"
        )
        found.append(Warning(WarningKind.PARTIAL_DATA, element_id, detail, now))

    cur = record.state.state
    if cur is QaState.RELEASED and material.status is MaterialStatus.DEFICIENT_MEASURED:
        found.append(
            Warning(
                WarningKind.LATE_EVIDENCE_CONFLICT,
                element_id,
                "measured result below acceptance limit arrived after release",
                now,
            )
        )

    lag = _strength_lag(state, element_id, material)
    if lag is not None:
        found.append(Warning(WarningKind.STRENGTH_LAG, element_id, lag, now))

    found.sort(key=lambda w: (w.element, w.kind.value))
    return found


def _strength_lag(
    state: TwinState, element_id: ElementId, material: MaterialResult
) -> str | None:
    """Readiness forecast versus the earliest successor's planned start."""
    record = state.records[element_id]
    element = record.element
    cfg = state.maturity_cfg
    cur = record.state.state
    if cur in (QaState.RELEASED, QaState.NON_CONFORMANCE):
        return None
    if material.status is MaterialStatus.COMPLIANT_MEASURED:
        return None
    kind_rules = state.ruleset.for_kind(element.kind)
    if kind_rules is None or element.design_strength_mpa is None:
        return None
    successors = state.graph.successors(element_id)
    if not successors:
        return None
    next_planned = min(state.graph.elements[s].planned_placement for s in successors)

    mix_id = _mix_id_for(record)
    model = state.mixes[mix_id].model if mix_id and mix_id in state.mixes else None
    history = _history(record)
    if model is None or history is None or record.max_gap_h > cfg.max_gap_h:
        return None

    threshold = kind_rules.readiness_threshold * element.design_strength_mpa
    assumed = record.sensor_samples[-1][1]
    forecast = forecast_readiness(model, history, assumed, threshold, cfg)
    if forecast is None:
        return (
            f"readiness threshold {threshold:.1f} MPa unreachable at assumed "
            f"{assumed:.1f} degC; next activity planned {format_utc(next_planned)}"
        )
    if forecast > next_planned:
        return (
            f"readiness forecast {format_utc(forecast)} is after next planned "
            f"activity {format_utc(next_planned)}"
        )
    return None


def early_warnings(state: TwinState, now: datetime | None = None) -> list[Warning]:
    """All current warnings, deterministically ordered by (element, kind).

    Warnings are derived, recomputable state; they are never part of the
    audit log.
    """
    found: list[Warning] = []
    for eid in sorted(state.records):
        found.extend(evaluate_qa(state, eid).warnings)
    found.sort(key=lambda w: (w.element, w.kind.value))
    return found


def _next_seq(state: TwinState) -> int:
    return len(state.audit) + 1


def _append_audit(
    state: TwinState,
    at: datetime,
    actor: str,
    role: str,
    element_id: ElementId,
    from_state: QaState,
    to_state: QaState,
    rationale: str,
    evidence_refs: tuple[str, ...],
    outcome: str = "accepted",
) -> TwinState:
    entry = AuditEntry(
        seq=_next_seq(state),
        at=at,
        actor=actor,
        role=role,
        element=element_id,
        from_state=from_state,
        to_state=to_state,
        rationale=rationale,
        evidence_refs=evidence_refs,
        ruleset_version=state.ruleset.version,
        outcome=outcome,
    )
    return _evolve(state, audit=state.audit + (entry,))


def _transition(
    state: TwinState,
    element_id: ElementId,
    to_state: QaState,
    at: datetime,
    basis: DecisionBasis,
    actor: str,
    role: str,
    rationale: str,
    evidence_refs: tuple[str, ...],
) -> TwinState:
    record = state.records[element_id]
    from_state = record.state.state
    new_record = replace(
        record,
        state=QaStateRecord(
            element=element_id,
            state=to_state,
            since=at,
            basis=basis,
            rationale=rationale,
            ruleset_version=state.ruleset.version,
        ),
    )
    state = _with_record(state, element_id, new_record)
    return _append_audit(
        state, at, actor, role, element_id, from_state, to_state, rationale, evidence_refs
    )


def _auto_step(
    state: TwinState, element_id: ElementId, at: datetime, refs: tuple[str, ...]
) -> tuple[TwinState, bool]:
    cur = state.records[element_id].state.state
    if cur not in (QaState.PENDING, QaState.PROVISIONAL):
        return state, False
    evaluation = evaluate_qa(state, element_id)
    if evaluation.auto_target is cur:
        return state, False
    state = _transition(
        state,
        element_id,
        evaluation.auto_target,
        at,
        DecisionBasis.AUTOMATIC,
        actor="system",
        role=Role.SYSTEM.value,
        rationale=evaluation.rationale,
        evidence_refs=refs,
    )
    return state, True


def _run_autoeval(
    state: TwinState, seeds: Iterable[ElementId], at: datetime, refs: tuple[str, ...]
) -> TwinState:
    queue: deque[ElementId] = deque(sorted(set(seeds)))
    queued = set(queue)
    guard = 0
    limit = 8 * (len(state.records) + 2)
    while queue:
        guard += 1
        if guard > limit:  # cycle-proof by construction; guard is insurance
            break
        eid = queue.popleft()
        queued.discard(eid)
        state, changed = _auto_step(state, eid, at, refs)
        if changed:
            for succ in sorted(state.graph.successors(eid)):
                if succ not in queued:
                    queue.append(succ)
                    queued.add(succ)
    return state


def _learn_from_result(state: TwinState, element_id: ElementId, event: QaEvent) -> TwinState:
    record = state.records[element_id]
    mix_id = _mix_id_for(record)
    if mix_id is None:
        return state
    cfg = state.maturity_cfg
    payload = event.payload
    strength = float(payload["strength"]["magnitude"])  # type: ignore[index]
    age_days = float(payload["age_days"])  # type: ignore[arg-type]
    cured = str(payload["cured"])
    maturity = (
        _lab_maturity(cfg, age_days)
        if cured == "lab"
        else _maturity_at(record, event.occurred_at, cfg)
    )
    if maturity is None:
        return state

    mix = state.mixes.get(mix_id) or MixState(mix_id=mix_id, residuals=ResidualLog(mix_id))
    if mix.model is None:
        pending = mix.pending_pairs + ((maturity, strength),)
        model = None
        if len(pending) >= 4 and len({m for m, _ in pending}) >= 3:
            try:
                model = calibrate(pending, calibrated_at=event.occurred_at)
            except TwinQaError:
                model = None  # stay uncalibrated; partial-data tolerance
        mix = replace(mix, pending_pairs=pending, model=model)
    else:
        prediction = predict_strength(mix.model, maturity)
        rel_dev = abs(strength - prediction.mean_mpa) / max(prediction.mean_mpa, 1e-9)
        if rel_dev > ANOMALY_REL_DEV:
            # Gross deviation is a batch-specific anomaly, not mix drift: it
            # drives this element's own evaluation (bias ratio, trending
            # status, eventual hold/NCR) but must not recalibrate the mix.
            return state
        measured = MeasuredResult(
            element=element_id,
            strength_mpa=strength,
            age_days=age_days,
            at=event.occurred_at,
            maturity_degc_h=maturity,
            cured=cured,
        )
        log = record_residual(mix.residuals, prediction, measured)
        model = mix.model
        try:
            model, _ = recalibrate(mix.model, log, state.recal_policy)
        except TwinQaError:
            pass
        mix = replace(mix, model=model, residuals=log)

    mixes = dict(state.mixes)
    mixes[mix_id] = mix
    return _evolve(state, mixes=mixes)


def apply_event(state: TwinState, event: QaEvent) -> TwinState:
    """Fold one event into the twin; duplicate event_ids are a no-op.

    SpecRevision swaps the active ruleset and re-evaluates every element;
    HumanDecision routes through decide() (rejections are audited, not
    raised); everything else lands in the subject element's stores and
    triggers automatic re-evaluation (sensor readings only accrue maturity,
    the next evaluating event picks them up).
    """
    if event.event_id in state.seen_event_ids:
        return state

    if event.event_type is EventType.HUMAN_DECISION:
        if event.element_id is None or event.element_id not in state.records:
            raise UnknownElement(str(event.element_id))
        try:
            return decide(state, event.element_id, event)
        except DecisionRejected as exc:
            return exc.state

    if event.event_type is EventType.SPEC_REVISION:
        state = _note_event(state, event)
        ruleset = parse_ruleset(event.payload["document"])  # validated at ingest
        rulesets = dict(state.rulesets)
        rulesets[ruleset.version] = ruleset
        state = _evolve(state, ruleset=ruleset, rulesets=rulesets)
        return _run_autoeval(state, sorted(state.records), event.occurred_at, (event.event_id,))

    element_id = event.element_id
    if element_id is None or element_id not in state.records:
        raise UnknownElement(str(element_id))
    state = _note_event(state, event)
    record = state.records[element_id]
    refs = (event.event_id,)

    if event.event_type is EventType.SENSOR_READING:
        return _with_record(state, element_id, _add_sensor(record, event, state.maturity_cfg))

    if event.event_type is EventType.INSPECTION_COMPLETED:
        state = _with_record(state, element_id, replace(record, inspections=record.inspections + (event,)))
        return _run_autoeval(state, [element_id], event.occurred_at, refs)

    if event.event_type is EventType.BATCH_TICKET:
        mix_id = str(event.payload["mix_id"])
        batch_id = str(event.payload["batch_id"])
        state = _with_record(
            state,
            element_id,
            replace(
                record,
                batch_tickets=record.batch_tickets + (event,),
                linked_batches=record.linked_batches + (batch_id,),
            ),
        )
        if mix_id not in state.mixes:
            mixes = dict(state.mixes)
            mixes[mix_id] = MixState(mix_id=mix_id, residuals=ResidualLog(mix_id))
            state = _evolve(state, mixes=mixes)
        return _run_autoeval(state, [element_id], event.occurred_at, refs)

    if event.event_type is EventType.PLACEMENT_RECORDED:
        batch_id = str(event.payload["batch_id"])
        linked = record.linked_batches
        if batch_id not in linked:
            linked = linked + (batch_id,)
        blocked = _blocked_predecessors(state, element_id)
        state = _with_record(
            state,
            element_id,
            replace(
                record,
                placement=event,
                linked_batches=linked,
                placement_gate_violated=record.placement_gate_violated or bool(blocked),
            ),
        )
        cur = state.records[element_id].state.state
        if blocked and cur in (QaState.PENDING, QaState.PROVISIONAL):
            rationale = (
                "gate violation: placement recorded while predecessors not Released: "
                + ", ".join(blocked)
            )
            state = _transition(
                state,
                element_id,
                QaState.HOLD,
                event.occurred_at,
                DecisionBasis.AUTOMATIC,
                actor="system",
                role=Role.SYSTEM.value,
                rationale=rationale,
                evidence_refs=refs,
            )
        return _run_autoeval(state, [element_id], event.occurred_at, refs)

    if event.event_type in (EventType.LAB_RESULT, EventType.FIELD_TEST_RESULT):
        state = _with_record(state, element_id, replace(record, results=record.results + (event,)))
        state = _learn_from_result(state, element_id, event)
        return _run_autoeval(state, [element_id], event.occurred_at, refs)

    raise TwinQaError(f"unhandled event type {event.event_type}")


_DECISION_ROLES: dict[str, frozenset[Role]] = {
    "release": frozenset({Role.ENGINEER, Role.QA_MANAGER}),
    "hold": frozenset({Role.ENGINEER, Role.QA_MANAGER}),
    "lift_hold": frozenset({Role.ENGINEER, Role.QA_MANAGER}),
    "open_ncr": frozenset({Role.QA_MANAGER}),
    "close_ncr": frozenset({Role.QA_MANAGER}),
}


def decide(state: TwinState, element_id: ElementId, decision: QaEvent) -> TwinState:
    """Apply a human decision; every attempt, accepted or rejected, lands in
    the audit trail. Rejections raise a DecisionRejected subtype whose
    ``state`` attribute carries the audited state for the caller to adopt.
    """
    if decision.event_id in state.seen_event_ids:
        return state
    if element_id not in state.records:
        raise UnknownElement(element_id)

    state = _note_event(state, decision)
    record = state.records[element_id]
    state = _with_record(state, element_id, replace(record, decisions=record.decisions + (decision,)))

    payload = decision.payload
    actor = str(payload["actor"])
    role_name = str(payload["role"])
    action = str(payload["action"])
    rationale = str(payload["rationale"])
    cur = state.records[element_id].state.state
    at = decision.occurred_at

    def _reject(exc: DecisionRejected, reason: str) -> TwinState:
        exc.state = _append_audit(
            state,
            at,
            actor,
            role_name,
            element_id,
            cur,
            cur,
            f"{action} rejected: {reason}",
            (decision.event_id,),
            outcome="rejected",
        )
        raise exc

    allowed = _DECISION_ROLES.get(action)
    if allowed is None:
        _reject(IllegalTransition(cur, action), f"unknown action {action!r}")
    try:
        role = Role(role_name)
    except ValueError:
        _reject(UnauthorizedRole(role_name, action), f"unknown role {role_name!r}")
    if role not in allowed:
        _reject(UnauthorizedRole(role_name, action), f"role {role_name} may not {action}")

    if action == "release":
        if cur is QaState.PENDING and "override=true" not in rationale:
            _reject(
                IllegalTransition(cur, action),
                "release from Pending requires override=true in the rationale",
            )
        if cur not in (QaState.PROVISIONAL, QaState.PENDING):
            _reject(IllegalTransition(cur, action), f"cannot release from {cur.value}")
        blocked = _blocked_predecessors(state, element_id)
        if blocked:
            _reject(GateBlocked(blocked), "predecessors not Released: " + ", ".join(blocked))
        target = QaState.RELEASED
    elif action == "hold":
        if cur in (QaState.HOLD, QaState.NON_CONFORMANCE):
            _reject(IllegalTransition(cur, action), f"cannot hold from {cur.value}")
        target = QaState.HOLD
    elif action == "lift_hold":
        if cur is not QaState.HOLD:
            _reject(IllegalTransition(cur, action), f"cannot lift_hold from {cur.value}")
        target = QaState.PENDING
    elif action == "open_ncr":
        if cur is QaState.NON_CONFORMANCE:
            _reject(IllegalTransition(cur, action), "already in NonConformance")
        target = QaState.NON_CONFORMANCE
    else:  # close_ncr
        if cur is not QaState.NON_CONFORMANCE:
            _reject(IllegalTransition(cur, action), f"cannot close_ncr from {cur.value}")
        target = QaState.HOLD

    state = _transition(
        state,
        element_id,
        target,
        at,
        DecisionBasis.HUMAN_DECISION,
        actor=actor,
        role=role_name,
        rationale=rationale,
        evidence_refs=(decision.event_id,),
    )
    seeds = list(state.graph.successors(element_id))
    if action == "lift_hold":
        seeds.append(element_id)
    return _run_autoeval(state, seeds, at, (decision.event_id,))


def replay(
    graph: ElementGraph,
    ruleset: RuleSet,
    event_log: Iterable[QaEvent],
    maturity_cfg: MaturityConfig | None = None,
) -> TwinState:
    """Fold apply_event over the aligned log from the empty state."""
    state = initial_state(graph, ruleset, maturity_cfg)
    for event in event_log:
        state = apply_event(state, event)
    return state


def evidence_bundle(state: TwinState, element_id: ElementId) -> dict:
    """Canonical, hash-fingerprinted package justifying an element's state.

    content_hash is computed over the document with that field removed;
    identical twin state always yields the identical digest.
    """
    if element_id not in state.records:
        raise UnknownElement(element_id)
    record = state.records[element_id]
    element = record.element
    evaluation = evaluate_qa(state, element_id)

    doc: dict = {
        "element": {
            "id": element.id,
            "kind": element.kind.value,
            "location": element.location.to_json(),
            "planned_placement": format_utc(element.planned_placement),
            "design_strength_mpa": element.design_strength_mpa,
        },
        "events": {
            "inspections": [event_to_json(e) for e in record.inspections],
            "batch_tickets": [event_to_json(e) for e in record.batch_tickets],
            "placement": event_to_json(record.placement) if record.placement else None,
            "results": [event_to_json(e) for e in record.results],
            "decisions": [event_to_json(e) for e in record.decisions],
            "sensor_readings": [
                {"event_id": rid, "at": format_utc(at), "temp_c": round(temp, 6)}
                for rid, at, temp in record.sensor_readings
            ],
        },
        "completeness": evaluation.completeness.to_json(),
        "material": evaluation.material.to_json(),
        "state": record.state.to_json(),
        "state_history": [e.to_json() for e in state.audit if e.element == element_id],
        "warnings": [w.to_json() for w in evaluation.warnings],
        "ruleset_version": state.ruleset.version,
    }
    doc["content_hash"] = content_hash(doc)
    return doc


def state_export(state: TwinState) -> dict:
    """The state-export document: elements, audit, active ruleset version."""
    elements: dict[str, dict] = {}
    for eid in sorted(state.records):
        record = state.records[eid]
        evaluation = evaluate_qa(state, eid)
        elements[eid] = {
            "state": record.state.state.value,
            "since": format_utc(record.state.since),
            "basis": record.state.basis.value,
            "warnings": [w.to_json() for w in evaluation.warnings],
        }
    return {
        "elements": elements,
        "audit": [e.to_json() for e in state.audit],
        "ruleset_version": state.ruleset.version,
    }


def state_fingerprint(state: TwinState) -> dict:
    """Everything that defines the twin state, canonically serializable."""
    return {
        "export": state_export(state),
        "records": {
            eid: {
                "state": record.state.to_json(),
                "inspections": [e.event_id for e in record.inspections],
                "batch_tickets": [e.event_id for e in record.batch_tickets],
                "placement": record.placement.event_id if record.placement else None,
                "results": [e.event_id for e in record.results],
                "decisions": [e.event_id for e in record.decisions],
                "sensor_readings": [rid for rid, _, _ in record.sensor_readings],
                "maturity_degc_h": round(record.maturity_degc_h, 6),
                "max_gap_h": round(record.max_gap_h, 6),
                "linked_batches": list(record.linked_batches),
                "placement_gate_violated": record.placement_gate_violated,
            }
            for eid, record in sorted(state.records.items())
        },
        "mixes": {
            mix_id: {
                "model": (
                    {
                        "su_mpa": mix.model.su_mpa,
                        "k_rate": mix.model.k_rate,
                        "m0": mix.model.m0,
                        "residual_se_mpa": mix.model.residual_se_mpa,
                        "n_points": mix.model.n_points,
                        "version": mix.model.version,
                        "calibrated_at": (
                            format_utc(mix.model.calibrated_at) if mix.model.calibrated_at else None
                        ),
                    }
                    if mix.model
                    else None
                ),
                "pending_pairs": [[m, s] for m, s in mix.pending_pairs],
                "residual_count": len(mix.residuals.entries),
            }
            for mix_id, mix in sorted(state.mixes.items())
        },
        "seen": sorted(state.seen_event_ids),
        "clock": format_utc(state.clock),
        "ruleset_versions": sorted(state.rulesets),
    }


def state_hash(state: TwinState) -> str:
    """Platform-stable fingerprint digest for replay/idempotency checks."""
    return content_hash(state_fingerprint(state))
