"""Validation, normalization, time/space alignment, and semantic mapping of
raw construction records to elements; anything unmappable is quarantined with
a reason instead of dropped.

Input format is JSON Lines, one record per line, with the field names
documented in the README. All quantities are converted to canonical units
(degC, MPa, meters, hours) during validation; rounding happens only at
presentation, never internally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .canon import parse_utc
from .domain import (
    ElementGraph,
    ElementId,
    EventType,
    QaEvent,
    Quantity,
    SpatialRef,
    TwinQaError,
    Unit,
)
from .rules import parse_ruleset


class SchemaViolation(TwinQaError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"schema violation at {field!r}: {reason}")
        self.field = field
        self.reason = reason


class UnknownUnit(TwinQaError):
    def __init__(self, unit: str):
        super().__init__(f"unknown unit {unit!r}")
        self.unit = unit


class ValueOutOfRange(TwinQaError):
    def __init__(self, field: str, value: object, bounds: str):
        super().__init__(f"value out of range at {field!r}: {value!r} not in {bounds}")
        self.field = field


class NoMatch(TwinQaError):
    def __init__(self, subject: SpatialRef):
        super().__init__(f"no element matches subject {subject.to_json()}")
        self.subject = subject


class AmbiguousMatch(TwinQaError):
    def __init__(self, subject: SpatialRef, candidates: Sequence[ElementId]):
        super().__init__(
            f"subject {subject.to_json()} matches {len(candidates)} elements: "
            f"{sorted(candidates)}"
        )
        self.subject = subject
        self.candidates = sorted(candidates)


@dataclass(frozen=True)
class RawRecord:
    source: str
    body: Mapping[str, object]
    received_at: datetime


@dataclass(frozen=True)
class IngestReport:
    accepted: int
    duplicates: int
    quarantined: tuple[tuple[RawRecord, str], ...]
    unit_conversions: int

    def to_json(self) -> dict:
        return {
            "accepted": self.accepted,
            "duplicates": self.duplicates,
            "quarantined": [{"record": dict(rec.body), "reason": reason} for rec, reason in self.quarantined],
            "unit_conversions": self.unit_conversions,
        }


@dataclass(frozen=True)
class MappingTolerances:
    station_m: float = 5.0
    offset_m: float = 3.0
    gps_m: float = 10.0


class MappingMethod(str, Enum):
    EXPLICIT_ID = "ExplicitId"
    STATION_OFFSET = "StationOffset"
    GPS = "Gps"


class MappingConfidence(str, Enum):
    EXACT = "Exact"
    PROXIMATE = "Proximate"
    AMBIGUOUS = "Ambiguous"


@dataclass(frozen=True)
class MappingResult:
    element: ElementId
    method: MappingMethod
    confidence: MappingConfidence


@dataclass(frozen=True)
class IngestConfig:
    schema_version: str = "1"
    clock_skew_min: float = 5.0  # recorded_at may precede occurred_at by this much
    late_arrival_h: float = 24.0  # beyond this, events are flagged late_arrival
    tolerances: MappingTolerances = MappingTolerances()


_SCHEMA_VERSIONS = {"1"}

# Conversion factors to canonical units. degF and K are affine, handled apart.
_LINEAR_CONVERSIONS: dict[str, tuple[float, Unit]] = {
    "degC": (1.0, Unit.DEG_C),
    "MPa": (1.0, Unit.MPA),
    "psi": (0.00689476, Unit.MPA),
    "kPa": (0.001, Unit.MPA),
    "m": (1.0, Unit.METER),
    "ft": (0.3048, Unit.METER),
    "h": (1.0, Unit.HOUR),
    "min": (1.0 / 60.0, Unit.HOUR),
}


def normalize_unit(quantity: tuple[float, str]) -> Quantity:
    """Convert (magnitude, unit-string) to a canonical-unit Quantity."""
    magnitude, unit = quantity
    if not isinstance(magnitude, (int, float)) or isinstance(magnitude, bool):
        raise SchemaViolation("magnitude", f"expected number, got {type(magnitude).__name__}")
    if not math.isfinite(magnitude):
        raise ValueOutOfRange("magnitude", magnitude, "finite values")
    if unit == "degF":
        return Quantity((float(magnitude) - 32.0) * 5.0 / 9.0, Unit.DEG_C)
    if unit == "K":
        return Quantity(float(magnitude) - 273.15, Unit.DEG_C)
    if unit in _LINEAR_CONVERSIONS:
        factor, canonical = _LINEAR_CONVERSIONS[unit]
        return Quantity(float(magnitude) * factor, canonical)
    raise UnknownUnit(str(unit))


def _require(body: Mapping, field: str, parent: str = "") -> object:
    path = f"{parent}.{field}" if parent else field
    if not isinstance(body, Mapping):
        raise SchemaViolation(parent or field, "expected object")
    if field not in body:
        raise SchemaViolation(path, "missing")
    return body[field]


def _require_str(body: Mapping, field: str, parent: str = "") -> str:
    value = _require(body, field, parent)
    if not isinstance(value, str) or not value:
        path = f"{parent}.{field}" if parent else field
        raise SchemaViolation(path, "must be a non-empty string")
    return value


def _require_number(body: Mapping, field: str, parent: str = "") -> float:
    value = _require(body, field, parent)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        path = f"{parent}.{field}" if parent else field
        raise SchemaViolation(path, "must be a number")
    if not math.isfinite(value):
        raise ValueOutOfRange(f"{parent}.{field}" if parent else field, value, "finite values")
    return float(value)


def _require_timestamp(body: Mapping, field: str, parent: str = "") -> datetime:
    value = _require_str(body, field, parent)
    path = f"{parent}.{field}" if parent else field
    if not value.endswith("Z"):
        raise SchemaViolation(path, "timestamp must be ISO 8601 UTC with Z suffix")
    try:
        return parse_utc(value)
    except ValueError as exc:
        raise SchemaViolation(path, str(exc)) from None


def _require_quantity(body: Mapping, field: str, parent: str) -> Quantity:
    doc = _require(body, field, parent)
    path = f"{parent}.{field}"
    if not isinstance(doc, Mapping):
        raise SchemaViolation(path, "must be an object with magnitude and unit")
    magnitude = _require(doc, "magnitude", path)
    unit = _require_str(doc, "unit", path)
    if not isinstance(magnitude, (int, float)) or isinstance(magnitude, bool):
        raise SchemaViolation(f"{path}.magnitude", "must be a number")
    return normalize_unit((float(magnitude), unit))


def _peek_unit(payload: Mapping, field: str) -> object:
    """Original unit string of a quantity field, for conversion counting."""
    value = payload.get(field)
    if isinstance(value, Mapping):
        return value.get("unit")
    return None


def _parse_subject(doc: object) -> SpatialRef:
    if not isinstance(doc, Mapping):
        raise SchemaViolation("subject", "must be an object")
    keys = set(doc.keys())
    if len(keys) != 1 or not keys <= {"element_id", "station_offset", "gps"}:
        raise SchemaViolation(
            "subject", "exactly one of element_id, station_offset, gps required"
        )
    try:
        if "element_id" in doc:
            return SpatialRef.for_element(_require_str(doc, "element_id", "subject"))
        if "station_offset" in doc:
            so = doc["station_offset"]
            if not isinstance(so, Mapping):
                raise SchemaViolation("subject.station_offset", "must be an object")
            station = _require_number(so, "station_m", "subject.station_offset")
            offset = _require_number(so, "offset_m", "subject.station_offset")
            return SpatialRef.at_station(station, offset)
        gps = doc["gps"]
        if not isinstance(gps, Mapping):
            raise SchemaViolation("subject.gps", "must be an object")
        lat = _require_number(gps, "lat", "subject.gps")
        lon = _require_number(gps, "lon", "subject.gps")
        return SpatialRef.at_gps(lat, lon)
    except ValueError as exc:
        raise ValueOutOfRange("subject", doc, str(exc)) from None


_DECISION_ACTIONS = {"release", "hold", "lift_hold", "open_ncr", "close_ncr"}
_PHASES = {"pre-placement", "placement", "post-placement"}


def _quantity_json(q: Quantity) -> dict:
    return {"magnitude": q.magnitude, "unit": q.unit.value}


def _validate_payload(
    event_type: EventType, payload: object
) -> tuple[dict[str, object], int]:
    """Returns (canonical payload, number of unit conversions performed)."""
    if not isinstance(payload, Mapping):
        raise SchemaViolation("payload", "must be an object")
    conversions = 0
    out: dict[str, object] = {}

    if event_type in (EventType.LAB_RESULT, EventType.FIELD_TEST_RESULT):
        out["specimen_id"] = _require_str(payload, "specimen_id", "payload")
        age = _require_number(payload, "age_days", "payload")
        if age < 0:
            raise ValueOutOfRange("payload.age_days", age, ">= 0")
        out["age_days"] = age
        raw_unit = _peek_unit(payload, "strength")
        strength = _require_quantity(payload, "strength", "payload")
        if strength.unit is not Unit.MPA:
            raise SchemaViolation("payload.strength.unit", "must convert to MPa")
        if strength.magnitude < 0:
            raise ValueOutOfRange("payload.strength", strength.magnitude, ">= 0 MPa")
        conversions += raw_unit != "MPa"
        out["strength"] = _quantity_json(strength)
        cured = _require_str(payload, "cured", "payload")
        if cured not in ("lab", "field"):
            raise SchemaViolation("payload.cured", "must be 'lab' or 'field'")
        out["cured"] = cured

    elif event_type is EventType.SENSOR_READING:
        out["sensor_id"] = _require_str(payload, "sensor_id", "payload")
        raw_unit = _peek_unit(payload, "temp")
        temp = _require_quantity(payload, "temp", "payload")
        if temp.unit is not Unit.DEG_C:
            raise SchemaViolation("payload.temp.unit", "must convert to degC")
        if not (-50.0 <= temp.magnitude <= 100.0):
            raise ValueOutOfRange("payload.temp", temp.magnitude, "[-50, 100] degC")
        conversions += raw_unit != "degC"
        out["temp"] = _quantity_json(temp)

    elif event_type is EventType.BATCH_TICKET:
        out["batch_id"] = _require_str(payload, "batch_id", "payload")
        out["mix_id"] = _require_str(payload, "mix_id", "payload")
        volume = _require_number(payload, "volume_m3", "payload")
        if volume <= 0:
            raise ValueOutOfRange("payload.volume_m3", volume, "> 0")
        out["volume_m3"] = volume
        out["batched_at"] = _require_timestamp(payload, "batched_at", "payload")

    elif event_type is EventType.INSPECTION_COMPLETED:
        out["inspection_code"] = _require_str(payload, "inspection_code", "payload")
        phase = _require_str(payload, "phase", "payload")
        if phase not in _PHASES:
            raise SchemaViolation("payload.phase", f"unknown phase {phase!r}")
        out["phase"] = phase
        result = _require_str(payload, "result", "payload")
        if result not in ("pass", "fail"):
            raise SchemaViolation("payload.result", "must be 'pass' or 'fail'")
        out["result"] = result
        notes = _require(payload, "notes", "payload")
        if not isinstance(notes, str):
            raise SchemaViolation("payload.notes", "must be a string")
        out["notes"] = notes

    elif event_type is EventType.PLACEMENT_RECORDED:
        out["batch_id"] = _require_str(payload, "batch_id", "payload")
        started = _require_timestamp(payload, "started_at", "payload")
        finished = _require_timestamp(payload, "finished_at", "payload")
        if finished < started:
            raise SchemaViolation("payload.finished_at", "must be >= started_at")
        out["started_at"] = started
        out["finished_at"] = finished
        raw_unit = _peek_unit(payload, "ambient_temp")
        ambient = _require_quantity(payload, "ambient_temp", "payload")
        if ambient.unit is not Unit.DEG_C:
            raise SchemaViolation("payload.ambient_temp.unit", "must convert to degC")
        conversions += raw_unit != "degC"
        out["ambient_temp"] = _quantity_json(ambient)

    elif event_type is EventType.HUMAN_DECISION:
        out["actor"] = _require_str(payload, "actor", "payload")
        out["role"] = _require_str(payload, "role", "payload")
        action = _require_str(payload, "action", "payload")
        if action not in _DECISION_ACTIONS:
            raise SchemaViolation("payload.action", f"unknown action {action!r}")
        out["action"] = action
        rationale = _require(payload, "rationale", "payload")
        if not isinstance(rationale, str):
            raise SchemaViolation("payload.rationale", "must be a string")
        out["rationale"] = rationale

    elif event_type is EventType.SPEC_REVISION:
        version = _require_str(payload, "ruleset_version", "payload")
        document = _require(payload, "document", "payload")
        if not isinstance(document, Mapping):
            raise SchemaViolation("payload.document", "must be an object")
        # The engine swaps rulesets on this event, so the document must parse
        # here: a malformed revision is quarantined, never replay-fatal.
        try:
            parsed = parse_ruleset(document)
        except TwinQaError as exc:
            raise SchemaViolation("payload.document", str(exc)) from None
        if parsed.version != version:
            raise SchemaViolation(
                "payload.ruleset_version",
                f"{version!r} does not match document version {parsed.version!r}",
            )
        out["ruleset_version"] = version
        out["document"] = dict(document)

    return out, conversions


def validate_record(
    raw: RawRecord, schema_version: str = "1", config: IngestConfig | None = None
) -> QaEvent:
    event, _ = validate_record_counted(raw, schema_version, config)
    return event


def validate_record_counted(
    raw: RawRecord, schema_version: str = "1", config: IngestConfig | None = None
) -> tuple[QaEvent, int]:
    """validate_record plus the count of unit conversions performed."""
    if schema_version not in _SCHEMA_VERSIONS:
        raise SchemaViolation("schema_version", f"unregistered version {schema_version!r}")
    cfg = config or IngestConfig()
    body = raw.body

    event_id = _require_str(body, "event_id")
    type_name = _require_str(body, "event_type")
    try:
        event_type = EventType(type_name)
    except ValueError:
        raise SchemaViolation("event_type", f"unknown event type {type_name!r}") from None

    occurred_at = _require_timestamp(body, "occurred_at")
    recorded_at = _require_timestamp(body, "recorded_at")
    skew = timedelta(minutes=cfg.clock_skew_min)
    if recorded_at < occurred_at - skew:
        raise SchemaViolation(
            "recorded_at",
            f"precedes occurred_at by more than the {cfg.clock_skew_min:g} min clock-skew tolerance",
        )

    subject = _parse_subject(_require(body, "subject"))
    payload, conversions = _validate_payload(event_type, _require(body, "payload"))
    source = _require_str(body, "source")

    return (
        QaEvent(
            event_id=event_id,
            event_type=event_type,
            occurred_at=occurred_at,
            recorded_at=recorded_at,
            subject=subject,
            payload=payload,
            source=source,
        ),
        conversions,
    )


def align_events(
    events: Sequence[QaEvent], config: IngestConfig | None = None
) -> tuple[QaEvent, ...]:
    """Stable total order by (occurred_at, event_id); late arrivals are kept
    but flagged when recorded_at trails occurred_at past the threshold."""
    cfg = config or IngestConfig()
    threshold = timedelta(hours=cfg.late_arrival_h)
    flagged = [
        replace(e, late_arrival=True) if (e.recorded_at - e.occurred_at) > threshold else e
        for e in events
    ]
    return tuple(sorted(flagged, key=lambda e: (e.occurred_at, e.event_id)))


_EARTH_RADIUS_M = 6_371_000.0


def great_circle_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Haversine distance in meters between (lat, lon) pairs."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = (
        math.sin((lat2 - lat1) / 2.0) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * _EARTH_RADIUS_M * math.asin(math.sqrt(h))


def map_to_element(
    subject: SpatialRef, graph: ElementGraph, tolerances: MappingTolerances | None = None
) -> MappingResult:
    """Resolve a spatial reference to one element.

    Precedence ExplicitId > StationOffset > Gps follows from the reference
    itself carrying exactly one variant. Two or more in-tolerance candidates
    raise AmbiguousMatch so ambiguity is never silently committed.
    """
    tol = tolerances or MappingTolerances()
    if subject.element_id is not None:
        if subject.element_id in graph.elements:
            return MappingResult(subject.element_id, MappingMethod.EXPLICIT_ID, MappingConfidence.EXACT)
        raise NoMatch(subject)

    candidates: list[ElementId] = []
    if subject.station_offset is not None:
        station, offset = subject.station_offset
        for eid in sorted(graph.elements):
            loc = graph.elements[eid].location.station_offset
            if loc is None:
                continue
            if abs(station - loc[0]) <= tol.station_m and abs(offset - loc[1]) <= tol.offset_m:
                candidates.append(eid)
        method = MappingMethod.STATION_OFFSET
    else:
        assert subject.gps is not None
        for eid in sorted(graph.elements):
            loc = graph.elements[eid].location.gps
            if loc is None:
                continue
            if great_circle_m(subject.gps, loc) <= tol.gps_m:
                candidates.append(eid)
        method = MappingMethod.GPS

    if not candidates:
        raise NoMatch(subject)
    if len(candidates) > 1:
        raise AmbiguousMatch(subject, candidates)
    return MappingResult(candidates[0], method, MappingConfidence.PROXIMATE)


def ingest_stream(
    raws: Sequence[RawRecord],
    graph: ElementGraph,
    known_ids: frozenset[str] | set[str] = frozenset(),
    config: IngestConfig | None = None,
) -> tuple[tuple[QaEvent, ...], IngestReport]:
    """Validate, deduplicate, and map a batch of raw records.

    Idempotent: event_ids already known (or repeated within the batch) count
    as duplicates and are not re-emitted. Failures quarantine the record with
    a reason; accepted + duplicates + quarantined always equals the input
    count. The returned events are aligned (the serialization point before
    the engine).
    """
    cfg = config or IngestConfig()
    seen = set(known_ids)
    accepted: list[QaEvent] = []
    quarantined: list[tuple[RawRecord, str]] = []
    duplicates = 0
    conversions = 0

    for raw in raws:
        try:
            event, n_conv = validate_record_counted(raw, cfg.schema_version, cfg)
            if event.event_id in seen:
                duplicates += 1
                continue
            if event.event_type is not EventType.SPEC_REVISION:
                mapping = map_to_element(event.subject, graph, cfg.tolerances)
                event = replace(event, element_id=mapping.element)
            conversions += n_conv
            seen.add(event.event_id)
            accepted.append(event)
        except TwinQaError as exc:
            quarantined.append((raw, str(exc)))

    report = IngestReport(
        accepted=len(accepted),
        duplicates=duplicates,
        quarantined=tuple(quarantined),
        unit_conversions=conversions,
    )
    return align_events(accepted, cfg), report


def read_jsonl(path: str | Path, source: str | None = None) -> list[RawRecord]:
    """Read raw records from a JSON Lines file.

    Unparseable lines become records with a sentinel body so they flow into
    quarantine (with a reason) instead of being dropped.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_jsonl_text(fh.read(), source or str(path))


def parse_jsonl_text(text: str, source: str = "stream") -> list[RawRecord]:
    """Same as read_jsonl but over an in-memory string (service ingestion)."""
    records: list[RawRecord] = []
    epoch = datetime.fromtimestamp(0, tz=timezone.utc)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            body = json.loads(line)
            if not isinstance(body, dict):
                body = {"_unparsed": line}
        except json.JSONDecodeError:
            body = {"_unparsed": line}
        received = epoch
        if isinstance(body.get("recorded_at"), str):
            try:
                received = parse_utc(body["recorded_at"])
            except ValueError:
                pass
        records.append(RawRecord(source=f"{source}:{lineno}", body=body, received_at=received))
    return records


def write_quarantine(path: str | Path, quarantined: Sequence[tuple[RawRecord, str]]) -> None:
    """Sidecar JSON Lines file of {record, reason} pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        for record, reason in quarantined:
            fh.write(json.dumps({"record": dict(record.body), "reason": reason}) + "\n")


def event_to_json(event: QaEvent) -> dict:
    """Serialize a QaEvent back to the wire format (canonical units)."""
    from .canon import format_utc

    def _payload_value(value: object) -> object:
        if isinstance(value, datetime):
            return format_utc(value)
        return value

    return {
        "event_id": event.event_id,
        "event_type": event.event_type.value,
        "occurred_at": format_utc(event.occurred_at),
        "recorded_at": format_utc(event.recorded_at),
        "subject": event.subject.to_json(),
        "payload": {k: _payload_value(v) for k, v in event.payload.items()},
        "source": event.source,
    }
