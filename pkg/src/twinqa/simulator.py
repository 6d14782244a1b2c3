"""Deterministic synthetic-project generator: element graphs, rule sets,
temperature histories, and latency-injected event streams that exercise the
whole data-to-decision path at desk scale.

Everything derives from the config seed; identical configs produce
byte-identical output files. Scripted human decisions are ordinary
HumanDecision events embedded in the stream, so a scenario is fully described
by (project.json, ruleset.json, events.jsonl).

Ground-truth strength comes from a hidden per-mix strength-maturity model so
calibration-recovery tests have an oracle. Lab specimens cure at the standard
reference temperature while in-place sensors follow the synthetic element
temperature (ambient sinusoid plus hydration bump).
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .canon import format_utc, parse_utc
from .domain import (
    Element,
    ElementGraph,
    ElementId,
    ElementKind,
    SpatialRef,
    TemperatureHistory,
    build_element_graph,
)
from .ingest import RawRecord
from .maturity import StrengthMaturityModel, hyperbolic_strength
from .rules import RuleSet, parse_ruleset

PROJECT_START = datetime(2026, 3, 2, 8, 0, tzinfo=timezone.utc)
STAGE_GAP_DAYS = 10.0
SPAN_STAGGER_DAYS = 3.0
MONITOR_HOURS = 168.0
CALIBRATION_AGES_DAYS = (1.0, 2.0, 3.0, 5.0)
QC_AGE_DAYS = 7.0
ACCEPTANCE_AGE_DAYS = 28.0
STRENGTH_NOISE_CV = 0.02
WEAK_BATCH_FACTOR = 0.6
LATE_FAIL_FACTOR = 0.65
CAST_IN_PLACE = "MIX-A"
PRECAST = "MIX-P"

STAGES: tuple[tuple[str, ElementKind], ...] = (
    ("SHAFT", ElementKind.DRILLED_SHAFT),
    ("COL", ElementKind.COLUMN),
    ("CAP", ElementKind.CAP),
    ("GIRD", ElementKind.GIRDER_OR_DECK_PANEL),
    ("DECK", ElementKind.DECK_POUR),
)


class DefectKind(str, Enum):
    MISSING_INSPECTION = "MissingInspection"
    WEAK_BATCH = "WeakBatch"
    SENSOR_GAP = "SensorGap"
    LATE_FAILING_LAB = "LateFailingLab"


@dataclass(frozen=True)
class DefectSpec:
    kind: DefectKind
    stage: ElementKind = ElementKind.DECK_POUR


@dataclass(frozen=True)
class AmbientModel:
    mean_c: float = 17.0
    daily_amplitude_c: float = 5.0


@dataclass(frozen=True)
class HydrationBump:
    peak_delta_c: float = 14.0
    peak_at_h: float = 18.0
    decay_h: float = 48.0


@dataclass(frozen=True)
class SimConfig:
    seed: int = 42
    n_spans: int = 1
    ambient: AmbientModel = AmbientModel()
    hydration_bump: HydrationBump = HydrationBump()
    lab_result_delay_days: tuple[float, float] = (0.5, 2.0)
    inspection_upload_delay_h: tuple[float, float] = (1.0, 12.0)
    defects: tuple[DefectSpec, ...] = ()

    def __post_init__(self) -> None:
        if self.n_spans < 1:
            raise ValueError("n_spans must be >= 1")
        for lo, hi in (self.lab_result_delay_days, self.inspection_upload_delay_h):
            if lo < 0 or hi < lo:
                raise ValueError("delay ranges must be non-negative and ordered")


@dataclass(frozen=True)
class SimProject:
    graph: ElementGraph
    ruleset: RuleSet
    schedule: Mapping[ElementId, datetime]
    mix_truth: Mapping[str, StrengthMaturityModel]
    mix_for_element: Mapping[ElementId, str]
    start: datetime


def default_ruleset_doc() -> dict:
    def acceptance(limit: float) -> dict:
        return {"property": "compressive_strength", "limit_mpa": limit, "age_days": 28.0}

    def req(code: str, hold: bool = True, phase: str = "pre-placement") -> dict:
        return {"code": code, "phase": phase, "hold_point": hold}

    return {
        "version": "v1",
        "rules": {
            "DrilledShaft": {
                "required_inspections": [
                    req("EXCAVATION_CONDITIONS"),
                    req("REBAR_CAGE"),
                    req("SLURRY_CLEANLINESS", hold=False),
                ],
                "acceptance": acceptance(30.0),
                "readiness_threshold": 0.75,
                "testing_frequency": 2,
            },
            "Column": {
                "required_inspections": [
                    req("REBAR_LAYOUT"),
                    req("CLEAR_COVER", hold=False),
                    req("FORMWORK_STABILITY"),
                ],
                "acceptance": acceptance(30.0),
                "readiness_threshold": 0.75,
                "testing_frequency": 2,
            },
            "Cap": {
                "required_inspections": [
                    req("REBAR_LAYOUT"),
                    req("FORMWORK_STABILITY"),
                ],
                "acceptance": acceptance(30.0),
                "readiness_threshold": 0.75,
                "testing_frequency": 2,
            },
            "GirderOrDeckPanel": {
                "required_inspections": [
                    req("BEARING_SEAT_ELEVATION"),
                    req("LINE_AND_GRADE", hold=False),
                ],
                "acceptance": acceptance(40.0),
                "readiness_threshold": 0.75,
                "testing_frequency": 2,
            },
            "DeckPour": {
                "required_inspections": [
                    req("DECK_STEEL_LAYOUT"),
                    req("PRE_POUR_MEETING"),
                ],
                "acceptance": acceptance(30.0),
                "readiness_threshold": 0.80,
                "testing_frequency": 2,
            },
        },
    }


def _element_id(span: int, stage: str) -> str:
    return f"S{span}-{stage}"


def generate_project(cfg: SimConfig) -> SimProject:
    """Per span, the five-stage chain with planned timestamps; reproducible
    from the seed (which also fixes the hidden mix ground truth)."""
    rng = random.Random(cfg.seed)
    mix_truth = {
        CAST_IN_PLACE: StrengthMaturityModel(
            su_mpa=41.0 + rng.uniform(0.0, 2.0),
            k_rate=0.0014 + rng.uniform(0.0, 2e-4),
            m0=40.0 + rng.uniform(0.0, 10.0),
            residual_se_mpa=0.0,
            calibrated_at=None,
            n_points=0,
        ),
        PRECAST: StrengthMaturityModel(
            su_mpa=54.0 + rng.uniform(0.0, 2.0),
            k_rate=0.002,
            m0=40.0,
            residual_se_mpa=0.0,
            calibrated_at=None,
            n_points=0,
        ),
    }

    elements: list[Element] = []
    edges: list[tuple[str, str]] = []
    schedule: dict[str, datetime] = {}
    mix_for_element: dict[str, str] = {}
    for span in range(1, cfg.n_spans + 1):
        span_start = PROJECT_START + timedelta(days=SPAN_STAGGER_DAYS * (span - 1))
        prev: str | None = None
        for stage_idx, (stage, kind) in enumerate(STAGES):
            eid = _element_id(span, stage)
            placed = span_start + timedelta(days=STAGE_GAP_DAYS * stage_idx)
            design = 40.0 if kind is ElementKind.GIRDER_OR_DECK_PANEL else 30.0
            elements.append(
                Element(
                    id=eid,
                    kind=kind,
                    location=SpatialRef.at_station(1000.0 + 60.0 * (span - 1) + 12.0 * stage_idx, 0.0),
                    planned_placement=placed,
                    design_strength_mpa=design,
                )
            )
            schedule[eid] = placed
            mix_for_element[eid] = PRECAST if kind is ElementKind.GIRDER_OR_DECK_PANEL else CAST_IN_PLACE
            if prev is not None:
                edges.append((prev, eid))
            prev = eid

    return SimProject(
        graph=build_element_graph(elements, edges),
        ruleset=parse_ruleset(default_ruleset_doc()),
        schedule=schedule,
        mix_truth=mix_truth,
        mix_for_element=mix_for_element,
        start=PROJECT_START,
    )


def synthesize_temperature(
    placement_at: datetime, duration_h: float, cfg: SimConfig, element: ElementId = "synthetic"
) -> TemperatureHistory:
    """Ambient sinusoid (24 h period) plus a hydration bump: linear rise to
    the peak, then exponential decay. Sampled every 0.5 h, deterministic."""
    if duration_h <= 0:
        raise ValueError("duration_h must be > 0")
    bump = cfg.hydration_bump
    ambient = cfg.ambient
    n = int(round(duration_h / 0.5))
    samples = []
    epoch_h = placement_at.timestamp() / 3600.0
    for i in range(n + 1):
        h = 0.5 * i
        phase = 2.0 * math.pi * ((epoch_h + h) % 24.0) / 24.0
        temp = ambient.mean_c + ambient.daily_amplitude_c * math.sin(phase)
        if bump.peak_at_h > 0 and h <= bump.peak_at_h:
            temp += bump.peak_delta_c * (h / bump.peak_at_h)
        else:
            temp += bump.peak_delta_c * math.exp(-(h - bump.peak_at_h) / bump.decay_h)
        samples.append((placement_at + timedelta(hours=h), round(temp, 3)))
    return TemperatureHistory(element=element, samples=tuple(samples))


def _iso(dt: datetime) -> str:
    return format_utc(dt.replace(microsecond=0))


def _record(
    event_id: str,
    event_type: str,
    occurred: datetime,
    recorded: datetime,
    element: ElementId,
    payload: dict,
    source: str,
) -> RawRecord:
    body = {
        "event_id": event_id,
        "event_type": event_type,
        "occurred_at": _iso(occurred),
        "recorded_at": _iso(recorded),
        "subject": {"element_id": element},
        "payload": payload,
        "source": source,
    }
    return RawRecord(source=source, body=body, received_at=parse_utc(_iso(recorded)))


def _truth_lab_strength(
    truth: StrengthMaturityModel, age_days: float, ref_temp_c: float = 23.0
) -> float:
    maturity = ref_temp_c * 24.0 * age_days
    return hyperbolic_strength(truth.su_mpa, truth.k_rate, truth.m0, maturity)


def emit_event_stream(project: SimProject, cfg: SimConfig) -> list[RawRecord]:
    """Full scenario stream, sorted by recorded_at (arrival order), which is
    deliberately not occurrence order so alignment gets exercised."""
    rng = random.Random(cfg.seed + 1)
    records: list[RawRecord] = []
    defects_by_element: dict[str, set[DefectKind]] = {}
    for defect in cfg.defects:
        for stage, kind in STAGES:
            if kind is defect.stage:
                defects_by_element.setdefault(_element_id(1, stage), set()).add(defect.kind)

    ruleset = project.ruleset
    for eid in project.graph.topological_order():
        element = project.graph.elements[eid]
        placed = project.schedule[eid]
        defects = defects_by_element.get(eid, set())
        mix_id = project.mix_for_element[eid]
        truth = project.mix_truth[mix_id]
        kind_rules = ruleset.for_kind(element.kind)
        precast = element.kind is ElementKind.GIRDER_OR_DECK_PANEL

        # Pre-placement inspections, optionally with one omitted.
        required = list(kind_rules.required_inspections) if kind_rules else []
        skip_first = DefectKind.MISSING_INSPECTION in defects
        for idx, req in enumerate(required):
            if skip_first and idx == 0:
                continue
            occurred = placed - timedelta(hours=36.0 - 4.0 * idx)
            recorded = occurred + timedelta(hours=rng.uniform(*cfg.inspection_upload_delay_h))
            records.append(
                _record(
                    f"{eid}-insp-{req.code}",
                    "InspectionCompleted",
                    occurred,
                    recorded,
                    eid,
                    {"inspection_code": req.code, "phase": req.phase.value, "result": "pass", "notes": ""},
                    "inspection-app",
                )
            )

        # Batch ticket and placement (installation, for precast).
        batch_id = f"B-{eid}"
        ticket_at = placed - timedelta(days=3 if precast else 0, hours=1.5)
        records.append(
            _record(
                f"{eid}-batch",
                "BatchTicket",
                ticket_at,
                ticket_at + timedelta(hours=2),
                eid,
                {
                    "batch_id": batch_id,
                    "mix_id": mix_id,
                    "volume_m3": round(rng.uniform(18.0, 40.0), 1),
                    "batched_at": _iso(ticket_at),
                },
                "batch-plant",
            )
        )
        phase = 2.0 * math.pi * ((placed.timestamp() / 3600.0) % 24.0) / 24.0
        ambient_now = cfg.ambient.mean_c + cfg.ambient.daily_amplitude_c * math.sin(phase)
        records.append(
            _record(
                f"{eid}-placement",
                "PlacementRecorded",
                placed,
                placed + timedelta(hours=5),
                eid,
                {
                    "batch_id": batch_id,
                    "started_at": _iso(placed),
                    "finished_at": _iso(placed + timedelta(hours=4)),
                    "ambient_temp": {"magnitude": round(ambient_now, 3), "unit": "degC"},
                },
                "field-office",
            )
        )

        if precast:
            # Plant certificates: acceptance-age results available at install.
            freq = kind_rules.testing_frequency if kind_rules else 2
            for i in range(freq):
                base = _truth_lab_strength(truth, ACCEPTANCE_AGE_DAYS)
                strength = base * (1.0 + rng.gauss(0.0, STRENGTH_NOISE_CV))
                occurred = placed - timedelta(days=2)
                records.append(
                    _record(
                        f"{eid}-cert-{i}",
                        "LabResult",
                        occurred,
                        occurred + timedelta(hours=12),
                        eid,
                        {
                            "specimen_id": f"{eid}-C{i}",
                            "age_days": ACCEPTANCE_AGE_DAYS,
                            "strength": {"magnitude": round(strength, 3), "unit": "MPa"},
                            "cured": "lab",
                        },
                        "precast-plant",
                    )
                )
            continue  # no embedded sensors or cast specimens for precast

        # Embedded temperature sensors: dense for 48 h, 2 h cadence afterward.
        series = synthesize_temperature(placed, MONITOR_HOURS, cfg, element=eid)
        indices = list(range(0, 97)) + list(range(100, len(series.samples), 4))
        gap = DefectKind.SENSOR_GAP in defects
        for idx in indices:
            at, temp = series.samples[idx]
            offset_h = (at - placed).total_seconds() / 3600.0
            if gap and 24.0 < offset_h < 30.0:
                continue
            records.append(
                _record(
                    f"{eid}-ts-{idx:04d}",
                    "SensorReading",
                    at,
                    at + timedelta(minutes=15),
                    eid,
                    {"sensor_id": f"TS-{eid}", "temp": {"magnitude": temp, "unit": "degC"}},
                    "sensor-gateway",
                )
            )

        # Cast specimens: a calibration series for the first element of the
        # mix, quality-control breaks at 7 days, acceptance breaks at 28 days.
        ages: list[float] = []
        if _is_calibration_element(project, eid, mix_id):
            ages.extend(CALIBRATION_AGES_DAYS)
        freq = kind_rules.testing_frequency if kind_rules else 2
        ages.extend([QC_AGE_DAYS] * freq)
        ages.extend([ACCEPTANCE_AGE_DAYS] * freq)
        weak = DefectKind.WEAK_BATCH in defects
        late_fail = DefectKind.LATE_FAILING_LAB in defects
        for i, age in enumerate(ages):
            base = _truth_lab_strength(truth, age)
            factor = 1.0
            if weak:
                factor = WEAK_BATCH_FACTOR
            elif late_fail and age >= ACCEPTANCE_AGE_DAYS:
                factor = LATE_FAIL_FACTOR
            strength = base * factor * (1.0 + rng.gauss(0.0, STRENGTH_NOISE_CV))
            occurred = placed + timedelta(days=age)
            recorded = occurred + timedelta(days=rng.uniform(*cfg.lab_result_delay_days))
            records.append(
                _record(
                    f"{eid}-lab-{age:g}d-{i}",
                    "LabResult",
                    occurred,
                    recorded,
                    eid,
                    {
                        "specimen_id": f"{eid}-S{i}",
                        "age_days": age,
                        "strength": {"magnitude": round(max(strength, 0.0), 3), "unit": "MPa"},
                        "cured": "lab",
                    },
                    "materials-lab",
                )
            )

    records.extend(_scripted_decisions(project, cfg, defects_by_element))
    records.sort(key=lambda r: (r.body["recorded_at"], r.body["event_id"]))
    return records


def _is_calibration_element(project: SimProject, eid: ElementId, mix_id: str) -> bool:
    """First scheduled cast-in-place element using the mix."""
    candidates = [
        other
        for other, m in project.mix_for_element.items()
        if m == mix_id
        and project.graph.elements[other].kind is not ElementKind.GIRDER_OR_DECK_PANEL
    ]
    if not candidates:
        return False
    first = min(candidates, key=lambda e: (project.schedule[e], e))
    return first == eid


def _decision(
    eid: ElementId,
    action: str,
    at: datetime,
    actor: str,
    role: str,
    rationale: str,
) -> RawRecord:
    return _record(
        f"{eid}-dec-{action}",
        "HumanDecision",
        at,
        at + timedelta(minutes=1),
        eid,
        {"actor": actor, "role": role, "action": action, "rationale": rationale},
        "decision-console",
    )


def _scripted_decisions(
    project: SimProject, cfg: SimConfig, defects_by_element: Mapping[str, set[DefectKind]]
) -> list[RawRecord]:
    records: list[RawRecord] = []
    for eid in project.graph.topological_order():
        element = project.graph.elements[eid]
        placed = project.schedule[eid]
        defects = defects_by_element.get(eid, set())
        precast = element.kind is ElementKind.GIRDER_OR_DECK_PANEL
        release_at = placed + timedelta(days=1.5 if precast else 8.2)

        if DefectKind.MISSING_INSPECTION in defects:
            continue  # inspection never closed out; element stays Pending
        if DefectKind.WEAK_BATCH in defects:
            records.append(
                _decision(
                    eid,
                    "hold",
                    release_at,
                    "k.tanaka",
                    "Engineer",
                    "early-age strength trending deficient; batch under investigation",
                )
            )
            continue
        if DefectKind.SENSOR_GAP in defects:
            rationale = (
                "override=true; sensor outage interrupted maturity tracking; "
                "released per engineering judgment with follow-up testing"
            )
            records.append(_decision(eid, "release", release_at, "k.tanaka", "Engineer", rationale))
            continue

        records.append(
            _decision(
                eid,
                "release",
                release_at,
                "k.tanaka",
                "Engineer",
                "required inspections complete and strength trending compliant",
            )
        )
        if DefectKind.LATE_FAILING_LAB in defects:
            # The 28-day breaks fail; QA opens an NCR after the last arrives.
            worst_arrival = placed + timedelta(
                days=ACCEPTANCE_AGE_DAYS + cfg.lab_result_delay_days[1]
            )
            records.append(
                _decision(
                    eid,
                    "open_ncr",
                    worst_arrival + timedelta(hours=2),
                    "m.okafor",
                    "QaManager",
                    "28-day acceptance results below specification limit",
                )
            )
    return records


def write_scenario(out_dir: str | Path, cfg: SimConfig) -> dict[str, Path]:
    """Write project.json, ruleset.json, and events.jsonl for a config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    project = generate_project(cfg)

    project_doc = {
        "meta": {
            "seed": cfg.seed,
            "n_spans": cfg.n_spans,
            "defects": [{"kind": d.kind.value, "stage": d.stage.value} for d in cfg.defects],
        },
        "elements": [
            {
                "id": e.id,
                "kind": e.kind.value,
                "location": e.location.to_json(),
                "planned_placement": _iso(e.planned_placement),
                "design_strength_mpa": e.design_strength_mpa,
            }
            for e in (project.graph.elements[eid] for eid in sorted(project.graph.elements))
        ],
        "edges": sorted([list(edge) for edge in project.graph.edges]),
        "schedule": {eid: _iso(at) for eid, at in sorted(project.schedule.items())},
    }
    project_path = out / "project.json"
    project_path.write_text(json.dumps(project_doc, indent=2) + "\n", encoding="utf-8")

    ruleset_path = out / "ruleset.json"
    ruleset_path.write_text(json.dumps(default_ruleset_doc(), indent=2) + "\n", encoding="utf-8")

    events_path = out / "events.jsonl"
    stream = emit_event_stream(project, cfg)
    with open(events_path, "w", encoding="utf-8") as fh:
        for record in stream:
            fh.write(json.dumps(record.body) + "\n")

    return {"project": project_path, "ruleset": ruleset_path, "events": events_path}


def load_project(path: str | Path) -> ElementGraph:
    """Rebuild the element graph from a project.json document."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    elements = []
    for entry in doc["elements"]:
        loc = entry["location"]
        if "element_id" in loc:
            location = SpatialRef.for_element(loc["element_id"])
        elif "station_offset" in loc:
            location = SpatialRef.at_station(
                loc["station_offset"]["station_m"], loc["station_offset"]["offset_m"]
            )
        else:
            location = SpatialRef.at_gps(loc["gps"]["lat"], loc["gps"]["lon"])
        elements.append(
            Element(
                id=entry["id"],
                kind=ElementKind(entry["kind"]),
                location=location,
                planned_placement=parse_utc(entry["planned_placement"]),
                design_strength_mpa=entry.get("design_strength_mpa"),
                other_name=entry.get("other_name"),
            )
        )
    edges = [tuple(edge) for edge in doc["edges"]]
    return build_element_graph(elements, edges)
