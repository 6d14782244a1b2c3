"""HTTP facade over the twin: ingestion, element state, warnings, decisions,
evidence bundles, and the audit trail.

The durable store is an append-only JSON Lines event log under the data
directory; state is rebuilt by replaying that log (in its applied order) on
startup. All mutations funnel through one lock (single-writer contract);
reads serve immutable snapshots and never mutate state.

Authentication is a static token-to-role map: requests carry
``Authorization: Bearer <token>`` and the map lives in a JSON file
``{"<token>": {"actor": ..., "role": ...}}``.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Mapping

from fastapi import Depends, FastAPI, Request
from fastapi.responses import JSONResponse

from . import engine
from .canon import format_utc
from .domain import EventType, QaEvent, SpatialRef
from .engine import (
    DecisionRejected,
    GateBlocked,
    IllegalTransition,
    QaState,
    TwinState,
    UnauthorizedRole,
)
from .ingest import (
    IngestConfig,
    event_to_json,
    ingest_stream,
    map_to_element,
    parse_jsonl_text,
    validate_record,
)
from .maturity import TemperatureHistory, forecast_readiness, predict_strength
from .rules import parse_ruleset
from .simulator import load_project

DEFAULT_TOKENS: dict[str, dict[str, str]] = {
    "inspector-token": {"actor": "field.inspector", "role": "Inspector"},
    "engineer-token": {"actor": "site.engineer", "role": "Engineer"},
    "qa-manager-token": {"actor": "qa.manager", "role": "QaManager"},
}


@dataclass(frozen=True)
class ApiSession:
    actor: str
    role: str
    token: str


class TwinService:
    """Owns the twin state, the durable event log, and the single writer lock."""

    def __init__(self, data_dir: Path, tokens_path: Path | None = None):
        self.data_dir = Path(data_dir)
        self.graph = load_project(self.data_dir / "project.json")
        ruleset_doc = json.loads((self.data_dir / "ruleset.json").read_text(encoding="utf-8"))
        self.ruleset = parse_ruleset(ruleset_doc)
        if tokens_path is not None:
            self.tokens: Mapping[str, Mapping[str, str]] = json.loads(
                Path(tokens_path).read_text(encoding="utf-8")
            )
        else:
            self.tokens = DEFAULT_TOKENS

        # The service's own durable store; distinct from any scenario input
        # file (events.jsonl) that may sit in the same directory.
        self.log_path = self.data_dir / "event-log.jsonl"
        self.lock = threading.Lock()
        self.state: TwinState = engine.initial_state(self.graph, self.ruleset)
        self._replay_log()

    def _replay_log(self) -> None:
        if not self.log_path.exists():
            return
        cfg = IngestConfig()
        state = self.state
        for raw in parse_jsonl_text(self.log_path.read_text(encoding="utf-8"), "log"):
            event = validate_record(raw, config=cfg)
            if event.event_type is not EventType.SPEC_REVISION:
                mapping = map_to_element(event.subject, self.graph, cfg.tolerances)
                event = replace(event, element_id=mapping.element)
            state = engine.apply_event(state, event)
        self.state = state

    def _append_log(self, events: list[QaEvent]) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            for event in events:
                fh.write(json.dumps(event_to_json(event)) + "\n")
            fh.flush()

    def session_for(self, token: str | None) -> ApiSession | None:
        if token is None:
            return None
        entry = self.tokens.get(token)
        if entry is None:
            return None
        return ApiSession(actor=str(entry["actor"]), role=str(entry["role"]), token=token)

    def ingest_text(self, text: str):
        raws = parse_jsonl_text(text, "api")
        with self.lock:
            events, report = ingest_stream(raws, self.graph, known_ids=self.state.seen_event_ids)
            state = self.state
            for event in events:
                state = engine.apply_event(state, event)
            self.state = state
            self._append_log(list(events))
        return report

    def apply_decision(self, element_id: str, session: ApiSession, action: str, rationale: str):
        """Returns (QaStateRecord json, None) or (None, DecisionRejected)."""
        with self.lock:
            now = datetime.now(timezone.utc).replace(microsecond=0)
            seq = len(self.state.seen_event_ids) + 1
            event = QaEvent(
                event_id=f"api-dec-{seq:06d}",
                event_type=EventType.HUMAN_DECISION,
                occurred_at=now,
                recorded_at=now,
                subject=SpatialRef.for_element(element_id),
                payload={
                    "actor": session.actor,
                    "role": session.role,
                    "action": action,
                    "rationale": rationale,
                },
                source="api",
                element_id=element_id,
            )
            try:
                self.state = engine.decide(self.state, element_id, event)
                error: DecisionRejected | None = None
            except DecisionRejected as exc:
                self.state = exc.state
                error = exc
            self._append_log([event])
            if error is not None:
                return None, error
            return self.state.records[element_id].state.to_json(), None


def _element_summary(state: TwinState, element_id: str) -> dict:
    record = state.records[element_id]
    element = record.element
    evaluation = engine.evaluate_qa(state, element_id)
    station = element.location.station_offset
    return {
        "id": element_id,
        "kind": element.kind.value,
        "state": record.state.state.value,
        "since": format_utc(record.state.since),
        "basis": record.state.basis.value,
        "recommended": evaluation.recommended.value,
        "gate_open": evaluation.gate_open,
        "warnings": [w.to_json() for w in evaluation.warnings],
        "station_m": station[0] if station else None,
        "offset_m": station[1] if station else None,
        "design_strength_mpa": element.design_strength_mpa,
        "planned_placement": format_utc(element.planned_placement),
    }


def _element_detail(state: TwinState, element_id: str) -> dict:
    record = state.records[element_id]
    evaluation = engine.evaluate_qa(state, element_id)
    doc = _element_summary(state, element_id)
    doc.update(
        {
            "rationale": record.state.rationale,
            "recommendation_rationale": evaluation.rationale,
            "completeness": evaluation.completeness.to_json(),
            "material": evaluation.material.to_json(),
            "maturity_degc_h": evaluation.maturity_degc_h,
            "event_counts": {
                "inspections": len(record.inspections),
                "batch_tickets": len(record.batch_tickets),
                "placement": 1 if record.placement else 0,
                "results": len(record.results),
                "sensor_readings": len(record.sensor_readings),
                "decisions": len(record.decisions),
            },
        }
    )
    return doc


def build_app(data_dir: Path, tokens_path: Path | None = None) -> FastAPI:
    service = TwinService(data_dir, tokens_path)
    app = FastAPI(title="twinqa", docs_url=None, redoc_url=None)
    app.state.twin = service  # exposed for tests and the CLI

    def auth(request: Request) -> ApiSession | None:
        header = request.headers.get("authorization", "")
        token = header[7:] if header.lower().startswith("bearer ") else None
        return service.session_for(token)

    def unauthenticated() -> JSONResponse:
        return JSONResponse({"reason": "unauthenticated"}, status_code=401)

    @app.get("/api/session")
    def get_session(session: ApiSession | None = Depends(auth)):
        if session is None:
            return unauthenticated()
        return {"actor": session.actor, "role": session.role}

    @app.post("/api/events")
    async def post_events(request: Request, session: ApiSession | None = Depends(auth)):
        if session is None:
            return unauthenticated()
        body = (await request.body()).decode("utf-8", errors="replace")
        if not body.strip():
            empty = {"accepted": 0, "duplicates": 0, "quarantined": [], "unit_conversions": 0}
            return JSONResponse({"reason": "empty body", "report": empty}, status_code=422)
        report = service.ingest_text(body)
        return report.to_json()

    @app.get("/api/elements")
    def get_elements(session: ApiSession | None = Depends(auth)):
        if session is None:
            return unauthenticated()
        state = service.state
        return {"elements": [_element_summary(state, eid) for eid in sorted(state.records)]}

    @app.get("/api/elements/{element_id}")
    def get_element(element_id: str, session: ApiSession | None = Depends(auth)):
        if session is None:
            return unauthenticated()
        state = service.state
        if element_id not in state.records:
            return JSONResponse({"reason": "unknown element"}, status_code=404)
        return _element_detail(state, element_id)

    @app.get("/api/elements/{element_id}/evidence")
    def get_evidence(element_id: str, session: ApiSession | None = Depends(auth)):
        if session is None:
            return unauthenticated()
        state = service.state
        if element_id not in state.records:
            return JSONResponse({"reason": "unknown element"}, status_code=404)
        return engine.evidence_bundle(state, element_id)

    @app.post("/api/elements/{element_id}/decision")
    async def post_decision(
        element_id: str, request: Request, session: ApiSession | None = Depends(auth)
    ):
        if session is None:
            return unauthenticated()
        state = service.state
        if element_id not in state.records:
            return JSONResponse({"reason": "unknown element"}, status_code=404)
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"reason": "invalid JSON body"}, status_code=422)
        action = body.get("action")
        rationale = body.get("rationale", "")
        if action not in ("release", "hold", "lift_hold", "open_ncr", "close_ncr"):
            return JSONResponse({"reason": f"unknown action {action!r}"}, status_code=422)
        if not isinstance(rationale, str) or not rationale.strip():
            return JSONResponse({"reason": "rationale must be non-empty"}, status_code=422)

        record, error = service.apply_decision(element_id, session, action, rationale)
        if error is None:
            return record
        if isinstance(error, UnauthorizedRole):
            return JSONResponse(
                {"reason": "UnauthorizedRole", "role": error.role, "action": error.action},
                status_code=403,
            )
        if isinstance(error, GateBlocked):
            return JSONResponse(
                {"reason": "GateBlocked", "predecessors": error.predecessors},
                status_code=409,
            )
        assert isinstance(error, IllegalTransition)
        return JSONResponse(
            {
                "reason": "IllegalTransition",
                "from": error.from_state.value,
                "action": error.action,
            },
            status_code=409,
        )

    @app.get("/api/warnings")
    def get_warnings(session: ApiSession | None = Depends(auth)):
        if session is None:
            return unauthenticated()
        state = service.state
        return {"warnings": [w.to_json() for w in engine.early_warnings(state)]}

    @app.get("/api/audit")
    def get_audit(session: ApiSession | None = Depends(auth)):
        if session is None:
            return unauthenticated()
        state = service.state
        return {"audit": [e.to_json() for e in state.audit]}

    @app.get("/api/elements/{element_id}/whatif")
    def get_whatif(
        element_id: str,
        temp_c: float,
        threshold: float,
        session: ApiSession | None = Depends(auth),
    ):
        if session is None:
            return unauthenticated()
        state = service.state
        if element_id not in state.records:
            return JSONResponse({"reason": "unknown element"}, status_code=404)
        if not (0.0 < threshold <= 1.0) or not math.isfinite(threshold):
            return JSONResponse(
                {"reason": "threshold must be a fraction in (0, 1]"}, status_code=422
            )
        if not math.isfinite(temp_c) or not (-50.0 <= temp_c <= 100.0):
            return JSONResponse({"reason": "temp_c out of range"}, status_code=422)

        record = state.records[element_id]
        element = record.element
        mix_id = record.batch_tickets[-1].payload["mix_id"] if record.batch_tickets else None
        model = state.mixes[str(mix_id)].model if mix_id and str(mix_id) in state.mixes else None
        if (
            model is None
            or len(record.sensor_samples) < 2
            or element.design_strength_mpa is None
            or record.max_gap_h > state.maturity_cfg.max_gap_h
        ):
            return JSONResponse({"reason": "InsufficientData"}, status_code=409)

        history = TemperatureHistory(element_id, record.sensor_samples)
        threshold_mpa = threshold * element.design_strength_mpa
        forecast = forecast_readiness(model, history, temp_c, threshold_mpa, state.maturity_cfg)
        start = record.sensor_samples[0][0]
        anchor = record.sensor_samples[-1][0]
        maturity_now = record.maturity_degc_h

        # Strength-vs-time curve for the console chart: the client renders
        # these points verbatim, it never recomputes strength itself.
        curve = []
        rate = max(temp_c - state.maturity_cfg.datum_temp_c, 0.0)
        horizon_h = 24.0
        if forecast is not None:
            horizon_h = max((forecast - anchor).total_seconds() / 3600.0 + 24.0, 24.0)
        steps = 48
        for i in range(steps + 1):
            h = horizon_h * i / steps
            prediction = predict_strength(model, maturity_now + rate * h)
            curve.append(
                {
                    "at": format_utc(anchor + timedelta(hours=h)),
                    "hours_from_start": round(
                        (anchor - start).total_seconds() / 3600.0 + h, 3
                    ),
                    "mean_mpa": round(prediction.mean_mpa, 3),
                    "lower_mpa": round(prediction.lower_mpa, 3),
                    "upper_mpa": round(prediction.upper_mpa, 3),
                }
            )

        measured_points = [
            {
                "age_days": float(e.payload["age_days"]),
                "strength_mpa": float(e.payload["strength"]["magnitude"]),
                "cured": str(e.payload["cured"]),
            }
            for e in record.results
        ]
        doc = {
            "element": element_id,
            "reachable": forecast is not None,
            "forecast_at": format_utc(forecast) if forecast else None,
            "hours_from_start": (
                round((forecast - start).total_seconds() / 3600.0, 3) if forecast else None
            ),
            "threshold_mpa": round(threshold_mpa, 3),
            "assumed_temp_c": temp_c,
            "curve": curve,
            "measured": measured_points,
        }
        return doc

    return app
