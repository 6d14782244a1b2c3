from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from conftest import RULESET_DOC, make_bridge_graph
from twinqa.domain import EventType, QaEvent, SpatialRef
from twinqa.engine import (
    DecisionBasis,
    GateBlocked,
    IllegalTransition,
    QaState,
    UnauthorizedRole,
    WarningKind,
    apply_event,
    decide,
    early_warnings,
    evaluate_qa,
    evidence_bundle,
    gate_open,
    initial_state,
    replay,
    state_export,
    state_hash,
)
from twinqa.maturity import hyperbolic_strength
from twinqa.rules import MaterialStatus, parse_ruleset

T0 = datetime(2026, 3, 2, 8, 0, tzinfo=timezone.utc)
THETA = (40.0, 0.002, 50.0)


class Scenario:
    """Event factory with an id counter and a time cursor."""

    def __init__(self):
        self.graph = make_bridge_graph()
        self.ruleset = parse_ruleset(RULESET_DOC)
        self.state = initial_state(self.graph, self.ruleset)
        self.n = 0

    def _ev(self, element, event_type, payload, at, recorded=None):
        self.n += 1
        return QaEvent(
            event_id=f"ev-{self.n:04d}",
            event_type=event_type,
            occurred_at=at,
            recorded_at=recorded or (at + timedelta(minutes=30)),
            subject=SpatialRef.for_element(element),
            payload=payload,
            source="test",
            element_id=element,
        )

    def apply(self, event):
        self.state = apply_event(self.state, event)
        return self.state

    def inspect(self, element, code, at, result="pass", phase="pre-placement"):
        return self.apply(
            self._ev(
                element,
                EventType.INSPECTION_COMPLETED,
                {"inspection_code": code, "phase": phase, "result": result, "notes": ""},
                at,
            )
        )

    def ticket(self, element, at, mix_id="M1", batch_id=None):
        return self.apply(
            self._ev(
                element,
                EventType.BATCH_TICKET,
                {
                    "batch_id": batch_id or f"B-{element}",
                    "mix_id": mix_id,
                    "volume_m3": 25.0,
                    "batched_at": at,
                },
                at,
            )
        )

    def place(self, element, at):
        return self.apply(
            self._ev(
                element,
                EventType.PLACEMENT_RECORDED,
                {
                    "batch_id": f"B-{element}",
                    "started_at": at,
                    "finished_at": at + timedelta(hours=4),
                    "ambient_temp": {"magnitude": 18.0, "unit": "degC"},
                },
                at,
            )
        )

    def sensor(self, element, at, temp_c):
        return self.apply(
            self._ev(
                element,
                EventType.SENSOR_READING,
                {"sensor_id": f"TS-{element}", "temp": {"magnitude": temp_c, "unit": "degC"}},
                at,
            )
        )

    def lab(self, element, at, age_days, strength_mpa, cured="lab"):
        return self.apply(
            self._ev(
                element,
                EventType.LAB_RESULT,
                {
                    "specimen_id": f"SP-{self.n}",
                    "age_days": age_days,
                    "strength": {"magnitude": strength_mpa, "unit": "MPa"},
                    "cured": cured,
                },
                at,
            )
        )

    def decision_event(self, element, action, at, role="Engineer", actor="pat", rationale="ok"):
        return self._ev(
            element,
            EventType.HUMAN_DECISION,
            {"actor": actor, "role": role, "action": action, "rationale": rationale},
            at,
        )

    def decide(self, element, action, at=None, role="Engineer", actor="pat", rationale="ok"):
        at = at or (T0 + timedelta(hours=self.n))
        self.state = decide(self.state, element, self.decision_event(element, action, at, role, actor, rationale))
        return self.state

    def truth_lab_strength(self, age_days):
        return hyperbolic_strength(*THETA, 23.0 * 24.0 * age_days)

    def bring_to_provisional(self, element="shaft", placed_at=T0):
        """Inspections + ticket + placement + calibration results + sensors."""
        codes = {
            "shaft": ["EXCAVATION_CONDITIONS", "REBAR_CAGE"],
            "column": ["REBAR_LAYOUT", "CLEAR_COVER", "FORMWORK_STABILITY"],
            "cap": ["REBAR_LAYOUT", "FORMWORK_STABILITY"],
        }[element]
        for i, code in enumerate(codes):
            self.inspect(element, code, placed_at - timedelta(hours=24 - i))
        self.ticket(element, placed_at - timedelta(hours=2))
        self.place(element, placed_at)
        for i in range(37):  # 72 h at 2 h cadence, constant 20 degC
            self.sensor(element, placed_at + timedelta(hours=2.0 * i), 20.0)
        for age in (1.0, 2.0, 3.0, 5.0):
            self.lab(element, placed_at + timedelta(days=age), age, self.truth_lab_strength(age))
        return self.state


class TestApplyEvent:
    def test_duplicate_event_is_noop(self):
        s = Scenario()
        event = s._ev("shaft", EventType.INSPECTION_COMPLETED,
                      {"inspection_code": "X", "phase": "pre-placement", "result": "pass", "notes": ""},
                      T0)
        s.apply(event)
        h1 = state_hash(s.state)
        s.apply(event)
        assert state_hash(s.state) == h1

    def test_gate_violation_forces_hold(self):
        s = Scenario()
        s.place("column", T0)  # shaft not Released
        record = s.state.records["column"]
        assert record.state.state is QaState.HOLD
        assert record.state.basis is DecisionBasis.AUTOMATIC
        warnings = evaluate_qa(s.state, "column").warnings
        assert any(w.kind is WarningKind.GATE_VIOLATION for w in warnings)

    def test_spec_revision_swaps_version_and_keeps_audit(self):
        s = Scenario()
        s.place("column", T0)  # generates one audit entry (forced hold)
        audit_before = s.state.audit
        doc = {**RULESET_DOC, "version": "B"}
        s.apply(s._ev("shaft", EventType.SPEC_REVISION,
                      {"ruleset_version": "B", "document": doc}, T0 + timedelta(hours=1)))
        assert s.state.ruleset.version == "B"
        assert s.state.audit[: len(audit_before)] == audit_before
        assert evaluate_qa(s.state, "shaft").completeness.ruleset_version == "B"

    def test_tightened_revision_demotes_provisional(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        assert s.state.records["shaft"].state.state is QaState.PROVISIONAL
        # Version B adds a required inspection the shaft never had.
        doc = {**RULESET_DOC, "version": "B"}
        doc["rules"] = {**doc["rules"]}
        doc["rules"]["DrilledShaft"] = {
            **doc["rules"]["DrilledShaft"],
            "required_inspections": doc["rules"]["DrilledShaft"]["required_inspections"]
            + [{"code": "SLURRY_CLEANLINESS", "phase": "pre-placement", "hold_point": False}],
        }
        s.apply(
            s._ev(
                "shaft",
                EventType.SPEC_REVISION,
                {"ruleset_version": "B", "document": doc},
                T0 + timedelta(days=6),
            )
        )
        record = s.state.records["shaft"]
        assert record.state.state is QaState.PENDING
        assert record.state.ruleset_version == "B"
        assert s.state.audit[-1].ruleset_version == "B"

    def test_unknown_element_raises(self):
        s = Scenario()
        event = s._ev("ghost", EventType.SENSOR_READING,
                      {"sensor_id": "t", "temp": {"magnitude": 20.0, "unit": "degC"}}, T0)
        from twinqa.domain import UnknownElement
        with pytest.raises(UnknownElement):
            s.apply(event)

    def test_out_of_order_sensor_sample_deterministic(self):
        s1 = Scenario()
        s1.sensor("shaft", T0, 20.0)
        s1.sensor("shaft", T0 + timedelta(hours=1), 22.0)
        s1.sensor("shaft", T0 + timedelta(hours=0.5), 21.0)  # straggler
        samples = s1.state.records["shaft"].sensor_samples
        assert [t for t, _ in samples] == [T0, T0 + timedelta(hours=0.5), T0 + timedelta(hours=1)]
        # Maturity equals the recomputed value over the sorted samples.
        assert s1.state.records["shaft"].maturity_degc_h == pytest.approx(
            0.5 * (20.0 + 21.0) * 0.5 + 0.5 * (21.0 + 22.0) * 0.5
        )


class TestEvaluateQa:
    def test_composed_provisional_path(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        ev = evaluate_qa(s.state, "shaft")
        assert s.state.records["shaft"].state.state is QaState.PROVISIONAL
        assert ev.material.status is MaterialStatus.TRENDING_COMPLIANT
        assert ev.gate_open

    def test_missing_inspection_stays_pending(self):
        s = Scenario()
        s.inspect("shaft", "EXCAVATION_CONDITIONS", T0 - timedelta(hours=2))
        s.place("shaft", T0)
        assert s.state.records["shaft"].state.state is QaState.PENDING
        ev = evaluate_qa(s.state, "shaft")
        assert any(w.kind is WarningKind.MISSING_INSPECTION for w in ev.warnings)

    def test_deficient_after_release_recommends_ncr(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        s.decide("shaft", "release", T0 + timedelta(days=8))
        assert s.state.records["shaft"].state.state is QaState.RELEASED
        # Late, failing 28-day results.
        s.lab("shaft", T0 + timedelta(days=28), 28.0, 18.0)
        s.lab("shaft", T0 + timedelta(days=28, hours=1), 28.0, 18.5)
        ev = evaluate_qa(s.state, "shaft")
        assert ev.material.status is MaterialStatus.DEFICIENT_MEASURED
        assert ev.recommended is QaState.NON_CONFORMANCE
        assert any(w.kind is WarningKind.LATE_EVIDENCE_CONFLICT for w in ev.warnings)
        assert s.state.records["shaft"].state.state is QaState.RELEASED  # not automatic

    def test_evidence_regression_demotes_provisional(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        assert s.state.records["shaft"].state.state is QaState.PROVISIONAL
        # A failed re-inspection regresses completeness.
        s.inspect("shaft", "REBAR_CAGE", T0 + timedelta(days=6), result="fail")
        assert s.state.records["shaft"].state.state is QaState.PENDING
        assert evaluate_qa(s.state, "shaft").recommended is QaState.HOLD

    def test_measured_supersedes_prediction_toggles(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        s.lab("shaft", T0 + timedelta(days=28), 28.0, 35.0)
        base = evaluate_qa(s.state, "shaft")
        assert base.material.status is MaterialStatus.COMPLIANT_MEASURED
        # Toggling prediction inputs (more sensor data) cannot change it.
        s.sensor("shaft", T0 + timedelta(days=28, hours=1), 5.0)
        after = evaluate_qa(s.state, "shaft")
        assert after.material.status is MaterialStatus.COMPLIANT_MEASURED
        assert after.recommended == base.recommended


class TestDecide:
    def test_release_happy_path_appends_audit(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        before = len(s.state.audit)
        s.decide("shaft", "release", T0 + timedelta(days=8))
        record = s.state.records["shaft"]
        assert record.state.state is QaState.RELEASED
        assert record.state.basis is DecisionBasis.HUMAN_DECISION
        new_entries = s.state.audit[before:]
        assert len(new_entries) == 1
        assert new_entries[0].to_json()["to"] == "Released"

    def test_inspector_cannot_release(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        with pytest.raises(UnauthorizedRole) as exc:
            s.state = decide(
                s.state, "shaft", s.decision_event("shaft", "release", T0 + timedelta(days=8), role="Inspector")
            )
        rejected = exc.value.state
        assert rejected.records["shaft"].state.state is QaState.PROVISIONAL
        assert rejected.audit[-1].outcome == "rejected"

    def test_gate_blocked_release(self):
        s = Scenario()
        # Column pending, shaft not released; override bypasses the state
        # requirement but never the gate.
        with pytest.raises(GateBlocked) as exc:
            s.state = decide(
                s.state,
                "column",
                s.decision_event("column", "release", T0, rationale="override=true emergency"),
            )
        assert exc.value.predecessors == ["shaft"]
        assert exc.value.state.audit[-1].outcome == "rejected"

    def test_release_from_pending_requires_override(self):
        s = Scenario()
        with pytest.raises(IllegalTransition):
            s.state = decide(s.state, "shaft", s.decision_event("shaft", "release", T0))
        s.state = decide(
            s.state, "shaft", s.decision_event("shaft", "release", T0 + timedelta(hours=1), rationale="override=true: advance work")
        )
        assert s.state.records["shaft"].state.state is QaState.RELEASED

    def test_hold_and_lift_hold_reevaluates(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        s.decide("shaft", "hold", T0 + timedelta(days=6))
        assert s.state.records["shaft"].state.state is QaState.HOLD
        s.decide("shaft", "lift_hold", T0 + timedelta(days=7))
        # lift_hold lands on Pending, then automatic re-evaluation promotes.
        assert s.state.records["shaft"].state.state is QaState.PROVISIONAL
        trail = [e.to_json() for e in s.state.audit if e.element == "shaft"]
        assert trail[-2]["to"] == "Pending" and trail[-1]["to"] == "Provisional"

    def test_ncr_roles_and_transitions(self):
        s = Scenario()
        with pytest.raises(UnauthorizedRole):
            s.state = decide(s.state, "shaft", s.decision_event("shaft", "open_ncr", T0, role="Engineer"))
        s.decide("shaft", "open_ncr", T0 + timedelta(hours=1), role="QaManager")
        assert s.state.records["shaft"].state.state is QaState.NON_CONFORMANCE
        with pytest.raises(IllegalTransition):
            s.state = decide(s.state, "shaft", s.decision_event("shaft", "open_ncr", T0 + timedelta(hours=2), role="QaManager"))
        s.decide("shaft", "close_ncr", T0 + timedelta(hours=3), role="QaManager")
        assert s.state.records["shaft"].state.state is QaState.HOLD

    def test_release_cascades_successor_gate(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        s.bring_to_provisional("column", placed_at=T0 + timedelta(days=10))
        # Column cannot be provisional while shaft is unreleased.
        assert s.state.records["column"].state.state is QaState.HOLD  # forced by gate violation
        s.decide("column", "lift_hold", T0 + timedelta(days=15), role="Engineer")
        assert s.state.records["column"].state.state is QaState.PENDING
        s.decide("shaft", "release", T0 + timedelta(days=16))
        # Releasing shaft re-evaluates column, which now becomes provisional.
        assert s.state.records["column"].state.state is QaState.PROVISIONAL


class TestGateOpen:
    def test_source_node_open(self):
        s = Scenario()
        assert gate_open(s.state, "shaft")

    def test_released_predecessor_opens(self):
        s = Scenario()
        s.decide("shaft", "release", T0, rationale="override=true")
        assert gate_open(s.state, "column")

    def test_provisional_is_not_released(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        assert s.state.records["shaft"].state.state is QaState.PROVISIONAL
        assert not gate_open(s.state, "column")


class TestEarlyWarnings:
    def test_fresh_project_empty(self):
        s = Scenario()
        assert early_warnings(s.state) == []

    def test_partial_data_on_sensor_gap(self):
        s = Scenario()
        s.sensor("shaft", T0, 20.0)
        s.sensor("shaft", T0 + timedelta(hours=6), 20.0)
        warnings = early_warnings(s.state)
        assert any(w.kind is WarningKind.PARTIAL_DATA and w.element == "shaft" for w in warnings)

    def test_strength_lag_against_planned_successor(self):
        # Fixture model (40, 0.002, 50) at 20 degC forecasts readiness at
        # 77.5 h, but the successor is planned at 48 h.
        import dataclasses

        from twinqa.domain import Element, ElementKind, SpatialRef, build_element_graph
        from twinqa.engine import initial_state as init

        elements = [
            Element("a", ElementKind.CAP, SpatialRef.at_station(0.0, 0.0), T0, 40.0),
            Element("b", ElementKind.DECK_POUR, SpatialRef.at_station(10.0, 0.0), T0 + timedelta(hours=48), 30.0),
        ]
        graph = build_element_graph(elements, [("a", "b")])
        s = Scenario()
        s.graph = graph
        s.state = init(graph, s.ruleset)
        s.ticket("a", T0 - timedelta(hours=1))
        s.place("a", T0)
        for age in (1.0, 2.0, 3.0, 5.0):
            s.lab("a", T0 + timedelta(days=age), age, s.truth_lab_strength(age))
        s.sensor("a", T0, 20.0)
        s.sensor("a", T0 + timedelta(hours=1), 20.0)
        warnings = early_warnings(s.state)
        assert any(w.kind is WarningKind.STRENGTH_LAG and w.element == "a" for w in warnings)

    def test_deterministic_ordering(self):
        s = Scenario()
        s.place("column", T0)
        s.place("deck", T0)
        kinds = [(w.element, w.kind.value) for w in early_warnings(s.state)]
        assert kinds == sorted(kinds)


class TestEvidenceBundle:
    def test_same_state_same_hash(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        b1 = evidence_bundle(s.state, "shaft")
        b2 = evidence_bundle(s.state, "shaft")
        assert b1["content_hash"] == b2["content_hash"]

    def test_one_event_changes_hash(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        before = evidence_bundle(s.state, "shaft")["content_hash"]
        s.sensor("shaft", T0 + timedelta(days=4, hours=1), 19.0)
        assert evidence_bundle(s.state, "shaft")["content_hash"] != before

    def test_hash_covers_document_minus_hash_field(self):
        from twinqa.canon import content_hash

        s = Scenario()
        s.bring_to_provisional("shaft")
        bundle = evidence_bundle(s.state, "shaft")
        claimed = bundle.pop("content_hash")
        assert content_hash(bundle) == claimed

    def test_released_bundle_lists_authorizing_entry(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        s.decide("shaft", "release", T0 + timedelta(days=8))
        bundle = evidence_bundle(s.state, "shaft")
        releases = [e for e in bundle["state_history"] if e["to"] == "Released"]
        assert len(releases) == 1 and releases[0]["seq"] > 0


class TestReplayAndAudit:
    def _event_log(self):
        s = Scenario()
        s.bring_to_provisional("shaft")
        s.decide("shaft", "release", T0 + timedelta(days=8))
        return s

    def test_empty_log_all_pending(self, bridge_graph, ruleset):
        state = replay(bridge_graph, ruleset, [])
        assert all(r.state.state is QaState.PENDING for r in state.records.values())

    def test_audit_accepted_entries_match_state_changes(self):
        s = self._event_log()
        accepted = [e for e in s.state.audit if e.outcome == "accepted"]
        assert all(e.from_state != e.to_state for e in accepted)
        rejected = [e for e in s.state.audit if e.outcome == "rejected"]
        assert all(e.from_state == e.to_state for e in rejected)
        seqs = [e.seq for e in s.state.audit]
        assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)

    def test_export_schema(self):
        s = self._event_log()
        doc = state_export(s.state)
        assert set(doc) == {"elements", "audit", "ruleset_version"}
        shaft = doc["elements"]["shaft"]
        assert set(shaft) == {"state", "since", "basis", "warnings"}
        assert doc["ruleset_version"] == "A"
