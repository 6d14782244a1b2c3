from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from conftest import RULESET_DOC, make_bridge_graph
from twinqa import engine
from twinqa.maturity import hyperbolic_strength
from twinqa.service import build_app
from twinqa.simulator import SimConfig, write_scenario

T0 = datetime(2026, 3, 2, 8, 0, tzinfo=timezone.utc)
ENG = {"Authorization": "Bearer engineer-token"}
INSP = {"Authorization": "Bearer inspector-token"}
QA = {"Authorization": "Bearer qa-manager-token"}
THETA = (40.0, 0.002, 50.0)


def iso(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def write_bridge_dir(tmp_path: Path) -> Path:
    """project.json + ruleset.json for the conftest bridge fixture."""
    graph = make_bridge_graph()
    doc = {
        "elements": [
            {
                "id": e.id,
                "kind": e.kind.value,
                "location": e.location.to_json(),
                "planned_placement": iso(e.planned_placement),
                "design_strength_mpa": e.design_strength_mpa,
            }
            for e in graph.elements.values()
        ],
        "edges": sorted([list(edge) for edge in graph.edges]),
    }
    (tmp_path / "project.json").write_text(json.dumps(doc, indent=2))
    (tmp_path / "ruleset.json").write_text(json.dumps(RULESET_DOC, indent=2))
    return tmp_path


def event_line(event_id, event_type, occurred, payload, element="shaft", recorded=None):
    return json.dumps(
        {
            "event_id": event_id,
            "event_type": event_type,
            "occurred_at": iso(occurred),
            "recorded_at": iso(recorded or occurred + timedelta(minutes=30)),
            "subject": {"element_id": element},
            "payload": payload,
            "source": "test",
        }
    )


def inspection_line(event_id, element, code, occurred, result="pass"):
    return event_line(
        event_id,
        "InspectionCompleted",
        occurred,
        {"inspection_code": code, "phase": "pre-placement", "result": result, "notes": ""},
        element,
    )


def provisional_shaft_lines():
    """Evidence bundle driving `shaft` to Provisional."""
    lines = [
        inspection_line("i1", "shaft", "EXCAVATION_CONDITIONS", T0 - timedelta(hours=20)),
        inspection_line("i2", "shaft", "REBAR_CAGE", T0 - timedelta(hours=16)),
        event_line(
            "t1",
            "BatchTicket",
            T0 - timedelta(hours=2),
            {"batch_id": "B-shaft", "mix_id": "MX", "volume_m3": 24.0, "batched_at": iso(T0 - timedelta(hours=2))},
        ),
        event_line(
            "p1",
            "PlacementRecorded",
            T0,
            {
                "batch_id": "B-shaft",
                "started_at": iso(T0),
                "finished_at": iso(T0 + timedelta(hours=4)),
                "ambient_temp": {"magnitude": 18.0, "unit": "degC"},
            },
        ),
    ]
    for i in range(37):
        at = T0 + timedelta(hours=2.0 * i)
        lines.append(
            event_line(
                f"s{i}",
                "SensorReading",
                at,
                {"sensor_id": "TS", "temp": {"magnitude": 20.0, "unit": "degC"}},
            )
        )
    for age in (1.0, 2.0, 3.0, 5.0):
        strength = hyperbolic_strength(*THETA, 23.0 * 24.0 * age)
        lines.append(
            event_line(
                f"lab{age:g}",
                "LabResult",
                T0 + timedelta(days=age),
                {
                    "specimen_id": f"SP-{age:g}",
                    "age_days": age,
                    "strength": {"magnitude": round(strength, 6), "unit": "MPa"},
                    "cured": "lab",
                },
            )
        )
    return lines


@pytest.fixture()
def client(tmp_path):
    write_bridge_dir(tmp_path)
    app = build_app(tmp_path)
    with TestClient(app) as c:
        c.app = app
        yield c


class TestAuth:
    def test_unauthenticated_401(self, client):
        assert client.get("/api/elements").status_code == 401
        assert client.post("/api/events", content="{}").status_code == 401

    def test_bad_token_401(self, client):
        r = client.get("/api/elements", headers={"Authorization": "Bearer nope"})
        assert r.status_code == 401

    def test_session_reports_role(self, client):
        r = client.get("/api/session", headers=ENG)
        assert r.status_code == 200 and r.json()["role"] == "Engineer"


class TestPostEvents:
    def test_valid_batch(self, client):
        lines = provisional_shaft_lines()[:3]
        r = client.post("/api/events", headers=ENG, content="\n".join(lines))
        assert r.status_code == 200
        assert r.json()["accepted"] == 3

    def test_resend_idempotent(self, client):
        body = "\n".join(provisional_shaft_lines()[:3])
        client.post("/api/events", headers=ENG, content=body)
        r = client.post("/api/events", headers=ENG, content=body)
        assert r.json()["accepted"] == 0
        assert r.json()["duplicates"] == 3

    def test_garbage_line_partial_success(self, client):
        body = provisional_shaft_lines()[0] + "\n{not json"
        r = client.post("/api/events", headers=ENG, content=body)
        assert r.status_code == 200
        assert r.json()["accepted"] == 1
        assert len(r.json()["quarantined"]) == 1

    def test_empty_body_422(self, client):
        assert client.post("/api/events", headers=ENG, content="  ").status_code == 422


class TestGetElement:
    def test_fresh_element_pending(self, client):
        r = client.get("/api/elements/shaft", headers=ENG)
        assert r.status_code == 200
        assert r.json()["state"] == "Pending"

    def test_post_happy_path_provisional(self, client):
        client.post("/api/events", headers=ENG, content="\n".join(provisional_shaft_lines()))
        r = client.get("/api/elements/shaft", headers=ENG)
        assert r.json()["state"] == "Provisional"
        assert r.json()["material"]["status"] == "TrendingCompliant"

    def test_unknown_404(self, client):
        assert client.get("/api/elements/ghost", headers=ENG).status_code == 404

    def test_elements_sorted(self, client):
        ids = [e["id"] for e in client.get("/api/elements", headers=ENG).json()["elements"]]
        assert ids == sorted(ids)


class TestDecisions:
    def _provision_shaft(self, client):
        client.post("/api/events", headers=ENG, content="\n".join(provisional_shaft_lines()))

    def test_engineer_release(self, client):
        self._provision_shaft(client)
        r = client.post(
            "/api/elements/shaft/decision",
            headers=ENG,
            json={"action": "release", "rationale": "evidence satisfied"},
        )
        assert r.status_code == 200
        assert r.json()["state"] == "Released"
        audit = client.get("/api/audit", headers=ENG).json()["audit"]
        assert audit[-1]["to"] == "Released" and audit[-1]["outcome"] == "accepted"

    def test_inspector_forbidden(self, client):
        self._provision_shaft(client)
        r = client.post(
            "/api/elements/shaft/decision",
            headers=INSP,
            json={"action": "release", "rationale": "let me"},
        )
        assert r.status_code == 403
        assert r.json()["reason"] == "UnauthorizedRole"
        audit = client.get("/api/audit", headers=ENG).json()["audit"]
        assert audit[-1]["outcome"] == "rejected"

    def test_gate_blocked_409(self, client):
        r = client.post(
            "/api/elements/column/decision",
            headers=ENG,
            json={"action": "release", "rationale": "override=true rush it"},
        )
        assert r.status_code == 409
        body = r.json()
        assert body["reason"] == "GateBlocked"
        assert body["predecessors"] == ["shaft"]

    def test_illegal_transition_409(self, client):
        r = client.post(
            "/api/elements/shaft/decision",
            headers=ENG,
            json={"action": "lift_hold", "rationale": "nothing to lift"},
        )
        assert r.status_code == 409
        assert r.json()["reason"] == "IllegalTransition"

    def test_empty_rationale_422(self, client):
        r = client.post(
            "/api/elements/shaft/decision", headers=ENG, json={"action": "hold", "rationale": " "}
        )
        assert r.status_code == 422

    def test_ncr_requires_qa_manager(self, client):
        r = client.post(
            "/api/elements/shaft/decision",
            headers=ENG,
            json={"action": "open_ncr", "rationale": "bad"},
        )
        assert r.status_code == 403
        r = client.post(
            "/api/elements/shaft/decision",
            headers=QA,
            json={"action": "open_ncr", "rationale": "documented deficiency"},
        )
        assert r.status_code == 200 and r.json()["state"] == "NonConformance"


class TestWhatIf:
    def _fixture(self, client):
        # Short history (1 h at exactly 20 degC => 20 degC*h) plus a model
        # recovered exactly from theta: threshold 0.75*40 = 30 MPa is hit
        # when maturity reaches 1550, i.e. 76.5 h after the history end,
        # 77.5 h from the history start.
        lines = [
            event_line(
                "gt",
                "BatchTicket",
                T0 - timedelta(hours=1),
                {"batch_id": "B-g", "mix_id": "MXG", "volume_m3": 10.0, "batched_at": iso(T0)},
                element="girder",
            )
        ]
        for i, h in enumerate((0.0, 0.5, 1.0)):
            lines.append(
                event_line(
                    f"gs{i}",
                    "SensorReading",
                    T0 + timedelta(hours=h),
                    {"sensor_id": "TS-G", "temp": {"magnitude": 20.0, "unit": "degC"}},
                    element="girder",
                )
            )
        for age in (1.0, 2.0, 3.0, 5.0):
            strength = hyperbolic_strength(*THETA, 23.0 * 24.0 * age)
            lines.append(
                event_line(
                    f"glab{age:g}",
                    "LabResult",
                    T0 + timedelta(days=age),
                    {
                        "specimen_id": f"G-{age:g}",
                        "age_days": age,
                        "strength": {"magnitude": round(strength, 9), "unit": "MPa"},
                        "cured": "lab",
                    },
                    element="girder",
                )
            )
        r = client.post("/api/events", headers=ENG, content="\n".join(lines))
        assert r.json()["accepted"] == len(lines)

    def test_deck_fixture_77_5_h(self, client):
        self._fixture(client)
        r = client.get("/api/elements/girder/whatif?temp_c=20&threshold=0.75", headers=ENG)
        assert r.status_code == 200
        body = r.json()
        assert body["reachable"] is True
        assert body["hours_from_start"] == pytest.approx(77.5, abs=0.5)
        assert body["threshold_mpa"] == pytest.approx(30.0)
        assert body["curve"]  # chart data supplied by the server

    def test_unreachable_threshold(self, client):
        self._fixture(client)
        r = client.get("/api/elements/girder/whatif?temp_c=20&threshold=1.0", headers=ENG)
        # 1.0 * 40 = Su exactly: asymptote, never reached.
        assert r.status_code == 200
        assert r.json()["reachable"] is False

    def test_threshold_out_of_range_422(self, client):
        self._fixture(client)
        r = client.get("/api/elements/girder/whatif?temp_c=20&threshold=1.1", headers=ENG)
        assert r.status_code == 422

    def test_no_sensors_409(self, client):
        r = client.get("/api/elements/deck/whatif?temp_c=20&threshold=0.75", headers=ENG)
        assert r.status_code == 409
        assert r.json()["reason"] == "InsufficientData"


class TestReadOnlyAndAudit:
    def test_gets_are_side_effect_free(self, client):
        client.post("/api/events", headers=ENG, content="\n".join(provisional_shaft_lines()))
        twin = client.app.state.twin
        before = engine.state_hash(twin.state)
        client.get("/api/elements", headers=ENG)
        client.get("/api/elements/shaft", headers=ENG)
        client.get("/api/elements/shaft/evidence", headers=ENG)
        client.get("/api/warnings", headers=ENG)
        client.get("/api/audit", headers=ENG)
        client.get("/api/elements/shaft/whatif?temp_c=20&threshold=0.75", headers=ENG)
        assert engine.state_hash(twin.state) == before

    def test_mutations_audited_one_to_one(self, client):
        client.post("/api/events", headers=ENG, content="\n".join(provisional_shaft_lines()))
        audit0 = len(client.get("/api/audit", headers=ENG).json()["audit"])
        r = client.post(
            "/api/elements/shaft/decision", headers=ENG, json={"action": "release", "rationale": "ok"}
        )
        assert r.status_code == 200
        audit1 = client.get("/api/audit", headers=ENG).json()["audit"]
        assert len(audit1) == audit0 + 1

    def test_evidence_bundle_hash_field(self, client):
        client.post("/api/events", headers=ENG, content="\n".join(provisional_shaft_lines()))
        bundle = client.get("/api/elements/shaft/evidence", headers=ENG).json()
        assert len(bundle["content_hash"]) == 64


class TestSpecRevision:
    def test_revision_through_api_survives_restart(self, tmp_path):
        write_bridge_dir(tmp_path)
        revision = event_line(
            "rev-b",
            "SpecRevision",
            T0 + timedelta(days=1),
            {"ruleset_version": "B", "document": {**RULESET_DOC, "version": "B"}},
        )
        app1 = build_app(tmp_path)
        with TestClient(app1) as c:
            r = c.post("/api/events", headers=ENG, content=revision)
            assert r.json()["accepted"] == 1
            assert app1.state.twin.state.ruleset.version == "B"

        app2 = build_app(tmp_path)
        assert app2.state.twin.state.ruleset.version == "B"
        assert engine.state_hash(app2.state.twin.state) == engine.state_hash(app1.state.twin.state)


class TestDurability:
    def test_restart_replays_identical_state(self, tmp_path):
        write_bridge_dir(tmp_path)
        app1 = build_app(tmp_path)
        with TestClient(app1) as c1:
            c1.post("/api/events", headers=ENG, content="\n".join(provisional_shaft_lines()))
            c1.post(
                "/api/elements/shaft/decision",
                headers=ENG,
                json={"action": "release", "rationale": "evidence satisfied"},
            )
            h1 = engine.state_hash(app1.state.twin.state)

        app2 = build_app(tmp_path)
        assert engine.state_hash(app2.state.twin.state) == h1

    def test_simulated_project_round_trip(self, tmp_path):
        write_scenario(tmp_path, SimConfig(seed=42, n_spans=1))
        app = build_app(tmp_path)
        with TestClient(app) as c:
            body = (tmp_path / "events.jsonl").read_text()
            r = c.post("/api/events", headers=ENG, content=body)
            assert r.json()["accepted"] == 677
            states = {
                e["id"]: e["state"]
                for e in c.get("/api/elements", headers=ENG).json()["elements"]
            }
            assert set(states.values()) == {"Released"}
