from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from twinqa.domain import Element, ElementKind, SpatialRef, build_element_graph
from twinqa.rules import parse_ruleset

T0 = datetime(2026, 3, 2, 8, 0, tzinfo=timezone.utc)

BRIDGE_STAGES = [
    ("shaft", ElementKind.DRILLED_SHAFT),
    ("column", ElementKind.COLUMN),
    ("cap", ElementKind.CAP),
    ("girder", ElementKind.GIRDER_OR_DECK_PANEL),
    ("deck", ElementKind.DECK_POUR),
]


def make_bridge_graph(t0: datetime = T0, stage_days: float = 10.0):
    """The five-stage single-span chain used throughout the suite."""
    elements = []
    for i, (eid, kind) in enumerate(BRIDGE_STAGES):
        elements.append(
            Element(
                id=eid,
                kind=kind,
                location=SpatialRef.at_station(1000.0 + 12.0 * i, 0.0),
                planned_placement=t0 + timedelta(days=stage_days * i),
                design_strength_mpa=30.0 if kind is not ElementKind.GIRDER_OR_DECK_PANEL else 40.0,
            )
        )
    edges = [(BRIDGE_STAGES[i][0], BRIDGE_STAGES[i + 1][0]) for i in range(4)]
    return build_element_graph(elements, edges)


RULESET_DOC = {
    "version": "A",
    "rules": {
        "DrilledShaft": {
            "required_inspections": [
                {"code": "EXCAVATION_CONDITIONS", "phase": "pre-placement", "hold_point": True},
                {"code": "REBAR_CAGE", "phase": "pre-placement", "hold_point": True},
            ],
            "acceptance": {"property": "compressive_strength", "limit_mpa": 30.0, "age_days": 28},
            "readiness_threshold": 0.75,
            "testing_frequency": 2,
        },
        "Column": {
            "required_inspections": [
                {"code": "REBAR_LAYOUT", "phase": "pre-placement", "hold_point": True},
                {"code": "CLEAR_COVER", "phase": "pre-placement", "hold_point": False},
                {"code": "FORMWORK_STABILITY", "phase": "pre-placement", "hold_point": True},
            ],
            "acceptance": {"property": "compressive_strength", "limit_mpa": 30.0, "age_days": 28},
            "readiness_threshold": 0.75,
            "testing_frequency": 2,
        },
        "Cap": {
            "required_inspections": [
                {"code": "REBAR_LAYOUT", "phase": "pre-placement", "hold_point": True},
                {"code": "FORMWORK_STABILITY", "phase": "pre-placement", "hold_point": True},
            ],
            "acceptance": {"property": "compressive_strength", "limit_mpa": 30.0, "age_days": 28},
            "readiness_threshold": 0.75,
            "testing_frequency": 2,
        },
        "GirderOrDeckPanel": {
            "required_inspections": [
                {"code": "BEARING_SEAT_ELEVATION", "phase": "pre-placement", "hold_point": True},
                {"code": "LINE_AND_GRADE", "phase": "pre-placement", "hold_point": False},
            ],
            "acceptance": {"property": "compressive_strength", "limit_mpa": 40.0, "age_days": 28},
            "readiness_threshold": 0.75,
            "testing_frequency": 2,
        },
        "DeckPour": {
            "required_inspections": [
                {"code": "DECK_STEEL_LAYOUT", "phase": "pre-placement", "hold_point": True},
                {"code": "PRE_POUR_MEETING", "phase": "pre-placement", "hold_point": True},
            ],
            "acceptance": {"property": "compressive_strength", "limit_mpa": 30.0, "age_days": 28},
            "readiness_threshold": 0.80,
            "testing_frequency": 2,
        },
    },
}


@pytest.fixture()
def bridge_graph():
    return make_bridge_graph()


@pytest.fixture()
def ruleset():
    return parse_ruleset(RULESET_DOC)
