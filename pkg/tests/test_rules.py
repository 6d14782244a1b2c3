from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RULESET_DOC
from twinqa.domain import Element, ElementKind, EventType, QaEvent, SpatialRef
from twinqa.maturity import PredictionBasis, StrengthPrediction
from twinqa.rules import (
    InvalidThreshold,
    MaterialStatus,
    MeasuredStrength,
    ParseError,
    evaluate_completeness,
    evaluate_material,
    parse_ruleset,
    ruleset_to_json,
)

T0 = datetime(2026, 3, 2, 8, 0, tzinfo=timezone.utc)


def _column() -> Element:
    return Element(
        id="column",
        kind=ElementKind.COLUMN,
        location=SpatialRef.at_station(1012.0, 0.0),
        planned_placement=T0,
        design_strength_mpa=30.0,
    )


def _inspection(code: str, result: str = "pass", at: datetime | None = None, phase: str = "pre-placement") -> QaEvent:
    at = at or T0 - timedelta(days=1)
    return QaEvent(
        event_id=f"insp-{code}-{result}-{at.isoformat()}",
        event_type=EventType.INSPECTION_COMPLETED,
        occurred_at=at,
        recorded_at=at + timedelta(hours=2),
        subject=SpatialRef.for_element("column"),
        payload={"inspection_code": code, "phase": phase, "result": result, "notes": ""},
        source="test",
        element_id="column",
    )


def _placement(started: datetime | None = None) -> QaEvent:
    started = started or T0
    return QaEvent(
        event_id="placement-column",
        event_type=EventType.PLACEMENT_RECORDED,
        occurred_at=started,
        recorded_at=started + timedelta(hours=1),
        subject=SpatialRef.for_element("column"),
        payload={
            "batch_id": "B-1",
            "started_at": started,
            "finished_at": started + timedelta(hours=4),
            "ambient_temp": {"magnitude": 18.0, "unit": "degC"},
        },
        source="test",
        element_id="column",
    )


def _prediction(mean: float, se: float = 0.0) -> StrengthPrediction:
    return StrengthPrediction(
        mean_mpa=mean,
        lower_mpa=max(mean - 2 * se, 0.0),
        upper_mpa=mean + 2 * se,
        maturity_degc_h=1000.0,
        basis=PredictionBasis.PREDICTED,
    )


class TestParseRuleset:
    def test_fixture_document(self, ruleset):
        assert ruleset.version == "A"
        deck = ruleset.kinds["DeckPour"]
        assert deck.readiness_threshold == 0.80
        assert deck.acceptance.limit_mpa == 30.0
        assert deck.acceptance.age_days == 28
        col = ruleset.kinds["Column"]
        assert [r.code for r in col.required_inspections] == [
            "REBAR_LAYOUT",
            "CLEAR_COVER",
            "FORMWORK_STABILITY",
        ]

    def test_round_trip(self, ruleset):
        assert parse_ruleset(ruleset_to_json(ruleset)) == ruleset

    def test_out_of_range_threshold(self):
        doc = {
            "version": "B",
            "rules": {
                "Column": {
                    **RULESET_DOC["rules"]["Column"],
                    "readiness_threshold": 1.5,
                }
            },
        }
        with pytest.raises(InvalidThreshold):
            parse_ruleset(doc)

    def test_empty_document(self):
        with pytest.raises(ParseError):
            parse_ruleset({})

    def test_unknown_kind_rejected(self):
        doc = {"version": "B", "rules": {"Pylon": RULESET_DOC["rules"]["Column"]}}
        with pytest.raises(ParseError):
            parse_ruleset(doc)


class TestEvaluateCompleteness:
    def test_all_passed_before_placement(self, ruleset):
        inspections = [
            _inspection("REBAR_LAYOUT"),
            _inspection("CLEAR_COVER"),
            _inspection("FORMWORK_STABILITY"),
        ]
        result = evaluate_completeness(_column(), ruleset, inspections, _placement())
        assert result.satisfied
        assert result.ruleset_version == "A"

    def test_missing_inspection(self, ruleset):
        inspections = [_inspection("CLEAR_COVER"), _inspection("FORMWORK_STABILITY")]
        result = evaluate_completeness(_column(), ruleset, inspections, _placement())
        assert not result.satisfied
        assert result.missing == (("REBAR_LAYOUT", "pre-placement"),)

    def test_out_of_sequence(self, ruleset):
        late = _inspection("REBAR_LAYOUT", at=T0 + timedelta(hours=2))
        inspections = [late, _inspection("CLEAR_COVER"), _inspection("FORMWORK_STABILITY")]
        result = evaluate_completeness(_column(), ruleset, inspections, _placement())
        assert not result.satisfied
        assert result.out_of_sequence == ("REBAR_LAYOUT",)

    def test_failed_inspection(self, ruleset):
        inspections = [
            _inspection("REBAR_LAYOUT", result="fail"),
            _inspection("CLEAR_COVER"),
            _inspection("FORMWORK_STABILITY"),
        ]
        result = evaluate_completeness(_column(), ruleset, inspections, _placement())
        assert not result.satisfied
        assert "REBAR_LAYOUT" in result.failed
        assert ("REBAR_LAYOUT", "pre-placement") in result.missing

    def test_reinspection_supersedes_fail(self, ruleset):
        first = _inspection("REBAR_LAYOUT", result="fail", at=T0 - timedelta(days=2))
        second = _inspection("REBAR_LAYOUT", result="pass", at=T0 - timedelta(days=1))
        inspections = [first, second, _inspection("CLEAR_COVER"), _inspection("FORMWORK_STABILITY")]
        result = evaluate_completeness(_column(), ruleset, inspections, _placement())
        assert result.satisfied

    def test_monotone_adding_pass_never_unsatisfies(self, ruleset):
        base = [_inspection("CLEAR_COVER"), _inspection("FORMWORK_STABILITY")]
        before = evaluate_completeness(_column(), ruleset, base, _placement())
        after = evaluate_completeness(
            _column(), ruleset, base + [_inspection("REBAR_LAYOUT")], _placement()
        )
        assert (not before.satisfied) and after.satisfied


class TestEvaluateMaterial:
    def test_compliant_measured_mean(self, ruleset):
        measured = [
            MeasuredStrength(29.0, 28.0, "lab"),
            MeasuredStrength(28.5, 28.0, "lab"),
        ]
        # Mean 28.75 >= limit of 27.6 for this variant document.
        doc = {
            "version": "A2",
            "rules": {
                "Column": {
                    **RULESET_DOC["rules"]["Column"],
                    "acceptance": {
                        "property": "compressive_strength",
                        "limit_mpa": 27.6,
                        "age_days": 28,
                    },
                }
            },
        }
        result = evaluate_material(_column(), parse_ruleset(doc), None, measured)
        assert result.status is MaterialStatus.COMPLIANT_MEASURED

    def test_deficient_measured(self, ruleset):
        measured = [MeasuredStrength(26.0, 28.0, "lab")]
        result = evaluate_material(_column(), ruleset, None, measured)
        assert result.status is MaterialStatus.DEFICIENT_MEASURED

    def test_trending_compliant_lower_bound_rule(self, ruleset):
        # design 30 * 0.75 = 22.5 readiness limit; lower bound 30.1 >= 22.5.
        prediction = _prediction(32.0, se=0.95)
        result = evaluate_material(_column(), ruleset, prediction, [])
        assert result.status is MaterialStatus.TRENDING_COMPLIANT

    def test_trending_deficient_upper_bound_rule(self, ruleset):
        prediction = _prediction(18.0, se=1.0)  # upper 20 < 22.5
        result = evaluate_material(_column(), ruleset, prediction, [])
        assert result.status is MaterialStatus.TRENDING_DEFICIENT

    def test_straddling_band_insufficient(self, ruleset):
        prediction = _prediction(22.0, se=1.0)  # lower 20, upper 24 straddle 22.5
        result = evaluate_material(_column(), ruleset, prediction, [])
        assert result.status is MaterialStatus.INSUFFICIENT_DATA

    def test_no_data(self, ruleset):
        result = evaluate_material(_column(), ruleset, None, [])
        assert result.status is MaterialStatus.INSUFFICIENT_DATA

    def test_young_specimens_do_not_qualify(self, ruleset):
        measured = [MeasuredStrength(35.0, 7.0, "lab")]
        result = evaluate_material(_column(), ruleset, None, measured)
        assert result.status is MaterialStatus.INSUFFICIENT_DATA

    @given(
        mean=st.floats(min_value=0.1, max_value=60.0),
        se=st.floats(min_value=0.0, max_value=5.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_measured_supersedes_predicted(self, mean, se):
        rules = parse_ruleset(RULESET_DOC)
        measured = [MeasuredStrength(31.0, 28.0, "lab"), MeasuredStrength(30.5, 28.0, "lab")]
        result = evaluate_material(_column(), rules, _prediction(mean, se), measured)
        assert result.status is MaterialStatus.COMPLIANT_MEASURED
