"""Validation-and-learning loop: track prediction residuals against measured
results, recalibrate strength-maturity models, grade confidence per mix.

Residuals are recorded at the moment the measured result arrives, against the
model active at that moment; there is no hindsight re-prediction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from pathlib import Path

from .canon import format_utc
from .maturity import PredictionBasis, StrengthMaturityModel, StrengthPrediction, calibrate


@dataclass(frozen=True)
class MeasuredResult:
    """A measured strength anchored to an element and a maturity."""

    element: str
    strength_mpa: float
    age_days: float
    at: datetime
    maturity_degc_h: float
    cured: str = "lab"


@dataclass(frozen=True)
class ResidualEntry:
    element: str
    mix_id: str
    predicted_mpa: float
    measured_mpa: float
    age_days: float
    at: datetime
    maturity_degc_h: float

    @property
    def error_mpa(self) -> float:
        return self.measured_mpa - self.predicted_mpa


@dataclass(frozen=True)
class ResidualLog:
    mix_id: str
    entries: tuple[ResidualEntry, ...] = ()


class BiasDirection(str, Enum):
    OVER = "Over"  # model predicts above measurements
    UNDER = "Under"
    NEUTRAL = "Neutral"


class ConfidenceGrade(str, Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"


@dataclass(frozen=True)
class ConfidenceReport:
    mix_id: str
    n: int
    mean_error_mpa: float
    rmse_mpa: float
    bias_direction: BiasDirection
    grade: ConfidenceGrade


@dataclass(frozen=True)
class RecalibrationPolicy:
    min_new_entries: int = 6
    bias_se_multiple: float = 1.0


def record_residual(
    log: ResidualLog, prediction: StrengthPrediction, measured: MeasuredResult
) -> ResidualLog:
    """Append one (predicted, measured) comparison. Requires a Predicted-basis
    prediction: measured-basis values would compare a measurement to itself."""
    if prediction.basis is not PredictionBasis.PREDICTED:
        raise ValueError("residuals require a prediction with basis=Predicted")
    entry = ResidualEntry(
        element=measured.element,
        mix_id=log.mix_id,
        predicted_mpa=prediction.mean_mpa,
        measured_mpa=measured.strength_mpa,
        age_days=measured.age_days,
        at=measured.at,
        maturity_degc_h=measured.maturity_degc_h,
    )
    return replace(log, entries=log.entries + (entry,))


def recalibrate(
    model: StrengthMaturityModel,
    log: ResidualLog,
    policy: RecalibrationPolicy = RecalibrationPolicy(),
) -> tuple[StrengthMaturityModel, bool]:
    """Refit when enough new, systematically biased residuals accumulate.

    Trigger: at least ``min_new_entries`` entries newer than the current
    calibration AND |mean error| beyond ``bias_se_multiple`` residual standard
    errors. The refit set is the model's own calibration pairs plus every
    (maturity-at-measurement, measured) entry in the log; the new model keeps
    version lineage via an incremented ``version``.
    """
    since = model.calibrated_at
    new_entries = [e for e in log.entries if since is None or e.at > since]
    if len(new_entries) < policy.min_new_entries:
        return model, False
    mean_error = sum(e.error_mpa for e in new_entries) / len(new_entries)
    if abs(mean_error) <= policy.bias_se_multiple * model.residual_se_mpa:
        return model, False

    refit_pairs = list(model.pairs) + [(e.maturity_degc_h, e.measured_mpa) for e in log.entries]
    latest = max(e.at for e in log.entries)
    refitted = calibrate(refit_pairs, calibrated_at=latest)
    return replace(refitted, version=model.version + 1), True


def confidence(log: ResidualLog, model: StrengthMaturityModel) -> ConfidenceReport:
    """Grade the model on this project's residuals.

    High needs n >= 10 and rmse <= 5% of Su; Low whenever rmse > 15% of Su or
    fewer than 4 comparisons exist; Medium otherwise.
    """
    n = len(log.entries)
    if n == 0:
        return ConfidenceReport(log.mix_id, 0, 0.0, 0.0, BiasDirection.NEUTRAL, ConfidenceGrade.LOW)

    errors = [e.error_mpa for e in log.entries]
    mean_error = sum(errors) / n
    rmse = math.sqrt(sum(err * err for err in errors) / n)

    if abs(mean_error) < 1e-9:
        bias = BiasDirection.NEUTRAL
    elif mean_error < 0:
        bias = BiasDirection.OVER
    else:
        bias = BiasDirection.UNDER

    if n < 4 or rmse > 0.15 * model.su_mpa:
        grade = ConfidenceGrade.LOW
    elif n >= 10 and rmse <= 0.05 * model.su_mpa:
        grade = ConfidenceGrade.HIGH
    else:
        grade = ConfidenceGrade.MEDIUM

    return ConfidenceReport(log.mix_id, n, mean_error, rmse, bias, grade)


def export_residuals_csv(log: ResidualLog, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["element", "mix_id", "predicted_mpa", "measured_mpa", "age_days", "at"])
        for e in log.entries:
            writer.writerow(
                [e.element, e.mix_id, e.predicted_mpa, e.measured_mpa, e.age_days, format_utc(e.at)]
            )
