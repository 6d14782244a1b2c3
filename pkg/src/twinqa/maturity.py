"""Early-age concrete analytics: maturity index, equivalent age, hyperbolic
strength-maturity calibration, strength prediction with uncertainty, and
readiness forecasting.

Conventions:
  * Nurse-Saul maturity M = integral of max(T - T_datum, 0) dt, in degC*h,
    integrated by the trapezoid rule over the sampled temperatures.
  * Equivalent age t_e = integral of exp(-Q * (1/T_a - 1/T_ref)) dt with
    absolute (Kelvin) temperatures and Q the activation energy over the gas
    constant, in hours.
  * Strength relation S(M) = Su * k*(M - M0) / (1 + k*(M - M0)) for M > M0,
    zero below the offset maturity M0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import least_squares

from .canon import parse_utc
from .domain import Quantity, TemperatureHistory, TwinQaError, Unit

KELVIN_OFFSET = 273.15


class GapTooLarge(TwinQaError):
    def __init__(self, start: datetime, end: datetime, gap_h: float, limit_h: float):
        super().__init__(
            f"sensor gap of {gap_h:.2f} h between {start.isoformat()} and "
            f"{end.isoformat()} exceeds interpolation limit {limit_h:.2f} h"
        )
        self.start = start
        self.end = end
        self.gap_h = gap_h


class TooFewSamples(TwinQaError):
    def __init__(self, n: int):
        super().__init__(f"temperature history needs at least 2 samples, got {n}")
        self.n = n


class InsufficientData(TwinQaError):
    pass


class NonConvergence(TwinQaError):
    def __init__(self, iterations: int, message: str = ""):
        super().__init__(f"calibration failed to converge after {iterations} evaluations: {message}")
        self.iterations = iterations


@dataclass(frozen=True)
class MaturityConfig:
    datum_temp_c: float = 0.0
    activation_ratio_k: float = 5000.0  # Q = E/R, Kelvin
    ref_temp_c: float = 23.0
    max_gap_h: float = 2.0  # linear interpolation limit

    def __post_init__(self) -> None:
        if self.datum_temp_c >= 40.0:
            raise ValueError("datum_temp_c must be < 40 degC")
        if self.activation_ratio_k <= 0:
            raise ValueError("activation_ratio_k must be > 0")
        if self.max_gap_h <= 0:
            raise ValueError("max_gap_h must be > 0")


class PredictionBasis(str, Enum):
    PREDICTED = "Predicted"
    MEASURED = "Measured"


@dataclass(frozen=True)
class StrengthMaturityModel:
    """Calibrated hyperbolic strength-maturity relation.

    ``pairs`` retains the calibration set so later refits are self-contained;
    ``version`` counts recalibrations.
    """

    su_mpa: float
    k_rate: float  # 1/(degC*h)
    m0: float  # degC*h
    residual_se_mpa: float
    calibrated_at: datetime | None
    n_points: int
    pairs: tuple[tuple[float, float], ...] = ()
    version: int = 1

    def __post_init__(self) -> None:
        if self.su_mpa <= 0:
            raise ValueError("su_mpa must be > 0")
        if self.k_rate <= 0:
            raise ValueError("k_rate must be > 0")
        if self.m0 < 0:
            raise ValueError("m0 must be >= 0")
        if self.residual_se_mpa < 0:
            raise ValueError("residual_se_mpa must be >= 0")


@dataclass(frozen=True)
class StrengthPrediction:
    mean_mpa: float
    lower_mpa: float
    upper_mpa: float
    maturity_degc_h: float
    basis: PredictionBasis

    def __post_init__(self) -> None:
        if not (self.lower_mpa <= self.mean_mpa <= self.upper_mpa):
            raise ValueError("prediction bounds must satisfy lower <= mean <= upper")


def _intervals(
    history: TemperatureHistory, cfg: MaturityConfig
) -> Iterator[tuple[float, float, float]]:
    """Yield (dt_h, temp_start, temp_end) per sample interval.

    Raises TooFewSamples / GapTooLarge per the partial-data policy: gaps up to
    max_gap_h are linearly interpolated (implicit in the trapezoid rule),
    anything larger is an error rather than a silent guess.
    """
    samples = history.samples
    if len(samples) < 2:
        raise TooFewSamples(len(samples))
    for (t0, temp0), (t1, temp1) in zip(samples, samples[1:]):
        dt_h = (t1 - t0).total_seconds() / 3600.0
        if dt_h > cfg.max_gap_h:
            raise GapTooLarge(t0, t1, dt_h, cfg.max_gap_h)
        yield dt_h, temp0, temp1


def nurse_saul_maturity(history: TemperatureHistory, cfg: MaturityConfig) -> Quantity:
    """Temperature-time factor above the datum, trapezoid-integrated, degC*h.

    Increments below the datum clamp to zero: hydration never regresses.
    """
    total = 0.0
    datum = cfg.datum_temp_c
    for dt_h, temp0, temp1 in _intervals(history, cfg):
        total += 0.5 * (max(temp0 - datum, 0.0) + max(temp1 - datum, 0.0)) * dt_h
    return Quantity(total, Unit.DEG_C_HOUR)


def equivalent_age(history: TemperatureHistory, cfg: MaturityConfig) -> Quantity:
    """Arrhenius-weighted age at the reference temperature, in hours."""
    q = cfg.activation_ratio_k
    inv_ref = 1.0 / (cfg.ref_temp_c + KELVIN_OFFSET)
    total = 0.0
    for dt_h, temp0, temp1 in _intervals(history, cfg):
        rate0 = math.exp(-q * (1.0 / (temp0 + KELVIN_OFFSET) - inv_ref))
        rate1 = math.exp(-q * (1.0 / (temp1 + KELVIN_OFFSET) - inv_ref))
        total += 0.5 * (rate0 + rate1) * dt_h
    return Quantity(total, Unit.HOUR)


def truncate_history(history: TemperatureHistory, at: datetime) -> TemperatureHistory:
    """History restricted to [start, at], interpolating the final sample."""
    samples = history.samples
    kept = [s for s in samples if s[0] <= at]
    if len(kept) == len(samples) or not kept:
        return TemperatureHistory(history.element, tuple(kept))
    (t0, temp0) = kept[-1]
    (t1, temp1) = samples[len(kept)]
    if at > t0:
        frac = (at - t0).total_seconds() / (t1 - t0).total_seconds()
        kept.append((at, temp0 + frac * (temp1 - temp0)))
    return TemperatureHistory(history.element, tuple(kept))


def hyperbolic_strength(su_mpa: float, k_rate: float, m0: float, maturity: float) -> float:
    """S(M); zero at or below the offset maturity."""
    if maturity <= m0:
        return 0.0
    x = k_rate * (maturity - m0)
    return su_mpa * x / (1.0 + x)


def calibrate(
    pairs: Sequence[tuple[float, float]],
    initial_guess: tuple[float, float, float] | None = None,
    calibrated_at: datetime | None = None,
) -> StrengthMaturityModel:
    """Least-squares fit of (Su, k, M0) to (maturity, strength) pairs.

    Deterministic: the solver is seed-free and the initialization is fixed
    (Su0 = 1.2 * max strength, M0_0 = min maturity, k0 from the two
    lowest-maturity points).
    """
    pts = [(float(m), float(s)) for m, s in pairs]
    if len(pts) < 4:
        raise InsufficientData(f"need >= 4 calibration pairs, got {len(pts)}")
    if len({m for m, _ in pts}) < 3:
        raise InsufficientData("need >= 3 distinct maturities")
    if any(s < 0 for _, s in pts):
        raise InsufficientData("strengths must be non-negative")

    maturities = np.array([m for m, _ in pts])
    strengths = np.array([s for _, s in pts])

    if initial_guess is not None:
        x0 = np.array(initial_guess, dtype=float)
    else:
        su0 = 1.2 * float(strengths.max())
        m00 = float(maturities.min())
        k_estimates = []
        for m, s in sorted(pts)[:3]:
            if m > m00 and 0 < s < su0:
                k_estimates.append(s / ((su0 - s) * (m - m00)))
            if len(k_estimates) == 2:
                break
        k0 = sum(k_estimates) / len(k_estimates) if k_estimates else 1e-3
        x0 = np.array([su0, k0, m00])

    def residuals(theta: np.ndarray) -> np.ndarray:
        su, k, m0 = theta
        x = np.maximum(maturities - m0, 0.0) * k
        return su * x / (1.0 + x) - strengths

    result = least_squares(
        residuals,
        x0,
        bounds=([1e-9, 1e-12, 0.0], [np.inf, np.inf, np.inf]),
        method="trf",
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=2000,
    )
    if result.status <= 0:
        raise NonConvergence(int(result.nfev), str(result.message))

    su, k, m0 = (float(v) for v in result.x)
    sse = float(np.sum(result.fun**2))
    dof = max(len(pts) - 3, 1)
    return StrengthMaturityModel(
        su_mpa=su,
        k_rate=k,
        m0=m0,
        residual_se_mpa=math.sqrt(sse / dof),
        calibrated_at=calibrated_at,
        n_points=len(pts),
        pairs=tuple(pts),
    )


def predict_strength(model: StrengthMaturityModel, maturity_degc_h: float) -> StrengthPrediction:
    """Mean with +/- 2 residual standard errors (~95% band), lower clamped at 0."""
    if maturity_degc_h < 0:
        raise ValueError("maturity must be >= 0")
    mean = hyperbolic_strength(model.su_mpa, model.k_rate, model.m0, maturity_degc_h)
    band = 2.0 * model.residual_se_mpa
    return StrengthPrediction(
        mean_mpa=mean,
        lower_mpa=max(mean - band, 0.0),
        upper_mpa=mean + band,
        maturity_degc_h=maturity_degc_h,
        basis=PredictionBasis.PREDICTED,
    )

FORECAST_STEP_H = 0.5
FORECAST_HORIZON_H = 1e6  # beyond ~114 years the threshold counts as unreachable


def forecast_readiness(
    model: StrengthMaturityModel,
    history_so_far: TemperatureHistory,
    assumed_future_temp_c: float,
    threshold_mpa: float,
    cfg: MaturityConfig,
    anchor: datetime | None = None,
) -> datetime | None:
    """Earliest instant (0.5 h grid from the anchor) when the predicted mean
    strength reaches the threshold, extending the history at a constant
    assumed temperature. None means unreachable.

    The anchor defaults to the last sample of the history; it must be given
    for an empty history. A threshold already met at the anchor returns the
    anchor itself regardless of assumed temperature.
    """
    if threshold_mpa <= 0:
        raise ValueError("threshold_mpa must be > 0")
    if history_so_far.samples:
        anchor = history_so_far.samples[-1][0]
        maturity_now = (
            nurse_saul_maturity(history_so_far, cfg).magnitude
            if len(history_so_far.samples) >= 2
            else 0.0
        )
    else:
        if anchor is None:
            raise ValueError("anchor timestamp required for an empty history")
        maturity_now = 0.0

    if predict_strength(model, maturity_now).mean_mpa >= threshold_mpa:
        return anchor
    if threshold_mpa >= model.su_mpa:
        return None
    rate = assumed_future_temp_c - cfg.datum_temp_c  # degC*h per hour
    if rate <= 0:
        return None

    # S(M) >= thr  <=>  M >= m0 + thr / (k * (su - thr)); land on the grid and
    # confirm by evaluating the prediction (guards float fuzz near the bound).
    target_m = model.m0 + threshold_mpa / (model.k_rate * (model.su_mpa - threshold_mpa))
    hours_exact = max(target_m - maturity_now, 0.0) / rate
    if hours_exact > FORECAST_HORIZON_H:
        return None
    step = max(int(hours_exact / FORECAST_STEP_H) - 1, 0)
    while step * FORECAST_STEP_H <= FORECAST_HORIZON_H + 1.0:
        hours = step * FORECAST_STEP_H
        if predict_strength(model, maturity_now + rate * hours).mean_mpa >= threshold_mpa:
            return anchor + timedelta(hours=hours)
        step += 1
    return None


def read_temperature_csv(path: str | Path, element: str = "csv") -> TemperatureHistory:
    """Load ``timestamp,temp_c`` rows (header required) into a history."""
    samples: list[tuple[datetime, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "timestamp" not in reader.fieldnames:
            raise ValueError(f"{path}: expected header 'timestamp,temp_c'")
        for row in reader:
            samples.append((parse_utc(row["timestamp"]), float(row["temp_c"])))
    return TemperatureHistory(element=element, samples=tuple(samples))


def read_calibration_csv(path: str | Path) -> list[tuple[float, float]]:
    """Load ``maturity_degc_h,strength_mpa`` rows (header required)."""
    pairs: list[tuple[float, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "maturity_degc_h" not in reader.fieldnames:
            raise ValueError(f"{path}: expected header 'maturity_degc_h,strength_mpa'")
        for row in reader:
            pairs.append((float(row["maturity_degc_h"]), float(row["strength_mpa"])))
    return pairs


def with_calibration_time(model: StrengthMaturityModel, at: datetime) -> StrengthMaturityModel:
    return replace(model, calibrated_at=at)
