"""Seasonal ridge autoregression.

The engine regresses each value on the previous step, the value one
season back, and an hour-of-day one-hot, with ridge regularization on
everything except the intercept. Deterministic by construction: same
series in, bit-identical weights and predictions out.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Callable

import numpy as np

from .series import DEFAULT_SEASON_LENGTH, InsufficientData, TimeSeries

RIDGE_LAMBDA = 1e-3
HOURS = 24
MODEL_ID = "seasonal-ridge-v1"

KIND_PARKING = "parking"
KIND_TRAFFIC = "traffic"


@dataclasses.dataclass(frozen=True)
class Prediction:
    entity_id: str
    target_attr: str
    horizon_seconds: int
    predicted_value: float
    issued_at: float
    model_id: str

    def __post_init__(self):
        if self.horizon_seconds <= 0:
            raise ValueError("horizon_seconds must be positive")

    def to_json(self) -> dict:
        return {
            "entityId": self.entity_id,
            "targetAttr": self.target_attr,
            "horizonSeconds": self.horizon_seconds,
            "predictedValue": self.predicted_value,
            "issuedAt": self.issued_at,
            "modelId": self.model_id,
        }


@dataclasses.dataclass(frozen=True)
class FittedModel:
    weights: tuple  # (intercept, prev, season, hour 0..23)
    season_length: int
    step_seconds: int
    tail: tuple         # last season_length observed values, oldest first
    last_epoch: float   # epoch of the newest observation
    model_id: str = MODEL_ID


def _hour_of_day(epoch: float) -> int:
    return time.gmtime(int(epoch)).tm_hour


def _features(prev: float, season_back: float, hour: int) -> np.ndarray:
    row = np.zeros(3 + HOURS)
    row[0] = 1.0
    row[1] = prev
    row[2] = season_back
    row[3 + hour] = 1.0
    return row


def _clamp(value: float, kind: str | None) -> float:
    if kind == KIND_PARKING:
        return min(1.0, max(0.0, value))
    if kind == KIND_TRAFFIC:
        return max(0.0, value)
    return value


class SeasonalRidgeModel:
    """Default PredictionModel implementation.

    kind selects the per-step clamp: parking forecasts are probabilities
    in [0, 1], traffic intensities are non-negative.
    """

    def __init__(self, kind: str | None = None,
                 season_length: int = DEFAULT_SEASON_LENGTH):
        if kind not in (None, KIND_PARKING, KIND_TRAFFIC):
            raise ValueError(f"unknown kind {kind!r}")
        self.kind = kind
        self.season_length = season_length

    def fit(self, series: TimeSeries) -> FittedModel:
        season = self.season_length
        values = np.asarray(series.values(), dtype=np.float64)
        epochs = [t for t, _ in series.samples]
        n = len(values)
        if n < 2 * season:
            raise InsufficientData(
                f"{n} samples, need {2 * season} to fit one season of rows")

        rows = []
        targets = []
        for i in range(season, n):
            rows.append(_features(values[i - 1], values[i - season],
                                  _hour_of_day(epochs[i])))
            targets.append(values[i])
        design = np.vstack(rows)
        y = np.asarray(targets)

        # ridge on everything but the intercept; the gram matrix is then
        # nonsingular for any design, so the solve cannot fail
        penalty = np.eye(design.shape[1]) * RIDGE_LAMBDA
        penalty[0, 0] = 0.0
        weights = np.linalg.solve(design.T @ design + penalty, design.T @ y)

        return FittedModel(
            weights=tuple(float(w) for w in weights),
            season_length=season,
            step_seconds=series.step_seconds,
            tail=tuple(float(v) for v in values[-season:]),
            last_epoch=float(series.last_epoch()),
        )

    def predict(self, fitted: FittedModel, horizon_seconds: int) -> float:
        step = fitted.step_seconds
        if horizon_seconds <= 0 or horizon_seconds % step != 0:
            raise ValueError(
                f"horizon must be a positive multiple of {step} seconds")
        weights = np.asarray(fitted.weights)
        window = list(fitted.tail)  # rolling last-season window
        epoch = fitted.last_epoch
        for _ in range(horizon_seconds // step):
            epoch += step
            features = _features(window[-1], window[0], _hour_of_day(epoch))
            value = _clamp(float(features @ weights), self.kind)
            window.append(value)
            window.pop(0)
        return value


def fit_predict(
    series: TimeSeries,
    horizon_seconds: int,
    kind: str | None = None,
    model: SeasonalRidgeModel | None = None,
    now_fn: Callable[[], float] = time.time,
) -> Prediction:
    """Fit the default engine on the series and step out to the horizon."""
    engine = model if model is not None else SeasonalRidgeModel(kind=kind)
    fitted = engine.fit(series)
    value = engine.predict(fitted, horizon_seconds)
    return Prediction(
        entity_id=series.entity_id,
        target_attr=series.attr_name,
        horizon_seconds=horizon_seconds,
        predicted_value=value,
        issued_at=now_fn(),
        model_id=fitted.model_id,
    )
