"""Parking and traffic estimation over broker history."""

from .events import EventLog, EventRecord, replay_log
from .model import (
    KIND_PARKING,
    KIND_TRAFFIC,
    MODEL_ID,
    FittedModel,
    Prediction,
    SeasonalRidgeModel,
    fit_predict,
)
from .series import (
    DEFAULT_SEASON_LENGTH,
    DEFAULT_STEP_SECONDS,
    GapReport,
    InsufficientData,
    TimeSeries,
    harvest,
    regularize,
)
from .service import (
    EstimatorService,
    EstimatorTarget,
    UnknownTarget,
    cache_entity_id,
    persist_prediction,
)

__all__ = [
    "EventLog",
    "EventRecord",
    "replay_log",
    "KIND_PARKING",
    "KIND_TRAFFIC",
    "MODEL_ID",
    "FittedModel",
    "Prediction",
    "SeasonalRidgeModel",
    "fit_predict",
    "DEFAULT_SEASON_LENGTH",
    "DEFAULT_STEP_SECONDS",
    "GapReport",
    "InsufficientData",
    "TimeSeries",
    "harvest",
    "regularize",
    "EstimatorService",
    "EstimatorTarget",
    "UnknownTarget",
    "cache_entity_id",
    "persist_prediction",
]
