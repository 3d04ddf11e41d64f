"""Estimator API: harvest, fit, persist, and REST serving.

The broker doubles as the prediction cache: each estimate is upserted as
a Prediction entity, and the REST layer serves from that entity unless
it has gone stale, in which case it recomputes on demand. An in-memory
mirror of the last persisted prediction covers broker outages.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
import time
from typing import Callable

from ..broker.types import Attribute, BrokerError, BrokerUnavailable, ContextEntity, UnknownEntity
from ..httpkit import HttpService, error_response, json_response
from .events import EventLog
from .model import (
    KIND_PARKING,
    KIND_TRAFFIC,
    Prediction,
    SeasonalRidgeModel,
    fit_predict,
)
from .series import (
    DEFAULT_SEASON_LENGTH,
    DEFAULT_STEP_SECONDS,
    InsufficientData,
    harvest,
)

log = logging.getLogger(__name__)

PREDICTION_TYPE = "Prediction"
DEFAULT_WINDOW_SECONDS = 30 * 86400


class UnknownTarget(Exception):
    """The requested (entityId, attr) pair is not an estimation target."""


@dataclasses.dataclass(frozen=True)
class EstimatorTarget:
    entity_id: str
    attr: str
    kind: str  # parking or traffic

    def __post_init__(self):
        if self.kind not in (KIND_PARKING, KIND_TRAFFIC):
            raise ValueError(f"kind must be parking or traffic, got {self.kind!r}")

    @classmethod
    def parse(cls, spec_str: str) -> "EstimatorTarget":
        """Parse the entityId:attr:kind CLI form (entity ids may hold colons)."""
        entity_id, attr, kind = spec_str.rsplit(":", 2)
        return cls(entity_id=entity_id, attr=attr, kind=kind)


def cache_entity_id(entity_id: str, target_attr: str) -> str:
    return f"urn:ngsi:Prediction:{entity_id}:{target_attr}"


def persist_prediction(broker, prediction: Prediction) -> str:
    """Upsert the prediction as its cache entity; returns the cache id."""
    when = int(prediction.issued_at)
    cache_id = cache_entity_id(prediction.entity_id, prediction.target_attr)
    broker.upsert_entity(ContextEntity(
        id=cache_id,
        type=PREDICTION_TYPE,
        attributes={
            "predictedValue": Attribute(prediction.predicted_value, observed_at=when),
            "horizonSeconds": Attribute(prediction.horizon_seconds, observed_at=when),
            "issuedAt": Attribute(prediction.issued_at, observed_at=when),
            "modelId": Attribute(prediction.model_id, observed_at=when),
        },
    ))
    return cache_id


def _prediction_from_cache(entity: ContextEntity) -> Prediction:
    base = entity.id[len("urn:ngsi:Prediction:"):]
    entity_id, target_attr = base.rsplit(":", 1)
    attrs = entity.attributes
    return Prediction(
        entity_id=entity_id,
        target_attr=target_attr,
        horizon_seconds=int(attrs["horizonSeconds"].value),
        predicted_value=float(attrs["predictedValue"].value),
        issued_at=float(attrs["issuedAt"].value),
        model_id=str(attrs["modelId"].value),
    )


class EstimatorService:
    def __init__(
        self,
        broker,
        targets: list[EstimatorTarget],
        *,
        step_seconds: int = DEFAULT_STEP_SECONDS,
        horizon_seconds: int = 3600,
        window_seconds: float = DEFAULT_WINDOW_SECONDS,
        season_length: int = DEFAULT_SEASON_LENGTH,
        event_log: EventLog | None = None,
        now_fn: Callable[[], float] = time.time,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.broker = broker
        self.targets = list(targets)
        self.step_seconds = step_seconds
        self.horizon_seconds = horizon_seconds
        self.window_seconds = window_seconds
        self.season_length = season_length
        self._now = now_fn
        self.events = event_log if event_log is not None else EventLog(now_fn=now_fn)
        self._mirror: dict[tuple[str, str], Prediction] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._loop_thread: threading.Thread | None = None

        self.http = HttpService(host=host, port=port)
        self.http.add_route("GET", "/health", self._handle_health)
        self.http.add_route("GET", "/predictions", self._handle_get_prediction)
        self.http.add_route("GET", "/predictions/{entity_id}/history",
                            self._handle_history)

    # ------------------------------------------------------------ estimation

    def _find_target(self, entity_id: str, attr: str) -> EstimatorTarget:
        for target in self.targets:
            if target.entity_id == entity_id and target.attr == attr:
                return target
        raise UnknownTarget(f"{entity_id}:{attr}")

    def _harvest_series(self, target: EstimatorTarget):
        series, report = harvest(
            self.broker, target.entity_id, target.attr, self.window_seconds,
            step_seconds=self.step_seconds, season_length=self.season_length,
            now_fn=self._now)
        if target.kind == KIND_PARKING:
            # parking availability is served as a probability: the share
            # of the group's capacity currently free
            entity = self.broker.get_entity(target.entity_id)
            total = float(entity.attributes["totalSpots"].value)
            if total <= 0:
                raise InsufficientData(f"{target.entity_id} has no capacity")
            series = series.map_values(lambda v: v / total)
        return series, report

    def estimate_once(self, target: EstimatorTarget) -> Prediction:
        """One full cycle: harvest, fit, predict, persist."""
        try:
            series, report = self._harvest_series(target)
        except (UnknownEntity, InsufficientData, BrokerError) as exc:
            self.events.append("harvester", "error", f"{target.entity_id}: {exc}")
            raise
        self.events.append(
            "harvester", "harvest",
            f"{target.entity_id}.{target.attr} n={len(series.samples)} "
            f"dropped={len(report.dropped)}")

        engine = SeasonalRidgeModel(kind=target.kind,
                                    season_length=self.season_length)
        fitted = engine.fit(series)
        self.events.append("engine", "fit",
                           f"{target.entity_id}.{target.attr} rows="
                           f"{len(series.samples) - self.season_length}")
        value = engine.predict(fitted, self.horizon_seconds)
        self.events.append("engine", "predict",
                           f"{target.entity_id}.{target.attr} value={value!r}")
        prediction = Prediction(
            entity_id=target.entity_id,
            target_attr=target.attr,
            horizon_seconds=self.horizon_seconds,
            predicted_value=value,
            issued_at=self._now(),
            model_id=fitted.model_id,
        )
        try:
            cache_id = persist_prediction(self.broker, prediction)
        except BrokerError as exc:
            self.events.append("cache", "error", f"{target.entity_id}: {exc}")
            raise
        self.events.append("cache", "persist", cache_id)
        with self._lock:
            self._mirror[(target.entity_id, target.attr)] = prediction
        return prediction

    def estimate_all(self) -> list[Prediction]:
        out = []
        for target in self.targets:
            try:
                out.append(self.estimate_once(target))
            except (UnknownEntity, InsufficientData, BrokerError) as exc:
                log.warning("estimation failed for %s: %s", target, exc)
        return out

    # ----------------------------------------------------------------- REST

    def _serve_payload(self, prediction: Prediction, source: str):
        self.events.append("api", "serve",
                           f"{prediction.entity_id}.{prediction.target_attr} "
                           f"source={source}")
        payload = prediction.to_json()
        payload["source"] = source
        return json_response(payload)

    def _handle_health(self, req):
        return json_response({
            "status": "ok",
            "targets": len(self.targets),
            "events": len(self.events.records()),
        })

    def _handle_get_prediction(self, req):
        entity_id = req.query.get("entityId")
        attr = req.query.get("attr")
        if not entity_id or not attr:
            return error_response(400, "MissingParameter",
                                  "entityId and attr are required")
        try:
            target = self._find_target(entity_id, attr)
        except UnknownTarget:
            return error_response(404, "UnknownTarget",
                                  f"{entity_id}:{attr} is not estimated here")

        cached = None
        broker_down = False
        try:
            cached = _prediction_from_cache(
                self.broker.get_entity(cache_entity_id(entity_id, attr)))
        except UnknownEntity:
            cached = None
        except BrokerUnavailable:
            broker_down = True

        if cached is not None and self._now() - cached.issued_at <= self.step_seconds:
            return self._serve_payload(cached, "cache")

        if not broker_down:
            try:
                return self._serve_payload(self.estimate_once(target), "recompute")
            except BrokerUnavailable:
                broker_down = True
            except (UnknownEntity, InsufficientData):
                # the source series is gone or too thin; the stale cache,
                # if any, is still the best answer on offer
                if cached is not None:
                    return self._serve_payload(cached, "cache")
                return error_response(404, "UnknownTarget",
                                      f"no data to estimate {entity_id}:{attr}")

        if broker_down:
            with self._lock:
                mirrored = self._mirror.get((entity_id, attr))
            if mirrored is not None:
                return self._serve_payload(mirrored, "mirror")
            if cached is not None:
                return self._serve_payload(cached, "cache")
            return error_response(503, "BrokerUnavailable",
                                  "broker down and cache empty")
        raise AssertionError("unreachable")

    def _handle_history(self, req):
        entity_id = req.params["entity_id"]
        attr = req.query.get("attr")
        if not attr:
            matching = [t for t in self.targets if t.entity_id == entity_id]
            if len(matching) != 1:
                return error_response(400, "MissingParameter",
                                      "attr is required for this entity")
            attr = matching[0].attr
        cache_id = cache_entity_id(entity_id, attr)
        try:
            records = self.broker.query_history(cache_id, "predictedValue")
        except UnknownEntity:
            return error_response(404, "UnknownTarget",
                                  f"no predictions recorded for {entity_id}")
        except BrokerUnavailable:
            return error_response(503, "BrokerUnavailable", "broker down")
        self.events.append("api", "serve", f"{cache_id} history")
        return json_response({
            "entityId": entity_id,
            "attr": attr,
            "history": [{"epoch": r.observed_at, "predictedValue": r.value}
                        for r in records],
        })

    # -------------------------------------------------------------- control

    @property
    def url(self) -> str:
        return self.http.url

    def start(self) -> None:
        self.http.start()

    def start_loop(self, period_seconds: float | None = None) -> None:
        period = period_seconds if period_seconds is not None else self.step_seconds

        def _loop():
            while not self._stop.wait(period):
                self.estimate_all()

        self._loop_thread = threading.Thread(target=_loop, name="estimator-loop",
                                             daemon=True)
        self._loop_thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._loop_thread is not None:
            self._loop_thread.join()
            self._loop_thread = None
        self.http.stop()


__all__ = [
    "EstimatorService",
    "EstimatorTarget",
    "UnknownTarget",
    "cache_entity_id",
    "persist_prediction",
    "fit_predict",
]
