"""Bridge from broker notifications to a served GTFS-realtime feed.

A subscriber registers for ArrivalEstimation and VehiclePosition
entities; a translator folds each notification into the current feed
state; the encoded snapshot is swapped atomically and served over REST.
Consumers of the feed never see the broker.
"""

from __future__ import annotations

import logging
import os
import tempfile
import threading
import time

from ..broker.types import ContextEntity, MalformedEntity, Notification, Subscription
from ..httpkit import HttpService, Request, Response, bytes_response, json_response
from ..models import (
    ArrivalEstimationEntity,
    MissingMandatoryField,
    UnknownEntityType,
    VehiclePositionEntity,
    from_context,
)
from .model import RtEntity, RtFeedMessage, RtStopTimeUpdate, RtTripUpdate, RtVehiclePosition, ScheduleIndex
from .wire import encode_feed_message

log = logging.getLogger(__name__)

TRIP_UPDATES_PATH = "/gtfs-rt/trip-updates"
VEHICLE_POSITIONS_PATH = "/gtfs-rt/vehicle-positions"

_SPOOL_NAMES = {"trip_updates": "trip-updates.pb", "vehicle_positions": "vehicle-positions.pb"}


class _StuState:
    __slots__ = ("stop_sequence", "delay", "estimated_epoch", "observed_at")

    def __init__(self, stop_sequence, delay, estimated_epoch, observed_at):
        self.stop_sequence = stop_sequence
        self.delay = delay
        self.estimated_epoch = estimated_epoch
        self.observed_at = observed_at


class _VehicleState:
    __slots__ = ("latitude", "longitude", "bearing", "trip_id", "observed_at")

    def __init__(self, latitude, longitude, bearing, trip_id, observed_at):
        self.latitude = latitude
        self.longitude = longitude
        self.bearing = bearing
        self.trip_id = trip_id
        self.observed_at = observed_at


class GtfsRtBridge:
    """Translator state machine plus atomically swapped feed snapshots.

    Entries whose observation time falls more than twice the horizon
    behind the clock are dropped at the next rebuild, so a silent
    upstream cannot leave hours-old predictions in the feed.
    """

    def __init__(self, broker, schedule: ScheduleIndex, *, now_fn=time.time,
                 horizon_seconds: int = 3600, spool_dir: str | None = None):
        if len(schedule) == 0:
            raise ValueError("schedule index is empty")
        self._broker = broker
        self._schedule = schedule
        self._now = now_fn
        self._stale_after = 2 * horizon_seconds
        self._spool_dir = spool_dir
        self._lock = threading.Lock()
        # trip id -> stop id -> _StuState
        self._trips: dict[str, dict[str, _StuState]] = {}
        self._vehicles: dict[str, _VehicleState] = {}
        self._applied = 0
        self._skipped = 0
        self._last_rebuild = 0
        self._subscription_ids: list[str] = []
        self._snapshots: dict[str, bytes] = {}
        with self._lock:
            self._rebuild()

    # ---------------------------------------------------------- lifecycle

    def start(self, notify_target=None) -> None:
        """Create the two subscriptions; on failure no subscription survives."""
        target = notify_target if notify_target is not None else self.notification_sink
        created: list[str] = []
        try:
            for entity_type in ("ArrivalEstimation", "VehiclePosition"):
                created.append(self._broker.subscribe(
                    Subscription(entity_type=entity_type, notify_target=target)))
        except Exception:
            for sub_id in created:
                try:
                    self._broker.unsubscribe(sub_id)
                except Exception:
                    log.warning("rollback unsubscribe failed for %s", sub_id)
            raise
        self._subscription_ids = created

    def stop(self) -> None:
        for sub_id in self._subscription_ids:
            try:
                self._broker.unsubscribe(sub_id)
            except Exception:
                log.warning("unsubscribe failed for %s", sub_id)
        self._subscription_ids = []

    @property
    def subscription_ids(self) -> list[str]:
        return list(self._subscription_ids)

    # ------------------------------------------------------- notifications

    def notification_sink(self, notification) -> None:
        """Accepts a broker Notification object or its JSON dict form."""
        if isinstance(notification, Notification):
            self.on_notification(notification.to_json())
        else:
            self.on_notification(notification)

    def on_notification(self, payload: dict) -> None:
        """Fold one notification into the feed; never raises."""
        try:
            entities = payload.get("data", [])
        except AttributeError:
            log.warning("dropping malformed notification payload: %r", payload)
            return
        with self._lock:
            for raw in entities:
                self._apply_entity(raw)
            self._rebuild()

    def _apply_entity(self, raw: dict) -> None:
        try:
            model = from_context(ContextEntity.from_json(raw))
        except (MalformedEntity, MissingMandatoryField, UnknownEntityType,
                AttributeError, KeyError, TypeError, ValueError) as exc:
            log.warning("dropping malformed notification entity: %s", exc)
            return
        if isinstance(model, ArrivalEstimationEntity):
            entry = self._schedule.lookup(model.trip_ref, model.stop_ref)
            if entry is None:
                self._skipped += 1
                log.info("no schedule for trip %s stop %s, skipping",
                         model.trip_ref, model.stop_ref)
                return
            delay = int(round(model.estimated_arrival_time - entry.arrival_epoch))
            self._trips.setdefault(model.trip_ref, {})[model.stop_ref] = _StuState(
                stop_sequence=entry.stop_sequence,
                delay=delay,
                estimated_epoch=int(model.estimated_arrival_time),
                observed_at=model.observed_at,
            )
            self._applied += 1
        elif isinstance(model, VehiclePositionEntity):
            self._vehicles[model.vehicle_id] = _VehicleState(
                latitude=model.location.latitude,
                longitude=model.location.longitude,
                bearing=model.bearing,
                trip_id=model.trip_ref,
                observed_at=model.observed_at,
            )
            self._applied += 1
        else:
            log.warning("ignoring notification for unexpected type %s",
                        type(model).__name__)

    # ------------------------------------------------------------- rebuild

    def _rebuild(self) -> None:
        """Evict stale entries and swap in fresh snapshots. Lock held."""
        now = int(self._now())
        cutoff = now - self._stale_after
        for trip_id in list(self._trips):
            stops = self._trips[trip_id]
            for stop_id in list(stops):
                if stops[stop_id].observed_at < cutoff:
                    del stops[stop_id]
            if not stops:
                del self._trips[trip_id]
        for vehicle_id in list(self._vehicles):
            if self._vehicles[vehicle_id].observed_at < cutoff:
                del self._vehicles[vehicle_id]

        trip_entities = []
        for trip_id in sorted(self._trips):
            stops = self._trips[trip_id]
            stus = tuple(
                RtStopTimeUpdate(stop_id=stop_id, stop_sequence=state.stop_sequence,
                                 arrival_delay_seconds=state.delay)
                for stop_id, state in sorted(stops.items(),
                                             key=lambda kv: kv[1].stop_sequence)
            )
            timestamp = max(int(state.observed_at) for state in stops.values())
            trip_entities.append(RtEntity(
                id=trip_id,
                trip_update=RtTripUpdate(trip_id=trip_id, stop_time_updates=stus,
                                         timestamp=timestamp),
            ))
        vehicle_entities = [
            RtEntity(
                id=vehicle_id,
                vehicle_position=RtVehiclePosition(
                    latitude=state.latitude,
                    longitude=state.longitude,
                    bearing=state.bearing,
                    trip_id=state.trip_id,
                    timestamp=int(state.observed_at),
                ),
            )
            for vehicle_id, state in sorted(self._vehicles.items())
        ]
        snapshots = {
            "trip_updates": encode_feed_message(
                RtFeedMessage(timestamp=now, entities=tuple(trip_entities))),
            "vehicle_positions": encode_feed_message(
                RtFeedMessage(timestamp=now, entities=tuple(vehicle_entities))),
        }
        self._snapshots = snapshots
        self._last_rebuild = now
        if self._spool_dir is not None:
            self._spool(snapshots)

    def _spool(self, snapshots: dict[str, bytes]) -> None:
        for kind, name in _SPOOL_NAMES.items():
            target = os.path.join(self._spool_dir, name)
            fd, tmp_path = tempfile.mkstemp(dir=self._spool_dir, suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as handle:
                    handle.write(snapshots[kind])
                os.replace(tmp_path, target)
            except OSError:
                log.warning("spool write failed for %s", target, exc_info=True)
                if os.path.exists(tmp_path):
                    os.unlink(tmp_path)

    # ------------------------------------------------------------- reading

    def trip_updates(self) -> bytes:
        with self._lock:
            return self._snapshots["trip_updates"]

    def vehicle_positions(self) -> bytes:
        with self._lock:
            return self._snapshots["vehicle_positions"]

    def metrics(self) -> dict:
        with self._lock:
            return {
                "notificationsApplied": self._applied,
                "skipped": self._skipped,
                "lastRebuildEpoch": self._last_rebuild,
            }

    def debug_state(self) -> dict:
        with self._lock:
            return {
                "feedTimestamp": self._last_rebuild,
                "tripUpdates": [
                    {
                        "tripId": trip_id,
                        "stopTimeUpdates": [
                            {
                                "stopId": stop_id,
                                "stopSequence": state.stop_sequence,
                                "arrivalDelaySeconds": state.delay,
                                "estimatedArrivalEpoch": state.estimated_epoch,
                            }
                            for stop_id, state in sorted(
                                stops.items(), key=lambda kv: kv[1].stop_sequence)
                        ],
                    }
                    for trip_id, stops in sorted(self._trips.items())
                ],
                "vehiclePositions": [
                    {
                        "vehicleId": vehicle_id,
                        "latitude": state.latitude,
                        "longitude": state.longitude,
                        "bearing": state.bearing,
                        "tripId": state.trip_id,
                        "observedAt": state.observed_at,
                    }
                    for vehicle_id, state in sorted(self._vehicles.items())
                ],
            }


class BridgeService:
    """HTTP face of the bridge: feed endpoints plus the notify callback."""

    def __init__(self, broker, schedule: ScheduleIndex, *, host: str = "127.0.0.1",
                 port: int = 0, now_fn=time.time, horizon_seconds: int = 3600,
                 spool_dir: str | None = None):
        self.bridge = GtfsRtBridge(broker, schedule, now_fn=now_fn,
                                   horizon_seconds=horizon_seconds, spool_dir=spool_dir)
        self._http = HttpService(host=host, port=port)
        self._http.add_route("GET", "/health", lambda req: json_response({"status": "up"}))
        self._http.add_route("GET", TRIP_UPDATES_PATH, self._get_trip_updates)
        self._http.add_route("GET", VEHICLE_POSITIONS_PATH, self._get_vehicle_positions)
        self._http.add_route("GET", "/gtfs-rt/debug", self._get_debug)
        self._http.add_route("GET", "/metrics", self._get_metrics)
        self._http.add_route("POST", "/notify", self._post_notify)

    @property
    def url(self) -> str:
        return self._http.url

    def start(self) -> None:
        self._http.start()
        try:
            self.bridge.start(notify_target=self.url + "/notify")
        except Exception:
            self._http.stop()
            raise

    def stop(self) -> None:
        self.bridge.stop()
        self._http.stop()

    # -------------------------------------------------------------- routes

    def _get_trip_updates(self, req: Request) -> Response:
        return bytes_response(self.bridge.trip_updates(),
                              content_type="application/x-protobuf")

    def _get_vehicle_positions(self, req: Request) -> Response:
        return bytes_response(self.bridge.vehicle_positions(),
                              content_type="application/x-protobuf")

    def _get_debug(self, req: Request) -> Response:
        return json_response(self.bridge.debug_state())

    def _get_metrics(self, req: Request) -> Response:
        return json_response(self.bridge.metrics())

    def _post_notify(self, req: Request) -> Response:
        self.bridge.on_notification(req.json())
        return Response(status=204)
