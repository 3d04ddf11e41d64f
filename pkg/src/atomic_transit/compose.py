"""Composition of the atomic services into one city pipeline.

Startup wires broker, fixture data, GTFS export with pointer
registration, the routing engine, the feed fetcher, the realtime bridge,
and the estimator, in dependency order; teardown reverses it. Two modes
share the sequencing: inproc wires stages by direct calls, multiproc
puts real HTTP between them.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import tempfile
import time
from pathlib import Path
from typing import Callable

import requests

from .broker.client import BrokerClient
from .broker.core import ContextBroker
from .broker.server import BrokerServer
from .broker.types import Attribute, ContextEntity
from .estimator import EstimatorService, EstimatorTarget, EventLog
from .fetcher import (
    STATUS_FRESH,
    FetcherConfig,
    FetcherOrchestrator,
    LocalRoutingPlugin,
    RemoteRoutingPlugin,
)
from .fixtures import gen_fixture
from .gtfs import ServiceDate, read_feed
from .ngsi2gtfs import run_export
from .router import RouterService
from .rt.bridge import TRIP_UPDATES_PATH, BridgeService, GtfsRtBridge
from .rt.model import ScheduleIndex
from .rt.wire import decode_feed_message

log = logging.getLogger(__name__)

MODES = ("inproc", "multiproc")
STAGE_ORDER = ("broker", "fixture", "export", "router", "fetcher",
               "bridge", "estimator")

PARKING_GROUP_ID = "urn:ngsi:ParkingSpotGroup:PG1"
PARKING_CAPACITY = 100
PARKING_HISTORY_HOURS = 72
FEED_ID = "city"


class BadConfig(Exception):
    """The compose configuration cannot be used."""


class StageFailure(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclasses.dataclass(frozen=True)
class ComposeConfig:
    mode: str = "inproc"
    fixture_seed: int = 7
    fixture_size: str = "tiny"
    service_date: int = 20250602  # YYYYMMDD, inside the fixture window
    poll_seconds: float = 1.0
    estimator_enabled: bool = True
    work_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.fixture_size not in ("tiny", "small"):
            raise BadConfig(f"unknown fixture size {self.fixture_size!r}")
        if self.poll_seconds < 1:
            raise BadConfig("poll_seconds must be at least 1")

    @classmethod
    def from_json(cls, data: dict, mode_override: str | None = None) -> "ComposeConfig":
        if not isinstance(data, dict):
            raise BadConfig("config must be a JSON object")
        known = {
            "mode": "mode",
            "fixtureSeed": "fixture_seed",
            "fixtureSize": "fixture_size",
            "serviceDate": "service_date",
            "pollSeconds": "poll_seconds",
            "estimator": "estimator_enabled",
            "workDir": "work_dir",
        }
        unknown = set(data) - set(known)
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = {field: data[key] for key, field in known.items() if key in data}
        if mode_override is not None:
            kwargs["mode"] = mode_override
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise BadConfig(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str, mode_override: str | None = None) -> "ComposeConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise BadConfig(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BadConfig(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_json(data, mode_override=mode_override)


def seed_parking_history(broker, now: float, *,
                         entity_id: str = PARKING_GROUP_ID,
                         capacity: int = PARKING_CAPACITY,
                         hours: int = PARKING_HISTORY_HOURS) -> int:
    """Hourly availableSpots records ending at ``now``; returns the count."""
    start = now - (hours - 1) * 3600
    for i in range(hours):
        when = int(start + i * 3600)
        share = 0.5 + 0.4 * math.sin(2 * math.pi * when / 86400)
        broker.upsert_entity(ContextEntity(
            id=entity_id, type="ParkingSpotGroup",
            attributes={
                "totalSpots": Attribute(capacity, observed_at=when),
                "availableSpots": Attribute(int(round(capacity * share)),
                                            observed_at=when),
            }))
    return hours


class CityPipeline:
    """Handle over a started (or starting) composition."""

    def __init__(self, config: ComposeConfig,
                 now_fn: Callable[[], float] = time.time):
        self.config = config
        self._now = now_fn
        self._multiproc = config.mode == "multiproc"
        self._date = ServiceDate.from_yyyymmdd(config.service_date)
        self._started: list[str] = []
        self._killed: set[str] = set()

        self.broker_core: ContextBroker | None = None
        self.broker_server: BrokerServer | None = None
        self.broker = None  # what the stages talk to: core or client
        self.fixture = None
        self.entities_loaded = 0
        self.export_summary = None
        self.feed = None
        self.feed_path: Path | None = None
        self.router: RouterService | None = None
        self.fetcher: FetcherOrchestrator | None = None
        self.bridge: GtfsRtBridge | None = None
        self.bridge_service: BridgeService | None = None
        self.estimator: EstimatorService | None = None

    # ---------------------------------------------------------------- start

    def start(self) -> "CityPipeline":
        stages = list(STAGE_ORDER)
        if not self.config.estimator_enabled:
            stages.remove("estimator")
        for stage in stages:
            try:
                getattr(self, f"_start_{stage}")()
            except Exception as exc:
                log.error("stage %s failed to start: %s", stage, exc)
                self.stop()
                raise StageFailure(stage, exc) from exc
            self._started.append(stage)
        try:
            self._verify_healthy()
        except StageFailure:
            self.stop()
            raise
        return self

    def _start_broker(self) -> None:
        self.broker_core = ContextBroker()
        if self._multiproc:
            self.broker_server = BrokerServer(self.broker_core)
            self.broker_server.start()
            self.broker = BrokerClient(self.broker_server.url)
        else:
            self.broker = self.broker_core

    def _start_fixture(self) -> None:
        self.fixture = gen_fixture(self.config.fixture_seed,
                                   self.config.fixture_size)
        self.entities_loaded = self.fixture.load_into(self.broker)
        if self.config.estimator_enabled:
            self.entities_loaded += 1  # the parking group entity
            seed_parking_history(self.broker, self._now())

    def _start_export(self) -> None:
        work_dir = self.config.work_dir or tempfile.mkdtemp(prefix="atomic-transit-")
        self.feed_path = Path(work_dir) / "feed.zip"
        self.export_summary = run_export(self.broker, self.feed_path,
                                         register_feed_id=FEED_ID)
        self.feed = read_feed(self.feed_path.read_bytes())

    def _start_router(self) -> None:
        self.router = RouterService(service_date=self._date, now_fn=self._now)
        if self._multiproc:
            self.router.start()

    def _start_fetcher(self) -> None:
        plugin = (RemoteRoutingPlugin(self.router.url) if self._multiproc
                  else LocalRoutingPlugin(self.router))
        config = FetcherConfig(broker=self.broker, plugin=plugin,
                               poll_interval_seconds=self.config.poll_seconds,
                               today_override=self._date)
        self.fetcher = FetcherOrchestrator(config, now_fn=self._now)
        self.fetcher.start()

    def _start_bridge(self) -> None:
        schedule = ScheduleIndex.from_feed(self.feed, self._date)
        if self._multiproc:
            self.bridge_service = BridgeService(self.broker, schedule,
                                                now_fn=self._now)
            self.bridge_service.start()
            self.bridge = self.bridge_service.bridge
        else:
            self.bridge = GtfsRtBridge(self.broker, schedule, now_fn=self._now)
            self.bridge.start()

    def _start_estimator(self) -> None:
        targets = [EstimatorTarget(entity_id=PARKING_GROUP_ID,
                                   attr="availableSpots", kind="parking")]
        self.estimator = EstimatorService(self.broker, targets, now_fn=self._now,
                                          event_log=EventLog(now_fn=self._now))
        if self._multiproc:
            self.estimator.start()
        self.estimator.estimate_all()

    def _verify_healthy(self) -> None:
        if self.router.snapshot() is None:
            raise StageFailure("router", RuntimeError(
                "no routable graph after fetcher startup"))
        try:
            decode_feed_message(self._bridge_feed_bytes())
        except Exception as exc:
            raise StageFailure("bridge", RuntimeError(
                f"bridge does not serve a decodable feed: {exc}"))

    # ------------------------------------------------------------- teardown

    def stop(self) -> None:
        if self.estimator is not None:
            self.estimator.stop()
            self.estimator = None
        if self.bridge_service is not None:
            self.bridge_service.stop()
            self.bridge_service = None
            self.bridge = None
        elif self.bridge is not None:
            self.bridge.stop()
            self.bridge = None
        if self.fetcher is not None:
            self.fetcher.stop()
            self.fetcher = None
        if self.router is not None:
            if self._multiproc:
                self.router.stop()
            self.router = None
        if self.broker_server is not None:
            self.broker_server.stop()
            self.broker_server = None
        if self.broker_core is not None:
            self.broker_core.close()
            self.broker_core = None
        self.broker = None

    def kill(self, stage: str) -> None:
        """Fault injection: take one stage down, leaving the rest running."""
        if stage == "bridge":
            if self.bridge_service is not None:
                self.bridge_service.stop()
                self.bridge_service = None
                self.bridge = None
            elif self.bridge is not None:
                self.bridge.stop()
                self.bridge = None
        elif stage == "broker":
            if self.broker_server is not None:
                self.broker_server.stop()
                self.broker_server = None
        else:
            raise ValueError(f"cannot kill stage {stage!r}")
        self._killed.add(stage)

    # -------------------------------------------------------------- runtime

    def _bridge_feed_bytes(self) -> bytes:
        if self.bridge_service is not None:
            resp = requests.get(self.bridge_service.url + TRIP_UPDATES_PATH,
                                timeout=5)
            resp.raise_for_status()
            return resp.content
        return self.bridge.trip_updates()

    def sync_realtime(self) -> bool:
        """Flush pending notifications and push the bridge feed to the router.

        Returns False when the bridge is down and no pump happened; the
        router keeps serving its last graph.
        """
        self.broker.flush_notifications()
        if "bridge" in self._killed or self.bridge is None:
            return False
        data = self._bridge_feed_bytes()
        if self._multiproc:
            resp = requests.post(f"{self.router.url}/plugin/realtime", data=data,
                                 headers={"Content-Type": "application/x-protobuf"},
                                 timeout=5)
            resp.raise_for_status()
        else:
            self.router.ingest_realtime(decode_feed_message(data))
        return True

    def route(self, from_stop: str, to_stop: str, depart_after: int) -> dict:
        if self._multiproc:
            resp = requests.get(f"{self.router.url}/route",
                                params={"from": from_stop, "to": to_stop,
                                        "departAfter": str(int(depart_after))},
                                timeout=5)
            if resp.status_code != 200:
                raise RuntimeError(f"router answered {resp.status_code}: {resp.text}")
            return resp.json()
        return self.router.route(from_stop, to_stop, int(depart_after))

    # --------------------------------------------------------------- status

    def _broker_up(self) -> bool:
        if "broker" in self._killed:
            return False
        if self._multiproc:
            return self.broker is not None and self.broker.ping()
        return self.broker_core is not None

    def status(self) -> dict:
        broker_up = self._broker_up()
        report = {}

        broker_counters = {}
        if broker_up and self.broker_core is not None:
            broker_counters["entities"] = self.broker_core.entity_count()
        report["broker"] = {"state": "up" if broker_up else "down",
                            **broker_counters}

        report["fixture"] = {"state": "up" if self.fixture is not None else "down",
                             "entitiesLoaded": self.entities_loaded}

        export_up = self.export_summary is not None
        report["export"] = {
            "state": "up" if export_up else "down",
            "feedVersion": self.export_summary.feed_version if export_up else None,
            "skips": self.export_summary.skip_count if export_up else None,
        }

        bridge_up = "bridge" not in self._killed and self.bridge is not None

        if self.router is None:
            report["router"] = {"state": "down"}
        else:
            answering = True
            if self._multiproc:
                try:
                    answering = requests.get(f"{self.router.url}/health",
                                             timeout=2).status_code == 200
                except requests.RequestException:
                    answering = False
            router_status = self.router.status() if answering else {}
            state = "down" if not answering else \
                ("up" if bridge_up and broker_up else "degraded")
            report["router"] = {
                "state": state,
                "feedsLoaded": router_status.get("feedsLoaded"),
                "lastRealtimeEpoch": router_status.get("lastRealtimeEpoch"),
            }

        if self.fetcher is None:
            report["fetcher"] = {"state": "down"}
        else:
            metrics = self.fetcher.metrics()
            fresh = sum(1 for s in self.fetcher.states().values()
                        if s.status == STATUS_FRESH)
            report["fetcher"] = {
                "state": "up" if broker_up else "degraded",
                "feedsLoaded": fresh,
                "polls": metrics["polls"],
                "failedPolls": metrics["failedPolls"],
            }

        if not bridge_up:
            report["bridge"] = {"state": "down"}
        else:
            metrics = self.bridge.metrics()
            report["bridge"] = {
                "state": "up" if broker_up else "degraded",
                "notificationsApplied": metrics["notificationsApplied"],
                "skipped": metrics["skipped"],
            }

        if self.config.estimator_enabled:
            if self.estimator is None:
                report["estimator"] = {"state": "down"}
            else:
                persisted = len(self.estimator.events.records(kind="persist"))
                report["estimator"] = {
                    "state": "up" if broker_up else "degraded",
                    "predictionsPersisted": persisted,
                }
        return report


def compose_city_service(config: ComposeConfig,
                         now_fn: Callable[[], float] = time.time) -> CityPipeline:
    """Start the full pipeline; raises StageFailure naming the first bad stage."""
    return CityPipeline(config, now_fn=now_fn).start()
