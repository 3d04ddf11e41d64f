"""Feed fetch orchestration.

Polls the context broker for GtfsFeedPointer entities, retrieves the
referenced zip archives, gates them on validity, and hands fresh content
to a routing engine plugin. The fetcher is a proxy: the bytes it fetched
are the bytes the plugin receives, never a rewrite.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
import time
from typing import Callable, Protocol
from urllib.parse import urlparse
from urllib.request import url2pathname

import requests

from .broker.types import BrokerUnavailable
from .gtfs import GtfsError, ServiceDate, feed_valid_on, feed_version_of, read_feed
from .models import GtfsFeedPointerEntity, MissingMandatoryField

log = logging.getLogger(__name__)

FETCH_TIMEOUT_S = 10.0

STATUS_FRESH = "fresh"
STATUS_EXPIRED = "expired"
STATUS_FETCH_FAILED = "fetch-failed"


class FetchFailure(Exception):
    """The pointer's source could not be retrieved."""


class RoutingEnginePlugin(Protocol):
    def load_feed(self, feed_id: str, zip_bytes: bytes, version: str) -> None:
        """Load one feed version. Must be idempotent per (feed_id, version)."""


@dataclasses.dataclass(frozen=True)
class FetcherConfig:
    broker: object  # ContextBroker or BrokerClient
    plugin: RoutingEnginePlugin
    poll_interval_seconds: float = 30.0
    today_override: ServiceDate | None = None

    def __post_init__(self):
        if self.poll_interval_seconds < 1:
            raise ValueError("poll_interval_seconds must be at least 1")


@dataclasses.dataclass(frozen=True)
class FeedState:
    feed_id: str
    status: str
    last_version: str | None = None
    last_loaded_at: float | None = None

    def to_json(self) -> dict:
        return {
            "feedId": self.feed_id,
            "status": self.status,
            "lastVersion": self.last_version,
            "lastLoadedAt": self.last_loaded_at,
        }


class RemoteRoutingPlugin:
    """Plugin adapter speaking the remote wire protocol."""

    def __init__(self, endpoint: str, timeout: float = FETCH_TIMEOUT_S):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def load_feed(self, feed_id: str, zip_bytes: bytes, version: str) -> None:
        resp = requests.post(
            f"{self.endpoint}/plugin/feeds/{feed_id}",
            data=zip_bytes,
            headers={"Content-Type": "application/zip", "X-Feed-Version": version},
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise FetchFailure(
                f"plugin rejected feed {feed_id}: {resp.status_code} {resp.text[:200]}")


class LocalRoutingPlugin:
    """Plugin adapter calling an in-process RouterService directly."""

    def __init__(self, router):
        self.router = router

    def load_feed(self, feed_id: str, zip_bytes: bytes, version: str) -> None:
        self.router.load_feed_bytes(feed_id, zip_bytes, feed_version=version)


def fetch_source(url: str, timeout: float = FETCH_TIMEOUT_S) -> bytes:
    parsed = urlparse(url)
    if parsed.scheme == "file":
        try:
            with open(url2pathname(parsed.path), "rb") as fh:
                return fh.read()
        except OSError as exc:
            raise FetchFailure(f"cannot read {url}: {exc}") from exc
    if parsed.scheme in ("http", "https"):
        try:
            resp = requests.get(url, timeout=timeout)
        except requests.RequestException as exc:
            raise FetchFailure(f"cannot fetch {url}: {exc}") from exc
        if resp.status_code != 200:
            raise FetchFailure(f"{url} returned {resp.status_code}")
        return resp.content
    raise FetchFailure(f"unsupported scheme in {url}")


def resolve_pointers(broker) -> tuple[list[GtfsFeedPointerEntity], list[str]]:
    """All well-formed feed pointers in the broker, plus a skip report."""
    pointers: list[GtfsFeedPointerEntity] = []
    skipped: list[str] = []
    for entity in broker.query_entities(type_filter=GtfsFeedPointerEntity.ENTITY_TYPE):
        try:
            pointer = GtfsFeedPointerEntity.from_context(entity)
        except (MissingMandatoryField, ValueError, TypeError) as exc:
            skipped.append(f"{entity.id}: {exc}")
            continue
        if pointer.valid_from > pointer.valid_until:
            skipped.append(
                f"{entity.id}: validFrom {pointer.valid_from} after "
                f"validUntil {pointer.valid_until}")
            continue
        pointers.append(pointer)
    for entry in skipped:
        log.warning("skipping malformed pointer %s", entry)
    return pointers, skipped


def fetch_and_load(
    pointer: GtfsFeedPointerEntity,
    today: ServiceDate,
    plugin: RoutingEnginePlugin,
    previous: FeedState | None = None,
    now_fn: Callable[[], float] = time.time,
) -> FeedState:
    """One fetch cycle for one pointer.

    All outcomes are encoded in the returned FeedState; a bad feed must
    never take the orchestrator down. On expiry or failure the previously
    loaded version stays in effect at the plugin, so last_version and
    last_loaded_at carry over from ``previous``.
    """
    carried = dict(
        last_version=previous.last_version if previous else None,
        last_loaded_at=previous.last_loaded_at if previous else None,
    )
    day = today.yyyymmdd()
    if not (pointer.valid_from <= day <= pointer.valid_until):
        return FeedState(pointer.feed_id, STATUS_EXPIRED, **carried)

    try:
        zip_bytes = fetch_source(pointer.source_url)
        feed = read_feed(zip_bytes)
    except (FetchFailure, GtfsError) as exc:
        log.warning("feed %s fetch failed: %s", pointer.feed_id, exc)
        return FeedState(pointer.feed_id, STATUS_FETCH_FAILED, **carried)

    # validity is conjunctive: the pointer window and the calendar both
    # have to cover today
    if not feed_valid_on(feed, today):
        return FeedState(pointer.feed_id, STATUS_EXPIRED, **carried)

    version = feed_version_of(zip_bytes)
    if previous is not None and previous.last_version == version:
        return FeedState(pointer.feed_id, STATUS_FRESH, **carried)

    try:
        plugin.load_feed(pointer.feed_id, zip_bytes, version)
    except Exception as exc:
        log.warning("plugin load failed for %s: %s", pointer.feed_id, exc)
        return FeedState(pointer.feed_id, STATUS_FETCH_FAILED, **carried)
    return FeedState(pointer.feed_id, STATUS_FRESH,
                     last_version=version, last_loaded_at=now_fn())


class FetcherOrchestrator:
    """Polling loop around resolve_pointers and fetch_and_load."""

    def __init__(self, config: FetcherConfig, now_fn: Callable[[], float] = time.time):
        self.config = config
        self._now = now_fn
        self._states: dict[str, FeedState] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._polls = 0
        self._failed_polls = 0
        self._last_poll_epoch: float | None = None

    def _today(self) -> ServiceDate:
        if self.config.today_override is not None:
            return self.config.today_override
        return ServiceDate.from_epoch(self._now())

    def poll_once(self) -> None:
        """Resolve pointers and run one fetch cycle per pointer.

        Raises BrokerUnavailable; callers decide whether that is fatal
        (first poll) or a logged miss (steady state).
        """
        pointers, _ = resolve_pointers(self.config.broker)
        today = self._today()
        for pointer in pointers:
            with self._lock:
                previous = self._states.get(pointer.feed_id)
            state = fetch_and_load(pointer, today, self.config.plugin,
                                   previous=previous, now_fn=self._now)
            with self._lock:
                self._states[pointer.feed_id] = state
        with self._lock:
            self._polls += 1
            self._last_poll_epoch = self._now()

    def _loop(self) -> None:
        while not self._stop.wait(self.config.poll_interval_seconds):
            try:
                self.poll_once()
            except BrokerUnavailable as exc:
                with self._lock:
                    self._failed_polls += 1
                log.warning("poll failed, broker unreachable: %s", exc)

    def start(self) -> None:
        # the first poll is synchronous: an unreachable broker at startup
        # is a configuration error, not a transient miss
        self.poll_once()
        self._thread = threading.Thread(target=self._loop,
                                        name="fetcher-poll", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def states(self) -> dict[str, FeedState]:
        with self._lock:
            return dict(self._states)

    def metrics(self) -> dict:
        with self._lock:
            return {
                "polls": self._polls,
                "failedPolls": self._failed_polls,
                "lastPollEpoch": self._last_poll_epoch,
            }


def run_orchestrator(config: FetcherConfig,
                     now_fn: Callable[[], float] = time.time) -> FetcherOrchestrator:
    """Start a fetcher and return its handle."""
    orchestrator = FetcherOrchestrator(config, now_fn=now_fn)
    orchestrator.start()
    return orchestrator
