"""In-memory context broker: entity store, filtered/geo queries,
subscriptions with asynchronous notifications, and per-attribute history.

Writes are serialized under one lock, so queries always see a consistent
snapshot. Notifications are dispatched from a single background thread,
which preserves per-subscription FIFO order; the snapshot each one carries
is taken synchronously inside the triggering upsert.
"""

from __future__ import annotations

import bisect
import fnmatch
import itertools
import json
import logging
import queue
import threading
import time
from pathlib import Path
from typing import Callable, Iterable, Sequence

import requests

from ..geo import haversine_m
from .types import (
    Attribute,
    BadPredicate,
    BadTarget,
    ContextEntity,
    GeoFilter,
    HistoricalRecord,
    IdTypeConflict,
    MalformedEntity,
    Notification,
    Subscription,
    UnknownEntity,
)

log = logging.getLogger(__name__)

_COMPARABLE = {"<", ">"}
_QUEUE_STOP = object()


def _values_comparable(a, b) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return False
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return True
    return isinstance(a, str) and isinstance(b, str)


class ContextBroker:
    """Single-node, in-memory NGSI-style context broker.

    `journal_path` enables an append-only journal of writes that is
    replayed on construction, giving cheap persistence across restarts.
    `now_fn` exists so tests can pin receipt timestamps.
    """

    def __init__(self, journal_path: str | Path | None = None,
                 now_fn: Callable[[], float] = time.time):
        self._now_fn = now_fn
        self._lock = threading.RLock()
        self._entities: dict[str, ContextEntity] = {}
        # (entity_id, attr_name) -> list sorted by (observed_at, insertion seq)
        self._history: dict[tuple[str, str], list[tuple[int, int, HistoricalRecord]]] = {}
        self._history_seq = itertools.count()
        self._subscriptions: dict[str, Subscription] = {}
        self._sub_seq = itertools.count(1)
        self._queue: queue.Queue = queue.Queue()
        self._dispatcher = threading.Thread(target=self._dispatch_loop, name="broker-notify", daemon=True)
        self._dispatcher.start()
        self._journal_file = None
        self._journal_path = Path(journal_path) if journal_path else None
        if self._journal_path is not None:
            self._replay_journal()
            self._journal_file = open(self._journal_path, "a", encoding="utf-8")

    # ------------------------------------------------------------------ write

    def upsert_entity(self, entity: ContextEntity) -> str:
        """Insert or replace an entity. Returns "created" or "updated".

        The entity's attribute set replaces the stored one. Attributes whose
        value or observation time changed are appended to history, and every
        subscription matching the post-update snapshot is notified once.
        """
        entity.validate()
        with self._lock:
            received_at = int(self._now_fn())
            result = self._apply_upsert(entity, received_at)
            self._journal_write(entity, received_at)
            return result

    def update_attrs(self, entity_id: str, attrs: dict[str, Attribute]) -> None:
        """Merge attributes into an existing entity (the PATCH path)."""
        with self._lock:
            current = self._entities.get(entity_id)
            if current is None:
                raise UnknownEntity(entity_id)
            merged = current.snapshot()
            merged.attributes.update(attrs)
            merged.validate()
            received_at = int(self._now_fn())
            self._apply_upsert(merged, received_at)
            self._journal_write(merged, received_at)

    def _apply_upsert(self, entity: ContextEntity, received_at: int) -> str:
        current = self._entities.get(entity.id)
        if current is not None and current.type != entity.type:
            raise IdTypeConflict(
                f"entity {entity.id!r} already exists with type {current.type!r}, got {entity.type!r}"
            )
        changed: set[str] = set()
        old_attrs = current.attributes if current is not None else {}
        for name, attr in entity.attributes.items():
            previous = old_attrs.get(name)
            if previous is None or previous.value != attr.value or previous.observed_at != attr.observed_at:
                changed.add(name)
                observed_at = attr.observed_at if attr.observed_at is not None else received_at
                record = HistoricalRecord(entity.id, name, attr.value, observed_at)
                self._history_append(record)
        stored = entity.snapshot()
        self._entities[entity.id] = stored
        result = "updated" if current is not None else "created"
        self._notify_matches(stored, changed, received_at)
        return result

    def _history_append(self, record: HistoricalRecord) -> None:
        key = (record.entity_id, record.attr_name)
        entries = self._history.setdefault(key, [])
        item = (record.observed_at, next(self._history_seq), record)
        bisect.insort(entries, item, key=lambda e: (e[0], e[1]))

    def _journal_write(self, entity: ContextEntity, received_at: int) -> None:
        if self._journal_file is None:
            return
        line = json.dumps({"entity": entity.to_json(), "receivedAt": received_at})
        self._journal_file.write(line + "\n")
        self._journal_file.flush()

    def _replay_journal(self) -> None:
        if not self._journal_path.exists():
            return
        with open(self._journal_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                entity = ContextEntity.from_json(obj["entity"])
                with self._lock:
                    self._apply_upsert(entity, int(obj["receivedAt"]))

    # ------------------------------------------------------------------ read

    def get_entity(self, entity_id: str) -> ContextEntity:
        with self._lock:
            entity = self._entities.get(entity_id)
            if entity is None:
                raise UnknownEntity(entity_id)
            return entity.snapshot()

    def query_entities(
        self,
        type_filter: str | None = None,
        id_pattern: str | None = None,
        attr_predicates: Sequence[tuple[str, str, object]] | None = None,
        geo_filter: GeoFilter | None = None,
    ) -> list[ContextEntity]:
        """Entities satisfying all given filters, ascending by id."""
        if type_filter is None and id_pattern is None and not attr_predicates and geo_filter is None:
            raise ValueError("query_entities requires at least one filter")
        with self._lock:
            out = []
            for entity_id in sorted(self._entities):
                entity = self._entities[entity_id]
                if self._matches(entity, type_filter, id_pattern, attr_predicates, geo_filter):
                    out.append(entity.snapshot())
            return out

    @staticmethod
    def _matches(entity, type_filter, id_pattern, attr_predicates, geo_filter) -> bool:
        if type_filter is not None and entity.type != type_filter:
            return False
        if id_pattern is not None and not fnmatch.fnmatchcase(entity.id, id_pattern):
            return False
        for name, op, expected in attr_predicates or ():
            attr = entity.attributes.get(name)
            if attr is None:
                return False
            actual = attr.value
            if op == "==":
                if actual != expected:
                    return False
            elif op in _COMPARABLE:
                if not _values_comparable(actual, expected):
                    raise BadPredicate(f"{op} on non-comparable values: {actual!r} vs {expected!r}")
                if op == "<" and not actual < expected:
                    return False
                if op == ">" and not actual > expected:
                    return False
            else:
                raise BadPredicate(f"unsupported operator {op!r}")
        if geo_filter is not None:
            location = entity.location()
            if location is None:
                return False
            if haversine_m(location, geo_filter.center) > geo_filter.max_distance_m:
                return False
        return True

    def query_history(self, entity_id: str, attr_name: str,
                      from_epoch: float | None = None,
                      to_epoch: float | None = None) -> list[HistoricalRecord]:
        """History records with from <= observedAt <= to, ascending.

        Omitted bounds are open: no ``from`` means "since the beginning",
        no ``to`` means "up to the latest record".
        """
        if from_epoch is not None and to_epoch is not None and from_epoch > to_epoch:
            raise ValueError("history window start after end")
        with self._lock:
            if entity_id not in self._entities:
                raise UnknownEntity(entity_id)
            entries = self._history.get((entity_id, attr_name), [])
            lo = 0
            hi = len(entries)
            if from_epoch is not None:
                lo = bisect.bisect_left(entries, from_epoch, key=lambda e: e[0])
            if to_epoch is not None:
                hi = bisect.bisect_right(entries, to_epoch, key=lambda e: e[0])
            return [record for _, _, record in entries[lo:hi]]

    # ---------------------------------------------------------- subscriptions

    def subscribe(self, sub: Subscription) -> str:
        if sub.geo_filter is not None and sub.geo_filter.max_distance_m <= 0:
            raise BadTarget("geoFilter.maxDistanceMeters must be > 0")
        if isinstance(sub.notify_target, str):
            if not sub.notify_target.startswith(("http://", "https://")):
                raise BadTarget(f"unresolvable notify target {sub.notify_target!r}")
        elif not callable(sub.notify_target):
            raise BadTarget("notify target must be an HTTP URL or a callable sink")
        with self._lock:
            sub_id = sub.id or f"sub-{next(self._sub_seq)}"
            sub.id = sub_id
            self._subscriptions[sub_id] = sub
            return sub_id

    def unsubscribe(self, sub_id: str) -> bool:
        with self._lock:
            return self._subscriptions.pop(sub_id, None) is not None

    def list_subscriptions(self) -> list[Subscription]:
        with self._lock:
            return list(self._subscriptions.values())

    def _notify_matches(self, entity: ContextEntity, changed: set[str], emitted_at: int) -> None:
        for sub in self._subscriptions.values():
            if sub.entity_type != entity.type:
                continue
            if sub.id_pattern is not None and not fnmatch.fnmatchcase(entity.id, sub.id_pattern):
                continue
            if sub.watched_attributes and not (sub.watched_attributes & changed):
                continue
            if sub.geo_filter is not None:
                location = entity.location()
                if location is None or haversine_m(location, sub.geo_filter.center) > sub.geo_filter.max_distance_m:
                    continue
            notification = Notification(
                subscription_id=sub.id, emitted_at=emitted_at, data=[entity.snapshot()]
            )
            self._queue.put((sub.notify_target, notification))

    def _dispatch_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is _QUEUE_STOP:
                self._queue.task_done()
                return
            target, notification = item
            try:
                self._deliver(target, notification)
            except Exception:
                log.warning("notification delivery failed for %s", notification.subscription_id,
                            exc_info=True)
            finally:
                self._queue.task_done()

    @staticmethod
    def _deliver(target, notification: Notification) -> None:
        if callable(target):
            target(notification)
        else:
            requests.post(target, json=notification.to_json(), timeout=10)

    def flush_notifications(self) -> None:
        """Block until every queued notification has been delivered."""
        self._queue.join()

    # ----------------------------------------------------------------- admin

    def entity_count(self) -> int:
        with self._lock:
            return len(self._entities)

    def close(self) -> None:
        self._queue.put(_QUEUE_STOP)
        self._dispatcher.join(timeout=5)
        if self._journal_file is not None:
            self._journal_file.close()
            self._journal_file = None
