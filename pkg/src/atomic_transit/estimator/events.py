"""Append-only event log shared by the estimator sub-components."""

from __future__ import annotations

import dataclasses
import json
import threading
import time
from typing import Callable

COMPONENTS = ("harvester", "engine", "cache", "api")
KINDS = ("harvest", "fit", "predict", "persist", "serve", "error")


@dataclasses.dataclass(frozen=True)
class EventRecord:
    epoch: float
    component: str
    kind: str
    detail: str

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "component": self.component,
                "kind": self.kind, "detail": self.detail}

    @classmethod
    def from_json(cls, data: dict) -> "EventRecord":
        return cls(epoch=float(data["epoch"]), component=str(data["component"]),
                   kind=str(data["kind"]), detail=str(data["detail"]))


class EventLog:
    """Append-only, epoch monotone per component.

    Optionally mirrors every record to a JSON-lines file, one record per
    line, flushed on each append so a crash loses at most nothing.
    """

    def __init__(self, jsonl_path: str | None = None,
                 now_fn: Callable[[], float] = time.time):
        self._records: list[EventRecord] = []
        self._last_epoch: dict[str, float] = {}
        self._lock = threading.Lock()
        self._now = now_fn
        self._fh = open(jsonl_path, "a", encoding="utf-8") if jsonl_path else None

    def append(self, component: str, kind: str, detail: str = "") -> EventRecord:
        with self._lock:
            epoch = max(self._now(), self._last_epoch.get(component, float("-inf")))
            record = EventRecord(epoch=epoch, component=component,
                                 kind=kind, detail=detail)
            self._records.append(record)
            self._last_epoch[component] = epoch
            if self._fh is not None:
                self._fh.write(json.dumps(record.to_json()) + "\n")
                self._fh.flush()
        return record

    def records(self, component: str | None = None,
                kind: str | None = None) -> list[EventRecord]:
        with self._lock:
            out = list(self._records)
        if component is not None:
            out = [r for r in out if r.component == component]
        if kind is not None:
            out = [r for r in out if r.kind == kind]
        return out

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def replay_log(jsonl_path: str) -> list[EventRecord]:
    """Read back a JSON-lines event log file."""
    records = []
    with open(jsonl_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(EventRecord.from_json(json.loads(line)))
    return records
