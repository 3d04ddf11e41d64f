"""Routing engine service: feed loading, realtime ingestion, queries.

The plugin protocol is the one the fetcher drives: feeds arrive as zip
archives on POST /plugin/feeds/{feedId}, realtime snapshots as protobuf
on POST /plugin/realtime. Queries go to GET /route. Base graphs are
kept per feed; every change rebuilds one merged, delay-applied snapshot
that queries read without locking writers.
"""

from __future__ import annotations

import logging
import threading
import time

from ..gtfs import GtfsError, ServiceDate, feed_version_of, read_feed
from ..httpkit import HttpService, Request, Response, error_response, json_response
from ..rt.model import RtFeedMessage
from ..rt.wire import WireError, decode_feed_message
from ..timeutil import iso_to_epoch
from .graph import TransitGraph, UnknownStop, apply_realtime, build_graph, earliest_arrival, merge_graphs

log = logging.getLogger(__name__)


class RouterService:
    """Holds per-feed base graphs plus one merged realtime snapshot."""

    def __init__(self, *, host: str = "127.0.0.1", port: int = 0,
                 service_date: ServiceDate | None = None, now_fn=time.time):
        if service_date is None:
            service_date = ServiceDate.from_epoch(now_fn())
        self.service_date = service_date
        self._lock = threading.Lock()
        self._base: dict[str, TransitGraph] = {}
        self._versions: dict[str, str] = {}
        self._last_rt: RtFeedMessage | None = None
        self._last_rt_epoch: int | None = None
        self._merged: TransitGraph | None = None
        self._now = now_fn
        self._http = HttpService(host=host, port=port)
        self._http.add_route("GET", "/health", self._get_health)
        self._http.add_route("POST", "/plugin/feeds/{feed_id}", self._post_feed)
        self._http.add_route("PUT", "/plugin/feeds/{feed_id}", self._post_feed)
        self._http.add_route("POST", "/plugin/realtime", self._post_realtime)
        self._http.add_route("GET", "/route", self._get_route)

    @property
    def url(self) -> str:
        return self._http.url

    def start(self) -> None:
        self._http.start()

    def stop(self) -> None:
        self._http.stop()

    # ---------------------------------------------------------------- state

    def load_feed_bytes(self, feed_id: str, data: bytes,
                        feed_version: str | None = None) -> dict:
        feed = read_feed(data)
        graph = build_graph(feed, self.service_date)
        with self._lock:
            self._base[feed_id] = graph
            self._versions[feed_id] = feed_version or feed_version_of(data)
            self._remerge()
        log.info("loaded feed %s (%d connections)", feed_id, len(graph.connections))
        return {
            "feedId": feed_id,
            "feedVersion": self._versions[feed_id],
            "connections": len(graph.connections),
            "serviceDate": f"{self.service_date.year:04d}-{self.service_date.month:02d}-{self.service_date.day:02d}",
        }

    def ingest_realtime(self, message: RtFeedMessage) -> dict:
        with self._lock:
            self._last_rt = message
            self._last_rt_epoch = int(self._now())
            self._remerge()
        return {"entities": len(message.entities), "appliedAt": self._last_rt_epoch}

    def _remerge(self) -> None:
        """Rebuild the merged snapshot. Lock held."""
        if not self._base:
            self._merged = None
            return
        graphs = list(self._base.values())
        if self._last_rt is not None:
            graphs = [apply_realtime(g, self._last_rt) for g in graphs]
        self._merged = merge_graphs(graphs)

    def snapshot(self) -> TransitGraph | None:
        with self._lock:
            return self._merged

    def route(self, from_stop: str, to_stop: str, depart_after: int) -> dict:
        graph = self.snapshot()
        if graph is None:
            raise UnknownStop(from_stop)
        journey = earliest_arrival(graph, from_stop, to_stop, depart_after)
        return {
            "from": from_stop,
            "to": to_stop,
            "departAfter": depart_after,
            "journey": journey.to_json() if journey is not None else None,
        }

    def status(self) -> dict:
        with self._lock:
            return {
                "feedsLoaded": len(self._base),
                "feedVersions": dict(self._versions),
                "lastRealtimeEpoch": self._last_rt_epoch,
                "serviceDate": f"{self.service_date.year:04d}-{self.service_date.month:02d}-{self.service_date.day:02d}",
            }

    # --------------------------------------------------------------- routes

    def _get_health(self, req: Request) -> Response:
        body = {"status": "up"}
        body.update(self.status())
        return json_response(body)

    def _post_feed(self, req: Request) -> Response:
        version = req.headers.get("X-Feed-Version")
        try:
            summary = self.load_feed_bytes(req.params["feed_id"], req.body,
                                           feed_version=version)
        except GtfsError as exc:
            return error_response(400, type(exc).__name__, str(exc))
        return json_response(summary)

    def _post_realtime(self, req: Request) -> Response:
        try:
            message = decode_feed_message(req.body)
        except WireError as exc:
            return error_response(400, "WireError", str(exc))
        return json_response(self.ingest_realtime(message))

    def _get_route(self, req: Request) -> Response:
        params = req.query
        missing = [k for k in ("from", "to", "departAfter") if not params.get(k)]
        if missing:
            return error_response(400, "MissingParameter", ", ".join(missing))
        raw = params["departAfter"]
        try:
            depart_after = int(raw)
        except ValueError:
            try:
                depart_after = iso_to_epoch(raw)
            except ValueError as exc:
                return error_response(400, "BadTimestamp", str(exc))
        try:
            body = self.route(params["from"], params["to"], depart_after)
        except UnknownStop as exc:
            return error_response(404, "UnknownStop", str(exc))
        return json_response(body)
