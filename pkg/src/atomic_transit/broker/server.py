"""HTTP JSON API in front of a ContextBroker.

Endpoints (v2-flavoured):
    GET    /v2/entities?type=&idPattern=&q=&georel=near;maxDistance:N&geometry=point&coords=lat,lon
    GET    /v2/entities/{id}
    POST   /v2/entities
    PATCH  /v2/entities/{id}/attrs
    POST   /v2/subscriptions
    GET    /v2/subscriptions
    DELETE /v2/subscriptions/{id}
    GET    /v2/history?entityId=&attr=&from=&to=
    GET    /health
    POST   /admin/flush      (blocks until queued notifications are delivered)
"""

from __future__ import annotations

import re

from ..geo import GeoPoint
from ..httpkit import HttpService, Request, Response, error_response, json_response
from ..timeutil import iso_to_epoch
from .core import ContextBroker
from .types import (
    Attribute,
    BadPredicate,
    BadTarget,
    ContextEntity,
    GeoFilter,
    IdTypeConflict,
    MalformedEntity,
    Subscription,
    UnknownEntity,
)

_PREDICATE_RE = re.compile(r"^(\w+)(==|<|>)(.*)$")


def _parse_scalar(text: str):
    for caster in (int, float):
        try:
            return caster(text)
        except ValueError:
            continue
    return text


def parse_q(q: str) -> list[tuple[str, str, object]]:
    """Parse ``attr==value`` predicates, ';'-separated."""
    predicates = []
    for part in q.split(";"):
        part = part.strip()
        if not part:
            continue
        m = _PREDICATE_RE.match(part)
        if not m:
            raise BadPredicate(f"cannot parse predicate {part!r}")
        attr, op, raw = m.groups()
        if op in ("<", ">") and raw.startswith("="):
            raise BadPredicate(f"operator {op}= is not supported (predicate {part!r})")
        predicates.append((attr, op, _parse_scalar(raw)))
    return predicates


def parse_geo_params(query: dict[str, str]) -> GeoFilter | None:
    georel = query.get("georel")
    if georel is None:
        return None
    m = re.match(r"^near;maxDistance:(\d+(?:\.\d+)?)$", georel)
    if not m:
        raise BadPredicate(f"unsupported georel {georel!r}")
    if query.get("geometry", "point") != "point":
        raise BadPredicate("only geometry=point is supported")
    coords = query.get("coords", "")
    try:
        lat, lon = (float(p) for p in coords.split(","))
    except ValueError:
        raise BadPredicate(f"bad coords {coords!r}") from None
    return GeoFilter(center=GeoPoint(lat, lon), max_distance_m=float(m.group(1)))


class BrokerServer:
    """Binds a ContextBroker to an HttpService."""

    def __init__(self, broker: ContextBroker, host: str = "127.0.0.1", port: int = 0):
        self.broker = broker
        self.http = HttpService(host=host, port=port, name="broker")
        h = self.http
        h.add_route("GET", "/health", lambda req: json_response({"status": "up"}))
        h.add_route("POST", "/admin/flush", self._flush)
        h.add_route("GET", "/v2/entities", self._query_entities)
        h.add_route("POST", "/v2/entities", self._upsert_entity)
        h.add_route("GET", "/v2/entities/{id}", self._get_entity)
        h.add_route("PATCH", "/v2/entities/{id}/attrs", self._patch_attrs)
        h.add_route("POST", "/v2/subscriptions", self._subscribe)
        h.add_route("GET", "/v2/subscriptions", self._list_subscriptions)
        h.add_route("DELETE", "/v2/subscriptions/{id}", self._unsubscribe)
        h.add_route("GET", "/v2/history", self._history)

    def start(self) -> None:
        self.http.start()

    def stop(self) -> None:
        self.http.stop()

    @property
    def url(self) -> str:
        return self.http.url

    # ---------------------------------------------------------------- routes

    def _flush(self, req: Request) -> Response:
        self.broker.flush_notifications()
        return json_response({"status": "flushed"})

    def _upsert_entity(self, req: Request) -> Response:
        try:
            entity = ContextEntity.from_json(req.json())
            result = self.broker.upsert_entity(entity)
        except MalformedEntity as exc:
            return error_response(400, "MalformedEntity", str(exc))
        except IdTypeConflict as exc:
            return error_response(409, "IdTypeConflict", str(exc))
        status = 201 if result == "created" else 200
        return json_response({"result": result}, status=status)

    def _get_entity(self, req: Request) -> Response:
        try:
            entity = self.broker.get_entity(req.params["id"])
        except UnknownEntity as exc:
            return error_response(404, "UnknownEntity", str(exc))
        return json_response(entity.to_json())

    def _patch_attrs(self, req: Request) -> Response:
        attrs = {name: Attribute.from_json(obj) for name, obj in req.json().items()}
        try:
            self.broker.update_attrs(req.params["id"], attrs)
        except UnknownEntity as exc:
            return error_response(404, "UnknownEntity", str(exc))
        except MalformedEntity as exc:
            return error_response(400, "MalformedEntity", str(exc))
        return Response(status=204)

    def _query_entities(self, req: Request) -> Response:
        try:
            predicates = parse_q(req.query["q"]) if "q" in req.query else None
            geo_filter = parse_geo_params(req.query)
            entities = self.broker.query_entities(
                type_filter=req.query.get("type"),
                id_pattern=req.query.get("idPattern"),
                attr_predicates=predicates,
                geo_filter=geo_filter,
            )
        except BadPredicate as exc:
            return error_response(400, "BadPredicate", str(exc))
        except ValueError as exc:
            return error_response(400, "BadRequest", str(exc))
        return json_response([e.to_json() for e in entities])

    def _subscribe(self, req: Request) -> Response:
        try:
            sub = Subscription.from_json(req.json())
            sub_id = self.broker.subscribe(sub)
        except BadTarget as exc:
            return error_response(400, "BadTarget", str(exc))
        return json_response({"id": sub_id}, status=201)

    def _list_subscriptions(self, req: Request) -> Response:
        return json_response([s.to_json() for s in self.broker.list_subscriptions()])

    def _unsubscribe(self, req: Request) -> Response:
        removed = self.broker.unsubscribe(req.params["id"])
        if not removed:
            return error_response(404, "UnknownSubscription", req.params["id"])
        return Response(status=204)

    def _history(self, req: Request) -> Response:
        try:
            entity_id = req.query["entityId"]
            attr = req.query["attr"]
            from_epoch = iso_to_epoch(req.query["from"]) if "from" in req.query else None
            to_epoch = iso_to_epoch(req.query["to"]) if "to" in req.query else None
        except (KeyError, ValueError) as exc:
            return error_response(400, "BadRequest", str(exc))
        try:
            records = self.broker.query_history(entity_id, attr, from_epoch, to_epoch)
        except UnknownEntity as exc:
            return error_response(404, "UnknownEntity", str(exc))
        except ValueError as exc:
            return error_response(400, "BadRequest", str(exc))
        return json_response([r.to_json() for r in records])
