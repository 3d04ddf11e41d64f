"""HTTP client with the same surface as ContextBroker.

Services take "a broker" and never care whether it is the in-process
object or this client. Connection failures surface as BrokerUnavailable.
"""

from __future__ import annotations

from typing import Sequence

import requests

from ..httpkit import DEFAULT_TIMEOUT
from ..timeutil import epoch_to_iso, iso_to_epoch
from .types import (
    Attribute,
    BadPredicate,
    BadTarget,
    BrokerUnavailable,
    ContextEntity,
    GeoFilter,
    HistoricalRecord,
    IdTypeConflict,
    MalformedEntity,
    Subscription,
    UnknownEntity,
)

_ERROR_MAP = {
    "MalformedEntity": MalformedEntity,
    "IdTypeConflict": IdTypeConflict,
    "BadPredicate": BadPredicate,
    "BadTarget": BadTarget,
    "UnknownEntity": UnknownEntity,
}


def _raise_for(payload, status: int) -> None:
    name = (payload or {}).get("error", "")
    detail = (payload or {}).get("detail", "")
    exc_type = _ERROR_MAP.get(name)
    if exc_type is not None:
        raise exc_type(detail)
    raise BrokerUnavailable(f"broker returned HTTP {status}: {name} {detail}")


class BrokerClient:
    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()

    def _request(self, method: str, path: str, *, params=None, payload=None):
        try:
            resp = self._session.request(
                method, self.base_url + path, params=params, json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise BrokerUnavailable(f"cannot reach broker at {self.base_url}: {exc}") from exc
        body = None
        if resp.content:
            try:
                body = resp.json()
            except ValueError:
                body = None
        if resp.status_code >= 400:
            _raise_for(body, resp.status_code)
        return body

    def ping(self) -> bool:
        try:
            self._request("GET", "/health")
            return True
        except BrokerUnavailable:
            return False

    def upsert_entity(self, entity: ContextEntity) -> str:
        body = self._request("POST", "/v2/entities", payload=entity.to_json())
        return body["result"]

    def update_attrs(self, entity_id: str, attrs: dict[str, Attribute]) -> None:
        payload = {name: attr.to_json() for name, attr in attrs.items()}
        self._request("PATCH", f"/v2/entities/{entity_id}/attrs", payload=payload)

    def get_entity(self, entity_id: str) -> ContextEntity:
        body = self._request("GET", f"/v2/entities/{entity_id}")
        return ContextEntity.from_json(body)

    def query_entities(
        self,
        type_filter: str | None = None,
        id_pattern: str | None = None,
        attr_predicates: Sequence[tuple[str, str, object]] | None = None,
        geo_filter: GeoFilter | None = None,
    ) -> list[ContextEntity]:
        params: dict[str, str] = {}
        if type_filter is not None:
            params["type"] = type_filter
        if id_pattern is not None:
            params["idPattern"] = id_pattern
        if attr_predicates:
            params["q"] = ";".join(f"{a}{op}{v}" for a, op, v in attr_predicates)
        if geo_filter is not None:
            params["georel"] = f"near;maxDistance:{geo_filter.max_distance_m}"
            params["geometry"] = "point"
            params["coords"] = f"{geo_filter.center.latitude},{geo_filter.center.longitude}"
        body = self._request("GET", "/v2/entities", params=params)
        return [ContextEntity.from_json(obj) for obj in body]

    def query_history(self, entity_id: str, attr_name: str,
                      from_epoch: float | None = None,
                      to_epoch: float | None = None) -> list[HistoricalRecord]:
        params = {"entityId": entity_id, "attr": attr_name}
        if from_epoch is not None:
            params["from"] = epoch_to_iso(from_epoch)
        if to_epoch is not None:
            params["to"] = epoch_to_iso(to_epoch)
        body = self._request("GET", "/v2/history", params=params)
        records = []
        for obj in body:
            attr = Attribute.from_json({"value": obj["value"]})
            records.append(
                HistoricalRecord(
                    entity_id=obj["entityId"],
                    attr_name=obj["attrName"],
                    value=attr.value,
                    observed_at=iso_to_epoch(obj["observedAt"]),
                )
            )
        return records

    def subscribe(self, sub: Subscription) -> str:
        if not isinstance(sub.notify_target, str):
            raise BadTarget("remote subscriptions require an HTTP callback URL")
        body = self._request("POST", "/v2/subscriptions", payload=sub.to_json())
        sub.id = body["id"]
        return sub.id

    def unsubscribe(self, sub_id: str) -> bool:
        try:
            resp = self._session.delete(
                f"{self.base_url}/v2/subscriptions/{sub_id}", timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise BrokerUnavailable(f"cannot reach broker at {self.base_url}: {exc}") from exc
        return resp.status_code == 204

    def list_subscriptions(self) -> list[Subscription]:
        body = self._request("GET", "/v2/subscriptions")
        return [Subscription.from_json(obj) for obj in body]

    def flush_notifications(self) -> None:
        self._request("POST", "/admin/flush")
