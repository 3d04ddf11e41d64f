"""Context-management value types and their JSON wire mapping.

An entity is a bag of named attributes under a URN-style id and a type
name. Attribute values are JSON scalars, text, geo-points, or structured
JSON. On the wire, timestamps are ISO-8601 UTC; internally they are epoch
seconds.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Union

from ..geo import GeoPoint, looks_like_geo_point
from ..timeutil import epoch_to_iso, iso_to_epoch

AttrValue = Union[int, float, bool, str, GeoPoint, dict, list]

RESERVED_ATTR_NAMES = frozenset({"id", "type"})


class BrokerError(Exception):
    """Base class for broker-side failures."""


class MalformedEntity(BrokerError):
    pass


class IdTypeConflict(BrokerError):
    pass


class BadPredicate(BrokerError):
    pass


class BadTarget(BrokerError):
    pass


class UnknownEntity(BrokerError):
    pass


class BrokerUnavailable(BrokerError):
    """The broker endpoint cannot be reached."""


@dataclass
class Attribute:
    value: AttrValue
    observed_at: int | None = None  # epoch seconds, optional

    def to_json(self) -> dict:
        value = self.value.to_json() if isinstance(self.value, GeoPoint) else self.value
        obj: dict = {"value": value}
        if self.observed_at is not None:
            obj["observedAt"] = epoch_to_iso(self.observed_at)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Attribute":
        if not isinstance(obj, dict):
            raise MalformedEntity(
                f"attribute body must be an object with a 'value', got {obj!r}")
        value = obj.get("value")
        if looks_like_geo_point(value):
            value = GeoPoint.from_json(value)
        observed_at = obj.get("observedAt")
        if observed_at is not None:
            if not isinstance(observed_at, str):
                raise MalformedEntity(
                    f"observedAt must be an ISO-8601 string, got {observed_at!r}")
            try:
                observed_at = iso_to_epoch(observed_at)
            except ValueError as exc:
                raise MalformedEntity(f"bad observedAt: {exc}") from exc
        return cls(value=value, observed_at=observed_at)


@dataclass
class ContextEntity:
    id: str
    type: str
    attributes: dict[str, Attribute] = field(default_factory=dict)

    def validate(self) -> None:
        """Raise MalformedEntity on any structural violation."""
        if not self.id or not isinstance(self.id, str):
            raise MalformedEntity("entity id must be a non-empty string")
        if not self.type or not isinstance(self.type, str):
            raise MalformedEntity(f"entity {self.id!r}: type must be a non-empty string")
        for name, attr in self.attributes.items():
            if name in RESERVED_ATTR_NAMES:
                raise MalformedEntity(f"entity {self.id!r}: attribute name {name!r} is reserved")
            if isinstance(attr.value, GeoPoint) and not attr.value.is_valid():
                raise MalformedEntity(
                    f"entity {self.id!r}: attribute {name!r} has an out-of-range geo-point"
                )

    def location(self) -> GeoPoint | None:
        """The geo-point held by the conventional ``location`` attribute."""
        attr = self.attributes.get("location")
        if attr is not None and isinstance(attr.value, GeoPoint):
            return attr.value
        return None

    def snapshot(self) -> "ContextEntity":
        return copy.deepcopy(self)

    def to_json(self) -> dict:
        obj: dict = {"id": self.id, "type": self.type}
        for name, attr in self.attributes.items():
            obj[name] = attr.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ContextEntity":
        attributes = {
            name: Attribute.from_json(value)
            for name, value in obj.items()
            if name not in ("id", "type")
        }
        return cls(id=obj.get("id", ""), type=obj.get("type", ""), attributes=attributes)


@dataclass
class GeoFilter:
    center: GeoPoint
    max_distance_m: float

    def to_json(self) -> dict:
        return {"center": self.center.to_json(), "maxDistanceMeters": self.max_distance_m}

    @classmethod
    def from_json(cls, obj: dict) -> "GeoFilter":
        return cls(
            center=GeoPoint.from_json(obj["center"]),
            max_distance_m=float(obj["maxDistanceMeters"]),
        )


# A notification sink is either an HTTP callback URL or an in-process callable.
NotifySink = Union[str, Callable[["Notification"], None]]


@dataclass
class Subscription:
    entity_type: str
    id_pattern: str | None = None
    watched_attributes: frozenset[str] = frozenset()  # empty = all attributes
    geo_filter: GeoFilter | None = None
    notify_target: NotifySink = ""
    id: str = ""

    def to_json(self) -> dict:
        obj: dict = {"entityTypeFilter": self.entity_type}
        if self.id:
            obj["id"] = self.id
        if self.id_pattern is not None:
            obj["idPattern"] = self.id_pattern
        if self.watched_attributes:
            obj["watchedAttributes"] = sorted(self.watched_attributes)
        if self.geo_filter is not None:
            obj["geoFilter"] = self.geo_filter.to_json()
        if isinstance(self.notify_target, str):
            obj["notifyTarget"] = self.notify_target
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Subscription":
        geo_filter = obj.get("geoFilter")
        return cls(
            id=obj.get("id", ""),
            entity_type=obj.get("entityTypeFilter", ""),
            id_pattern=obj.get("idPattern"),
            watched_attributes=frozenset(obj.get("watchedAttributes") or ()),
            geo_filter=GeoFilter.from_json(geo_filter) if geo_filter else None,
            notify_target=obj.get("notifyTarget", ""),
        )


@dataclass
class Notification:
    subscription_id: str
    emitted_at: int
    data: list[ContextEntity]

    def to_json(self) -> dict:
        return {
            "subscriptionId": self.subscription_id,
            "emittedAt": epoch_to_iso(self.emitted_at),
            "data": [entity.to_json() for entity in self.data],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Notification":
        return cls(
            subscription_id=obj["subscriptionId"],
            emitted_at=iso_to_epoch(obj["emittedAt"]),
            data=[ContextEntity.from_json(e) for e in obj.get("data", [])],
        )


@dataclass(frozen=True)
class HistoricalRecord:
    entity_id: str
    attr_name: str
    value: AttrValue
    observed_at: int

    def to_json(self) -> dict:
        value = self.value.to_json() if isinstance(self.value, GeoPoint) else self.value
        return {
            "entityId": self.entity_id,
            "attrName": self.attr_name,
            "value": value,
            "observedAt": epoch_to_iso(self.observed_at),
        }
