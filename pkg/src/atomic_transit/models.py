"""Typed urban-mobility entities and their context-entity mapping.

Each class here is a plain value type mirroring one broker entity type.
``to_context`` produces the wire-shaped ContextEntity (canonical URN id,
camel-cased attribute names); ``from_context`` reverses it and fails fast
on anything mandatory that is missing or of the wrong shape.

``validate_consistency`` checks a whole entity set as a graph: dangling
references, per-kind invariants, and duplicate business ids all become
report findings instead of exceptions, so callers can surface every
problem at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .broker.types import Attribute, ContextEntity
from .geo import GeoPoint


class UnknownEntityType(Exception):
    pass


class MissingMandatoryField(Exception):
    pass


def _attr_value(entity: ContextEntity, name: str):
    attr = entity.attributes.get(name)
    return None if attr is None else attr.value


def _require(entity: ContextEntity, name: str):
    attr = entity.attributes.get(name)
    if attr is None or attr.value is None:
        raise MissingMandatoryField(f"{entity.type} {entity.id!r}: missing attribute {name!r}")
    return attr.value


def _require_geo(entity: ContextEntity, name: str) -> GeoPoint:
    value = _require(entity, name)
    if not isinstance(value, GeoPoint):
        raise MissingMandatoryField(
            f"{entity.type} {entity.id!r}: attribute {name!r} is not a geo-point"
        )
    return value


def _require_int(entity: ContextEntity, name: str) -> int:
    value = _require(entity, name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MissingMandatoryField(f"{entity.type} {entity.id!r}: attribute {name!r} is not numeric")
    return int(value)


def _observed_at(entity: ContextEntity, name: str) -> int:
    attr = entity.attributes.get(name)
    if attr is None or attr.observed_at is None:
        raise MissingMandatoryField(f"{entity.type} {entity.id!r}: {name!r} lacks observedAt")
    return int(attr.observed_at)


@dataclass(frozen=True)
class GtfsAgencyEntity:
    agency_id: str
    name: str
    url: str
    timezone: str

    ENTITY_TYPE = "GtfsAgency"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:GtfsAgency:{self.agency_id}"

    def to_context(self) -> ContextEntity:
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "agencyId": Attribute(self.agency_id),
                "name": Attribute(self.name),
                "url": Attribute(self.url),
                "timezone": Attribute(self.timezone),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "GtfsAgencyEntity":
        return cls(
            agency_id=str(_require(entity, "agencyId")),
            name=str(_require(entity, "name")),
            url=str(_require(entity, "url")),
            timezone=str(_require(entity, "timezone")),
        )


@dataclass(frozen=True)
class GtfsStopEntity:
    stop_id: str
    name: str
    location: GeoPoint

    ENTITY_TYPE = "GtfsStop"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:GtfsStop:{self.stop_id}"

    def to_context(self) -> ContextEntity:
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "stopId": Attribute(self.stop_id),
                "name": Attribute(self.name),
                "location": Attribute(self.location),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "GtfsStopEntity":
        return cls(
            stop_id=str(_require(entity, "stopId")),
            name=str(_require(entity, "name")),
            location=_require_geo(entity, "location"),
        )


@dataclass(frozen=True)
class GtfsRouteEntity:
    route_id: str
    agency_ref: str
    short_name: str
    route_type: int

    ENTITY_TYPE = "GtfsRoute"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:GtfsRoute:{self.route_id}"

    def to_context(self) -> ContextEntity:
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "routeId": Attribute(self.route_id),
                "agencyRef": Attribute(self.agency_ref),
                "shortName": Attribute(self.short_name),
                "routeType": Attribute(self.route_type),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "GtfsRouteEntity":
        return cls(
            route_id=str(_require(entity, "routeId")),
            agency_ref=str(_require(entity, "agencyRef")),
            short_name=str(_require(entity, "shortName")),
            route_type=_require_int(entity, "routeType"),
        )


@dataclass(frozen=True)
class GtfsServiceEntity:
    service_id: str
    weekday_flags: tuple[bool, ...]  # Monday first, 7 entries
    start_date: int  # YYYYMMDD
    end_date: int

    ENTITY_TYPE = "GtfsService"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:GtfsService:{self.service_id}"

    def to_context(self) -> ContextEntity:
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "serviceId": Attribute(self.service_id),
                "weekdayFlags": Attribute(list(self.weekday_flags)),
                "startDate": Attribute(self.start_date),
                "endDate": Attribute(self.end_date),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "GtfsServiceEntity":
        flags = _require(entity, "weekdayFlags")
        if not isinstance(flags, (list, tuple)) or len(flags) != 7:
            raise MissingMandatoryField(
                f"GtfsService {entity.id!r}: weekdayFlags must hold 7 booleans"
            )
        return cls(
            service_id=str(_require(entity, "serviceId")),
            weekday_flags=tuple(bool(f) for f in flags),
            start_date=_require_int(entity, "startDate"),
            end_date=_require_int(entity, "endDate"),
        )


@dataclass(frozen=True)
class GtfsTripEntity:
    trip_id: str
    route_ref: str
    service_ref: str
    headsign: str

    ENTITY_TYPE = "GtfsTrip"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:GtfsTrip:{self.trip_id}"

    def to_context(self) -> ContextEntity:
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "tripId": Attribute(self.trip_id),
                "routeRef": Attribute(self.route_ref),
                "serviceRef": Attribute(self.service_ref),
                "headsign": Attribute(self.headsign),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "GtfsTripEntity":
        return cls(
            trip_id=str(_require(entity, "tripId")),
            route_ref=str(_require(entity, "routeRef")),
            service_ref=str(_require(entity, "serviceRef")),
            headsign=str(_require(entity, "headsign")),
        )


@dataclass(frozen=True)
class GtfsStopTimeEntity:
    trip_ref: str
    stop_ref: str
    stop_sequence: int
    arrival_time: int  # seconds since service midnight; may exceed 24h
    departure_time: int

    ENTITY_TYPE = "GtfsStopTime"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:GtfsStopTime:{self.trip_ref}:{self.stop_sequence}"

    def to_context(self) -> ContextEntity:
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "tripRef": Attribute(self.trip_ref),
                "stopRef": Attribute(self.stop_ref),
                "stopSequence": Attribute(self.stop_sequence),
                "arrivalTime": Attribute(self.arrival_time),
                "departureTime": Attribute(self.departure_time),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "GtfsStopTimeEntity":
        return cls(
            trip_ref=str(_require(entity, "tripRef")),
            stop_ref=str(_require(entity, "stopRef")),
            stop_sequence=_require_int(entity, "stopSequence"),
            arrival_time=_require_int(entity, "arrivalTime"),
            departure_time=_require_int(entity, "departureTime"),
        )


@dataclass(frozen=True)
class ArrivalEstimationEntity:
    trip_ref: str
    stop_ref: str
    estimated_arrival_time: int  # epoch seconds
    observed_at: int

    ENTITY_TYPE = "ArrivalEstimation"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:ArrivalEstimation:{self.trip_ref}:{self.stop_ref}"

    def to_context(self) -> ContextEntity:
        when = self.observed_at
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "tripRef": Attribute(self.trip_ref, observed_at=when),
                "stopRef": Attribute(self.stop_ref, observed_at=when),
                "estimatedArrivalTime": Attribute(self.estimated_arrival_time, observed_at=when),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "ArrivalEstimationEntity":
        return cls(
            trip_ref=str(_require(entity, "tripRef")),
            stop_ref=str(_require(entity, "stopRef")),
            estimated_arrival_time=_require_int(entity, "estimatedArrivalTime"),
            observed_at=_observed_at(entity, "estimatedArrivalTime"),
        )


@dataclass(frozen=True)
class VehiclePositionEntity:
    vehicle_id: str
    location: GeoPoint
    observed_at: int
    trip_ref: Optional[str] = None
    bearing: Optional[float] = None  # degrees, [0, 360)

    ENTITY_TYPE = "VehiclePosition"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:VehiclePosition:{self.vehicle_id}"

    def to_context(self) -> ContextEntity:
        when = self.observed_at
        attributes = {
            "vehicleId": Attribute(self.vehicle_id, observed_at=when),
            "location": Attribute(self.location, observed_at=when),
        }
        if self.trip_ref is not None:
            attributes["tripRef"] = Attribute(self.trip_ref, observed_at=when)
        if self.bearing is not None:
            attributes["bearing"] = Attribute(self.bearing, observed_at=when)
        return ContextEntity(id=self.context_id, type=self.ENTITY_TYPE, attributes=attributes)

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "VehiclePositionEntity":
        trip_ref = _attr_value(entity, "tripRef")
        bearing = _attr_value(entity, "bearing")
        return cls(
            vehicle_id=str(_require(entity, "vehicleId")),
            location=_require_geo(entity, "location"),
            observed_at=_observed_at(entity, "location"),
            trip_ref=None if trip_ref is None else str(trip_ref),
            bearing=None if bearing is None else float(bearing),
        )


@dataclass(frozen=True)
class GtfsFeedPointerEntity:
    feed_id: str
    source_url: str
    version: str
    valid_from: int  # YYYYMMDD
    valid_until: int

    ENTITY_TYPE = "GtfsFeedPointer"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:GtfsFeedPointer:{self.feed_id}"

    def to_context(self) -> ContextEntity:
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "feedId": Attribute(self.feed_id),
                "sourceUrl": Attribute(self.source_url),
                "version": Attribute(self.version),
                "validFrom": Attribute(self.valid_from),
                "validUntil": Attribute(self.valid_until),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "GtfsFeedPointerEntity":
        return cls(
            feed_id=str(_require(entity, "feedId")),
            source_url=str(_require(entity, "sourceUrl")),
            version=str(_require(entity, "version")),
            valid_from=_require_int(entity, "validFrom"),
            valid_until=_require_int(entity, "validUntil"),
        )


@dataclass(frozen=True)
class ParkingSpotGroupEntity:
    group_id: str
    location: GeoPoint
    total_spots: int
    available_spots: int
    observed_at: int

    ENTITY_TYPE = "ParkingSpotGroup"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:ParkingSpotGroup:{self.group_id}"

    def to_context(self) -> ContextEntity:
        when = self.observed_at
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "groupId": Attribute(self.group_id, observed_at=when),
                "location": Attribute(self.location, observed_at=when),
                "totalSpots": Attribute(self.total_spots, observed_at=when),
                "availableSpots": Attribute(self.available_spots, observed_at=when),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "ParkingSpotGroupEntity":
        return cls(
            group_id=str(_require(entity, "groupId")),
            location=_require_geo(entity, "location"),
            total_spots=_require_int(entity, "totalSpots"),
            available_spots=_require_int(entity, "availableSpots"),
            observed_at=_observed_at(entity, "availableSpots"),
        )


@dataclass(frozen=True)
class TrafficFlowObservedEntity:
    segment_id: str
    location: GeoPoint
    intensity: float  # vehicles per hour
    observed_at: int

    ENTITY_TYPE = "TrafficFlowObserved"

    @property
    def context_id(self) -> str:
        return f"urn:ngsi:TrafficFlowObserved:{self.segment_id}"

    def to_context(self) -> ContextEntity:
        when = self.observed_at
        return ContextEntity(
            id=self.context_id,
            type=self.ENTITY_TYPE,
            attributes={
                "segmentId": Attribute(self.segment_id, observed_at=when),
                "location": Attribute(self.location, observed_at=when),
                "intensity": Attribute(self.intensity, observed_at=when),
            },
        )

    @classmethod
    def from_context(cls, entity: ContextEntity) -> "TrafficFlowObservedEntity":
        value = _require(entity, "intensity")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MissingMandatoryField(f"TrafficFlowObserved {entity.id!r}: intensity not numeric")
        return cls(
            segment_id=str(_require(entity, "segmentId")),
            location=_require_geo(entity, "location"),
            intensity=float(value),
            observed_at=_observed_at(entity, "intensity"),
        )


MODEL_CLASSES = (
    GtfsAgencyEntity,
    GtfsStopEntity,
    GtfsRouteEntity,
    GtfsServiceEntity,
    GtfsTripEntity,
    GtfsStopTimeEntity,
    ArrivalEstimationEntity,
    VehiclePositionEntity,
    GtfsFeedPointerEntity,
    ParkingSpotGroupEntity,
    TrafficFlowObservedEntity,
)

ENTITY_TYPE_TO_CLASS = {cls.ENTITY_TYPE: cls for cls in MODEL_CLASSES}


def from_context(entity: ContextEntity):
    """Dispatch a ContextEntity to its typed model class."""
    cls = ENTITY_TYPE_TO_CLASS.get(entity.type)
    if cls is None:
        raise UnknownEntityType(entity.type)
    return cls.from_context(entity)


def to_context(model) -> ContextEntity:
    """Uniform-call companion of :func:`from_context`."""
    if type(model) not in MODEL_CLASSES:
        raise UnknownEntityType(type(model).__name__)
    return model.to_context()


# --------------------------------------------------------------- consistency


@dataclass(frozen=True)
class Finding:
    rule: str        # dangling-ref | duplicate-id | stop-sequence | invariant | malformed
    entity_id: str
    detail: str


@dataclass
class ConsistencyReport:
    findings: list[Finding] = field(default_factory=list)

    def ok(self) -> bool:
        return not self.findings

    def __len__(self) -> int:
        return len(self.findings)

    def by_rule(self, rule: str) -> list[Finding]:
        return [f for f in self.findings if f.rule == rule]


# Business-id attribute per kind; StopTime is keyed by (tripRef, stopSequence)
# and handled by the sequence rule instead of the duplicate rule.
_BUSINESS_ID_FIELDS = {
    GtfsAgencyEntity: "agency_id",
    GtfsStopEntity: "stop_id",
    GtfsRouteEntity: "route_id",
    GtfsServiceEntity: "service_id",
    GtfsTripEntity: "trip_id",
    ArrivalEstimationEntity: None,  # keyed by (trip_ref, stop_ref) below
    VehiclePositionEntity: "vehicle_id",
    GtfsFeedPointerEntity: "feed_id",
    ParkingSpotGroupEntity: "group_id",
    TrafficFlowObservedEntity: "segment_id",
}


def validate_consistency(entities: list[ContextEntity]) -> ConsistencyReport:
    """Check an entity set as an urban-mobility graph.

    Every dangling reference, violated per-kind invariant, and duplicate
    business id becomes one finding. Entities whose type is not a model
    type are ignored; model entities that fail to parse are reported as
    ``malformed`` rather than raised.
    """
    report = ConsistencyReport()
    typed: list[tuple[ContextEntity, object]] = []
    for entity in entities:
        if entity.type not in ENTITY_TYPE_TO_CLASS:
            continue
        try:
            typed.append((entity, from_context(entity)))
        except MissingMandatoryField as exc:
            report.findings.append(Finding("malformed", entity.id, str(exc)))

    # presence maps for reference resolution
    agencies = {m.agency_id for _, m in typed if isinstance(m, GtfsAgencyEntity)}
    stops = {m.stop_id for _, m in typed if isinstance(m, GtfsStopEntity)}
    routes = {m.route_id for _, m in typed if isinstance(m, GtfsRouteEntity)}
    services = {m.service_id for _, m in typed if isinstance(m, GtfsServiceEntity)}
    trips = {m.trip_id for _, m in typed if isinstance(m, GtfsTripEntity)}

    def dangling(entity_id: str, ref_name: str, ref_value: str, universe: set, kind: str):
        if ref_value not in universe:
            report.findings.append(
                Finding("dangling-ref", entity_id, f"{ref_name} {ref_value!r} names no {kind}")
            )

    seen_ids: dict[tuple[type, object], int] = {}
    stop_seq_seen: dict[tuple[str, int], int] = {}

    for entity, model in typed:
        id_field = _BUSINESS_ID_FIELDS.get(type(model), "")
        if id_field is None:
            key = (type(model), (model.trip_ref, model.stop_ref))
        elif id_field:
            key = (type(model), getattr(model, id_field))
        else:
            key = None
        if key is not None:
            seen_ids[key] = seen_ids.get(key, 0) + 1
            if seen_ids[key] > 1:
                report.findings.append(
                    Finding("duplicate-id", entity.id, f"business id {key[1]!r} occurs again")
                )

        if isinstance(model, GtfsRouteEntity):
            dangling(entity.id, "agencyRef", model.agency_ref, agencies, "GtfsAgency")
        elif isinstance(model, GtfsServiceEntity):
            if model.start_date > model.end_date:
                report.findings.append(
                    Finding("invariant", entity.id,
                            f"startDate {model.start_date} after endDate {model.end_date}")
                )
        elif isinstance(model, GtfsTripEntity):
            dangling(entity.id, "routeRef", model.route_ref, routes, "GtfsRoute")
            dangling(entity.id, "serviceRef", model.service_ref, services, "GtfsService")
        elif isinstance(model, GtfsStopTimeEntity):
            dangling(entity.id, "tripRef", model.trip_ref, trips, "GtfsTrip")
            dangling(entity.id, "stopRef", model.stop_ref, stops, "GtfsStop")
            if model.stop_sequence < 0:
                report.findings.append(
                    Finding("invariant", entity.id, f"stopSequence {model.stop_sequence} < 0")
                )
            if model.departure_time < model.arrival_time:
                report.findings.append(
                    Finding("invariant", entity.id,
                            f"departureTime {model.departure_time} before arrivalTime "
                            f"{model.arrival_time}")
                )
            seq_key = (model.trip_ref, model.stop_sequence)
            stop_seq_seen[seq_key] = stop_seq_seen.get(seq_key, 0) + 1
            if stop_seq_seen[seq_key] > 1:
                report.findings.append(
                    Finding("stop-sequence", entity.id,
                            f"stopSequence {model.stop_sequence} repeats on trip "
                            f"{model.trip_ref!r}")
                )
        elif isinstance(model, ArrivalEstimationEntity):
            dangling(entity.id, "tripRef", model.trip_ref, trips, "GtfsTrip")
            dangling(entity.id, "stopRef", model.stop_ref, stops, "GtfsStop")
            if model.estimated_arrival_time <= 0:
                report.findings.append(
                    Finding("invariant", entity.id, "estimatedArrivalTime must be positive")
                )
        elif isinstance(model, VehiclePositionEntity):
            if model.trip_ref is not None:
                dangling(entity.id, "tripRef", model.trip_ref, trips, "GtfsTrip")
            if model.bearing is not None and not (0.0 <= model.bearing < 360.0):
                report.findings.append(
                    Finding("invariant", entity.id, f"bearing {model.bearing} outside [0, 360)")
                )
        elif isinstance(model, GtfsFeedPointerEntity):
            if not model.source_url:
                report.findings.append(Finding("invariant", entity.id, "sourceUrl is empty"))
            if model.valid_from > model.valid_until:
                report.findings.append(
                    Finding("invariant", entity.id,
                            f"validFrom {model.valid_from} after validUntil {model.valid_until}")
                )
        elif isinstance(model, ParkingSpotGroupEntity):
            if model.total_spots <= 0:
                report.findings.append(
                    Finding("invariant", entity.id, f"totalSpots {model.total_spots} must be > 0")
                )
            if model.available_spots < 0:
                report.findings.append(
                    Finding("invariant", entity.id,
                            f"availableSpots {model.available_spots} must be >= 0")
                )
            elif model.available_spots > model.total_spots:
                report.findings.append(
                    Finding("invariant", entity.id,
                            f"availableSpots {model.available_spots} exceeds totalSpots "
                            f"{model.total_spots}")
                )
        elif isinstance(model, TrafficFlowObservedEntity):
            if not (math.isfinite(model.intensity) and model.intensity >= 0.0):
                report.findings.append(
                    Finding("invariant", entity.id,
                            f"intensity {model.intensity} must be finite and >= 0")
                )

    return report
