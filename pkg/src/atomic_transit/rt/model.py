"""Typed GTFS-realtime messages and the schedule lookup behind them."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..gtfs import FeedNotValidOnDate, GtfsFeed, ServiceDate, feed_valid_on
from ..timeutil import yyyymmdd_to_midnight_epoch

FULL_DATASET = 0


@dataclass(frozen=True)
class RtStopTimeUpdate:
    stop_id: str
    stop_sequence: int
    arrival_delay_seconds: int


@dataclass(frozen=True)
class RtTripUpdate:
    trip_id: str
    stop_time_updates: tuple[RtStopTimeUpdate, ...] = ()
    timestamp: int | None = None


@dataclass(frozen=True)
class RtVehiclePosition:
    latitude: float
    longitude: float
    bearing: float | None = None
    trip_id: str | None = None
    timestamp: int | None = None


@dataclass(frozen=True)
class RtEntity:
    """One feed entity; exactly one payload kind is set."""

    id: str
    trip_update: RtTripUpdate | None = None
    vehicle_position: RtVehiclePosition | None = None

    def __post_init__(self):
        if (self.trip_update is None) == (self.vehicle_position is None):
            raise ValueError("entity needs exactly one of trip_update, vehicle_position")


@dataclass(frozen=True)
class RtFeedMessage:
    timestamp: int
    entities: tuple[RtEntity, ...] = ()
    version: str = "2.0"
    incrementality: int = FULL_DATASET

    def canonical(self) -> "RtFeedMessage":
        """Entities sorted by id, stop time updates by stop sequence."""
        ordered = []
        for entity in sorted(self.entities, key=lambda e: e.id):
            if entity.trip_update is not None:
                stus = tuple(sorted(entity.trip_update.stop_time_updates,
                                    key=lambda s: s.stop_sequence))
                entity = RtEntity(
                    id=entity.id,
                    trip_update=RtTripUpdate(
                        trip_id=entity.trip_update.trip_id,
                        stop_time_updates=stus,
                        timestamp=entity.trip_update.timestamp,
                    ),
                )
            ordered.append(entity)
        return RtFeedMessage(
            timestamp=self.timestamp,
            entities=tuple(ordered),
            version=self.version,
            incrementality=self.incrementality,
        )


@dataclass(frozen=True)
class ScheduleEntry:
    stop_sequence: int
    arrival_epoch: int


@dataclass(frozen=True)
class ScheduleIndex:
    """Scheduled absolute arrival epochs for one service date.

    Maps (trip id, stop id) to the stop's sequence and its arrival time
    anchored at UTC midnight of the service date. Only trips whose
    calendar entry is active on that date (date range and weekday flag)
    are indexed; a trip calling at the same stop twice keeps its first
    call.
    """

    service_date: ServiceDate
    entries: dict[tuple[str, str], ScheduleEntry] = field(default_factory=dict)

    @classmethod
    def from_feed(cls, feed: GtfsFeed, service_date: ServiceDate) -> "ScheduleIndex":
        if not feed_valid_on(feed, service_date):
            raise FeedNotValidOnDate(f"feed has no service window covering {service_date}")
        day = service_date.yyyymmdd()
        active = {
            s.service_id for s in feed.services
            if s.start_date <= day <= s.end_date
            and s.weekday_flags[service_date.weekday()]
        }
        indexed_trips = {t.trip_id for t in feed.trips if t.service_ref in active}
        midnight = yyyymmdd_to_midnight_epoch(service_date.yyyymmdd())
        entries: dict[tuple[str, str], ScheduleEntry] = {}
        for st in feed.stop_times:
            if st.trip_ref not in indexed_trips:
                continue
            key = (st.trip_ref, st.stop_ref)
            if key not in entries:
                entries[key] = ScheduleEntry(st.stop_sequence, midnight + st.arrival_time)
        return cls(service_date=service_date, entries=entries)

    def lookup(self, trip_id: str, stop_id: str) -> ScheduleEntry | None:
        return self.entries.get((trip_id, stop_id))

    def __len__(self) -> int:
        return len(self.entries)
