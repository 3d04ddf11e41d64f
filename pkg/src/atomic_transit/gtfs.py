"""GTFS static feeds: zipped CSV reading, deterministic writing, validity.

The on-disk format is the six mandatory GTFS tables (agency, stops,
routes, calendar, trips, stop_times) with exactly the reference column
names. Writes are canonical: rows sorted by primary key, RFC-4180 CSV,
UTF-8 with LF line endings, stored (uncompressed) zip members with a
fixed timestamp. Two structurally equal feeds therefore produce
byte-identical archives, and the archive's SHA-256 doubles as a content
version.

Record types are the urban-mobility model classes, so a feed read here
can be pushed to the broker without any further mapping.
"""

from __future__ import annotations

import csv
import hashlib
import io
import re
import time as _time
import zipfile
from dataclasses import dataclass, field, replace
from datetime import date as _date

from .geo import GeoPoint
from .models import (
    GtfsAgencyEntity,
    GtfsRouteEntity,
    GtfsServiceEntity,
    GtfsStopEntity,
    GtfsStopTimeEntity,
    GtfsTripEntity,
)


class GtfsError(Exception):
    pass


class BadTimeFormat(GtfsError):
    pass


class MissingFile(GtfsError):
    pass


class MissingColumn(GtfsError):
    pass


class ReferentialViolation(GtfsError):
    def __init__(self, table: str, row_key: str, message: str):
        super().__init__(f"{table} row {row_key}: {message}")
        self.table = table
        self.row_key = row_key


class FeedNotValidOnDate(GtfsError):
    """No service window in the feed covers the requested date."""


@dataclass(frozen=True, order=True)
class ServiceDate:
    """A calendar date in the feed's local service frame."""

    year: int
    month: int
    day: int

    def __post_init__(self):
        _date(self.year, self.month, self.day)  # rejects impossible dates

    @classmethod
    def from_yyyymmdd(cls, value: int | str) -> "ServiceDate":
        value = int(value)
        return cls(value // 10000, (value // 100) % 100, value % 100)

    @classmethod
    def from_epoch(cls, epoch: float) -> "ServiceDate":
        """UTC calendar date containing the given epoch second."""
        parts = _time.gmtime(epoch)
        return cls(parts.tm_year, parts.tm_mon, parts.tm_mday)

    def yyyymmdd(self) -> int:
        return self.year * 10000 + self.month * 100 + self.day

    def weekday(self) -> int:
        """Monday is 0, matching the calendar.txt column order."""
        return _date(self.year, self.month, self.day).weekday()

    def __str__(self) -> str:
        return f"{self.year:04d}{self.month:02d}{self.day:02d}"


_TIME_RE = re.compile(r"^(\d+):([0-5]\d):([0-5]\d)$")


def parse_gtfs_time(text: str) -> int:
    """``H+:MM:SS`` to seconds since service midnight. Hours may pass 24."""
    m = _TIME_RE.match(text.strip())
    if not m:
        raise BadTimeFormat(f"not a GTFS time: {text!r}")
    hours, minutes, seconds = (int(g) for g in m.groups())
    return hours * 3600 + minutes * 60 + seconds


def format_gtfs_time(seconds: int) -> str:
    if seconds < 0:
        raise BadTimeFormat(f"negative service time: {seconds}")
    hours, rest = divmod(int(seconds), 3600)
    minutes, secs = divmod(rest, 60)
    return f"{hours:02d}:{minutes:02d}:{secs:02d}"


@dataclass
class GtfsFeed:
    agencies: list[GtfsAgencyEntity] = field(default_factory=list)
    stops: list[GtfsStopEntity] = field(default_factory=list)
    routes: list[GtfsRouteEntity] = field(default_factory=list)
    services: list[GtfsServiceEntity] = field(default_factory=list)
    trips: list[GtfsTripEntity] = field(default_factory=list)
    stop_times: list[GtfsStopTimeEntity] = field(default_factory=list)
    # Derived from archive bytes, never serialized; excluded from equality.
    feed_version: str | None = field(default=None, compare=False)

    def row_counts(self) -> dict[str, int]:
        return {
            "agency": len(self.agencies),
            "stops": len(self.stops),
            "routes": len(self.routes),
            "calendar": len(self.services),
            "trips": len(self.trips),
            "stop_times": len(self.stop_times),
        }


AGENCY_COLUMNS = ("agency_id", "agency_name", "agency_url", "agency_timezone")
STOP_COLUMNS = ("stop_id", "stop_name", "stop_lat", "stop_lon")
ROUTE_COLUMNS = ("route_id", "agency_id", "route_short_name", "route_type")
CALENDAR_COLUMNS = (
    "service_id", "monday", "tuesday", "wednesday", "thursday", "friday",
    "saturday", "sunday", "start_date", "end_date",
)
TRIP_COLUMNS = ("trip_id", "route_id", "service_id", "trip_headsign")
STOP_TIME_COLUMNS = ("trip_id", "stop_id", "stop_sequence", "arrival_time", "departure_time")

FEED_MEMBERS = ("agency.txt", "stops.txt", "routes.txt", "calendar.txt",
                "trips.txt", "stop_times.txt")


def feed_version_of(zip_bytes: bytes) -> str:
    """The authoritative version of a feed is its content hash."""
    return hashlib.sha256(zip_bytes).hexdigest()


def canonical_order(feed: GtfsFeed) -> GtfsFeed:
    """The feed with every table sorted by its primary key."""
    return replace(
        feed,
        agencies=sorted(feed.agencies, key=lambda a: a.agency_id),
        stops=sorted(feed.stops, key=lambda s: s.stop_id),
        routes=sorted(feed.routes, key=lambda r: r.route_id),
        services=sorted(feed.services, key=lambda c: c.service_id),
        trips=sorted(feed.trips, key=lambda t: t.trip_id),
        stop_times=sorted(feed.stop_times, key=lambda st: (st.trip_ref, st.stop_sequence)),
    )


# ------------------------------------------------------------------ reading


def _read_table(zf: zipfile.ZipFile, name: str, columns: tuple[str, ...]) -> list[dict]:
    try:
        raw = zf.read(name)
    except KeyError:
        raise MissingFile(f"feed archive lacks {name}") from None
    text = raw.decode("utf-8-sig")  # tolerate a BOM on read
    reader = csv.DictReader(io.StringIO(text, newline=""))
    header = reader.fieldnames or []
    for column in columns:
        if column not in header:
            raise MissingColumn(f"{name}: missing column {column!r}")
    return list(reader)


def read_feed(zip_bytes: bytes) -> GtfsFeed:
    """Parse a feed archive and verify its cross-table references.

    Unknown columns are ignored. The returned feed carries the archive's
    content hash as ``feed_version``.
    """
    try:
        zf = zipfile.ZipFile(io.BytesIO(zip_bytes))
    except zipfile.BadZipFile as exc:
        raise MissingFile(f"not a zip archive: {exc}") from None
    with zf:
        agencies = [
            GtfsAgencyEntity(
                agency_id=row["agency_id"],
                name=row["agency_name"],
                url=row["agency_url"],
                timezone=row["agency_timezone"],
            )
            for row in _read_table(zf, "agency.txt", AGENCY_COLUMNS)
        ]
        stops = [
            GtfsStopEntity(
                stop_id=row["stop_id"],
                name=row["stop_name"],
                location=GeoPoint(float(row["stop_lat"]), float(row["stop_lon"])),
            )
            for row in _read_table(zf, "stops.txt", STOP_COLUMNS)
        ]
        routes = [
            GtfsRouteEntity(
                route_id=row["route_id"],
                agency_ref=row["agency_id"],
                short_name=row["route_short_name"],
                route_type=int(row["route_type"]),
            )
            for row in _read_table(zf, "routes.txt", ROUTE_COLUMNS)
        ]
        services = [
            GtfsServiceEntity(
                service_id=row["service_id"],
                weekday_flags=tuple(row[day] == "1" for day in CALENDAR_COLUMNS[1:8]),
                start_date=int(row["start_date"]),
                end_date=int(row["end_date"]),
            )
            for row in _read_table(zf, "calendar.txt", CALENDAR_COLUMNS)
        ]
        trips = [
            GtfsTripEntity(
                trip_id=row["trip_id"],
                route_ref=row["route_id"],
                service_ref=row["service_id"],
                headsign=row["trip_headsign"],
            )
            for row in _read_table(zf, "trips.txt", TRIP_COLUMNS)
        ]
        stop_times = [
            GtfsStopTimeEntity(
                trip_ref=row["trip_id"],
                stop_ref=row["stop_id"],
                stop_sequence=int(row["stop_sequence"]),
                arrival_time=parse_gtfs_time(row["arrival_time"]),
                departure_time=parse_gtfs_time(row["departure_time"]),
            )
            for row in _read_table(zf, "stop_times.txt", STOP_TIME_COLUMNS)
        ]

    feed = GtfsFeed(
        agencies=agencies, stops=stops, routes=routes,
        services=services, trips=trips, stop_times=stop_times,
        feed_version=feed_version_of(zip_bytes),
    )
    _check_references(feed)
    return feed


def _check_references(feed: GtfsFeed) -> None:
    agency_ids = {a.agency_id for a in feed.agencies}
    stop_ids = {s.stop_id for s in feed.stops}
    route_ids = {r.route_id for r in feed.routes}
    service_ids = {c.service_id for c in feed.services}
    trip_ids = {t.trip_id for t in feed.trips}

    for route in feed.routes:
        if route.agency_ref not in agency_ids:
            raise ReferentialViolation("routes.txt", route.route_id,
                                       f"agency_id {route.agency_ref!r} not in agency.txt")
    for trip in feed.trips:
        if trip.route_ref not in route_ids:
            raise ReferentialViolation("trips.txt", trip.trip_id,
                                       f"route_id {trip.route_ref!r} not in routes.txt")
        if trip.service_ref not in service_ids:
            raise ReferentialViolation("trips.txt", trip.trip_id,
                                       f"service_id {trip.service_ref!r} not in calendar.txt")
    for st in feed.stop_times:
        key = f"{st.trip_ref}:{st.stop_sequence}"
        if st.trip_ref not in trip_ids:
            raise ReferentialViolation("stop_times.txt", key,
                                       f"trip_id {st.trip_ref!r} not in trips.txt")
        if st.stop_ref not in stop_ids:
            raise ReferentialViolation("stop_times.txt", key,
                                       f"stop_id {st.stop_ref!r} not in stops.txt")


# ------------------------------------------------------------------ writing


def _csv_bytes(columns: tuple[str, ...], rows: list[list]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")  # RFC-4180 minimal quoting
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _float_cell(value: float) -> str:
    # repr round-trips float64 exactly and is stable across runs
    return repr(float(value))


def write_feed(feed: GtfsFeed) -> bytes:
    """Serialize to a byte-reproducible zip archive.

    Rows are written in primary-key order and zip members carry a fixed
    timestamp, so equal feeds yield equal bytes (and equal versions).
    """
    feed = canonical_order(feed)
    tables = {
        "agency.txt": _csv_bytes(
            AGENCY_COLUMNS,
            [[a.agency_id, a.name, a.url, a.timezone] for a in feed.agencies],
        ),
        "stops.txt": _csv_bytes(
            STOP_COLUMNS,
            [[s.stop_id, s.name, _float_cell(s.location.latitude),
              _float_cell(s.location.longitude)] for s in feed.stops],
        ),
        "routes.txt": _csv_bytes(
            ROUTE_COLUMNS,
            [[r.route_id, r.agency_ref, r.short_name, str(r.route_type)] for r in feed.routes],
        ),
        "calendar.txt": _csv_bytes(
            CALENDAR_COLUMNS,
            [[c.service_id, *["1" if flag else "0" for flag in c.weekday_flags],
              str(c.start_date), str(c.end_date)] for c in feed.services],
        ),
        "trips.txt": _csv_bytes(
            TRIP_COLUMNS,
            [[t.trip_id, t.route_ref, t.service_ref, t.headsign] for t in feed.trips],
        ),
        "stop_times.txt": _csv_bytes(
            STOP_TIME_COLUMNS,
            [[st.trip_ref, st.stop_ref, str(st.stop_sequence),
              format_gtfs_time(st.arrival_time), format_gtfs_time(st.departure_time)]
             for st in feed.stop_times],
        ),
    }
    out = io.BytesIO()
    with zipfile.ZipFile(out, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in FEED_MEMBERS:
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, tables[name])
    return out.getvalue()


def feed_valid_on(feed: GtfsFeed, date: ServiceDate) -> bool:
    """True iff at least one service window covers the date."""
    day = date.yyyymmdd()
    return any(c.start_date <= day <= c.end_date for c in feed.services)
