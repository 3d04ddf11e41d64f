"""Export broker-held urban-mobility entities as a GTFS static feed.

A pull-based batch job in three steps: discover the six Gtfs* entity
types from the broker, build an in-memory feed (refusing inconsistent
input outright), and write the canonical zip. The written archive's
content hash is the feed version, so an unchanged broker always exports
the same version string.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .gtfs import GtfsFeed, feed_version_of, write_feed
from .models import (
    GtfsAgencyEntity,
    GtfsFeedPointerEntity,
    GtfsRouteEntity,
    GtfsServiceEntity,
    GtfsStopEntity,
    GtfsStopTimeEntity,
    GtfsTripEntity,
    MissingMandatoryField,
    from_context,
    validate_consistency,
)

log = logging.getLogger(__name__)

STATIC_ENTITY_TYPES = ("GtfsAgency", "GtfsStop", "GtfsRoute", "GtfsService",
                       "GtfsTrip", "GtfsStopTime")


class InconsistentInput(Exception):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class IoFailure(Exception):
    pass


@dataclass
class DiscoveryResult:
    entities: list = field(default_factory=list)
    skips: list[dict] = field(default_factory=list)  # {"entityId","reason"} each


@dataclass
class ExportSummary:
    row_counts: dict[str, int]
    skip_count: int
    feed_version: str
    skips: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "rowCounts": self.row_counts,
            "skipCount": self.skip_count,
            "feedVersion": self.feed_version,
            "skips": self.skips,
        }


def discover(broker) -> DiscoveryResult:
    """All static urban-mobility entities the broker holds, typed.

    Entities that fail conversion (missing mandatory fields) are listed
    in the skip report instead of being silently dropped.
    """
    result = DiscoveryResult()
    for entity_type in STATIC_ENTITY_TYPES:
        for entity in broker.query_entities(type_filter=entity_type):
            try:
                result.entities.append(from_context(entity))
            except MissingMandatoryField as exc:
                result.skips.append({"entityId": entity.id, "reason": str(exc)})
    return result


_TABLE_OF = {
    GtfsAgencyEntity: "agencies",
    GtfsStopEntity: "stops",
    GtfsRouteEntity: "routes",
    GtfsServiceEntity: "services",
    GtfsTripEntity: "trips",
    GtfsStopTimeEntity: "stop_times",
}


def build_feed(entities: list) -> GtfsFeed:
    """One GTFS row per typed entity, identifiers verbatim.

    The input must already be a consistent graph; any consistency finding
    aborts the build with the full report attached.
    """
    feed = GtfsFeed()
    for model in entities:
        table = _TABLE_OF.get(type(model))
        if table is None:
            raise InconsistentInput(
                f"entity kind {type(model).__name__} has no place in a static feed"
            )
        getattr(feed, table).append(model)

    report = validate_consistency([m.to_context() for m in entities])
    if not report.ok():
        raise InconsistentInput(
            f"entity set has {len(report)} consistency finding(s); first: "
            f"{report.findings[0].detail}",
            report=report,
        )
    if not feed.agencies:
        raise InconsistentInput("no agency entity; a feed cannot be built")
    return feed


def run_export(broker, output_path: str | Path,
               register_feed_id: str | None = None) -> ExportSummary:
    """Discover, build, and atomically write ``output_path``.

    With ``register_feed_id`` the produced feed is also announced on the
    broker as a GtfsFeedPointer whose validity window spans the feed's
    service dates.
    """
    output_path = Path(output_path)
    discovery = discover(broker)
    feed = build_feed(discovery.entities)
    data = write_feed(feed)
    version = feed_version_of(data)

    tmp_name = None
    try:
        fd, tmp_name = tempfile.mkstemp(dir=str(output_path.parent),
                                        prefix=output_path.name + ".", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp_name, output_path)
        tmp_name = None
    except OSError as exc:
        raise IoFailure(f"cannot write {output_path}: {exc}") from exc
    finally:
        if tmp_name is not None:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass

    if register_feed_id is not None:
        pointer = GtfsFeedPointerEntity(
            feed_id=register_feed_id,
            source_url=output_path.resolve().as_uri(),
            version=version,
            valid_from=min(c.start_date for c in feed.services) if feed.services else 19700101,
            valid_until=max(c.end_date for c in feed.services) if feed.services else 29991231,
        )
        broker.upsert_entity(pointer.to_context())

    summary = ExportSummary(
        row_counts=feed.row_counts(),
        skip_count=len(discovery.skips),
        feed_version=version,
        skips=discovery.skips,
    )
    log.info("exported %s (version %s, %d skips)", output_path, version[:12],
             summary.skip_count)
    return summary
