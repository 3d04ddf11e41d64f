"""Deterministic desk-scale city fixtures.

``gen_fixture(seed, size)`` builds a consistent urban-mobility entity set
plus a manifest of expected values (entity counts and every scheduled
stop time), so end-to-end tests can check pipeline answers against
numbers that were fixed before any service ran. The same seed always
yields byte-identical output.

Sizes: tiny is 1 agency / 4 stops / 2 routes / 1 service / 3 trips /
8 stop_times; small is 2 agencies / 20 stops / 6 routes / 30 trips.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .gtfs import GtfsFeed, format_gtfs_time
from .models import (
    GtfsAgencyEntity,
    GtfsRouteEntity,
    GtfsServiceEntity,
    GtfsStopEntity,
    GtfsStopTimeEntity,
    GtfsTripEntity,
)
from .broker.types import ContextEntity
from .geo import GeoPoint

SIZES = ("tiny", "small")

_CITY_CENTER = (41.38, 2.17)
_STOP_NAMES = (
    "Plaza Mayor, Centro", "Estación Norte", "Port Vell", "Hospital General",
    "Universitat", "Mercat Central", "Parc del Riu", "Avinguda Llarga",
    "Can Fàbregas", "Torre Vella", "Jardins del Mar", "Passeig Fluvial",
    "Camp Esportiu", "Biblioteca Sud", "Teatre Gran", "Moll de Ponent",
    "Barri Antic", "Les Escoles", "Font Seca", "Mirador Alt",
)


@dataclass
class Fixture:
    seed: int
    size: str
    agencies: list[GtfsAgencyEntity] = field(default_factory=list)
    stops: list[GtfsStopEntity] = field(default_factory=list)
    routes: list[GtfsRouteEntity] = field(default_factory=list)
    services: list[GtfsServiceEntity] = field(default_factory=list)
    trips: list[GtfsTripEntity] = field(default_factory=list)
    stop_times: list[GtfsStopTimeEntity] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def all_typed(self) -> list:
        return [*self.agencies, *self.stops, *self.routes, *self.services,
                *self.trips, *self.stop_times]

    def context_entities(self) -> list[ContextEntity]:
        return [m.to_context() for m in self.all_typed()]

    def to_feed(self) -> GtfsFeed:
        return GtfsFeed(
            agencies=list(self.agencies), stops=list(self.stops), routes=list(self.routes),
            services=list(self.services), trips=list(self.trips),
            stop_times=list(self.stop_times),
        )

    def load_into(self, broker) -> int:
        """Upsert every entity; returns how many were pushed."""
        entities = self.context_entities()
        for entity in entities:
            broker.upsert_entity(entity)
        return len(entities)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "size": self.size,
            "entities": [e.to_json() for e in self.context_entities()],
            "manifest": self.manifest,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2, ensure_ascii=False)


def _shape(size: str) -> dict:
    if size == "tiny":
        return {"agencies": 1, "stops": 4, "routes": 2, "services": 1, "trips": 3,
                "chains": [3, 2]}  # stop-chain length per route: 3+3+2 visits = 8
    if size == "small":
        return {"agencies": 2, "stops": 20, "routes": 6, "services": 2, "trips": 30,
                "chains": None}
    raise ValueError(f"unknown fixture size {size!r} (expected one of {SIZES})")


def gen_fixture(seed: int, size: str = "tiny") -> Fixture:
    shape = _shape(size)
    rng = random.Random(seed)
    fx = Fixture(seed=seed, size=size)

    fx.agencies = [
        GtfsAgencyEntity(f"A{i + 1}", f"City Lines {i + 1}", "https://transit.example",
                         "Europe/Madrid")
        for i in range(shape["agencies"])
    ]

    lat0, lon0 = _CITY_CENTER
    for i in range(shape["stops"]):
        fx.stops.append(
            GtfsStopEntity(
                stop_id=f"S{i + 1}",
                name=_STOP_NAMES[i % len(_STOP_NAMES)],
                location=GeoPoint(round(lat0 + rng.uniform(-0.04, 0.04), 6),
                                  round(lon0 + rng.uniform(-0.04, 0.04), 6)),
            )
        )

    weekdays_only = (True,) * 5 + (False, False)
    every_day = (True,) * 7
    fx.services = [
        GtfsServiceEntity(f"C{i + 1}", every_day if i == 0 else weekdays_only,
                          20250101, 20251231)
        for i in range(shape["services"])
    ]

    # Each route follows a fixed chain of distinct stops; trips replay it.
    chains: list[list[GtfsStopEntity]] = []
    for r in range(shape["routes"]):
        if shape["chains"] is not None:
            length = shape["chains"][r]
        else:
            length = rng.randint(3, min(6, len(fx.stops)))
        chain = rng.sample(fx.stops, length)
        chains.append(chain)
        fx.routes.append(
            GtfsRouteEntity(
                route_id=f"R{r + 1}",
                agency_ref=fx.agencies[r % len(fx.agencies)].agency_id,
                short_name=f"L{r + 1}",
                route_type=rng.choice((1, 3)),
            )
        )

    manifest_trips = []
    for t in range(shape["trips"]):
        route_index = t % len(fx.routes)
        chain = chains[route_index]
        trip_id = f"T{t + 1}"
        service = fx.services[t % len(fx.services)]
        fx.trips.append(
            GtfsTripEntity(
                trip_id=trip_id,
                route_ref=fx.routes[route_index].route_id,
                service_ref=service.service_id,
                headsign=f"to {chain[-1].name}",
            )
        )
        clock = 7 * 3600 + (t // len(fx.routes)) * 1200 + route_index * 300
        stops_entry = []
        for seq, stop in enumerate(chain):
            arrival = clock
            # 30 s dwell between arrival and departure, except at the terminus
            departure = arrival + (30 if seq < len(chain) - 1 else 0)
            fx.stop_times.append(
                GtfsStopTimeEntity(trip_id, stop.stop_id, seq, arrival, departure)
            )
            stops_entry.append({
                "stopId": stop.stop_id,
                "stopSequence": seq,
                "arrival": format_gtfs_time(arrival),
                "arrivalSeconds": arrival,
                "departure": format_gtfs_time(departure),
                "departureSeconds": departure,
            })
            clock = departure + rng.randint(120, 420)
        manifest_trips.append({
            "tripId": trip_id,
            "routeId": fx.routes[route_index].route_id,
            "serviceId": service.service_id,
            "stops": stops_entry,
        })

    fx.manifest = {
        "seed": seed,
        "size": size,
        "entityCounts": {
            "GtfsAgency": len(fx.agencies),
            "GtfsStop": len(fx.stops),
            "GtfsRoute": len(fx.routes),
            "GtfsService": len(fx.services),
            "GtfsTrip": len(fx.trips),
            "GtfsStopTime": len(fx.stop_times),
        },
        "serviceWindow": {"startDate": 20250101, "endDate": 20251231},
        "trips": manifest_trips,
    }
    return fx
