"""Earliest-arrival journey planning over timetable connections.

A GTFS feed expands, for one service date, into a flat list of
connections sorted by departure time. Realtime delays shift a trip's
times from the named stop onward, and a single scan over the sorted
connections yields earliest arrivals. Graphs are immutable; applying
delays builds a new graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..geo import GeoPoint
from ..gtfs import FeedNotValidOnDate, GtfsFeed, ServiceDate, feed_valid_on
from ..rt.model import RtFeedMessage
from ..timeutil import epoch_to_iso, yyyymmdd_to_midnight_epoch

TRANSFER_SLACK_S = 120


class UnknownStop(Exception):
    pass


@dataclass(frozen=True)
class Connection:
    dep_stop: str
    arr_stop: str
    dep_time: int
    arr_time: int
    trip_id: str
    dep_seq: int
    arr_seq: int


@dataclass(frozen=True)
class Leg:
    trip_id: str
    board_stop: str
    board_time: int
    alight_stop: str
    alight_time: int


@dataclass(frozen=True)
class Journey:
    legs: tuple[Leg, ...]
    total_arrival: int

    @property
    def transfers(self) -> int:
        return max(len(self.legs) - 1, 0)

    def to_json(self) -> dict:
        return {
            "legs": [
                {
                    "tripId": leg.trip_id,
                    "boardStop": leg.board_stop,
                    "boardTime": epoch_to_iso(leg.board_time),
                    "alightStop": leg.alight_stop,
                    "alightTime": epoch_to_iso(leg.alight_time),
                }
                for leg in self.legs
            ],
            "totalArrival": self.total_arrival,
            "totalArrivalIso": epoch_to_iso(self.total_arrival),
            "transfers": self.transfers,
        }


@dataclass(frozen=True)
class TransitGraph:
    service_date: ServiceDate
    stops: dict[str, GeoPoint]
    connections: tuple[Connection, ...]  # sorted by departure time
    delays: dict[tuple[str, str], int] = field(default_factory=dict)


_CONNECTION_SORT = (lambda c: (c.dep_time, c.arr_time, c.trip_id, c.dep_seq))


def build_graph(feed: GtfsFeed, date: ServiceDate) -> TransitGraph:
    """Expand stop_times into connections for trips running on the date."""
    if not feed_valid_on(feed, date):
        raise FeedNotValidOnDate(f"feed has no service window covering {date}")
    day = date.yyyymmdd()
    active = {
        s.service_id for s in feed.services
        if s.start_date <= day <= s.end_date and s.weekday_flags[date.weekday()]
    }
    running = {t.trip_id for t in feed.trips if t.service_ref in active}
    midnight = yyyymmdd_to_midnight_epoch(day)
    by_trip: dict[str, list] = {}
    for st in feed.stop_times:
        if st.trip_ref in running:
            by_trip.setdefault(st.trip_ref, []).append(st)
    connections = []
    for trip_id, stop_times in by_trip.items():
        stop_times.sort(key=lambda st: st.stop_sequence)
        for prev, nxt in zip(stop_times, stop_times[1:]):
            connections.append(Connection(
                dep_stop=prev.stop_ref,
                arr_stop=nxt.stop_ref,
                dep_time=midnight + prev.departure_time,
                arr_time=midnight + nxt.arrival_time,
                trip_id=trip_id,
                dep_seq=prev.stop_sequence,
                arr_seq=nxt.stop_sequence,
            ))
    connections.sort(key=_CONNECTION_SORT)
    stops = {s.stop_id: s.location for s in feed.stops}
    return TransitGraph(service_date=date, stops=stops, connections=tuple(connections))


def _delay_steps(rt: RtFeedMessage) -> dict[str, list[tuple[int, int]]]:
    """trip id -> [(stop sequence, delay)] sorted, last step at or before a
    sequence wins."""
    steps: dict[str, dict[int, int]] = {}
    for entity in rt.entities:
        tu = entity.trip_update
        if tu is None:
            continue
        for stu in tu.stop_time_updates:
            steps.setdefault(tu.trip_id, {})[stu.stop_sequence] = stu.arrival_delay_seconds
    return {trip: sorted(per_trip.items()) for trip, per_trip in steps.items()}


def _delay_at(steps: list[tuple[int, int]], seq: int) -> int:
    delay = 0
    for stu_seq, stu_delay in steps:
        if stu_seq > seq:
            break
        delay = stu_delay
    return delay


def apply_realtime(graph: TransitGraph, rt: RtFeedMessage) -> TransitGraph:
    """Shift each delayed trip's times from the named stop onward.

    A stop time update moves the arrival at its stop and every later
    departure and arrival of the trip by its delay, until a later update
    supersedes it. Arrivals never land before their (shifted) departure.
    Apply to an undelayed base graph; shifts do not compose.
    """
    known = {c.trip_id for c in graph.connections}
    steps = {trip: s for trip, s in _delay_steps(rt).items() if trip in known}
    if not steps:
        return graph
    shifted = []
    delayed_trips: dict[str, list[Connection]] = {}
    for c in graph.connections:
        if c.trip_id in steps:
            delayed_trips.setdefault(c.trip_id, []).append(c)
        else:
            shifted.append(c)
    for trip_id, conns in delayed_trips.items():
        per_trip = steps[trip_id]
        conns.sort(key=lambda c: c.dep_seq)
        # a recovering delay may not rewind the trip below where it already is
        floor = None
        for c in conns:
            dep_time = c.dep_time + _delay_at(per_trip, c.dep_seq)
            if floor is not None:
                dep_time = max(dep_time, floor)
            arr_time = max(c.arr_time + _delay_at(per_trip, c.arr_seq), dep_time)
            floor = arr_time
            shifted.append(replace(c, dep_time=dep_time, arr_time=arr_time))
    shifted.sort(key=_CONNECTION_SORT)
    delays = dict(graph.delays)
    for entity in rt.entities:
        tu = entity.trip_update
        if tu is None or tu.trip_id not in known:
            continue
        for stu in tu.stop_time_updates:
            delays[(tu.trip_id, stu.stop_id)] = stu.arrival_delay_seconds
    return replace(graph, connections=tuple(shifted), delays=delays)


def merge_graphs(graphs: list[TransitGraph]) -> TransitGraph:
    if not graphs:
        raise ValueError("nothing to merge")
    stops: dict[str, GeoPoint] = {}
    connections: list[Connection] = []
    delays: dict[tuple[str, str], int] = {}
    for g in graphs:
        stops.update(g.stops)
        connections.extend(g.connections)
        delays.update(g.delays)
    connections.sort(key=_CONNECTION_SORT)
    return TransitGraph(service_date=graphs[0].service_date, stops=stops,
                        connections=tuple(connections), delays=delays)


@dataclass(frozen=True)
class _Label:
    """Partial journey quality: arrival first, then leg count, then the
    trip id sequence lexicographically."""

    arrival: int
    nlegs: int
    trips: tuple[str, ...]
    legs: tuple[Leg, ...]

    def key(self):
        return (self.arrival, self.nlegs, self.trips)


@dataclass
class _Boarding:
    nlegs_before: int
    trips_before: tuple[str, ...]
    legs_before: tuple[Leg, ...]
    board_stop: str
    board_time: int
    board_seq: int

    def key(self):
        return (self.nlegs_before, self.trips_before)


def earliest_arrival(graph: TransitGraph, from_stop: str, to_stop: str,
                     depart_after: int) -> Journey | None:
    """Connection scan; returns None when no journey exists.

    Transfers need TRANSFER_SLACK_S seconds at the same stop; boarding
    the first trip at the origin needs none. Ties on arrival prefer
    fewer legs, then the lexicographically smallest trip id sequence.
    """
    if from_stop not in graph.stops:
        raise UnknownStop(from_stop)
    if to_stop not in graph.stops:
        raise UnknownStop(to_stop)
    if from_stop == to_stop:
        return Journey(legs=(), total_arrival=depart_after)

    labels: dict[str, _Label] = {
        from_stop: _Label(arrival=depart_after, nlegs=0, trips=(), legs=())}
    boardings: dict[str, _Boarding] = {}

    for c in graph.connections:
        # can this connection be boarded fresh at its departure stop?
        at_stop = labels.get(c.dep_stop)
        if at_stop is not None:
            slack = 0 if at_stop.nlegs == 0 else TRANSFER_SLACK_S
            if at_stop.arrival + slack <= c.dep_time:
                candidate = _Boarding(
                    nlegs_before=at_stop.nlegs,
                    trips_before=at_stop.trips,
                    legs_before=at_stop.legs,
                    board_stop=c.dep_stop,
                    board_time=c.dep_time,
                    board_seq=c.dep_seq,
                )
                current = boardings.get(c.trip_id)
                if current is None or candidate.key() < current.key():
                    boardings[c.trip_id] = candidate
        # ride it if the trip has been boarded somewhere at or before here
        boarding = boardings.get(c.trip_id)
        if boarding is None or boarding.board_seq > c.dep_seq:
            continue
        leg = Leg(trip_id=c.trip_id, board_stop=boarding.board_stop,
                  board_time=boarding.board_time,
                  alight_stop=c.arr_stop, alight_time=c.arr_time)
        candidate_label = _Label(
            arrival=c.arr_time,
            nlegs=boarding.nlegs_before + 1,
            trips=boarding.trips_before + (c.trip_id,),
            legs=boarding.legs_before + (leg,),
        )
        existing = labels.get(c.arr_stop)
        if existing is None or candidate_label.key() < existing.key():
            labels[c.arr_stop] = candidate_label

    final = labels.get(to_stop)
    if final is None:
        return None
    return Journey(legs=final.legs, total_arrival=final.arrival)
