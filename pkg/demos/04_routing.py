"""Earliest-arrival routing, before and after a real-time delay.

Run:  python3 demos/04_routing.py
"""

import calendar
import time

from atomic_transit.fixtures import gen_fixture
from atomic_transit.gtfs import ServiceDate
from atomic_transit.router import apply_realtime, build_graph, earliest_arrival
from atomic_transit.rt.model import (
    RtEntity,
    RtFeedMessage,
    RtStopTimeUpdate,
    RtTripUpdate,
)

MIDNIGHT = calendar.timegm((2025, 6, 2, 0, 0, 0))


def hms(epoch):
    return time.strftime("%H:%M:%S", time.gmtime(epoch))


fixture = gen_fixture(seed=7, size="tiny")
graph = build_graph(fixture.to_feed(), ServiceDate(2025, 6, 2))
print(f"graph: {len(graph.stops)} stops, {len(graph.connections)} connections")

trip = fixture.manifest["trips"][0]
rows = sorted(trip["stops"], key=lambda r: r["stopSequence"])
src, dst = rows[0]["stopId"], rows[-1]["stopId"]

journey = earliest_arrival(graph, src, dst, MIDNIGHT)
print(f"\n{src} -> {dst} departing after {hms(MIDNIGHT)}:")
for leg in journey.legs:
    print(f"  {leg.trip_id}: {leg.board_stop} {hms(leg.board_time)} "
          f"-> {leg.alight_stop} {hms(leg.alight_time)}")
print(f"  arrival {hms(journey.total_arrival)}")

# the first trip runs 300 s late from its first stop onward
rt = RtFeedMessage(timestamp=MIDNIGHT, entities=(RtEntity(
    id=trip["tripId"],
    trip_update=RtTripUpdate(
        trip_id=trip["tripId"],
        stop_time_updates=(RtStopTimeUpdate(
            stop_id=rows[0]["stopId"],
            stop_sequence=rows[0]["stopSequence"],
            arrival_delay_seconds=300),),
    )),))
delayed = apply_realtime(graph, rt)

journey2 = earliest_arrival(delayed, src, dst, MIDNIGHT)
shift = journey2.total_arrival - journey.total_arrival
print(f"\nwith +300 s on {trip['tripId']}: arrival {hms(journey2.total_arrival)} "
      f"({shift:+d} s)")
print("done.")
