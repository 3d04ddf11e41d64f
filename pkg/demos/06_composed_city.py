"""The whole city in one process: broker, fixture, export, router,
fetcher, bridge, and estimator composed into a working pipeline.

Run:  python3 demos/06_composed_city.py
"""

import calendar
import time

from atomic_transit.compose import ComposeConfig, compose_city_service
from atomic_transit.models import ArrivalEstimationEntity

MIDNIGHT = calendar.timegm((2025, 6, 2, 0, 0, 0))

handle = compose_city_service(ComposeConfig(mode="inproc"))
print("pipeline up; stage states:")
for stage, info in handle.status().items():
    print(f"  {stage:9s} {info['state']}")

manifest = handle.fixture.manifest
trip = manifest["trips"][0]
rows = sorted(trip["stops"], key=lambda r: r["stopSequence"])
src, dst = rows[0]["stopId"], rows[-1]["stopId"]

base = handle.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
print(f"\nscheduled arrival {src} -> {dst}: "
      f"{time.strftime('%H:%M:%S', time.gmtime(base))}")

# a +300 s arrival estimation flows broker -> bridge -> router
for row in rows:
    handle.broker.upsert_entity(ArrivalEstimationEntity(
        trip_ref=trip["tripId"], stop_ref=row["stopId"],
        estimated_arrival_time=MIDNIGHT + row["arrivalSeconds"] + 300,
        observed_at=int(time.time())).to_context())
handle.sync_realtime()

shifted = handle.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
print(f"after a +300 s estimation:  "
      f"{time.strftime('%H:%M:%S', time.gmtime(shifted))} "
      f"({shifted - base:+d} s)")

print(f"\nbridge metrics: {handle.status()['bridge']}")
print(f"estimator:      {handle.status().get('estimator')}")

handle.stop()
print("done.")
