"""Parking availability prediction from broker history.

Three days of hourly observations go in; a one-hour-ahead probability
comes out, is persisted as a Prediction entity, and is served over REST
from the cache.

Run:  python3 demos/05_estimator.py
"""

import math
import time

import requests

from atomic_transit.broker import ContextBroker
from atomic_transit.estimator import EstimatorService, EstimatorTarget, EventLog
from atomic_transit.geo import GeoPoint
from atomic_transit.models import ParkingSpotGroupEntity

GROUP = "urn:ngsi:ParkingSpotGroup:PG1"

broker = ContextBroker()
now = time.time()
for hour in range(72, 0, -1):
    epoch = now - hour * 3600
    free = int(100 * (0.5 + 0.4 * math.sin(2 * math.pi * epoch / 86400.0)))
    broker.upsert_entity(ParkingSpotGroupEntity(
        group_id="PG1", location=GeoPoint(41.4, 2.2),
        total_spots=100, available_spots=free,
        observed_at=int(epoch)).to_context())
print("seeded 72 hourly ParkingSpotGroup observations")

target = EstimatorTarget(entity_id=GROUP, attr="availableSpots", kind="parking")
service = EstimatorService(broker, [target], step_seconds=3600,
                           horizon_seconds=3600, event_log=EventLog())
service.start()

prediction = service.estimate_once(target)
print(f"one hour ahead: p(free spot) = {prediction.predicted_value:.3f} "
      f"(model {prediction.model_id})")

resp = requests.get(service.url + "/predictions",
                    params={"entityId": GROUP, "attr": "availableSpots"})
body = resp.json()
print(f"REST serve: value={body['predictedValue']:.3f} source={body['source']}")

cache = broker.get_entity(f"urn:ngsi:Prediction:{GROUP}:availableSpots")
print(f"persisted cache entity holds {sorted(cache.attributes)}")

print("\nevent log tail:")
for event in service.events.records()[-4:]:
    print(f"  {event.component:9s} {event.kind:8s} {event.detail}")

service.stop()
broker.close()
print("done.")
