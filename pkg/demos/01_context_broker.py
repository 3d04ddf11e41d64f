"""A tour of the context broker: upserts, filtered queries, geo queries,
subscriptions, and per-attribute history.

Run:  python3 demos/01_context_broker.py
"""

from atomic_transit.broker import ContextBroker, GeoFilter, Subscription
from atomic_transit.broker.types import Attribute, ContextEntity
from atomic_transit.geo import GeoPoint
from atomic_transit.models import ParkingSpotGroupEntity

broker = ContextBroker()

print("== upserts ==")
for i, free in enumerate((40, 35, 28), start=1):
    group = ParkingSpotGroupEntity(
        group_id=f"PG{i}",
        location=GeoPoint(41.38 + i * 0.01, 2.17),
        total_spots=100,
        available_spots=free,
        observed_at=1_700_000_000 + i,
    )
    result = broker.upsert_entity(group.to_context())
    print(f"  {group.context_id}: {result}")

# a second observation for PG1; only the changed attribute gains history
broker.upsert_entity(ParkingSpotGroupEntity(
    group_id="PG1", location=GeoPoint(41.39, 2.17), total_spots=100,
    available_spots=37, observed_at=1_700_000_100).to_context())

print("\n== filtered query: ParkingSpotGroup with availableSpots < 38 ==")
rows = broker.query_entities(
    type_filter="ParkingSpotGroup",
    attr_predicates=[("availableSpots", "<", 38)])
for entity in rows:
    print(f"  {entity.id}: {entity.attributes['availableSpots'].value} free")

print("\n== geo query: within 1.5 km of Placa de Catalunya ==")
near = broker.query_entities(
    type_filter="ParkingSpotGroup",
    geo_filter=GeoFilter(center=GeoPoint(41.387, 2.17), max_distance_m=1500))
print(f"  {len(near)} group(s): {[e.id for e in near]}")

print("\n== subscription: every TrafficFlowObserved upsert ==")
received = []
broker.subscribe(Subscription(entity_type="TrafficFlowObserved",
                              notify_target=received.append))
broker.upsert_entity(ContextEntity(
    id="urn:ngsi:TrafficFlowObserved:diagonal",
    type="TrafficFlowObserved",
    attributes={"intensity": Attribute(420, observed_at=1_700_000_200)}))
broker.flush_notifications()
print(f"  delivered {len(received)} notification(s); "
      f"first carries {received[0].data[0].id}")

print("\n== history of PG1.availableSpots ==")
for record in broker.query_history("urn:ngsi:ParkingSpotGroup:PG1",
                                   "availableSpots"):
    print(f"  t={record.observed_at}  value={record.value}")

broker.close()
print("\ndone.")
