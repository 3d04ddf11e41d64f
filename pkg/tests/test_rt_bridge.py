"""Bridge behavior: schedule lookups, delay folding, serving.

Delay expectations are recomputed in the tests from the fixture
manifest (arrival seconds anchored at UTC midnight via calendar.timegm)
rather than through ScheduleIndex, and decoded feeds go through the
google.protobuf oracle, so the bridge is checked end to end by
independent arithmetic.
"""

import calendar
import random
import threading

import pytest
import requests

from conftest import FakeClock
from rt_oracle import oracle_parse, oracle_trip_delays
from atomic_transit.broker import BrokerUnavailable, ContextBroker
from atomic_transit.fixtures import gen_fixture
from atomic_transit.geo import GeoPoint
from atomic_transit.gtfs import FeedNotValidOnDate, ServiceDate
from atomic_transit.models import ArrivalEstimationEntity, VehiclePositionEntity
from atomic_transit.rt import BridgeService, GtfsRtBridge, ScheduleIndex, decode_feed_message
from atomic_transit.rt.bridge import TRIP_UPDATES_PATH, VEHICLE_POSITIONS_PATH

SERVICE_DAY = ServiceDate(2025, 6, 2)  # a Monday inside the fixture window
MIDNIGHT = calendar.timegm((2025, 6, 2, 0, 0, 0))


@pytest.fixture
def fixture_city():
    return gen_fixture(7, "tiny")


@pytest.fixture
def schedule(fixture_city):
    return ScheduleIndex.from_feed(fixture_city.to_feed(), SERVICE_DAY)


@pytest.fixture
def bridge(broker, schedule, clock):
    b = GtfsRtBridge(broker, schedule, now_fn=clock)
    b.start()
    yield b
    b.stop()


def _manifest_arrivals(fixture) -> dict:
    """Independent (trip, stop) -> (sequence, scheduled epoch) oracle."""
    out = {}
    for trip in fixture.manifest["trips"]:
        for stop in trip["stops"]:
            key = (trip["tripId"], stop["stopId"])
            out[key] = (stop["stopSequence"], MIDNIGHT + stop["arrivalSeconds"])
    return out


def _estimate(trip_id, stop_id, est_epoch, observed_at):
    return ArrivalEstimationEntity(
        trip_ref=trip_id, stop_ref=stop_id,
        estimated_arrival_time=est_epoch, observed_at=observed_at,
    ).to_context()


# ------------------------------------------------------------ ScheduleIndex


def test_schedule_index_matches_manifest_arithmetic(fixture_city, schedule):
    expected = _manifest_arrivals(fixture_city)
    assert len(schedule) == len(expected) == 8
    for (trip_id, stop_id), (seq, epoch) in expected.items():
        entry = schedule.lookup(trip_id, stop_id)
        assert entry.stop_sequence == seq
        assert entry.arrival_epoch == epoch


def test_schedule_index_rejects_uncovered_date(fixture_city):
    with pytest.raises(FeedNotValidOnDate):
        ScheduleIndex.from_feed(fixture_city.to_feed(), ServiceDate(2024, 1, 1))


def test_schedule_index_gates_on_weekday():
    fixture = gen_fixture(3, "small")
    feed = fixture.to_feed()
    sunday = ScheduleIndex.from_feed(feed, ServiceDate(2025, 6, 1))
    monday = ScheduleIndex.from_feed(feed, ServiceDate(2025, 6, 2))
    weekday_only = {t["tripId"] for t in fixture.manifest["trips"]
                    if t["serviceId"] == "C2"}
    assert weekday_only
    for trip in fixture.manifest["trips"]:
        stop_id = trip["stops"][0]["stopId"]
        if trip["tripId"] in weekday_only:
            assert sunday.lookup(trip["tripId"], stop_id) is None
        else:
            assert sunday.lookup(trip["tripId"], stop_id) is not None
        assert monday.lookup(trip["tripId"], stop_id) is not None


def test_unknown_lookup_returns_none(schedule):
    assert schedule.lookup("T99", "S1") is None


# ------------------------------------------------------------ bridge startup


def test_start_creates_two_subscriptions(broker, bridge):
    subs = broker.list_subscriptions()
    assert {s.entity_type for s in subs} == {"ArrivalEstimation", "VehiclePosition"}
    assert len(subs) == 2
    bridge.stop()
    assert broker.list_subscriptions() == []


def test_feed_is_header_only_before_any_notification(bridge, clock):
    for data in (bridge.trip_updates(), bridge.vehicle_positions()):
        parsed = oracle_parse(data)
        assert parsed.header.gtfs_realtime_version == "2.0"
        assert parsed.header.incrementality == 0
        assert parsed.header.timestamp == int(clock())
        assert len(parsed.entity) == 0


def test_empty_schedule_rejected(broker, clock):
    with pytest.raises(ValueError, match="empty"):
        GtfsRtBridge(broker, ScheduleIndex(service_date=SERVICE_DAY), now_fn=clock)


class _FailingBroker:
    """Subscribe fails after a configurable number of successes."""

    def __init__(self, succeed_first: int):
        self.succeed_first = succeed_first
        self.unsubscribed = []
        self._count = 0

    def subscribe(self, sub):
        self._count += 1
        if self._count > self.succeed_first:
            raise BrokerUnavailable("broker down")
        return f"sub-{self._count}"

    def unsubscribe(self, sub_id):
        self.unsubscribed.append(sub_id)
        return True


def test_broker_down_at_start_leaves_no_state(schedule, clock):
    stub = _FailingBroker(succeed_first=0)
    bridge = GtfsRtBridge(stub, schedule, now_fn=clock)
    with pytest.raises(BrokerUnavailable):
        bridge.start()
    assert bridge.subscription_ids == []
    assert stub.unsubscribed == []


def test_partial_subscribe_rolls_back(schedule, clock):
    stub = _FailingBroker(succeed_first=1)
    bridge = GtfsRtBridge(stub, schedule, now_fn=clock)
    with pytest.raises(BrokerUnavailable):
        bridge.start()
    assert stub.unsubscribed == ["sub-1"]
    assert bridge.subscription_ids == []


# -------------------------------------------------------------- translation


def test_delay_equals_estimate_minus_schedule(broker, bridge, fixture_city, clock):
    trip = fixture_city.manifest["trips"][0]
    stop = trip["stops"][1]
    scheduled = MIDNIGHT + stop["arrivalSeconds"]  # recomputed, not via the index
    broker.upsert_entity(_estimate(trip["tripId"], stop["stopId"], scheduled + 300, clock()))
    broker.flush_notifications()
    delays = oracle_trip_delays(bridge.trip_updates())
    assert delays == {(trip["tripId"], stop["stopId"]): (stop["stopSequence"], 300)}
    assert bridge.metrics()["notificationsApplied"] == 1
    assert bridge.metrics()["skipped"] == 0


def test_second_estimate_overwrites_not_appends(broker, bridge, fixture_city, clock):
    trip = fixture_city.manifest["trips"][0]
    stop = trip["stops"][1]
    scheduled = MIDNIGHT + stop["arrivalSeconds"]
    broker.upsert_entity(_estimate(trip["tripId"], stop["stopId"], scheduled + 300, clock()))
    clock.advance(30)
    broker.upsert_entity(_estimate(trip["tripId"], stop["stopId"], scheduled + 120, clock()))
    broker.flush_notifications()
    parsed = oracle_parse(bridge.trip_updates())
    assert len(parsed.entity) == 1
    stus = parsed.entity[0].trip_update.stop_time_update
    assert len(stus) == 1
    assert stus[0].arrival.delay == 120


def test_updates_sorted_by_stop_sequence(broker, bridge, fixture_city, clock):
    trip = fixture_city.manifest["trips"][0]
    for stop in reversed(trip["stops"]):
        scheduled = MIDNIGHT + stop["arrivalSeconds"]
        broker.upsert_entity(_estimate(trip["tripId"], stop["stopId"],
                                scheduled + 60 * (stop["stopSequence"] + 1), clock()))
    broker.flush_notifications()
    parsed = oracle_parse(bridge.trip_updates())
    stus = parsed.entity[0].trip_update.stop_time_update
    assert [s.stop_sequence for s in stus] == sorted(s.stop_sequence for s in stus)
    assert [s.arrival.delay for s in stus] == [60 * (s.stop_sequence + 1) for s in stus]
    # trip update timestamp is the newest observation
    assert parsed.entity[0].trip_update.timestamp == int(clock())


def test_unknown_trip_or_stop_is_counted_and_skipped(broker, bridge, fixture_city, clock):
    trip = fixture_city.manifest["trips"][0]
    before = bridge.trip_updates()
    broker.upsert_entity(_estimate("T99", trip["stops"][0]["stopId"], MIDNIGHT + 1000, clock()))
    broker.upsert_entity(_estimate(trip["tripId"], "S99", MIDNIGHT + 1000, clock()))
    broker.flush_notifications()
    metrics = bridge.metrics()
    assert metrics["skipped"] == 2
    assert metrics["notificationsApplied"] == 0
    assert len(oracle_parse(bridge.trip_updates()).entity) == 0
    assert oracle_trip_delays(before) == oracle_trip_delays(bridge.trip_updates())


def test_malformed_notifications_never_raise(bridge):
    bridge.on_notification("not even a dict")
    bridge.on_notification({"data": [{"id": "urn:x", "type": "ArrivalEstimation"}]})
    bridge.on_notification({"data": [{"no": "id"}]})
    metrics = bridge.metrics()
    assert metrics["notificationsApplied"] == 0
    assert metrics["skipped"] == 0


def test_vehicle_position_upsert(broker, bridge, clock):
    first = VehiclePositionEntity(
        vehicle_id="bus-1", location=GeoPoint(41.50, 2.25),
        observed_at=clock(), trip_ref="T1", bearing=45.0)
    broker.upsert_entity(first.to_context())
    broker.flush_notifications()
    parsed = oracle_parse(bridge.vehicle_positions())
    assert [e.id for e in parsed.entity] == ["bus-1"]
    vehicle = parsed.entity[0].vehicle
    assert vehicle.position.latitude == pytest.approx(41.50, abs=1e-5)
    assert vehicle.position.bearing == pytest.approx(45.0)
    assert vehicle.trip.trip_id == "T1"
    assert vehicle.timestamp == int(clock())

    clock.advance(15)
    moved = VehiclePositionEntity(
        vehicle_id="bus-1", location=GeoPoint(41.51, 2.26),
        observed_at=clock(), trip_ref="T1", bearing=50.0)
    broker.upsert_entity(moved.to_context())
    broker.flush_notifications()
    parsed = oracle_parse(bridge.vehicle_positions())
    assert len(parsed.entity) == 1
    assert parsed.entity[0].vehicle.position.latitude == pytest.approx(41.51, abs=1e-5)
    # trip updates feed stays empty; the kinds do not leak into each other
    assert len(oracle_parse(bridge.trip_updates()).entity) == 0


def test_replay_fold_matches_reference(broker, schedule, fixture_city, clock):
    """200 random notifications equal a brute-force fold of the same log."""
    bridge = GtfsRtBridge(broker, schedule, now_fn=clock)
    arrivals = _manifest_arrivals(fixture_city)
    known = sorted(arrivals)
    rng = random.Random(42)
    ref_estimates: dict = {}
    ref_vehicles: dict = {}
    expected_skips = 0
    for i in range(200):
        clock.advance(5)
        kind = rng.random()
        if kind < 0.60:
            trip_id, stop_id = rng.choice(known)
            est = arrivals[(trip_id, stop_id)][1] + rng.randint(-600, 600)
            entity = _estimate(trip_id, stop_id, est, clock())
            ref_estimates[(trip_id, stop_id)] = est
        elif kind < 0.75:
            entity = _estimate(f"ghost-{i}", "S1", MIDNIGHT + i, clock())
            expected_skips += 1
        else:
            vehicle_id = f"bus-{rng.randint(1, 5)}"
            point = GeoPoint(41.0 + i * 1e-4, 2.0 + i * 1e-4)
            entity = VehiclePositionEntity(
                vehicle_id=vehicle_id, location=point, observed_at=clock()).to_context()
            ref_vehicles[vehicle_id] = point
        bridge.on_notification({"subscriptionId": "sub-1", "emittedAt": "2025-06-02T08:00:00Z",
                                "data": [entity.to_json()]})

    decoded = oracle_trip_delays(bridge.trip_updates())
    expected = {
        key: (arrivals[key][0], est - arrivals[key][1])
        for key, est in ref_estimates.items()
    }
    assert decoded == expected
    # delay identity: schedule plus delay reproduces the estimate exactly
    for key, (_, delay) in decoded.items():
        assert arrivals[key][1] + delay == ref_estimates[key]

    parsed = oracle_parse(bridge.vehicle_positions())
    assert {e.id for e in parsed.entity} == set(ref_vehicles)
    for ent in parsed.entity:
        want = ref_vehicles[ent.id]
        assert ent.vehicle.position.latitude == pytest.approx(want.latitude, abs=1e-4)
    assert bridge.metrics()["skipped"] == expected_skips


def test_stale_entries_evicted_after_twice_horizon(broker, schedule, fixture_city, clock):
    bridge = GtfsRtBridge(broker, schedule, now_fn=clock, horizon_seconds=600)
    trips = fixture_city.manifest["trips"]
    old_stop = trips[0]["stops"][0]
    bridge.on_notification({"data": [_estimate(
        trips[0]["tripId"], old_stop["stopId"],
        MIDNIGHT + old_stop["arrivalSeconds"] + 60, clock()).to_json()]})
    bridge.on_notification({"data": [VehiclePositionEntity(
        vehicle_id="bus-old", location=GeoPoint(41.4, 2.2),
        observed_at=clock()).to_context().to_json()]})
    assert len(oracle_parse(bridge.trip_updates()).entity) == 1

    clock.advance(1201)  # beyond 2 * 600
    fresh_stop = trips[1]["stops"][0]
    bridge.on_notification({"data": [_estimate(
        trips[1]["tripId"], fresh_stop["stopId"],
        MIDNIGHT + fresh_stop["arrivalSeconds"] + 30, clock()).to_json()]})
    delays = oracle_trip_delays(bridge.trip_updates())
    assert set(delays) == {(trips[1]["tripId"], fresh_stop["stopId"])}
    assert len(oracle_parse(bridge.vehicle_positions()).entity) == 0


def test_snapshot_reads_are_prefix_consistent(broker, schedule, fixture_city, clock):
    """A concurrent reader only ever sees whole applied prefixes."""
    bridge = GtfsRtBridge(broker, schedule, now_fn=clock)
    arrivals = _manifest_arrivals(fixture_city)
    applied = list(sorted(arrivals))
    seen = []
    failures = []
    stop_flag = threading.Event()

    def reader():
        while not stop_flag.is_set():
            try:
                msg = decode_feed_message(bridge.trip_updates())
            except Exception as exc:  # decoding a torn snapshot would land here
                failures.append(exc)
                return
            pairs = frozenset(
                (e.trip_update.trip_id, stu.stop_id)
                for e in msg.entities for stu in e.trip_update.stop_time_updates)
            seen.append(pairs)

    thread = threading.Thread(target=reader)
    thread.start()
    for trip_id, stop_id in applied:
        clock.advance(1)
        bridge.on_notification({"data": [_estimate(
            trip_id, stop_id, arrivals[(trip_id, stop_id)][1] + 5, clock()).to_json()]})
    stop_flag.set()
    thread.join(timeout=5)
    assert not failures
    prefixes = {frozenset(applied[:k]) for k in range(len(applied) + 1)}
    assert seen and all(snapshot in prefixes for snapshot in seen)


def test_spool_dir_mirrors_snapshots(broker, schedule, fixture_city, clock, tmp_path):
    bridge = GtfsRtBridge(broker, schedule, now_fn=clock, spool_dir=str(tmp_path))
    trip = fixture_city.manifest["trips"][0]
    stop = trip["stops"][0]
    bridge.on_notification({"data": [_estimate(
        trip["tripId"], stop["stopId"],
        MIDNIGHT + stop["arrivalSeconds"] + 90, clock()).to_json()]})
    assert (tmp_path / "trip-updates.pb").read_bytes() == bridge.trip_updates()
    assert (tmp_path / "vehicle-positions.pb").read_bytes() == bridge.vehicle_positions()


# ------------------------------------------------------------- HTTP service


def test_bridge_service_over_http(broker_over_http, fixture_city, clock):
    broker, _, client = broker_over_http
    schedule = ScheduleIndex.from_feed(fixture_city.to_feed(), SERVICE_DAY)
    service = BridgeService(client, schedule, now_fn=clock)
    service.start()
    try:
        assert len(client.list_subscriptions()) == 2

        trip = fixture_city.manifest["trips"][0]
        stop = trip["stops"][1]
        scheduled = MIDNIGHT + stop["arrivalSeconds"]
        client.upsert_entity(_estimate(trip["tripId"], stop["stopId"], scheduled + 180, clock()))
        client.flush_notifications()

        resp = requests.get(service.url + TRIP_UPDATES_PATH, timeout=5)
        assert resp.status_code == 200
        assert resp.headers["Content-Type"] == "application/x-protobuf"
        assert oracle_trip_delays(resp.content) == {
            (trip["tripId"], stop["stopId"]): (stop["stopSequence"], 180)}

        resp = requests.get(service.url + VEHICLE_POSITIONS_PATH, timeout=5)
        assert len(oracle_parse(resp.content).entity) == 0

        metrics = requests.get(service.url + "/metrics", timeout=5).json()
        assert metrics["notificationsApplied"] == 1
        assert metrics["skipped"] == 0
        assert metrics["lastRebuildEpoch"] == int(clock())

        debug = requests.get(service.url + "/gtfs-rt/debug", timeout=5).json()
        assert debug["tripUpdates"][0]["tripId"] == trip["tripId"]
        stu = debug["tripUpdates"][0]["stopTimeUpdates"][0]
        assert stu["arrivalDelaySeconds"] == 180
        assert stu["estimatedArrivalEpoch"] == scheduled + 180
    finally:
        service.stop()
    assert client.list_subscriptions() == []


def test_bridge_service_start_fails_when_broker_down(fixture_city, clock):
    from atomic_transit.broker import BrokerClient

    schedule = ScheduleIndex.from_feed(fixture_city.to_feed(), SERVICE_DAY)
    dead = BrokerClient("http://127.0.0.1:9", timeout=0.3)
    service = BridgeService(dead, schedule, now_fn=clock)
    with pytest.raises(BrokerUnavailable):
        service.start()
