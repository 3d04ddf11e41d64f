"""Pipeline composition: startup order, end-to-end flow, fault isolation.

Routed arrivals are checked against the manifest-level journey oracle in
compose_oracle, which never touches the feed or graph code.
"""

import calendar
import time

import pytest

from compose_oracle import apply_row_delays, best_arrival, manifest_rows
from atomic_transit.compose import (
    BadConfig,
    CityPipeline,
    ComposeConfig,
    StageFailure,
    compose_city_service,
)
from atomic_transit.models import ArrivalEstimationEntity
from atomic_transit.rt.wire import decode_feed_dict

MIDNIGHT = calendar.timegm((2025, 6, 2, 0, 0, 0))  # config default service date


@pytest.fixture
def pipeline():
    handle = compose_city_service(ComposeConfig(mode="inproc"))
    yield handle
    handle.stop()


def endpoints_of(manifest):
    """(src, dst) by the first manifest trip's first and last stops."""
    rows = sorted(manifest["trips"][0]["stops"], key=lambda r: r["stopSequence"])
    return rows[0]["stopId"], rows[-1]["stopId"]


def inject_uniform_delay(handle, seconds):
    """ArrivalEstimation (+seconds) for every scheduled (trip, stop) pair."""
    count = 0
    for trip in handle.fixture.manifest["trips"]:
        for row in trip["stops"]:
            handle.broker.upsert_entity(ArrivalEstimationEntity(
                trip_ref=trip["tripId"],
                stop_ref=row["stopId"],
                estimated_arrival_time=MIDNIGHT + row["arrivalSeconds"] + seconds,
                observed_at=int(time.time()),
            ).to_context())
            count += 1
    return count


def test_pipeline_routes_scheduled_journey(pipeline):
    manifest = pipeline.fixture.manifest
    src, dst = endpoints_of(manifest)
    body = pipeline.route(src, dst, MIDNIGHT)
    journey = body["journey"]
    assert journey is not None
    rows = manifest_rows(manifest, MIDNIGHT)
    assert journey["totalArrival"] == best_arrival(rows, src, dst, MIDNIGHT)


def test_uniform_delay_shifts_arrival_exactly(pipeline):
    manifest = pipeline.fixture.manifest
    src, dst = endpoints_of(manifest)
    base = pipeline.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
    inject_uniform_delay(pipeline, 300)
    assert pipeline.sync_realtime()
    shifted = pipeline.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
    assert shifted == base + 300


def test_single_trip_delay_matches_manifest_oracle(pipeline):
    manifest = pipeline.fixture.manifest
    src, dst = endpoints_of(manifest)
    trip = manifest["trips"][0]
    first_row = sorted(trip["stops"], key=lambda r: r["stopSequence"])[0]
    pipeline.broker.upsert_entity(ArrivalEstimationEntity(
        trip_ref=trip["tripId"],
        stop_ref=first_row["stopId"],
        estimated_arrival_time=MIDNIGHT + first_row["arrivalSeconds"] + 420,
        observed_at=int(time.time()),
    ).to_context())
    pipeline.sync_realtime()
    routed = pipeline.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
    rows = apply_row_delays(
        manifest_rows(manifest, MIDNIGHT),
        {(trip["tripId"], first_row["stopId"]): 420})
    assert routed == best_arrival(rows, src, dst, MIDNIGHT)


def test_status_reports_all_stages_up(pipeline):
    report = pipeline.status()
    for stage in ("broker", "fixture", "export", "router", "fetcher",
                  "bridge", "estimator"):
        assert report[stage]["state"] == "up", (stage, report[stage])
    assert report["fetcher"]["feedsLoaded"] == 1
    assert report["bridge"]["notificationsApplied"] == 0
    assert report["estimator"]["predictionsPersisted"] == 1
    assert report["export"]["skips"] >= 0


def test_bridge_counter_tracks_notifications(pipeline):
    n = inject_uniform_delay(pipeline, 60)
    pipeline.sync_realtime()
    assert pipeline.status()["bridge"]["notificationsApplied"] == n


def test_bridge_feed_decodable_and_fresh(pipeline):
    inject_uniform_delay(pipeline, 120)
    pipeline.sync_realtime()
    decoded = decode_feed_dict(pipeline._bridge_feed_bytes())
    trips_in_feed = {e["trip_update"]["trip"]["trip_id"]
                     for e in decoded["entity"]}
    manifest_trips = {t["tripId"] for t in pipeline.fixture.manifest["trips"]}
    assert trips_in_feed == manifest_trips


def test_kill_bridge_leaves_router_degraded_but_answering(pipeline):
    manifest = pipeline.fixture.manifest
    src, dst = endpoints_of(manifest)
    base = pipeline.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
    pipeline.kill("bridge")
    report = pipeline.status()
    assert report["bridge"]["state"] == "down"
    assert report["router"]["state"] == "degraded"
    # still answers, on the static schedule
    assert pipeline.route(src, dst, MIDNIGHT)["journey"]["totalArrival"] == base
    assert pipeline.sync_realtime() is False


def test_compose_determinism():
    config = ComposeConfig(mode="inproc", fixture_seed=21)
    answers = []
    exports = []
    for _ in range(2):
        handle = compose_city_service(config)
        try:
            src, dst = endpoints_of(handle.fixture.manifest)
            answers.append(handle.route(src, dst, MIDNIGHT))
            exports.append(handle.feed_path.read_bytes())
        finally:
            handle.stop()
    assert answers[0] == answers[1]
    assert exports[0] == exports[1]


def test_multiproc_matches_inproc():
    inproc = compose_city_service(ComposeConfig(mode="inproc"))
    try:
        src, dst = endpoints_of(inproc.fixture.manifest)
        base_inproc = inproc.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
    finally:
        inproc.stop()

    multi = compose_city_service(ComposeConfig(mode="multiproc"))
    try:
        report = multi.status()
        for stage in ("broker", "router", "fetcher", "bridge", "estimator"):
            assert report[stage]["state"] == "up", (stage, report[stage])
        base_multi = multi.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
        assert base_multi == base_inproc
        inject_uniform_delay(multi, 300)
        assert multi.sync_realtime()
        shifted = multi.route(src, dst, MIDNIGHT)["journey"]["totalArrival"]
        assert shifted == base_multi + 300
    finally:
        multi.stop()


def test_multiproc_broker_kill_degrades_dependents():
    handle = compose_city_service(ComposeConfig(mode="multiproc",
                                                estimator_enabled=False))
    try:
        handle.kill("broker")
        report = handle.status()
        assert report["broker"]["state"] == "down"
        assert report["fetcher"]["state"] == "degraded"
        assert report["bridge"]["state"] == "degraded"
        assert report["router"]["state"] == "degraded"
    finally:
        handle.stop()


def test_stage_failure_names_the_stage(tmp_path):
    blocker = tmp_path / "not-a-dir"
    blocker.write_text("file, not directory")
    config = ComposeConfig(mode="inproc", work_dir=str(blocker),
                           estimator_enabled=False)
    with pytest.raises(StageFailure) as excinfo:
        compose_city_service(config)
    assert excinfo.value.stage == "export"


def test_bad_configs_rejected(tmp_path):
    with pytest.raises(BadConfig):
        ComposeConfig(mode="serverless")
    with pytest.raises(BadConfig):
        ComposeConfig(fixture_size="metropolis")
    with pytest.raises(BadConfig):
        ComposeConfig(poll_seconds=0.2)
    with pytest.raises(BadConfig):
        ComposeConfig.from_json({"fixtureSeed": 7, "surprise": True})
    bad = tmp_path / "pipeline.json"
    bad.write_text("{not json")
    with pytest.raises(BadConfig):
        ComposeConfig.from_file(str(bad))
    missing = tmp_path / "absent.json"
    with pytest.raises(BadConfig):
        ComposeConfig.from_file(str(missing))


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "pipeline.json"
    path.write_text('{"mode": "inproc", "fixtureSeed": 3, "estimator": false}')
    config = ComposeConfig.from_file(str(path))
    assert config.fixture_seed == 3
    assert config.estimator_enabled is False
    override = ComposeConfig.from_file(str(path), mode_override="multiproc")
    assert override.mode == "multiproc"


def test_estimator_stage_optional():
    handle = compose_city_service(ComposeConfig(mode="inproc",
                                                estimator_enabled=False))
    try:
        assert "estimator" not in handle.status()
    finally:
        handle.stop()
