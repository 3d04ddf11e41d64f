"""Feed pointer resolution, validity gating, and the polling orchestrator."""

import time

import pytest
import requests

from atomic_transit.broker.core import ContextBroker
from atomic_transit.broker.types import Attribute, BrokerUnavailable, ContextEntity
from atomic_transit.fetcher import (
    STATUS_EXPIRED,
    STATUS_FETCH_FAILED,
    STATUS_FRESH,
    FetcherConfig,
    FetcherOrchestrator,
    FetchFailure,
    RemoteRoutingPlugin,
    fetch_and_load,
    fetch_source,
    resolve_pointers,
    run_orchestrator,
)
from atomic_transit.fixtures import gen_fixture
from atomic_transit.gtfs import ServiceDate, feed_version_of, read_feed, write_feed
from atomic_transit.models import GtfsFeedPointerEntity
from atomic_transit.router import RouterService

TODAY = ServiceDate(2025, 6, 2)


class RecordingPlugin:
    def __init__(self, fail=False):
        self.calls = []
        self.fail = fail

    def load_feed(self, feed_id, zip_bytes, version):
        if self.fail:
            raise RuntimeError("plugin offline")
        self.calls.append((feed_id, version, zip_bytes))


class FlakyBroker:
    """Delegates to a real broker until switched off."""

    def __init__(self, broker):
        self.broker = broker
        self.down = False

    def query_entities(self, **kwargs):
        if self.down:
            raise BrokerUnavailable("connection refused")
        return self.broker.query_entities(**kwargs)


def make_pointer(feed_id="f1", url="file:///tmp/none.zip",
                 valid_from=20250101, valid_until=20251231, version="v1"):
    return GtfsFeedPointerEntity(feed_id=feed_id, source_url=url,
                                 version=version, valid_from=valid_from,
                                 valid_until=valid_until)


def write_fixture_zip(tmp_path, seed=7, name="feed.zip"):
    data = write_feed(gen_fixture(seed, "tiny").to_feed())
    path = tmp_path / name
    path.write_bytes(data)
    return path, data


@pytest.fixture
def broker():
    b = ContextBroker()
    yield b
    b.close()


# ------------------------------------------------------------- fetch_source


def test_fetch_source_file_scheme(tmp_path):
    path = tmp_path / "data.bin"
    path.write_bytes(b"payload")
    assert fetch_source(path.as_uri()) == b"payload"


def test_fetch_source_missing_file(tmp_path):
    with pytest.raises(FetchFailure):
        fetch_source((tmp_path / "absent.zip").as_uri())


def test_fetch_source_rejects_other_schemes():
    with pytest.raises(FetchFailure):
        fetch_source("ftp://example.org/feed.zip")


# --------------------------------------------------------- resolve_pointers


def test_resolve_returns_all_pointers(broker):
    broker.upsert_entity(make_pointer("f1").to_context())
    broker.upsert_entity(make_pointer("f2").to_context())
    pointers, skipped = resolve_pointers(broker)
    assert sorted(p.feed_id for p in pointers) == ["f1", "f2"]
    assert skipped == []


def test_resolve_skips_inverted_window(broker):
    broker.upsert_entity(make_pointer("f1").to_context())
    broker.upsert_entity(
        make_pointer("f2", valid_from=20251231, valid_until=20250101).to_context())
    pointers, skipped = resolve_pointers(broker)
    assert [p.feed_id for p in pointers] == ["f1"]
    assert len(skipped) == 1 and "f2" in skipped[0]


def test_resolve_skips_malformed_entity(broker):
    broker.upsert_entity(ContextEntity(
        id="urn:ngsi:GtfsFeedPointer:bad", type="GtfsFeedPointer",
        attributes={"feedId": Attribute("bad")}))
    pointers, skipped = resolve_pointers(broker)
    assert pointers == []
    assert len(skipped) == 1


def test_resolve_empty_broker(broker):
    assert resolve_pointers(broker) == ([], [])


# ----------------------------------------------------------- fetch_and_load


def test_fresh_feed_reaches_plugin_once(tmp_path):
    path, data = write_fixture_zip(tmp_path)
    plugin = RecordingPlugin()
    state = fetch_and_load(make_pointer(url=path.as_uri()), TODAY, plugin)
    assert state.status == STATUS_FRESH
    assert state.last_version == feed_version_of(data)
    assert state.last_loaded_at is not None
    assert len(plugin.calls) == 1
    feed_id, version, received = plugin.calls[0]
    assert (feed_id, version) == ("f1", feed_version_of(data))
    # proxy semantics: delivered bytes parse to the same feed
    assert read_feed(received) == read_feed(data)


def test_expired_pointer_never_calls_plugin(tmp_path):
    path, _ = write_fixture_zip(tmp_path)
    plugin = RecordingPlugin()
    pointer = make_pointer(url=path.as_uri(), valid_from=20180101,
                           valid_until=20190101)
    state = fetch_and_load(pointer, TODAY, plugin)
    assert state.status == STATUS_EXPIRED
    assert plugin.calls == []
    assert state.last_version is None


def test_feed_calendar_gates_even_when_pointer_valid(tmp_path):
    # pointer window covers today, but no service in the feed does
    path, _ = write_fixture_zip(tmp_path)
    plugin = RecordingPlugin()
    pointer = make_pointer(url=path.as_uri(), valid_from=20200101,
                           valid_until=20301231)
    state = fetch_and_load(pointer, ServiceDate(2026, 6, 2), plugin)
    assert state.status == STATUS_EXPIRED
    assert plugin.calls == []


def test_unchanged_version_loads_at_most_once(tmp_path):
    path, _ = write_fixture_zip(tmp_path)
    plugin = RecordingPlugin()
    pointer = make_pointer(url=path.as_uri())
    first = fetch_and_load(pointer, TODAY, plugin)
    second = fetch_and_load(pointer, TODAY, plugin, previous=first)
    assert len(plugin.calls) == 1
    assert second.status == STATUS_FRESH
    assert second.last_version == first.last_version
    assert second.last_loaded_at == first.last_loaded_at


def test_changed_content_loads_again(tmp_path):
    path, _ = write_fixture_zip(tmp_path, seed=7)
    plugin = RecordingPlugin()
    pointer = make_pointer(url=path.as_uri())
    first = fetch_and_load(pointer, TODAY, plugin)
    path.write_bytes(write_feed(gen_fixture(8, "tiny").to_feed()))
    second = fetch_and_load(pointer, TODAY, plugin, previous=first)
    assert len(plugin.calls) == 2
    versions = [call[1] for call in plugin.calls]
    assert versions[0] != versions[1]
    assert second.last_version == versions[1]


def test_fetch_failure_keeps_previous_version(tmp_path):
    path, _ = write_fixture_zip(tmp_path)
    plugin = RecordingPlugin()
    pointer = make_pointer(url=path.as_uri())
    first = fetch_and_load(pointer, TODAY, plugin)
    path.unlink()
    second = fetch_and_load(pointer, TODAY, plugin, previous=first)
    assert second.status == STATUS_FETCH_FAILED
    assert second.last_version == first.last_version
    assert second.last_loaded_at == first.last_loaded_at
    assert len(plugin.calls) == 1


def test_garbage_zip_is_fetch_failed(tmp_path):
    path = tmp_path / "feed.zip"
    path.write_bytes(b"not a zip")
    state = fetch_and_load(make_pointer(url=path.as_uri()), TODAY, RecordingPlugin())
    assert state.status == STATUS_FETCH_FAILED


def test_plugin_error_is_fetch_failed(tmp_path):
    path, _ = write_fixture_zip(tmp_path)
    state = fetch_and_load(make_pointer(url=path.as_uri()), TODAY,
                           RecordingPlugin(fail=True))
    assert state.status == STATUS_FETCH_FAILED
    assert state.last_version is None


# ------------------------------------------------------------- orchestrator


def test_config_rejects_subsecond_poll(broker):
    with pytest.raises(ValueError):
        FetcherConfig(broker=broker, plugin=RecordingPlugin(),
                      poll_interval_seconds=0.5)


def test_startup_fails_iff_broker_unreachable(broker):
    flaky = FlakyBroker(broker)
    flaky.down = True
    config = FetcherConfig(broker=flaky, plugin=RecordingPlugin(),
                           poll_interval_seconds=60, today_override=TODAY)
    with pytest.raises(BrokerUnavailable):
        run_orchestrator(config)


def test_version_change_observed_across_polls(broker, tmp_path):
    path, _ = write_fixture_zip(tmp_path, seed=7)
    broker.upsert_entity(make_pointer(url=path.as_uri()).to_context())
    plugin = RecordingPlugin()
    config = FetcherConfig(broker=broker, plugin=plugin,
                           poll_interval_seconds=60, today_override=TODAY)
    orchestrator = FetcherOrchestrator(config)
    orchestrator.poll_once()
    path.write_bytes(write_feed(gen_fixture(8, "tiny").to_feed()))
    orchestrator.poll_once()
    orchestrator.poll_once()
    assert len(plugin.calls) == 2
    assert plugin.calls[0][1] != plugin.calls[1][1]
    assert orchestrator.states()["f1"].status == STATUS_FRESH
    assert orchestrator.metrics()["polls"] == 3


def test_broker_outage_mid_run_retains_states(broker, tmp_path):
    path, _ = write_fixture_zip(tmp_path)
    broker.upsert_entity(make_pointer(url=path.as_uri()).to_context())
    flaky = FlakyBroker(broker)
    plugin = RecordingPlugin()
    config = FetcherConfig(broker=flaky, plugin=plugin,
                           poll_interval_seconds=1, today_override=TODAY)
    orchestrator = run_orchestrator(config)
    try:
        assert orchestrator.states()["f1"].status == STATUS_FRESH
        flaky.down = True
        deadline = time.time() + 5
        while orchestrator.metrics()["failedPolls"] == 0 and time.time() < deadline:
            time.sleep(0.05)
        assert orchestrator.metrics()["failedPolls"] >= 1
        # prior state survives the outage
        assert orchestrator.states()["f1"].status == STATUS_FRESH
        assert len(plugin.calls) == 1
    finally:
        orchestrator.stop()


def test_stop_halts_polling(broker, tmp_path):
    path, _ = write_fixture_zip(tmp_path)
    broker.upsert_entity(make_pointer(url=path.as_uri()).to_context())
    plugin = RecordingPlugin()
    config = FetcherConfig(broker=broker, plugin=plugin,
                           poll_interval_seconds=1, today_override=TODAY)
    orchestrator = run_orchestrator(config)
    orchestrator.stop()
    polls_after_stop = orchestrator.metrics()["polls"]
    time.sleep(1.3)
    assert orchestrator.metrics()["polls"] == polls_after_stop


def test_expired_feed_never_reaches_router_plugin(broker, tmp_path):
    path, _ = write_fixture_zip(tmp_path)
    broker.upsert_entity(
        make_pointer(url=path.as_uri(), valid_from=20180101,
                     valid_until=20190101).to_context())
    plugin = RecordingPlugin()
    config = FetcherConfig(broker=broker, plugin=plugin,
                           poll_interval_seconds=60, today_override=TODAY)
    orchestrator = FetcherOrchestrator(config)
    for _ in range(3):
        orchestrator.poll_once()
    assert plugin.calls == []
    assert orchestrator.states()["f1"].status == STATUS_EXPIRED


# ------------------------------------------------------------ remote plugin


def test_remote_plugin_loads_into_router_service(tmp_path):
    router = RouterService(service_date=TODAY)
    router.start()
    try:
        data = write_feed(gen_fixture(7, "tiny").to_feed())
        plugin = RemoteRoutingPlugin(router.url)
        plugin.load_feed("f1", data, "v-abc")
        health = requests.get(f"{router.url}/health", timeout=5).json()
        assert health["feedsLoaded"] == 1
        assert health["feedVersions"] == {"f1": "v-abc"}
    finally:
        router.stop()


def test_remote_plugin_raises_on_rejection():
    router = RouterService(service_date=TODAY)
    router.start()
    try:
        with pytest.raises(FetchFailure):
            RemoteRoutingPlugin(router.url).load_feed("f1", b"junk", "v1")
    finally:
        router.stop()


def test_http_source_fetch(broker, tmp_path):
    # serve a feed over loopback http and point the fetcher at it
    from atomic_transit.httpkit import HttpService, Response

    data = write_feed(gen_fixture(7, "tiny").to_feed())
    server = HttpService()
    server.add_route("GET", "/feed.zip", lambda req: Response(
        status=200, body=data, content_type="application/zip"))
    server.start()
    try:
        plugin = RecordingPlugin()
        pointer = make_pointer(url=f"{server.url}/feed.zip")
        state = fetch_and_load(pointer, TODAY, plugin)
        assert state.status == STATUS_FRESH
        assert plugin.calls[0][2] == data
    finally:
        server.stop()
