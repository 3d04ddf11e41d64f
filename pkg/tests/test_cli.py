"""CLI behavior: flag parsing, exit codes, and one live subprocess."""

import json
import signal
import subprocess
import sys
import time

import pytest
import requests

from atomic_transit import cli
from atomic_transit.broker.core import ContextBroker
from atomic_transit.broker.server import BrokerServer
from atomic_transit.fixtures import gen_fixture
from atomic_transit.gtfs import read_feed
from atomic_transit.models import GtfsTripEntity


@pytest.fixture()
def served_broker():
    core = ContextBroker()
    server = BrokerServer(core)
    server.start()
    yield core, server.url
    server.stop()
    core.close()


def test_parse_listen():
    assert cli._parse_listen("127.0.0.1:8080") == ("127.0.0.1", 8080)
    assert cli._parse_listen("0.0.0.0:0") == ("0.0.0.0", 0)


@pytest.mark.parametrize("bad", ["8080", "localhost:", ":", "host:abc"])
def test_parse_listen_rejects(bad):
    with pytest.raises(Exception):
        cli._parse_listen(bad)


def test_fixture_stdout_matches_library(capsys):
    assert cli.main(["fixture", "--seed", "3", "--size", "tiny"]) == 0
    out = capsys.readouterr().out
    assert json.loads(out) == json.loads(gen_fixture(3, "tiny").dumps())


def test_fixture_writes_feed_and_manifest(tmp_path):
    manifest = tmp_path / "city.json"
    feed_path = tmp_path / "city.zip"
    rc = cli.main(["fixture", "--seed", "3", "--out", str(manifest),
                   "--feed", str(feed_path)])
    assert rc == 0
    parsed = json.loads(manifest.read_text())
    assert parsed["seed"] == 3
    feed = read_feed(feed_path.read_bytes())
    counts = parsed["manifest"]["entityCounts"]
    assert feed.row_counts()["trips"] == counts["GtfsTrip"]


def test_fixture_loads_into_broker(served_broker):
    core, url = served_broker
    assert cli.main(["fixture", "--seed", "3", "--out", "-",
                     "--broker", url]) == 0
    assert core.entity_count() > 0


def test_ngsi2gtfs_success_and_report(served_broker, tmp_path, capsys):
    core, url = served_broker
    gen_fixture(3, "tiny").load_into(core)
    out = tmp_path / "feed.zip"
    report = tmp_path / "skips.json"
    rc = cli.main(["ngsi2gtfs", "--broker", url, "--out", str(out),
                   "--report", str(report)])
    assert rc == 0
    assert "version" in capsys.readouterr().out
    feed = read_feed(out.read_bytes())
    assert feed.row_counts()["trips"] > 0
    assert json.loads(report.read_text())["skips"] == []


def test_ngsi2gtfs_inconsistent_exits_2(served_broker, tmp_path):
    core, url = served_broker
    gen_fixture(3, "tiny").load_into(core)
    ghost = GtfsTripEntity(trip_id="ghost", route_ref="urn:ngsi:GtfsRoute:ghost",
                           service_ref="urn:ngsi:GtfsService:ghost", headsign="x")
    core.upsert_entity(ghost.to_context())
    rc = cli.main(["ngsi2gtfs", "--broker", url,
                   "--out", str(tmp_path / "feed.zip")])
    assert rc == 2


def test_ngsi2gtfs_unreachable_exits_3(tmp_path):
    rc = cli.main(["ngsi2gtfs", "--broker", "http://127.0.0.1:1",
                   "--out", str(tmp_path / "feed.zip")])
    assert rc == 3


def test_ngsi2gtfs_alias_matches_subcommand(tmp_path):
    rc = cli.main_ngsi2gtfs(["--broker", "http://127.0.0.1:1",
                             "--out", str(tmp_path / "feed.zip")])
    assert rc == 3


def test_estimator_bad_target_exits_2():
    rc = cli.main(["estimator", "--broker", "http://127.0.0.1:1",
                   "--target", "urn:x:availableSpots:weather",
                   "--listen", "127.0.0.1:0"])
    assert rc == 2


def test_fetcher_unreachable_broker_exits_1():
    rc = cli.main(["gtfs-fetcher", "--broker", "http://127.0.0.1:1",
                   "--plugin-endpoint", "http://127.0.0.1:1",
                   "--poll-seconds", "1"])
    assert rc == 1


def test_router_serves_then_exits(capsys):
    rc = cli.main(["router", "--listen", "127.0.0.1:0", "--run-seconds", "0.2"])
    assert rc == 0
    assert "router listening on http://127.0.0.1:" in capsys.readouterr().out


def test_compose_bad_config_exits_2(tmp_path):
    bad = tmp_path / "pipeline.json"
    bad.write_text("{not json")
    assert cli.main(["compose", "--config", str(bad)]) == 2


def test_compose_stage_failure_exits_1(tmp_path):
    blocker = tmp_path / "workdir"
    blocker.write_text("occupied")
    config = tmp_path / "pipeline.json"
    config.write_text(json.dumps({"workDir": str(blocker)}))
    assert cli.main(["compose", "--config", str(config)]) == 1


def test_compose_check_runs_pipeline(tmp_path, capsys):
    config = tmp_path / "pipeline.json"
    config.write_text(json.dumps({"mode": "inproc", "pollSeconds": 1.0}))
    assert cli.main(["compose", "--config", str(config), "--check"]) == 0
    status = json.loads(capsys.readouterr().out)
    assert status["router"]["state"] == "up"
    assert status["bridge"]["state"] == "up"


def test_broker_subprocess_serves_http(tmp_path):
    journal = tmp_path / "journal.jsonl"
    proc = subprocess.Popen(
        [sys.executable, "-m", "atomic_transit.cli", "broker",
         "--listen", "127.0.0.1:0", "--journal", str(journal)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert "broker listening on " in line
        url = line.strip().rsplit(" ", 1)[-1]
        deadline = time.time() + 10
        while True:
            try:
                resp = requests.get(url + "/v2/entities",
                                    params={"type": "GtfsStop"}, timeout=2)
                break
            except requests.ConnectionError:
                assert time.time() < deadline
                time.sleep(0.05)
        assert resp.status_code == 200
        assert resp.json() == []
        proc.send_signal(signal.SIGINT)
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()
