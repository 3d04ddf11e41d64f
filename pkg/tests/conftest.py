"""Shared fixtures: deterministic clocks, notification collectors, and a
broker wired over real HTTP on an ephemeral port."""

from __future__ import annotations

import pytest

from atomic_transit.broker import BrokerClient, BrokerServer, ContextBroker


class FakeClock:
    """Callable clock whose time only moves when a test says so."""

    def __init__(self, start: float = 1_700_000_000.0):
        self.t = float(start)

    def __call__(self) -> float:
        return self.t

    def advance(self, seconds: float) -> float:
        self.t += seconds
        return self.t


class Collector:
    """Callable notification sink that records everything it receives."""

    def __init__(self):
        self.items = []

    def __call__(self, item) -> None:
        self.items.append(item)

    def __len__(self) -> int:
        return len(self.items)


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def broker(clock):
    b = ContextBroker(now_fn=clock)
    yield b
    b.close()


@pytest.fixture
def broker_over_http(clock):
    b = ContextBroker(now_fn=clock)
    server = BrokerServer(b, port=0)
    server.start()
    client = BrokerClient(server.url)
    yield b, server, client
    server.stop()
    b.close()


ACCEPTANCE_LABELS = {
    "test_criterion_1_roundtrip_100_entity_sets":
        "1 NGSI-GTFS round trip, 100/100 exact",
    "test_criterion_2_wire_conformance_1000_sequences":
        "2 GTFS-RT wire conformance, 1000/1000 via protobuf oracle",
    "test_criterion_3_routing_matches_brute_force_500_networks":
        "3 routing equals brute force, 500/500 networks",
    "test_criterion_4_plus_300s_shifts_arrival_exactly[inproc]":
        "4 end-to-end +300 s delay propagation (inproc)",
    "test_criterion_4_plus_300s_shifts_arrival_exactly[multiproc]":
        "4 end-to-end +300 s delay propagation (multiproc)",
    "test_criterion_5_expired_feed_never_reaches_plugin":
        "5 validity gate, 0 plugin calls over 3 polls",
    "test_criterion_6_mae_under_0_06_and_bit_identical":
        "6 estimator MAE <= 0.06, bit-identical",
    "test_criterion_7_1000_upserts_10_subscriptions":
        "7 notification exactness, 1000 upserts x 10 subscriptions",
    "test_criterion_8_rest_serves_cache_or_fresher_recompute":
        "8 cache semantics over 200 REST cycles",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome, mark in (("passed", "PASS"), ("failed", "FAIL"),
                          ("error", "FAIL")):
        for report in terminalreporter.stats.get(outcome, ()):
            if "test_acceptance.py" not in report.nodeid:
                continue
            name = report.nodeid.rsplit("::", 1)[-1]
            label = ACCEPTANCE_LABELS.get(name, name)
            lines.append((label, mark))
    if lines:
        terminalreporter.section("acceptance criteria")
        for label, mark in sorted(lines):
            terminalreporter.write_line(f"[{mark}] criterion {label}")
