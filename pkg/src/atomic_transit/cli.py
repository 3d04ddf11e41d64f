"""Command line entry points.

One umbrella command (atomic-transit) with a subcommand per atomic
service, plus standalone aliases matching the service names. Servers run
until interrupted; --run-seconds bounds the lifetime for scripted use.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time

from .broker.client import BrokerClient
from .broker.core import ContextBroker
from .broker.server import BrokerServer
from .broker.types import BrokerUnavailable
from .compose import BadConfig, ComposeConfig, StageFailure, compose_city_service
from .estimator import EstimatorService, EstimatorTarget, EventLog
from .fetcher import FetcherConfig, RemoteRoutingPlugin, run_orchestrator
from .fixtures import gen_fixture
from .gtfs import GtfsError, ServiceDate, read_feed, write_feed
from .ngsi2gtfs import InconsistentInput, IoFailure, run_export
from .router import RouterService
from .rt.bridge import BridgeService
from .rt.model import ScheduleIndex

log = logging.getLogger(__name__)


def _parse_listen(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(
            f"--listen wants HOST:PORT, got {addr!r}")
    return host, int(port)


def _park(shutdowns, run_seconds: float | None) -> None:
    """Serve until interrupted (or for run_seconds), then shut down in order."""
    try:
        if run_seconds is not None:
            time.sleep(run_seconds)
        else:
            threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        for shutdown in shutdowns:
            shutdown()


def _add_run_seconds(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--run-seconds", type=float, default=None,
                        help="serve for N seconds then exit (default: forever)")


# ------------------------------------------------------------- subcommands


def _cmd_broker(args) -> int:
    core = ContextBroker(journal_path=args.journal)
    host, port = args.listen
    server = BrokerServer(core, host=host, port=port)
    server.start()
    print(f"broker listening on {server.url}", flush=True)
    _park([server.stop, core.close], args.run_seconds)
    return 0


def _cmd_fixture(args) -> int:
    fixture = gen_fixture(args.seed, args.size)
    payload = fixture.dumps()
    if args.out == "-":
        print(payload)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    if args.feed:
        with open(args.feed, "wb") as fh:
            fh.write(write_feed(fixture.to_feed()))
    if args.broker:
        client = BrokerClient(args.broker)
        pushed = fixture.load_into(client)
        print(f"loaded {pushed} entities into {args.broker}", file=sys.stderr)
    return 0


def _cmd_ngsi2gtfs(args) -> int:
    client = BrokerClient(args.broker)
    try:
        summary = run_export(client, args.out, register_feed_id=args.register)
    except InconsistentInput as exc:
        print(f"inconsistent input: {exc}", file=sys.stderr)
        return 2
    except BrokerUnavailable as exc:
        print(f"broker unreachable: {exc}", file=sys.stderr)
        return 3
    except IoFailure as exc:
        print(f"write failed: {exc}", file=sys.stderr)
        return 1
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump({"skips": summary.skips}, fh, indent=2)
    print(f"wrote {args.out} version {summary.feed_version[:12]} "
          f"({summary.skip_count} skips)")
    return 0


def _cmd_gtfs_fetcher(args) -> int:
    config = FetcherConfig(
        broker=BrokerClient(args.broker),
        plugin=RemoteRoutingPlugin(args.plugin_endpoint),
        poll_interval_seconds=args.poll_seconds,
        today_override=(ServiceDate.from_yyyymmdd(args.today)
                        if args.today else None),
    )
    try:
        orchestrator = run_orchestrator(config)
    except BrokerUnavailable as exc:
        print(f"broker unreachable on first poll: {exc}", file=sys.stderr)
        return 1
    print(f"fetcher polling {args.broker} every {args.poll_seconds}s", flush=True)
    _park([orchestrator.stop], args.run_seconds)
    return 0


def _cmd_gtfs_rt_bridge(args) -> int:
    with open(args.schedule, "rb") as fh:
        feed = read_feed(fh.read())
    schedule = ScheduleIndex.from_feed(feed, ServiceDate.from_yyyymmdd(args.date))
    host, port = args.listen
    service = BridgeService(BrokerClient(args.broker), schedule,
                            host=host, port=port)
    try:
        service.start()
    except BrokerUnavailable as exc:
        print(f"broker unreachable: {exc}", file=sys.stderr)
        return 1
    print(f"bridge listening on {service.url}", flush=True)
    _park([service.stop], args.run_seconds)
    return 0


def _cmd_estimator(args) -> int:
    try:
        targets = [EstimatorTarget.parse(t) for t in args.target]
    except ValueError as exc:
        print(f"bad --target: {exc}", file=sys.stderr)
        return 2
    host, port = args.listen
    service = EstimatorService(
        BrokerClient(args.broker), targets,
        step_seconds=args.step_seconds, horizon_seconds=args.horizon_seconds,
        event_log=EventLog(jsonl_path=args.log), host=host, port=port)
    service.start()
    service.estimate_all()
    service.start_loop()
    print(f"estimator listening on {service.url}", flush=True)
    _park([service.stop], args.run_seconds)
    return 0


def _cmd_router(args) -> int:
    host, port = args.listen
    date = ServiceDate.from_yyyymmdd(args.date) if args.date else None
    service = RouterService(host=host, port=port, service_date=date)
    service.start()
    if args.feed:
        try:
            with open(args.feed, "rb") as fh:
                service.load_feed_bytes("static", fh.read())
        except (OSError, GtfsError) as exc:
            print(f"cannot load {args.feed}: {exc}", file=sys.stderr)
            service.stop()
            return 1
    print(f"router listening on {service.url}", flush=True)
    _park([service.stop], args.run_seconds)
    return 0


def _cmd_compose(args) -> int:
    try:
        config = ComposeConfig.from_file(args.config, mode_override=args.mode)
    except BadConfig as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return 2
    try:
        handle = compose_city_service(config)
    except StageFailure as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print(json.dumps(handle.status(), indent=2))
    if args.check:
        handle.stop()
        return 0
    _park([handle.stop], args.run_seconds)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atomic-transit",
        description="Desk-scale urban mobility services over one context broker")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("broker", help="run the context broker HTTP API")
    p.add_argument("--listen", type=_parse_listen, default=("127.0.0.1", 1026))
    p.add_argument("--journal", default=None,
                   help="append-only journal file for persistence")
    _add_run_seconds(p)
    p.set_defaults(func=_cmd_broker)

    p = sub.add_parser("fixture", help="generate a deterministic city fixture")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--size", choices=("tiny", "small"), default="tiny")
    p.add_argument("--out", default="-", help="JSON output path or - for stdout")
    p.add_argument("--feed", default=None, help="also write the GTFS zip here")
    p.add_argument("--broker", default=None, help="load entities into this broker")
    p.set_defaults(func=_cmd_fixture)

    p = sub.add_parser("ngsi2gtfs", help="export broker context to a GTFS zip")
    p.add_argument("--broker", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="write skip report JSON here")
    p.add_argument("--register", default=None, metavar="FEEDID",
                   help="announce the export as a feed pointer")
    p.set_defaults(func=_cmd_ngsi2gtfs)

    p = sub.add_parser("gtfs-fetcher", help="poll feed pointers into a routing plugin")
    p.add_argument("--broker", required=True)
    p.add_argument("--poll-seconds", type=float, default=30.0)
    p.add_argument("--plugin-endpoint", required=True)
    p.add_argument("--today", type=int, default=None, metavar="YYYYMMDD")
    _add_run_seconds(p)
    p.set_defaults(func=_cmd_gtfs_fetcher)

    p = sub.add_parser("gtfs-rt-bridge", help="serve GTFS-RT from broker notifications")
    p.add_argument("--broker", required=True)
    p.add_argument("--schedule", required=True, metavar="FEED.ZIP")
    p.add_argument("--date", type=int, required=True, metavar="YYYYMMDD")
    p.add_argument("--listen", type=_parse_listen, default=("127.0.0.1", 0))
    _add_run_seconds(p)
    p.set_defaults(func=_cmd_gtfs_rt_bridge)

    p = sub.add_parser("estimator", help="estimate parking/traffic from history")
    p.add_argument("--broker", required=True)
    p.add_argument("--target", action="append", required=True,
                   metavar="ENTITY:ATTR:KIND",
                   help="what to estimate; repeatable; kind is parking or traffic")
    p.add_argument("--step-seconds", type=int, default=3600)
    p.add_argument("--horizon-seconds", type=int, default=3600)
    p.add_argument("--listen", type=_parse_listen, default=("127.0.0.1", 0))
    p.add_argument("--log", default=None, metavar="EVENTS.JSONL")
    _add_run_seconds(p)
    p.set_defaults(func=_cmd_estimator)

    p = sub.add_parser("router", help="earliest-arrival routing over GTFS feeds")
    p.add_argument("--listen", type=_parse_listen, default=("127.0.0.1", 0))
    p.add_argument("--feed", default=None, metavar="FEED.ZIP")
    p.add_argument("--date", type=int, default=None, metavar="YYYYMMDD")
    _add_run_seconds(p)
    p.set_defaults(func=_cmd_router)

    p = sub.add_parser("compose", help="run the composed city pipeline")
    p.add_argument("--config", required=True, metavar="PIPELINE.JSON")
    p.add_argument("--mode", choices=("inproc", "multiproc"), default=None)
    p.add_argument("--check", action="store_true",
                   help="start, report status, and exit")
    _add_run_seconds(p)
    p.set_defaults(func=_cmd_compose)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        # ctrl-C can land before _park installs its handler; treat it as a
        # normal shutdown either way
        return 0


def _alias(command: str):
    def entry(argv=None) -> int:
        argv = sys.argv[1:] if argv is None else list(argv)
        return main([command, *argv])
    return entry


main_ngsi2gtfs = _alias("ngsi2gtfs")
main_gtfs_fetcher = _alias("gtfs-fetcher")
main_gtfs_rt_bridge = _alias("gtfs-rt-bridge")
main_estimator = _alias("estimator")
main_transit_router = _alias("router")


if __name__ == "__main__":
    sys.exit(main())
