"""Operator CLI.

    floodwatch validate-registry PATH
    floodwatch round --once --config CFG
    floodwatch run --config CFG
    floodwatch simulate (--scenario FILE | --preset island | --cameras N) [...]
    floodwatch sweep --pools 32,64,128,256 [--cameras N] [--stall S]
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from .capture import CaptureConfig, measure_pool_sweep
from .config import ConfigError, load_config
from .frames import SceneClass
from .mapping import summary_report
from .pipeline import Pipeline
from .registry import RegistryError, parse_registry_file
from .service import ApiServer, StateBox
from .simulator import (
    Fault,
    SimScenario,
    island_fleet_scenario,
    spawn_fleet,
    uniform_scenario,
)

log = logging.getLogger(__name__)


def _cmd_validate_registry(args) -> int:
    try:
        registry = parse_registry_file(args.path)
    except (RegistryError, OSError) as exc:
        print(f"registry invalid: {exc}", file=sys.stderr)
        return 1
    for network, count in registry.network_summary():
        print(f"{network}\t{count}")
    print(f"TOTAL\t{len(registry)}")
    return 0


def _cmd_round(args) -> int:
    config = load_config(args.config)
    pipeline = Pipeline(config)
    state, metrics, deliveries = pipeline.run_once()
    counts = state.status_counts()
    print(f"round {metrics.round_id}")
    print(f"  capture   {metrics.capture_wall_ms:9.0f} ms  failures={metrics.failure_counts}")
    print(f"  classify  {metrics.classify_wall_ms:9.0f} ms")
    print(f"  map       {metrics.map_wall_ms:9.0f} ms")
    print(f"  notify    {metrics.notify_wall_ms:9.0f} ms  deliveries={len(deliveries)}")
    print(f"  total     {metrics.total_wall_ms:9.0f} ms")
    print(
        "  status    "
        + "  ".join(f"{status.value}={count}" for status, count in counts.items())
    )
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config)
    pipeline = Pipeline(config)
    box = StateBox(metrics_supplier=lambda: list(pipeline.metrics_history))
    if pipeline.previous_state is not None:
        box.update(
            pipeline.previous_state,
            summary_report(pipeline.previous_state, config.map_url),
        )
    host, port = config.listen_host_port()
    api = ApiServer(host, port, box).start()
    print(f"serving on {api.url}, round interval {pipeline.interval_s}s", flush=True)

    stop = threading.Event()

    def _sigint(*_):
        stop.set()

    signal.signal(signal.SIGINT, _sigint)
    signal.signal(signal.SIGTERM, _sigint)

    def on_round(state, metrics, deliveries):
        box.update(state, summary_report(state, config.map_url))
        log.info(
            "round %s: %.0f ms total, %d deliveries",
            metrics.round_id,
            metrics.total_wall_ms,
            len(deliveries),
        )

    try:
        pipeline.run_forever(stop, on_round=on_round)
    finally:
        api.stop()
    return 0


def _scenario_from_args(args) -> SimScenario:
    if getattr(args, "scenario", None):
        return SimScenario.from_file(args.scenario)
    if getattr(args, "preset", None) == "island":
        return island_fleet_scenario()
    count = getattr(args, "cameras", None) or 8
    scenario = uniform_scenario(count)
    flood = getattr(args, "flood", 0)
    for cam in scenario.cameras[:flood]:
        cam.scene = SceneClass.FLOOD
    return scenario


def _cmd_simulate(args) -> int:
    scenario = _scenario_from_args(args)
    host, _, port = (args.listen or "127.0.0.1:0").rpartition(":")
    fleet = spawn_fleet(scenario, host=host or "127.0.0.1", port=int(port or 0))
    print(f"fleet of {len(scenario.cameras)} cameras listening at {fleet.base_url}", flush=True)
    if args.registry_out:
        Path(args.registry_out).write_text(
            json.dumps(fleet.registry_document(), indent=2), encoding="utf-8"
        )
        print(f"registry written to {args.registry_out}", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        fleet.stop()
    return 0


def _cmd_sweep(args) -> int:
    pools = [int(p) for p in args.pools.split(",") if p.strip()]
    if not pools:
        print("no pool sizes given", file=sys.stderr)
        return 1
    scenario = _scenario_from_args(args)
    if args.stall:
        for cam in scenario.cameras:
            cam.fault = Fault.stall(args.stall)
    with spawn_fleet(scenario) as fleet:
        registry = fleet.registry()
        cfg = CaptureConfig(per_stream_deadline=args.deadline)
        rows = measure_pool_sweep(registry, pools, cfg)
    print(f"{'pool':>6}  {'round wall (s)':>14}")
    for pool, seconds in rows:
        print(f"{pool:>6}  {seconds:>14.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floodwatch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-registry", help="parse a registry document and print the network summary")
    p.add_argument("path")
    p.set_defaults(func=_cmd_validate_registry)

    p = sub.add_parser("round", help="run a single round and print metrics")
    p.add_argument("--once", action="store_true", help="run exactly one round (default)")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_round)

    p = sub.add_parser("run", help="run the pipeline and the read API until interrupted")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("simulate", help="serve a synthetic camera fleet")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--preset", choices=["island"], help="built-in full-scale fleet")
    p.add_argument("--cameras", type=int, help="uniform fleet of N cameras")
    p.add_argument("--flood", type=int, default=0, help="mark the first N cameras as flood scenes")
    p.add_argument("--listen", help="host:port (default 127.0.0.1:0)")
    p.add_argument("--registry-out", help="write the fleet registry document here")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="worker-pool size benchmark against a simulated fleet")
    p.add_argument("--pools", required=True, help="comma-separated pool sizes")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--preset", choices=["island"])
    p.add_argument("--cameras", type=int, help="uniform fleet of N cameras")
    p.add_argument("--stall", type=float, default=0.0, help="per-camera first-byte delay (s)")
    p.add_argument("--deadline", type=float, default=15.0, help="per-stream deadline (s)")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
