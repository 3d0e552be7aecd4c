#!/usr/bin/env python3
"""Reproduce the worker-pool sizing experiment: time one capture round of a
simulated fleet across pool sizes.

Full scale (2379 cameras, the default) takes a few minutes in total:

    python scripts/pool_sweep.py --preset island --pools 32,64,128,256,512

Small and quick, with synthetic per-camera latency:

    python scripts/pool_sweep.py --cameras 64 --stall 0.3 --pools 1,8,32,64
"""

import argparse
import sys

from floodwatch.capture import CaptureConfig, measure_pool_sweep
from floodwatch.simulator import Fault, island_fleet_scenario, spawn_fleet, uniform_scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pools", default="32,64,128,256,512")
    parser.add_argument("--preset", choices=["island"], help="full 2379-camera fleet")
    parser.add_argument("--cameras", type=int, default=256)
    parser.add_argument("--stall", type=float, default=0.0, help="first-byte delay per camera (s)")
    parser.add_argument("--deadline", type=float, default=15.0)
    args = parser.parse_args()

    pools = [int(p) for p in args.pools.split(",")]
    scenario = island_fleet_scenario() if args.preset == "island" else uniform_scenario(args.cameras)
    if args.stall:
        for cam in scenario.cameras:
            cam.fault = Fault.stall(args.stall)

    with spawn_fleet(scenario) as fleet:
        registry = fleet.registry()
        print(f"fleet: {len(registry)} cameras at {fleet.base_url}")
        rows = measure_pool_sweep(registry, pools, CaptureConfig(per_stream_deadline=args.deadline))

    print(f"\n{'pool':>6}  {'round wall (s)':>14}  {'cams/s':>8}")
    for pool, seconds in rows:
        print(f"{pool:>6}  {seconds:>14.2f}  {len(registry) / seconds:>8.0f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
