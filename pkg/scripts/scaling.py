"""Time the synthetic scaling scenario for several worker counts.

The full default scenario (about 100k links, 500k trips, 8 intervals) takes
tens of minutes per run on one core; shrink it with --links/--trips. With
--json a single JSON object is printed instead of the table.
"""
import argparse
import json
import os
import time

from qdta import ScenarioConfig, bin_demand
from qdta.engine import run_qdta
from qdta.fixtures import scaling_scenario


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--links", type=int, default=100_000)
    parser.add_argument("--trips", type=int, default=500_000)
    parser.add_argument("--intervals", type=int, default=8)
    parser.add_argument("--workers", type=int, nargs="+", default=[1, 8])
    parser.add_argument("--backend", choices=("serial", "thread", "process"))
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args(argv)
    say = (lambda *a, **k: None) if args.json else print

    fx = scaling_scenario(links=args.links, trips=args.trips, intervals=args.intervals)
    demand = bin_demand(fx.trips, fx.interval_minutes, fx.intervals)
    say(f"{fx.network.n_links} links, {len(fx.trips)} trips, {fx.intervals} intervals, "
          f"{os.cpu_count()} core(s)")
    wall, iterations = {}, {}
    for m in args.workers:
        config = ScenarioConfig(fx.interval_minutes, fx.intervals, workers=m, backend=args.backend,
                                keep_paths=False)
        start = time.perf_counter()
        res = run_qdta(fx.network, demand, config)
        wall[m] = time.perf_counter() - start
        iterations[m] = [r.fw_iterations for r in res]
        say(f"M={m}: {wall[m]:.1f} s, iterations per interval {iterations[m]}", flush=True)
    if args.json:
        print(json.dumps({"links": fx.network.n_links, "trips": len(fx.trips), "cores": os.cpu_count(),
                          "wall": wall, "iterations": iterations,
                          "unfinished_vph": res.unfinished.total()}))
        return
    base = wall[args.workers[0]]
    for m, t in wall.items():
        print(f"M={m}: {t / base:.2f} x the M={args.workers[0]} wall time")


if __name__ == "__main__":
    main()
