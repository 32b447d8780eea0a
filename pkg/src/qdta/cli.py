"""``qdta`` command line: run a scenario or generate a synthetic fixture.

Settings resolve as command-line flag, then ``--config`` file, then default.
The config file is flat ``key = value`` lines (``#`` starts a comment) using
the long flag names with dashes or underscores, e.g. ``interval_min = 15``.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .assignment import LINE_SEARCH, MSA, StepSizeStrategy
from .demand import bin_demand, read_rates_csv, read_trips_csv
from .engine import QDTA, STA, ScenarioConfig, compute_metrics, run_qdta, run_sta
from .errors import ConfigError, SolverError, StructuralError
from .fixtures import KINDS, gen_fixture
from .io import RunManifest, write_results
from .network import DEFAULT_ALPHA, DEFAULT_BETA, read_network_csv
from .parallel import BACKENDS, WorkerError, default_workers

log = logging.getLogger("qdta")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "network": None,
    "demand": None,
    "demand_kind": "trips",
    "mode": QDTA,
    "interval_min": 15.0,
    "intervals": 1,
    "step_size": LINE_SEARCH,
    "threads": None,
    "tol": 1e-4,
    "max_iters": 200,
    "out": "results",
    "alpha": DEFAULT_ALPHA,
    "beta": DEFAULT_BETA,
    "backend": None,
    "congestion_threshold": 1.0,
}

CASTS = {"interval_min": float, "intervals": int, "threads": int, "tol": float, "max_iters": int,
         "alpha": float, "beta": float, "congestion_threshold": float}

CHOICES = {"demand_kind": ("trips", "rate"), "mode": (QDTA, STA),
           "step_size": (LINE_SEARCH, MSA), "backend": BACKENDS}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def read_config(path) -> dict:
    settings = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        settings[key] = value
    return settings


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over defaults and type-check the result."""
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(read_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key, cast in CASTS.items():
        if settings[key] is not None:
            try:
                settings[key] = cast(settings[key])
            except ValueError:
                raise UsageError(f"{key} must be {cast.__name__}, got {settings[key]!r}") from None
    for key, allowed in CHOICES.items():
        if settings[key] is not None and settings[key] not in allowed:
            raise UsageError(f"{key} must be one of {allowed}, got {settings[key]!r}")
    for key in ("network", "demand"):
        if not settings[key]:
            raise UsageError(f"--{key} is required")
    if settings["threads"] is None:
        settings["threads"] = default_workers()
    return settings


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qdta", description="Quasi-dynamic traffic assignment.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="assign a scenario and write results")
    run.add_argument("--config", help="flat key = value settings file")
    run.add_argument("--network", help="network CSV")
    run.add_argument("--demand", help="trips or rates CSV")
    run.add_argument("--demand-kind", choices=CHOICES["demand_kind"])
    run.add_argument("--mode", choices=CHOICES["mode"])
    run.add_argument("--interval-min", type=float)
    run.add_argument("--intervals", type=int)
    run.add_argument("--step-size", choices=CHOICES["step_size"])
    run.add_argument("--threads", type=int, help="worker count (env QDTA_THREADS)")
    run.add_argument("--tol", type=float, help="relative potential change to stop at")
    run.add_argument("--max-iters", type=int)
    run.add_argument("--alpha", type=float, help="BPR alpha")
    run.add_argument("--beta", type=float, help="BPR beta")
    run.add_argument("--backend", choices=BACKENDS, help="parallel backend (env QDTA_BACKEND)")
    run.add_argument("--congestion-threshold", type=float)
    run.add_argument("--out", help="output directory")

    gen = sub.add_parser("gen-fixture", help="write a synthetic network and trip table")
    gen.add_argument("kind", choices=KINDS)
    gen.add_argument("size", nargs="?", default="small", help="'small', RxC for grids, node count for random")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--trips", type=int)
    gen.add_argument("--zones", type=int)
    gen.add_argument("--interval-min", type=float, default=15.0)
    gen.add_argument("--intervals", type=int, default=4)
    gen.add_argument("--trip-minutes", type=float,
                     help="draw destinations with weight exp(-free-flow minutes / this)")
    gen.add_argument("--out", default="fixture")
    return parser


def _run(settings: dict) -> int:
    start = time.perf_counter()
    try:
        network = read_network_csv(settings["network"], settings["alpha"], settings["beta"])
        network.validate()
        config = ScenarioConfig(
            interval_minutes=settings["interval_min"], intervals=settings["intervals"],
            strategy=StepSizeStrategy(kind=settings["step_size"]), tol=settings["tol"],
            max_iters=settings["max_iters"], workers=settings["threads"], mode=settings["mode"],
            backend=settings["backend"], keep_paths=False)
        if settings["demand_kind"] == "trips":
            demand = bin_demand(read_trips_csv(settings["demand"]), config.interval_minutes,
                                config.intervals)
        else:
            demand = read_rates_csv(settings["demand"], config.intervals)
        manifest = RunManifest.start(settings, [settings["network"], settings["demand"]])
    except (StructuralError, ConfigError, ValueError, OSError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT

    try:
        if config.mode == STA:
            results, unfinished = [run_sta(network, demand, config)], {}
        else:
            outcome = run_qdta(network, demand, config)
            results, unfinished = outcome.intervals, outcome.unfinished
    except (SolverError, WorkerError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except (StructuralError, ConfigError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT

    report = compute_metrics(results, network, settings["congestion_threshold"])
    for r in results:
        manifest.record(r)
    manifest.unfinished_pairs = len(unfinished)
    manifest.unfinished_rate = sum(unfinished.values()) if unfinished else 0.0
    manifest.total_wall_time = time.perf_counter() - start
    try:
        out = Path(settings["out"])
        write_results(out, network, results, report, unfinished)
        manifest.write(out / "manifest.json")
    except OSError as exc:
        log.error("could not write results: %s", exc)
        return EXIT_IO
    iters = sum(r.fw_iterations for r in results)
    log.info("%d interval(s), %d Frank-Wolfe iterations, %.2f s; results in %s",
             len(results), iters, manifest.total_wall_time, out)
    return EXIT_OK


def _gen(args) -> int:
    try:
        fixture = gen_fixture(args.kind, args.size, args.seed, trips=args.trips, zones=args.zones,
                              interval_minutes=args.interval_min, intervals=args.intervals,
                              trip_minutes=args.trip_minutes)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    try:
        paths = fixture.write(args.out)
    except OSError as exc:
        log.error("could not write fixture: %s", exc)
        return EXIT_IO
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen-fixture":
        return _gen(args)
    try:
        settings = resolve(args)
    except (UsageError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"qdta: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return _run(settings)


if __name__ == "__main__":
    sys.exit(main())
