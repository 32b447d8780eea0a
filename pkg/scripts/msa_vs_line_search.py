"""Compare Frank-Wolfe iteration counts under exact line search and MSA on a congested grid."""
import argparse

from qdta import ScenarioConfig, StepSizeStrategy, bin_demand, gen_fixture, run_qdta
from qdta.engine import congested_links


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", default="10x10")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--trips", type=int, default=8000)
    parser.add_argument("--zones", type=int, default=16)
    parser.add_argument("--tol", type=float, default=1e-4)
    args = parser.parse_args(argv)

    fx = gen_fixture("grid", args.size, seed=args.seed, trips=args.trips, zones=args.zones)
    demand = bin_demand(fx.trips, fx.interval_minutes, fx.intervals)
    counts = {}
    for kind in ("line-search", "msa"):
        config = ScenarioConfig(fx.interval_minutes, fx.intervals, strategy=StepSizeStrategy(kind),
                                tol=args.tol, max_iters=1000, keep_paths=False)
        res = run_qdta(fx.network, demand, config)
        counts[kind] = [r.fw_iterations for r in res]
        if kind == "line-search":
            congested = [len(congested_links(r, fx.network)) for r in res]
    print(f"{'interval':>8} {'line search':>12} {'msa':>6} {'congested links':>16}")
    for i, (a, b) in enumerate(zip(counts["line-search"], counts["msa"])):
        print(f"{i:>8} {a:>12} {b:>6} {congested[i]:>16}")
    ls, msa = sum(counts["line-search"]), sum(counts["msa"])
    print(f"{'total':>8} {ls:>12} {msa:>6}   line search saves {1 - ls / msa:.0%}")


if __name__ == "__main__":
    main()
