"""Quasi-dynamic assignment over a sequence of intervals, plus the static baseline."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assignment import FwResult, StepSizeStrategy, TraceRow, frank_wolfe, routing_pool
from .demand import DemandMatrix, average_demand, check_nodes, merge_residual, partition_demand
from .errors import ConfigError, SolverError, StructuralError
from .loading import PathFlowMap, retruncate_paths
from .network import Network
from .parallel import WorkerError, WorkerPool

log = logging.getLogger(__name__)

QDTA = "qdta"
STA = "sta"


@dataclass
class ScenarioConfig:
    interval_minutes: float = 15.0
    intervals: int = 1
    strategy: StepSizeStrategy = field(default_factory=StepSizeStrategy)
    tol: float = 1e-4
    max_iters: int = 200
    workers: int = 1
    mode: str = QDTA
    backend: str | None = None      # parallel backend; None picks by worker count
    router: str | None = None       # routing backend; None reads QDTA_ROUTER
    keep_paths: bool = True

    def __post_init__(self):
        if not self.interval_minutes > 0:
            raise ConfigError("interval length must be positive")
        if self.intervals < 1:
            raise ConfigError("need at least one interval")
        if self.workers < 1:
            raise ConfigError("need at least one worker")
        if self.mode not in (QDTA, STA):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0 < self.tol < 1:
            raise ConfigError("convergence tolerance must be in (0, 1)")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")

    @property
    def horizon_minutes(self) -> float:
        return self.interval_minutes * self.intervals


@dataclass
class IntervalResult:
    interval: int
    minutes: float
    link_flows: np.ndarray
    link_costs: np.ndarray
    path_flows: PathFlowMap | None
    residual_in: DemandMatrix
    residual_out: DemandMatrix
    fw_iterations: int
    ls_iterations: int
    converged: bool
    trace: list[TraceRow]
    demand_total: float
    unroutable: list[tuple[int, int, float]] = field(default_factory=list)
    stalled: int = 0
    wall_time: float = 0.0


@dataclass
class QdtaResult:
    intervals: list[IntervalResult]
    unfinished: DemandMatrix

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    def __getitem__(self, i):
        return self.intervals[i]


def residual_demand(network: Network, interval_minutes: float, path_flows, costs
                    ) -> tuple[PathFlowMap, DemandMatrix]:
    """Re-truncate converged path flows at the converged costs.

    ``path_flows`` is one map or a per-worker list of maps. Returns the
    interval's truncated path flows and the residual demand handed to the
    next interval, keyed by (stop node, original destination).
    """
    maps = [path_flows] if isinstance(path_flows, PathFlowMap) else list(path_flows)
    truncated = PathFlowMap(interval=maps[0].interval if maps else None)
    left: dict[tuple[int, int], float] = {}
    for m in maps:
        part, rest = retruncate_paths(network, m, costs, interval_minutes)
        truncated.update(part)
        for od, rate in rest.items():
            left[od] = left.get(od, 0.0) + rate
    return truncated, DemandMatrix(left)


def _merge(maps: Sequence[PathFlowMap], interval) -> PathFlowMap:
    out = PathFlowMap(interval=interval)
    for m in maps:
        out.update(m)
    return out


def _solve(network, pool, config, demand, interval_minutes, interval) -> FwResult:
    parts = partition_demand(demand, config.workers)
    return frank_wolfe(network, None, interval_minutes, parts, config.strategy, config.tol,
                       config.max_iters, interval=interval, pool=pool, collect_paths=False)


def _pool(network, config, pool):
    if pool is not None:
        if pool.size != config.workers:
            raise ConfigError("pool size does not match configured worker count")
        return pool, False
    return routing_pool(network, config.workers, config.backend, config.router), True


def _check_demand(network, demand, intervals):
    if len(demand) != intervals:
        raise StructuralError(f"expected {intervals} demand matrices, got {len(demand)}")
    check_nodes(demand, network.n_nodes)


def run_qdta(network: Network, demand: Sequence[DemandMatrix], config: ScenarioConfig,
             pool: WorkerPool | None = None) -> QdtaResult:
    """Assign each interval's original plus carried-over demand in sequence.

    ``demand`` holds one rate matrix per interval (see ``bin_demand``). On a
    solver failure the raised :class:`SolverError` carries ``partial``, the
    intervals finished so far.
    """
    _check_demand(network, demand, config.intervals)
    pool, own = _pool(network, config, pool)
    results: list[IntervalResult] = []
    residual = DemandMatrix()
    try:
        for i in range(config.intervals):
            start = time.perf_counter()
            combined = merge_residual(demand[i], residual)
            try:
                fw = _solve(network, pool, config, combined, config.interval_minutes, i)
                parts = pool.map("residual", None, fw.costs)
            except (SolverError, WorkerError, FloatingPointError) as exc:
                err = SolverError(str(exc), interval=i)
                err.partial = results
                raise err from exc
            truncated = _merge([p for p, _ in parts], i)
            residual_out = _sum_matrices([r for _, r in parts])
            if fw.stalled:
                log.warning("interval %d: %d route loadings entered a first link longer than the interval",
                            i, fw.stalled)
            results.append(IntervalResult(
                interval=i, minutes=config.interval_minutes, link_flows=fw.link_flows,
                link_costs=fw.costs, path_flows=truncated if config.keep_paths else None,
                residual_in=residual, residual_out=residual_out, fw_iterations=fw.iterations,
                ls_iterations=fw.ls_iterations, converged=fw.converged, trace=fw.trace,
                demand_total=combined.total(), unroutable=fw.unroutable, stalled=fw.stalled,
                wall_time=time.perf_counter() - start))
            residual = residual_out
    finally:
        if own:
            pool.close()
    if len(residual):
        log.info("%.3f v/h of demand still en route after the last interval", residual.total())
    return QdtaResult(results, residual)


def _sum_matrices(matrices: Sequence[DemandMatrix]) -> DemandMatrix:
    total: dict[tuple[int, int], float] = {}
    for m in matrices:
        for od, rate in m.items():
            total[od] = total.get(od, 0.0) + rate
    return DemandMatrix(total)


def run_sta(network: Network, demand: Sequence[DemandMatrix], config: ScenarioConfig,
            pool: WorkerPool | None = None) -> IntervalResult:
    """Single untruncated equilibrium of the horizon-averaged demand."""
    _check_demand(network, demand, config.intervals)
    pool, own = _pool(network, config, pool)
    start = time.perf_counter()
    averaged = average_demand(demand)
    try:
        fw = _solve(network, pool, config, averaged, None, 0)
        paths = _merge(pool.map("path_flows"), 0) if config.keep_paths else None
    except (SolverError, WorkerError, FloatingPointError) as exc:
        raise SolverError(str(exc), interval=0) from exc
    finally:
        if own:
            pool.close()
    return IntervalResult(
        interval=0, minutes=config.horizon_minutes, link_flows=fw.link_flows, link_costs=fw.costs,
        path_flows=paths, residual_in=DemandMatrix(), residual_out=DemandMatrix(),
        fw_iterations=fw.iterations, ls_iterations=fw.ls_iterations, converged=fw.converged,
        trace=fw.trace, demand_total=averaged.total(), unroutable=fw.unroutable,
        wall_time=time.perf_counter() - start)


# -------------------------------------------------------------------- metrics

def congested_links(result: IntervalResult, network: Network, threshold: float = 1.0) -> list[int]:
    voc = result.link_flows / network.capacity
    return np.flatnonzero(voc >= threshold).tolist()


@dataclass
class MetricsRow:
    vmt: float = 0.0               # vehicle-miles
    vht: float = 0.0               # vehicle-hours travelled
    vhd: float = 0.0               # vehicle-hours of delay
    avg_voc: float = 0.0           # over link-intervals with positive flow
    congested_length: float = 0.0  # miles of links at or above the threshold in any interval
    loaded_link_intervals: int = 0


@dataclass
class MetricsReport:
    by_class: dict[int, MetricsRow]
    total: MetricsRow
    congested_by_interval: list[list[int]]
    threshold: float = 1.0


def compute_metrics(results: Sequence[IntervalResult], network: Network,
                    congestion_threshold: float = 1.0) -> MetricsReport:
    results = list(results)
    if not results:
        raise ValueError("no interval results to summarize")
    classes = sorted(set(network.fclass.tolist()))
    vmt = np.zeros(network.n_links)
    vht = np.zeros(network.n_links)
    vhd = np.zeros(network.n_links)
    voc_sum = np.zeros(network.n_links)
    loaded = np.zeros(network.n_links, dtype=np.int64)
    congested = np.zeros(network.n_links, dtype=bool)
    per_interval = []
    for r in results:
        hours = r.minutes / 60.0
        f = r.link_flows
        vmt += f * network.length * hours
        vht += f * r.link_costs / 60.0 * hours
        vhd += f * (r.link_costs - network.free_flow_time) / 60.0 * hours
        voc = f / network.capacity
        positive = f > 0
        voc_sum += np.where(positive, voc, 0.0)
        loaded += positive
        hit = voc >= congestion_threshold
        congested |= hit
        per_interval.append(np.flatnonzero(hit).tolist())

    def row(mask) -> MetricsRow:
        n = int(loaded[mask].sum())
        return MetricsRow(
            vmt=math.fsum(vmt[mask]), vht=math.fsum(vht[mask]), vhd=math.fsum(vhd[mask]),
            avg_voc=float(voc_sum[mask].sum() / n) if n else 0.0,
            congested_length=math.fsum(network.length[mask & congested]),
            loaded_link_intervals=n)

    by_class = {c: row(network.fclass == c) for c in classes}
    total = row(np.ones(network.n_links, dtype=bool))
    return MetricsReport(by_class, total, per_interval, congestion_threshold)


def vehicle_hours(results: Sequence[IntervalResult]) -> float:
    """Total travel time in vehicle-hours: sum of flow x cost x interval duration."""
    return math.fsum(float(np.dot(r.link_flows, r.link_costs)) / 60.0 * r.minutes / 60.0 for r in results)


def rate_travel_time(results: Sequence[IntervalResult]) -> float:
    """Sum over intervals and links of flow rate x travel time / 60, ignoring duration."""
    return math.fsum(float(np.dot(r.link_flows, r.link_costs)) / 60.0 for r in results)
