"""Per-interval user-equilibrium assignment by Frank-Wolfe.

Each gradient step is an all-or-nothing loading of truncated shortest paths,
computed by workers that each own a slice of the OD pairs. Their local link
flows are all-reduced into the global flows; the step size comes either from
a Newton line search on the potential (second derivatives by finite
differences, probes reduced over link slices) or from a fixed schedule.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .demand import DemandMatrix, DemandPartition
from .errors import ConfigError, SolverError
from .loading import LINK_DTYPE, PathFlowMap, PathKey, retruncate_paths, truncate_many
from .network import Network, total_cost, update_costs
from .parallel import WorkerPool, all_reduce_sum, make_pool, partition_links
from .router import RoutingIndex, preprocess

log = logging.getLogger(__name__)

LINE_SEARCH = "line-search"
MSA = "msa"


@dataclass(frozen=True)
class StepSizeStrategy:
    kind: str = LINE_SEARCH
    max_iters: int = 20          # L
    slope_tol: float = 1e-4      # T1
    step_tol: float = 1e-4       # T2
    probe_width: float = 1e-4    # finite-difference spacing

    def __post_init__(self):
        if self.kind not in (LINE_SEARCH, MSA):
            raise ConfigError(f"unknown step-size strategy {self.kind!r}")
        if self.max_iters < 1 or self.slope_tol <= 0 or self.step_tol <= 0:
            raise ConfigError("line search needs max_iters >= 1 and positive thresholds")
        if not 0 < self.probe_width < 0.25:
            raise ConfigError("probe width must be in (0, 0.25)")


@dataclass
class TraceRow:
    interval: int | None
    iteration: int
    alpha: float
    potential: float
    rel_change: float
    ls_iters: int


@dataclass
class FwResult:
    link_flows: np.ndarray
    costs: np.ndarray
    iterations: int
    converged: bool
    potential_trace: list[float]
    trace: list[TraceRow]
    path_flows: list[PathFlowMap] = field(default_factory=list)
    unroutable: list[tuple[int, int, float]] = field(default_factory=list)
    stalled: int = 0

    @property
    def ls_iterations(self) -> int:
        return sum(r.ls_iters for r in self.trace)


def msa_step(fw_iteration: int) -> float:
    if fw_iteration < 0:
        raise ValueError("iteration index must be >= 0")
    return 2.0 / (2.0 + fw_iteration)


def converged(potential_prev: float, potential_new: float, tol: float = 1e-4) -> bool:
    """Relative change of the potential below ``tol``."""
    if not (math.isfinite(potential_prev) and math.isfinite(potential_new)):
        raise SolverError(f"non-finite potential ({potential_prev}, {potential_new})")
    if potential_prev == potential_new:
        return True
    if potential_prev <= 0:
        return False
    return abs((potential_prev - potential_new) / potential_prev) < tol


# ---------------------------------------------------------------- line search

def partial_potentials(network: Network, f, f_aon, points, links: slice = slice(None),
                       weights=None) -> np.ndarray:
    """Potential of ``links`` at each step in ``points``, summed over those links.

    With ``weights`` (one row of coefficients per output, one column per
    point) each row's combination of the point values is formed link by link
    before summing. Finite-difference stencils then cancel per link instead of
    after the reduction, which keeps the derivatives accurate and independent
    of how links are split among workers.
    """
    f = np.asarray(f)[links]
    g = np.asarray(f_aon)[links]
    values = [network.potentials_slice((1.0 - x) * f + x * g, links) for x in points]
    if weights is None:
        return np.array([np.sum(v) for v in values])
    out = np.empty(len(weights))
    for r, row in enumerate(weights):
        combo = row[0] * values[0]
        for w, v in zip(row[1:], values[1:]):
            combo = combo + w * v
        out[r] = np.sum(combo)
    return out


# rows: value, first difference, second difference (scaled by 1/(2 dx) and 1/dx^2 afterwards)
STENCILS = {
    "central": ((0.0, 1.0, 0.0), (-1.0, 0.0, 1.0), (1.0, -2.0, 1.0)),
    "forward": ((1.0, 0.0, 0.0), (-3.0, 4.0, -1.0), (1.0, -2.0, 1.0)),
    "backward": ((0.0, 0.0, 1.0), (1.0, -4.0, 3.0), (1.0, -2.0, 1.0)),
}


def _stencil(x: float, dx: float) -> tuple[str, tuple[float, float, float]]:
    if x - dx < 0.0:
        return "forward", (x, x + dx, x + 2 * dx)
    if x + dx > 1.0:
        return "backward", (x - 2 * dx, x - dx, x)
    return "central", (x - dx, x, x + dx)


Evaluator = Callable[..., np.ndarray]  # evaluate(points, weights=None)


def local_evaluator(network: Network, f, f_aon, workers: int = 1) -> Evaluator:
    parts = partition_links(network.n_links, workers)

    def evaluate(points, weights=None):
        return all_reduce_sum([partial_potentials(network, f, f_aon, points, p.slice, weights)
                               for p in parts])
    return evaluate


def cost_probe(network: Network, f, f_aon, x: float, dx: float = 1e-4,
               evaluate: Evaluator | None = None, workers: int = 1) -> tuple[float, float, float]:
    """``C(x)``, ``C'(x)``, ``C''(x)`` along ``f + x (f_aon - f)`` from one batched reduction.

    Probes never leave ``[0, 1]``; near an end the stencil becomes one-sided.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("step must lie in [0, 1]")
    if evaluate is None:
        evaluate = local_evaluator(network, f, f_aon, workers)
    kind, points = _stencil(x, dx)
    value, first, second = evaluate(points, STENCILS[kind])
    return float(value), float(first / (2 * dx)), float(second / dx ** 2)


@dataclass
class LineSearchResult:
    alpha: float
    iterations: int


def _bisect_slope(evaluate: Evaluator, dx: float, tol: float) -> float:
    lo, hi = 0.0, 1.0
    if cost_probe(None, None, None, 1.0, dx, evaluate)[1] <= 0:
        return 1.0
    for _ in range(64):
        if hi - lo < tol:
            break
        mid = 0.5 * (lo + hi)
        if cost_probe(None, None, None, mid, dx, evaluate)[1] > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def line_search(network: Network | None, f, f_aon, fw_iteration: int,
                strategy: StepSizeStrategy = StepSizeStrategy(),
                evaluate: Evaluator | None = None) -> LineSearchResult:
    """Newton iteration for the step minimizing the potential on ``[0, 1]``.

    Starts from ``2 / (2 + fw_iteration)`` and stops once the slope magnitude
    drops below ``slope_tol``, the update is smaller than ``step_tol`` or
    ``max_iters`` probes were spent. The result is never worse than the better
    segment end.
    """
    if evaluate is None:
        evaluate = local_evaluator(network, f, f_aon)
    dx = strategy.probe_width
    alpha = msa_step(fw_iteration)
    iters = 0
    for iters in range(1, strategy.max_iters + 1):
        _, slope, curvature = cost_probe(network, f, f_aon, alpha, dx, evaluate)
        if abs(slope) < strategy.slope_tol:
            break
        if not (curvature > 0 and math.isfinite(curvature)):
            alpha = _bisect_slope(evaluate, dx, strategy.step_tol)
            break
        new = min(1.0, max(0.0, alpha - slope / curvature))
        if abs(new - alpha) < strategy.step_tol:
            alpha = new
            break
        alpha = new
    c0, ca, c1 = evaluate((0.0, alpha, 1.0))
    if c0 < ca and c0 <= c1:
        alpha = 0.0
    elif c1 < ca:
        alpha = 1.0
    return LineSearchResult(alpha, iters)


# ------------------------------------------------------------ all-or-nothing

@dataclass
class AonReport:
    unroutable: list[tuple[int, int, float]] = field(default_factory=list)
    stalled: int = 0


def load_all_or_nothing(network: Network, index: RoutingIndex, interval_minutes: float | None,
                        demand: DemandMatrix, interval: int | None = None
                        ) -> tuple[PathFlowMap, np.ndarray, AonReport]:
    """Route every OD entry on its current shortest path, truncate, and load it.

    Uses whatever weights ``index`` was last customized with.
    """
    costs = index.costs
    paths = PathFlowMap(interval=interval)
    report = AonReport()
    by_dest: dict[int, list[tuple[int, float]]] = defaultdict(list)
    for (p, q), rate in demand.items():
        by_dest[q].append((p, rate))
    ids = []
    weights = []
    for tree in index.compute_trees(by_dest):
        q = tree.destination
        entries = by_dest[q]
        origins = np.array([p for p, _ in entries], dtype=np.int64)
        rates = np.array([r for _, r in entries])
        ok = tree.reachable(origins)
        if not ok.all():
            report.unroutable.extend((int(p), q, float(r)) for p, r in zip(origins[~ok], rates[~ok]))
            origins, rates = origins[ok], rates[ok]
        if len(origins) == 0:
            continue
        mat, lengths = tree.route_matrix(origins)
        kept = truncate_many(mat, lengths, costs, interval_minutes)
        if interval_minutes is not None and mat.shape[0]:
            report.stalled += int(np.count_nonzero(costs[mat[0]] > interval_minutes))
        loaded = np.arange(mat.shape[0])[:, None] < kept[None, :]
        ids.append(mat[loaded])
        weights.append(np.broadcast_to(rates, mat.shape)[loaded])
        stored = lengths
        if interval_minutes is not None:
            # costs never drop below free flow, so no re-truncation keeps more than this
            stored = np.minimum(lengths, truncate_many(mat, lengths, network.free_flow_time,
                                                       interval_minutes) + 1)
        cols = np.ascontiguousarray(mat.T, dtype=LINK_DTYPE)
        for i in range(len(origins)):
            key = PathKey(int(origins[i]), q, cols[i, :stored[i]].tobytes(), int(kept[i]))
            paths.add(key, float(rates[i]))
    if ids:
        flows = np.bincount(np.concatenate(ids), weights=np.concatenate(weights),
                            minlength=network.n_links).astype(float)
    else:
        flows = np.zeros(network.n_links)
    return paths, flows, report


def all_or_nothing(network: Network, index: RoutingIndex, interval_minutes: float | None,
                   demand: DemandPartition | DemandMatrix, costs) -> tuple[PathFlowMap, np.ndarray]:
    """Customize ``index`` with ``costs`` and load ``demand``; returns local path and link flows."""
    index.customize(costs)
    entries = demand.entries if isinstance(demand, DemandPartition) else demand
    paths, flows, _ = load_all_or_nothing(network, index, interval_minutes, entries)
    return paths, flows


class RoutingWorker:
    """State owned by one worker: its OD slice, its path flows, its link slice."""

    def __init__(self, k: int, network: Network, workers: int, router_backend: str | None = None,
                 index: RoutingIndex | None = None):
        self.k = k
        self.network = network
        self.links = partition_links(network.n_links, workers)[k]
        self.index = index if index is not None else preprocess(network, router_backend)
        self.demand = DemandMatrix()
        self.interval_minutes: float | None = None
        self.interval: int | None = None
        self.paths = PathFlowMap()
        self.aon_paths = PathFlowMap()
        self.best_paths = self.paths
        self._f = self._f_aon = None

    def load(self, demand: DemandMatrix, interval_minutes: float | None, interval: int | None):
        self.demand = demand
        self.interval_minutes = interval_minutes
        self.interval = interval
        self.paths = PathFlowMap(interval=interval)
        self.aon_paths = PathFlowMap(interval=interval)
        self.best_paths = self.paths

    def customize(self, costs):
        self.index.customize(costs)

    def all_or_nothing(self, initial: bool = False):
        paths, flows, report = load_all_or_nothing(self.network, self.index, self.interval_minutes,
                                                   self.demand, self.interval)
        self.aon_paths = paths
        if initial:
            self.paths = self.best_paths = paths
        return flows, report

    def set_direction(self, f, f_aon):
        self._f, self._f_aon = f, f_aon

    def probe(self, points, weights=None):
        return partial_potentials(self.network, self._f, self._f_aon, points, self.links.slice, weights)

    def blend(self, step: float):
        self.paths = self.paths.blend(self.aon_paths, step)
        self.aon_paths = PathFlowMap(interval=self.interval)

    def mark_best(self):
        # blend never mutates, so a reference is a snapshot
        self.best_paths = self.paths

    def restore_best(self):
        self.paths = self.best_paths

    def path_flows(self) -> PathFlowMap:
        return self.paths

    def residual(self, costs) -> tuple[PathFlowMap, DemandMatrix]:
        """Re-truncate this worker's paths at ``costs``; collect what is left to travel."""
        truncated, left = retruncate_paths(self.network, self.paths, costs, self.interval_minutes)
        return truncated, DemandMatrix(left)


def routing_pool(network: Network, workers: int, backend: str | None = None,
                 router_backend: str | None = None, index: RoutingIndex | None = None) -> WorkerPool:
    """Pool of :class:`RoutingWorker`; in-process backends share one routing index."""
    def shared():
        return (index if index is not None else preprocess(network, router_backend),)
    return make_pool(RoutingWorker, workers, (network, workers, router_backend), backend, shared)


def frank_wolfe(network: Network, index: RoutingIndex | None, interval_minutes: float | None,
                partitions: Sequence[DemandPartition], strategy: StepSizeStrategy = StepSizeStrategy(),
                tol: float = 1e-4, max_iters: int = 200, interval: int | None = None,
                pool: WorkerPool | None = None, collect_paths: bool = True) -> FwResult:
    """Equilibrate one interval's demand, given as per-worker partitions.

    On convergence the flows from before the final (negligible) step are
    returned, together with each worker's path flows when ``collect_paths``.
    Hitting ``max_iters`` returns the lowest-potential iterate seen, flagged
    unconverged.
    """
    own_pool = pool is None
    if own_pool:
        pool = routing_pool(network, len(partitions), backend="serial", index=index)
    if pool.size != len(partitions):
        raise ConfigError("one demand partition per worker is required")
    try:
        pool.map("load", [(p.entries,) for p in partitions], interval_minutes, interval)
        pool.run_exclusive("customize", network.free_flow_time)
        local = pool.map("all_or_nothing", None, True)
        f = all_reduce_sum([flows for flows, _ in local])
        unroutable = [u for _, rep in local for u in rep.unroutable]
        stalled = sum(rep.stalled for _, rep in local)
        with np.errstate(over="ignore"):
            potential = total_cost(network, f)
        if not math.isfinite(potential):
            raise SolverError("potential overflows at the initial loading")
        trace_pot = [potential]
        best_f, best_potential = f, potential
        rows: list[TraceRow] = []
        done = False
        j = 0
        while j < max_iters:
            costs = update_costs(network, f)
            pool.run_exclusive("customize", costs)
            f_aon = all_reduce_sum([flows for flows, _ in pool.map("all_or_nothing")])
            if strategy.kind == MSA:
                step, ls_iters = msa_step(j), 0
            else:
                pool.map("set_direction", None, f, f_aon)
                res = line_search(network, f, f_aon, j, strategy,
                                  evaluate=lambda pts, w=None: pool.all_reduce("probe", None, tuple(pts), w))
                step, ls_iters = res.alpha, res.iterations
            f_new = (1.0 - step) * f + step * f_aon
            potential_new = total_cost(network, f_new)
            rel = abs(potential - potential_new) / potential if potential > 0 else 0.0
            rows.append(TraceRow(interval, j, step, potential_new, rel, ls_iters))
            trace_pot.append(potential_new)
            j += 1
            if converged(potential, potential_new, tol):
                done = True
                break
            pool.map("blend", None, step)
            f, potential = f_new, potential_new
            if potential <= best_potential:
                best_f, best_potential = f, potential
                pool.map("mark_best")
        if not done:
            log.warning("interval %s: Frank-Wolfe stopped at the %d-iteration cap", interval, max_iters)
            if best_f is not f:
                f = best_f
                pool.map("restore_best")
        paths = pool.map("path_flows") if collect_paths else []
        return FwResult(f, update_costs(network, f), j, done, trace_pot, rows, paths, unroutable, stalled)
    finally:
        if own_pool:
            pool.close()
