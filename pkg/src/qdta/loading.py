"""Route truncation and the truncated path-to-link incidence mapping.

A route is loaded only up to the point a vehicle departing at the interval
start can reach before the interval ends: every link entered strictly before
``interval_minutes`` elapses is kept (including the one in progress when the
clock runs out) and the trip is parked at the head of the last kept link.
Entering the first link happens at time 0, so a trip always advances by at
least one link.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import ConfigError, StructuralError
from .router import Path

log = logging.getLogger(__name__)

LINK_DTYPE = np.int32


def _check_interval(interval_minutes):
    if interval_minutes is None or interval_minutes == math.inf:
        return math.inf
    if not interval_minutes > 0:
        raise ConfigError("interval length must be positive")
    return float(interval_minutes)


@dataclass(frozen=True)
class TruncatedPath:
    full_path: Path
    stop_node: int
    kept_links: tuple[int, ...]
    finished: bool


def kept_count(link_costs: Iterable[float], interval_minutes: float | None) -> int:
    """Number of leading links entered before ``interval_minutes`` elapses."""
    limit = _check_interval(interval_minutes)
    clock = 0.0
    kept = 0
    for c in link_costs:
        if not clock < limit:
            break
        clock += c
        kept += 1
    return kept


def truncate_path(path: Path, costs, interval_minutes: float | None) -> TruncatedPath:
    """Cut ``path`` at the node reached when the interval runs out.

    ``interval_minutes=None`` (or ``inf``) disables truncation.
    """
    costs = np.asarray(costs, dtype=float)
    link_costs = [float(costs[a]) for a in path.links]
    if any(c <= 0 for c in link_costs):
        raise ValueError("link costs must be positive")
    n = kept_count(link_costs, interval_minutes)
    if link_costs and link_costs[0] > _check_interval(interval_minutes):
        log.warning("interval shorter than first link of path from %d; advancing one link anyway",
                    path.origin)
    kept = path.links[:n]
    stop = path.nodes[n]
    return TruncatedPath(path, stop, kept, n == len(path.links))


def truncate_many(route_matrix: np.ndarray, lengths: np.ndarray, costs,
                  interval_minutes: float | None) -> np.ndarray:
    """Vectorized :func:`kept_count` for padded route columns (see ``DestinationTree.route_matrix``)."""
    limit = _check_interval(interval_minutes)
    lengths = np.asarray(lengths)
    if math.isinf(limit) or route_matrix.shape[0] == 0:
        return lengths.copy()
    costs = np.asarray(costs, dtype=float)
    valid = route_matrix >= 0
    c = np.where(valid, costs[np.maximum(route_matrix, 0)], 0.0)
    entered = np.zeros_like(c)
    np.cumsum(c[:-1], axis=0, out=entered[1:])
    return np.count_nonzero(valid & (entered < limit), axis=0)


class PathKey(NamedTuple):
    """Hashable identity of a (possibly truncated) path.

    ``route`` holds the route's link ids as packed int32 bytes and ``kept``
    how many leading links are loaded in the interval. Under truncation the
    assignment stores only one link past the farthest point reachable at
    free-flow times, which no congested re-truncation can pass; routes that
    agree up to there share a key.
    """
    origin: int
    destination: int
    route: bytes
    kept: int

    @property
    def links(self) -> np.ndarray:
        return np.frombuffer(self.route, dtype=LINK_DTYPE)

    @property
    def kept_links(self) -> np.ndarray:
        return self.links[:self.kept]

    @property
    def finished(self) -> bool:
        return self.kept * LINK_DTYPE().itemsize == len(self.route)

    @classmethod
    def from_links(cls, origin: int, destination: int, links, kept: int | None = None) -> PathKey:
        arr = np.asarray(links, dtype=LINK_DTYPE)
        return cls(int(origin), int(destination), arr.tobytes(), len(arr) if kept is None else int(kept))

    @classmethod
    def from_truncated(cls, tp: TruncatedPath) -> PathKey:
        return cls.from_links(tp.full_path.origin, tp.full_path.destination,
                              tp.full_path.links, len(tp.kept_links))

    def stop_node(self, network) -> int:
        if self.kept == 0:
            return self.origin
        return int(network.head[self.links[self.kept - 1]])

    def retruncated(self, kept: int) -> PathKey:
        return self._replace(kept=kept)


class PathFlowMap:
    """Sparse path flows (vehicles/hour) for one interval, keyed by :class:`PathKey`."""

    __slots__ = ("flows", "interval")

    def __init__(self, flows: dict[PathKey, float] | None = None, interval: int | None = None):
        self.flows: dict[PathKey, float] = {} if flows is None else flows
        self.interval = interval

    def add(self, key: PathKey, rate: float) -> None:
        if rate > 0:
            self.flows[key] = self.flows.get(key, 0.0) + rate

    def update(self, other: PathFlowMap) -> None:
        for key, rate in other.flows.items():
            self.add(key, rate)

    def blend(self, target: PathFlowMap, step: float) -> PathFlowMap:
        """Convex combination ``(1 - step) * self + step * target``."""
        keep = 1.0 - step
        out: dict[PathKey, float] = {}
        if keep > 0:
            for key, rate in self.flows.items():
                out[key] = keep * rate
        if step > 0:
            for key, rate in target.flows.items():
                out[key] = out.get(key, 0.0) + step * rate
        return PathFlowMap({k: v for k, v in out.items() if v > 0}, self.interval)

    def __len__(self):
        return len(self.flows)

    def __iter__(self) -> Iterator[PathKey]:
        return iter(self.flows)

    def items(self):
        return self.flows.items()

    def total(self) -> float:
        return math.fsum(self.flows.values())

    def link_flows(self, link_count: int) -> np.ndarray:
        return path_flows_to_link_flows(self, link_count)


def path_flows_to_link_flows(flows: PathFlowMap, link_count: int) -> np.ndarray:
    """Load each path's rate onto its kept links."""
    if not flows.flows:
        return np.zeros(link_count)
    segments = []
    weights = []
    for key, rate in flows.items():
        kept = key.kept_links
        segments.append(kept)
        weights.append(np.full(len(kept), rate))
    ids = np.concatenate(segments).astype(np.int64)
    if len(ids) and (ids.min() < 0 or ids.max() >= link_count):
        raise StructuralError("path references a link outside the network")
    return np.bincount(ids, weights=np.concatenate(weights), minlength=link_count)[:link_count].astype(float)


def retruncate_paths(network, paths: PathFlowMap, costs, interval_minutes: float | None
                     ) -> tuple[PathFlowMap, dict[tuple[int, int], float]]:
    """Truncate every path again at ``costs``.

    Returns the re-truncated path flows and, for each path that does not reach
    its destination, the rate left to travel keyed by (stop node, destination).
    """
    costs = np.asarray(costs, dtype=float)
    truncated = PathFlowMap(interval=paths.interval)
    left: dict[tuple[int, int], float] = {}
    head = network.head
    for key, rate in paths.items():
        links = key.links
        n = kept_count(costs[links].tolist(), interval_minutes)
        truncated.add(key.retruncated(n), rate)
        if n < len(links):
            od = (int(head[links[n - 1]]), key.destination)
            left[od] = left.get(od, 0.0) + rate
    return truncated, left
