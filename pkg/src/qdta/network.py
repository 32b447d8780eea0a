"""Road network, BPR link travel time and the link potential (its integral)."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import StructuralError

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.15
DEFAULT_BETA = 4.0

NETWORK_HEADER = ["link_id", "tail", "head", "capacity_vph", "free_flow_min", "length_mi", "fclass"]


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    capacity: float
    free_flow_time: float
    length: float = 0.0
    functional_class: int = 0

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError(f"link {self.id}: capacity must be positive")
        if self.free_flow_time <= 0:
            raise ValueError(f"link {self.id}: free-flow time must be positive")
        if self.length < 0:
            raise ValueError(f"link {self.id}: negative length")
        if self.tail == self.head:
            raise ValueError(f"link {self.id}: self loop at node {self.tail}")


def _check_flow(flow):
    if np.any(np.asarray(flow) < 0):
        raise ValueError("flow must be nonnegative")


def bpr_travel_time(link: Link, flow: float, alpha: float = DEFAULT_ALPHA,
                    beta: float = DEFAULT_BETA) -> float:
    """Travel time in minutes on ``link`` carrying ``flow`` vehicles/hour."""
    _check_flow(flow)
    return link.free_flow_time * (1.0 + alpha * (flow / link.capacity) ** beta)


def link_potential(link: Link, flow: float, alpha: float = DEFAULT_ALPHA,
                   beta: float = DEFAULT_BETA) -> float:
    """Closed-form integral of :func:`bpr_travel_time` from 0 to ``flow``."""
    _check_flow(flow)
    return link.free_flow_time * flow * (1.0 + alpha / (beta + 1.0) * (flow / link.capacity) ** beta)


@dataclass
class ConnectivityReport:
    components: int
    isolated_nodes: list[int] = field(default_factory=list)

    @property
    def weakly_connected(self) -> bool:
        return self.components <= 1


class Network:
    """Directed road graph with per-link attributes stored as dense arrays.

    Node ids are dense integers in ``[0, n_nodes)``; link ids are the row
    positions ``0..n_links-1``. Instances are treated as immutable and are
    shared read-only between workers.
    """

    def __init__(self, links: list[Link], n_nodes: int | None = None,
                 alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA):
        if alpha <= 0 or beta < 1:
            raise ValueError("BPR parameters need alpha > 0 and beta >= 1")
        for pos, link in enumerate(links):
            if link.id != pos:
                raise StructuralError(f"link ids must be dense and ordered; got {link.id} at position {pos}")
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.tail = np.array([l.tail for l in links], dtype=np.int64)
        self.head = np.array([l.head for l in links], dtype=np.int64)
        self.capacity = np.array([l.capacity for l in links], dtype=float)
        self.free_flow_time = np.array([l.free_flow_time for l in links], dtype=float)
        self.length = np.array([l.length for l in links], dtype=float)
        self.fclass = np.array([l.functional_class for l in links], dtype=np.int64)

        max_node = int(max(self.tail.max(initial=-1), self.head.max(initial=-1)))
        if n_nodes is None:
            n_nodes = max_node + 1
        if min(self.tail.min(initial=0), self.head.min(initial=0)) < 0 or max_node >= n_nodes:
            raise StructuralError("link endpoint outside the node range")
        self.n_nodes = int(n_nodes)

        order = np.lexsort((np.arange(self.n_links), self.tail))
        self._out_ptr = np.searchsorted(self.tail[order], np.arange(self.n_nodes + 1))
        self._out_links = order
        for arr in (self.tail, self.head, self.capacity, self.free_flow_time,
                    self.length, self.fclass, self._out_ptr, self._out_links):
            arr.flags.writeable = False

    @property
    def n_links(self) -> int:
        return len(self.tail)

    @property
    def nodes(self) -> range:
        return range(self.n_nodes)

    def link(self, a: int) -> Link:
        return Link(int(a), int(self.tail[a]), int(self.head[a]), float(self.capacity[a]),
                    float(self.free_flow_time[a]), float(self.length[a]), int(self.fclass[a]))

    @property
    def links(self) -> list[Link]:
        return [self.link(a) for a in range(self.n_links)]

    def out_links(self, node: int) -> np.ndarray:
        """Outgoing link ids of ``node`` in increasing id order."""
        return self._out_links[self._out_ptr[node]:self._out_ptr[node + 1]]

    def connectivity(self) -> ConnectivityReport:
        n = self.n_nodes
        touched = np.zeros(n, dtype=bool)
        touched[self.tail] = True
        touched[self.head] = True
        isolated = np.flatnonzero(~touched).tolist()
        if self.n_links == 0:
            return ConnectivityReport(0, isolated)
        adj = coo_matrix((np.ones(self.n_links), (self.tail, self.head)), shape=(n, n)).tocsr()
        _, labels = connected_components(adj, directed=True, connection="weak")
        components = len(np.unique(labels[touched]))
        return ConnectivityReport(components, isolated)

    def validate(self) -> ConnectivityReport:
        report = self.connectivity()
        if not report.weakly_connected:
            log.warning("network has %d weakly connected components", report.components)
        return report

    # vectorized link functions

    def _flows(self, flows) -> np.ndarray:
        flows = np.asarray(flows, dtype=float)
        if flows.shape != (self.n_links,):
            raise StructuralError(f"expected {self.n_links} link flows, got shape {flows.shape}")
        _check_flow(flows)
        return flows

    def travel_times(self, flows, links: slice = slice(None)) -> np.ndarray:
        f = self._flows(flows)[links]
        return self.free_flow_time[links] * (1.0 + self.alpha * (f / self.capacity[links]) ** self.beta)

    def potentials(self, flows, links: slice = slice(None)) -> np.ndarray:
        return self.potentials_slice(self._flows(flows)[links], links)

    def potentials_slice(self, flows, links: slice) -> np.ndarray:
        """Link potentials for ``flows`` given only on the ``links`` slice."""
        f = np.asarray(flows, dtype=float)
        _check_flow(f)
        ratio = (f / self.capacity[links]) ** self.beta
        return self.free_flow_time[links] * f * (1.0 + self.alpha / (self.beta + 1.0) * ratio)

    def zero_flows(self) -> np.ndarray:
        return np.zeros(self.n_links)


def update_costs(network: Network, flows) -> np.ndarray:
    """Per-link BPR travel times (the cost vector) for ``flows``."""
    return network.travel_times(flows)


def total_cost(network: Network, flows) -> float:
    """Sum of link potentials; the objective minimized by the equilibrium."""
    return float(np.sum(network.potentials(flows)))


def read_network_csv(path, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                     n_nodes: int | None = None) -> Network:
    path = Path(path)
    links = []
    with path.open(newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != NETWORK_HEADER:
            raise StructuralError(f"{path}:1: expected header {','.join(NETWORK_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                link_id, tail, head, cap, fft, length, fclass = row
                links.append(Link(int(link_id), int(tail), int(head), float(cap), float(fft),
                                  float(length) if length.strip() else 0.0,
                                  int(fclass) if fclass.strip() else 0))
            except ValueError as exc:
                raise StructuralError(f"{path}:{lineno}: {exc}") from exc
    links.sort(key=lambda l: l.id)
    return Network(links, n_nodes=n_nodes, alpha=alpha, beta=beta)


def write_network_csv(network: Network, path) -> None:
    with Path(path).open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(NETWORK_HEADER)
        for link in network.links:
            writer.writerow([link.id, link.tail, link.head, repr(link.capacity),
                             repr(link.free_flow_time), repr(link.length), link.functional_class])
