"""Shortest paths with a preprocess / customize / query lifecycle.

Topology is processed once per network (:func:`preprocess`), link weights are
installed per Frank-Wolfe iteration (:meth:`RoutingIndex.customize`) and then
any number of read-only queries run against that weight generation.

Queries are answered from destination trees: one reverse label-setting pass
from the destination ``q`` gives every node's distance to ``q``; a node's
next hop is the lowest-id outgoing link that is tight (``cost + dist[head] ==
dist[tail]``). Following next hops from ``p`` yields the minimum-cost path
whose link-id sequence is lexicographically smallest.
"""
from __future__ import annotations

import heapq
import os
import threading
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import StructuralError, Unreachable
from .network import Network

BACKENDS = ("scipy", "reference")


def default_backend() -> str:
    backend = os.environ.get("QDTA_ROUTER", "scipy")
    if backend not in BACKENDS:
        raise ValueError(f"QDTA_ROUTER must be one of {BACKENDS}, got {backend!r}")
    return backend


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]
    links: tuple[int, ...]
    total_cost: float

    @property
    def origin(self) -> int:
        return self.nodes[0]

    @property
    def destination(self) -> int:
        return self.nodes[-1]


class DestinationTree:
    """All shortest paths into one destination under one weight generation."""

    def __init__(self, index: RoutingIndex, destination: int, dist: np.ndarray):
        net = index.network
        costs = index.costs
        self.destination = destination
        self.generation = index.generation
        self.costs = costs
        self.dist = dist
        self._network = net

        out = net._out_links
        tails = net.tail[out]
        with np.errstate(invalid="ignore"):
            tight = np.isfinite(dist[tails]) & (costs[out] + dist[net.head[out]] == dist[tails])
        idx = np.flatnonzero(tight)
        t = tails[idx]
        first = np.ones(len(idx), dtype=bool)
        first[1:] = t[1:] != t[:-1]
        nxt = np.full(net.n_nodes, -1, dtype=np.int64)
        nxt[t[first]] = out[idx[first]]
        nxt[destination] = -1
        self.next_link = nxt

    def reachable(self, origins) -> np.ndarray:
        return np.isfinite(self.dist[np.asarray(origins, dtype=np.int64)])

    def route_matrix(self, origins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Walk all ``origins`` to the destination at once.

        Returns a ``(max_len, len(origins))`` link-id matrix padded with -1 and
        the per-origin path lengths. Origins must be reachable.
        """
        origins = np.asarray(origins, dtype=np.int64)
        head = self._network.head
        q = self.destination
        cur = origins.copy()
        active = np.flatnonzero(cur != q)
        steps = []
        limit = self._network.n_nodes
        while active.size:
            nl = self.next_link[cur[active]]
            if np.any(nl < 0):
                raise Unreachable(int(origins[active[np.argmax(nl < 0)]]), q)
            row = np.full(len(origins), -1, dtype=np.int64)
            row[active] = nl
            steps.append(row)
            cur[active] = head[nl]
            active = active[cur[active] != q]
            if len(steps) > limit:
                raise RuntimeError("next-hop walk did not terminate; inconsistent distances")
        if steps:
            mat = np.vstack(steps)
        else:
            mat = np.empty((0, len(origins)), dtype=np.int64)
        lengths = (mat >= 0).sum(axis=0)
        return mat, lengths

    def path(self, origin: int) -> Path:
        q = self.destination
        if origin == q:
            return Path((origin,), (), 0.0)
        if not np.isfinite(self.dist[origin]):
            raise Unreachable(origin, q)
        nodes = [origin]
        links = []
        total = 0.0
        node = origin
        while node != q:
            a = int(self.next_link[node])
            links.append(a)
            total += float(self.costs[a])
            node = int(self._network.head[a])
            nodes.append(node)
        return Path(tuple(nodes), tuple(links), total)


class RoutingIndex:
    """Routing structure for one network; see module docstring for the lifecycle.

    ``customize`` must not run while queries are in flight. Trees are cached
    per destination for the current generation and discarded on the next
    customization.
    """

    def __init__(self, network: Network, backend: str | None = None):
        self.network = network
        self.backend = backend or default_backend()
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown router backend {self.backend!r}")
        n = network.n_nodes
        # reverse graph rows=head, cols=tail; parallel links collapse to their min weight
        key = network.head * n + network.tail
        self._order = np.argsort(key, kind="stable")
        sorted_key = key[self._order]
        starts = np.flatnonzero(np.r_[True, sorted_key[1:] != sorted_key[:-1]]) if len(key) else np.array([], dtype=np.int64)
        self._group_starts = starts
        pair_key = sorted_key[starts]
        rows = pair_key // n if n else pair_key
        self._cols = (pair_key % n).astype(np.int32) if n else pair_key.astype(np.int32)
        self._indptr = np.searchsorted(rows, np.arange(n + 1)).astype(np.int32)
        self._incoming = None
        self.generation = 0
        self.costs: np.ndarray | None = None
        self._reverse = None
        self._trees: dict[int, DestinationTree] = {}
        self._lock = threading.Lock()

    def customize(self, costs) -> RoutingIndex:
        costs = np.array(costs, dtype=float)
        if costs.shape != (self.network.n_links,):
            raise StructuralError(f"expected {self.network.n_links} link costs, got shape {costs.shape}")
        if not np.all(np.isfinite(costs)) or np.any(costs <= 0):
            raise ValueError("link costs must be finite and strictly positive")
        costs.flags.writeable = False
        if len(costs):
            weights = np.minimum.reduceat(costs[self._order], self._group_starts)
        else:
            weights = np.empty(0)
        n = self.network.n_nodes
        self._reverse = csr_matrix((weights, self._cols, self._indptr), shape=(n, n))
        self.costs = costs
        self._trees = {}
        self.generation += 1
        return self

    def _require_customized(self):
        if self.costs is None:
            raise RuntimeError("routing index has no weights; call customize() first")

    def _distances_to(self, destinations: list[int]) -> np.ndarray:
        if self.backend == "reference":
            if self._incoming is None:
                self._incoming = _incoming_lists(self.network)
            return np.vstack([_reverse_label_setting(self.network, self._incoming, self.costs, q)
                              for q in destinations])
        dist = dijkstra(self._reverse, directed=True, indices=destinations)
        return np.atleast_2d(dist)

    def compute_trees(self, destinations) -> Iterator[DestinationTree]:
        """Yield a fresh tree per destination in sorted order, without caching."""
        self._require_customized()
        wanted = sorted({int(q) for q in destinations})
        for start in range(0, len(wanted), 64):
            batch = wanted[start:start + 64]
            for q, dist in zip(batch, self._distances_to(batch)):
                yield DestinationTree(self, q, dist)

    def trees(self, destinations) -> dict[int, DestinationTree]:
        """Destination trees for ``destinations``, cached for this generation."""
        self._require_customized()
        generation = self.generation
        missing = [int(q) for q in destinations if int(q) not in self._trees]
        fresh = {tree.destination: tree for tree in self.compute_trees(missing)}
        with self._lock:
            if self.generation == generation:
                self._trees.update(fresh)
            cache = dict(self._trees)
        cache.update(fresh)
        return {int(q): cache[int(q)] for q in destinations}

    def tree(self, destination: int) -> DestinationTree:
        return self.trees([destination])[int(destination)]

    def query(self, p: int, q: int) -> Path:
        """Minimum-cost path from ``p`` to ``q``; raises :class:`Unreachable`."""
        self._require_customized()
        if p == q:
            return Path((p,), (), 0.0)
        return self.tree(q).path(p)


def preprocess(network: Network, backend: str | None = None) -> RoutingIndex:
    return RoutingIndex(network, backend)


def customize(index: RoutingIndex, costs) -> RoutingIndex:
    return index.customize(costs)


def query(index: RoutingIndex, p: int, q: int) -> Path:
    return index.query(p, q)


def _incoming_lists(network: Network) -> list[list[int]]:
    incoming: list[list[int]] = [[] for _ in range(network.n_nodes)]
    for a in range(network.n_links):
        incoming[int(network.head[a])].append(a)
    return incoming


def _reverse_label_setting(network: Network, incoming, costs: np.ndarray, destination: int) -> np.ndarray:
    """Distances to ``destination`` via a plain binary-heap label-setting pass."""
    n = network.n_nodes
    dist = [float("inf")] * n
    dist[destination] = 0.0
    done = [False] * n
    heap = [(0.0, destination)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for a in incoming[v]:
            u = int(network.tail[a])
            nd = d + float(costs[a])
            if nd < dist[u]:
                dist[u] = nd
                heapq.heappush(heap, (nd, u))
    return np.array(dist)


def label_setting_path(network: Network, costs, origin: int, destination: int) -> Path:
    """Reference forward label-setting search, independent of :class:`RoutingIndex`."""
    costs = np.asarray(costs, dtype=float)
    if origin == destination:
        return Path((origin,), (), 0.0)
    dist = {origin: 0.0}
    pred: dict[int, int] = {}
    done = set()
    heap = [(0.0, origin)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == destination:
            break
        for a in network.out_links(u):
            v = int(network.head[a])
            nd = d + float(costs[a])
            if nd < dist.get(v, float("inf")):
                dist[v] = nd
                pred[v] = int(a)
                heapq.heappush(heap, (nd, v))
    if destination not in done:
        raise Unreachable(origin, destination)
    links = []
    node = destination
    while node != origin:
        a = pred[node]
        links.append(a)
        node = int(network.tail[a])
    links.reverse()
    nodes = [origin] + [int(network.head[a]) for a in links]
    return Path(tuple(nodes), tuple(links), dist[destination])
