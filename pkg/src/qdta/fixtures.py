"""Deterministic synthetic networks and trip tables.

``serial small`` is the 5-node example network (node labels 1..5; node 0 is an
unused placeholder so labels can be used as dense ids). ``grid RxC`` is a
bidirectional lattice and ``random N`` a strongly connected random digraph;
both get seeded random attributes and zone-to-zone trips.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .demand import TripRecord, write_trips_csv
from .errors import ConfigError
from .network import Link, Network, write_network_csv
from .router import preprocess

KINDS = ("serial", "grid", "random")

# capacity (v/h) and speed (mph) per functional class, 1 = freeway ... 5 = local
CLASS_CAPACITY = {1: 1800.0, 2: 1200.0, 3: 900.0, 4: 600.0, 5: 400.0}
CLASS_SPEED = {1: 60.0, 2: 45.0, 3: 35.0, 4: 30.0, 5: 25.0}


@dataclass
class Fixture:
    network: Network
    trips: list[TripRecord]
    interval_minutes: float
    intervals: int

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"network": out / "network.csv", "trips": out / "trips.csv",
                 "config": out / "scenario.cfg"}
        write_network_csv(self.network, paths["network"])
        write_trips_csv(self.trips, paths["trips"])
        paths["config"].write_text(f"interval_min = {self.interval_minutes!r}\n"
                                   f"intervals = {self.intervals}\n")
        return paths


def serial_example() -> Fixture:
    """The 4-link serial corridor with trips 1->4 at t=0 and 3->5 at t=15."""
    links = [
        Link(0, 1, 2, 200.0, 10.0, 10.0 / 60 * 30, 3),
        Link(1, 2, 3, 150.0, 5.0, 5.0 / 60 * 30, 3),
        Link(2, 3, 4, 200.0, 10.0, 10.0 / 60 * 30, 3),
        Link(3, 4, 5, 200.0, 10.0, 10.0 / 60 * 30, 3),
    ]
    # 175 v/h and 50 v/h sustained over one 15-minute interval
    trips = [TripRecord(1, 4, 0.0, 43.75), TripRecord(3, 5, 15.0, 12.5)]
    return Fixture(Network(links, n_nodes=6), trips, 15.0, 4)


def _attributes(rng, fclass: np.ndarray):
    fclass = np.asarray(fclass)
    speed = np.array([CLASS_SPEED[c] for c in fclass])
    capacity = np.array([CLASS_CAPACITY[c] for c in fclass])
    length = np.round(rng.uniform(0.2, 1.0, len(fclass)), 4)
    fft = length / speed * 60.0
    return capacity, fft, length


def _build(tails, heads, fclass, rng, n_nodes) -> Network:
    capacity, fft, length = _attributes(rng, fclass)
    links = [Link(a, int(t), int(h), float(capacity[a]), float(fft[a]), float(length[a]), int(fclass[a]))
             for a, (t, h) in enumerate(zip(tails, heads))]
    return Network(links, n_nodes=n_nodes)


def grid_network(rows: int, cols: int, rng: np.random.Generator) -> Network:
    """Bidirectional lattice; every fourth row and column is an arterial."""
    if rows < 2 or cols < 2:
        raise ConfigError("grid needs at least 2x2 nodes")
    node = np.arange(rows * cols).reshape(rows, cols)
    pairs = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                cls = 3 if r % 4 == 0 else 5
                pairs += [(node[r, c], node[r, c + 1], cls), (node[r, c + 1], node[r, c], cls)]
            if r + 1 < rows:
                cls = 3 if c % 4 == 0 else 5
                pairs += [(node[r, c], node[r + 1, c], cls), (node[r + 1, c], node[r, c], cls)]
    tails, heads, fclass = (np.array(x) for x in zip(*pairs))
    return _build(tails, heads, fclass, rng, rows * cols)


def random_network(n_nodes: int, rng: np.random.Generator, out_degree: float = 3.0) -> Network:
    """A directed ring (for strong connectivity) plus random chords without self loops."""
    if n_nodes < 3:
        raise ConfigError("random network needs at least 3 nodes")
    ring = np.arange(n_nodes)
    tails = [ring, (ring + 1) % n_nodes]
    heads = [(ring + 1) % n_nodes, ring]
    extra = int(max(0.0, out_degree - 2.0) * n_nodes)
    t = rng.integers(0, n_nodes, extra)
    h = (t + rng.integers(1, n_nodes, extra)) % n_nodes
    tails.append(t)
    heads.append(h)
    tails, heads = np.concatenate(tails), np.concatenate(heads)
    fclass = rng.choice([2, 3, 4, 5], size=len(tails), p=[0.1, 0.3, 0.3, 0.3])
    return _build(tails, heads, fclass, rng, n_nodes)


def zone_trips(network: Network, rng: np.random.Generator, n_trips: int, zones: int,
               interval_minutes: float, intervals: int, peak: bool = True,
               trip_minutes: float | None = None) -> list[TripRecord]:
    """Single-vehicle trips between randomly chosen zone nodes.

    With ``peak`` the departure times follow a triangular profile peaking at
    the middle of the horizon; otherwise they are uniform. Destinations are
    uniform over the other zones unless ``trip_minutes`` is given, in which
    case they are drawn with weight ``exp(-t / trip_minutes)`` on the
    free-flow zone-to-zone time ``t`` (a gravity-style distance decay).
    """
    zones = min(zones, network.n_nodes)
    zone_nodes = np.sort(rng.choice(network.n_nodes, size=zones, replace=False))
    o = rng.integers(0, zones, n_trips)
    if trip_minutes is None:
        d = (o + rng.integers(1, zones, n_trips)) % zones
    else:
        d = _gravity_destinations(network, zone_nodes, o, trip_minutes, rng)
    horizon = interval_minutes * intervals
    if peak:
        dep = rng.triangular(0.0, horizon / 2, horizon, n_trips)
    else:
        dep = rng.uniform(0.0, horizon, n_trips)
    dep = np.minimum(np.round(dep, 2), np.nextafter(horizon, 0))
    order = np.argsort(dep, kind="stable")
    return [TripRecord(int(zone_nodes[o[i]]), int(zone_nodes[d[i]]), float(dep[i])) for i in order]


def _gravity_destinations(network, zone_nodes, origins, trip_minutes, rng) -> np.ndarray:
    if not trip_minutes > 0:
        raise ConfigError("trip_minutes must be positive")
    index = preprocess(network).customize(network.free_flow_time)
    # times[i, j]: free-flow minutes from zone i to zone j
    times = np.column_stack([tree.dist[zone_nodes] for tree in index.compute_trees(zone_nodes)])
    weights = np.exp(-times / trip_minutes)
    np.fill_diagonal(weights, 0.0)
    d = np.empty_like(origins)
    for i in range(len(zone_nodes)):
        mask = origins == i
        total = weights[i].sum()
        if not total > 0:
            raise ConfigError(f"zone node {zone_nodes[i]} reaches no other zone")
        d[mask] = rng.choice(len(zone_nodes), size=int(mask.sum()), p=weights[i] / total)
    return d


def _grid_shape(size: str) -> tuple[int, int]:
    named = {"small": (8, 8), "medium": (20, 20), "large": (50, 50)}
    if size in named:
        return named[size]
    m = re.fullmatch(r"(\d+)\s*[xX×]\s*(\d+)", size)
    if not m:
        raise ConfigError(f"grid size must look like RxC, got {size!r}")
    return int(m.group(1)), int(m.group(2))


def _node_count(size: str) -> int:
    named = {"small": 50, "medium": 500, "large": 5000}
    if size in named:
        return named[size]
    if not size.isdigit():
        raise ConfigError(f"random size must be a node count, got {size!r}")
    return int(size)


def gen_fixture(kind: str, size: str = "small", seed: int = 0, trips: int | None = None,
                zones: int | None = None, interval_minutes: float = 15.0,
                intervals: int = 4, trip_minutes: float | None = None) -> Fixture:
    """Deterministic synthetic scenario; the same arguments give identical output."""
    if kind not in KINDS:
        raise ConfigError(f"fixture kind must be one of {KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "serial":
        if size != "small":
            raise ConfigError("serial fixtures only come in size 'small'")
        return serial_example()
    if kind == "grid":
        rows, cols = _grid_shape(size)
        network = grid_network(rows, cols, rng)
    else:
        network = random_network(_node_count(size), rng)
    zones = zones if zones is not None else max(4, min(300, network.n_nodes // 8))
    trips = trips if trips is not None else 4 * network.n_links
    return Fixture(network, zone_trips(network, rng, trips, zones, interval_minutes, intervals,
                                       trip_minutes=trip_minutes),
                   interval_minutes, intervals)


def congested_grid(seed: int = 7) -> Fixture:
    """Bundled desk-scale congested scenario: 10x10 grid, four 15-minute intervals."""
    return gen_fixture("grid", "10x10", seed=seed, trips=8000, zones=16)


def scaling_scenario(seed: int = 11, links: int = 100_000, trips: int = 500_000,
                     intervals: int = 8, zones: int = 300, trip_minutes: float | None = 20.0) -> Fixture:
    """Roughly ``links`` links on a square grid with ``trips`` single-vehicle trips.

    Destinations decay with free-flow time so trips stay metropolitan in
    length; uniform zone pairs on a grid this size mean trips of several
    hours whose residuals multiply the OD pairs every interval.
    """
    side = int(round((links / 4) ** 0.5)) + 1
    return gen_fixture("grid", f"{side}x{side}", seed=seed, trips=trips, zones=zones,
                       interval_minutes=15.0, intervals=intervals, trip_minutes=trip_minutes)
