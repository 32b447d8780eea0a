"""Origin-destination demand: trip binning, residual merging, worker partitions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import ConfigError, StructuralError

TRIPS_HEADER = ["origin", "destination", "departure_min", "count"]
RATES_HEADER = ["origin", "destination", "interval", "rate_vph"]
RESIDUAL_HEADER = ["origin", "destination", "rate_vph"]

OD = tuple[int, int]


@dataclass(frozen=True)
class TripRecord:
    origin: int
    destination: int
    departure: float  # minutes since start of horizon
    count: float = 1.0

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError(f"trip origin equals destination ({self.origin})")
        if not self.count > 0:
            raise ValueError("trip count must be positive")


class DemandMatrix(Mapping[OD, float]):
    """Sparse (origin, destination) -> flow rate in vehicles/hour.

    Zero entries are never stored. Iteration is in sorted key order so that
    every consumer sees the same deterministic sequence.
    """

    __slots__ = ("_rates",)

    def __init__(self, rates: Mapping[OD, float] | Iterable[tuple[OD, float]] = ()):
        items = rates.items() if isinstance(rates, Mapping) else rates
        self._rates: dict[OD, float] = {}
        for (p, q), rate in items:
            rate = float(rate)
            if not math.isfinite(rate) or rate < 0:
                raise ValueError(f"invalid rate {rate} for OD ({p}, {q})")
            if rate > 0:
                key = (int(p), int(q))
                self._rates[key] = self._rates.get(key, 0.0) + rate

    def __getitem__(self, key: OD) -> float:
        return self._rates[key]

    def __iter__(self) -> Iterator[OD]:
        return iter(sorted(self._rates))

    def __len__(self) -> int:
        return len(self._rates)

    def __repr__(self):
        return f"DemandMatrix({dict(self.items())!r})"

    def __eq__(self, other):
        if isinstance(other, Mapping):
            return dict(self._rates) == dict(other.items())
        return NotImplemented

    def total(self) -> float:
        return math.fsum(self._rates.values())

    def scaled(self, factor: float) -> DemandMatrix:
        return DemandMatrix({k: v * factor for k, v in self._rates.items()})


@dataclass(frozen=True)
class DemandPartition:
    owner: int
    entries: DemandMatrix


def bin_demand(trips: Iterable[TripRecord], interval_minutes: float, intervals: int) -> list[DemandMatrix]:
    """Group trips into per-interval rate matrices.

    A trip departing at ``t`` lands in interval ``floor(t / interval_minutes)`` and
    contributes ``count / (interval_minutes / 60)`` vehicles/hour.
    """
    if interval_minutes <= 0 or intervals < 1:
        raise ConfigError("interval length must be positive and interval count >= 1")
    horizon = interval_minutes * intervals
    hours = interval_minutes / 60.0
    buckets: list[dict[OD, float]] = [{} for _ in range(intervals)]
    for index, trip in enumerate(trips):
        if not 0 <= trip.departure < horizon:
            raise ValueError(f"trip {index}: departure {trip.departure} outside [0, {horizon})")
        bucket = buckets[int(trip.departure // interval_minutes)]
        key = (trip.origin, trip.destination)
        bucket[key] = bucket.get(key, 0.0) + trip.count
    return [DemandMatrix({k: v / hours for k, v in b.items()}) for b in buckets]


def merge_residual(original: Mapping[OD, float], residual: Mapping[OD, float]) -> DemandMatrix:
    merged = dict(original.items())
    for key, rate in residual.items():
        merged[key] = merged.get(key, 0.0) + rate
    return DemandMatrix(merged)


def partition_demand(demand: DemandMatrix, workers: int) -> list[DemandPartition]:
    """Split ``demand`` into ``workers`` contiguous, balanced slices.

    Entries are ordered by (destination, origin) before slicing so that OD
    pairs sharing a destination mostly land on the same worker; routing is
    done one destination tree at a time. Slice sizes differ by at most one.
    """
    if workers < 1:
        raise ConfigError("worker count must be >= 1")
    keys = sorted(demand, key=lambda od: (od[1], od[0]))
    base, extra = divmod(len(keys), workers)
    parts = []
    start = 0
    for k in range(workers):
        stop = start + base + (1 if k < extra else 0)
        parts.append(DemandPartition(k, DemandMatrix({key: demand[key] for key in keys[start:stop]})))
        start = stop
    return parts


def average_demand(matrices: Iterable[Mapping[OD, float]]) -> DemandMatrix:
    """Mean rate over equal-length intervals, i.e. demand spread over the whole horizon."""
    matrices = list(matrices)
    if not matrices:
        return DemandMatrix()
    total: dict[OD, float] = {}
    for m in matrices:
        for key, rate in m.items():
            total[key] = total.get(key, 0.0) + rate
    return DemandMatrix({k: v / len(matrices) for k, v in total.items()})


def _open_checked(path: Path, header: list[str]):
    fp = path.open(newline="")
    reader = csv.reader(fp)
    first = next(reader, None)
    if first is None or [h.strip() for h in first] != header:
        fp.close()
        raise StructuralError(f"{path}:1: expected header {','.join(header)}")
    return fp, reader


def read_trips_csv(path) -> list[TripRecord]:
    path = Path(path)
    fp, reader = _open_checked(path, TRIPS_HEADER)
    trips = []
    with fp:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                p, q, dep, count = row
                trips.append(TripRecord(int(p), int(q), float(dep), float(count) if count.strip() else 1.0))
            except ValueError as exc:
                raise StructuralError(f"{path}:{lineno}: {exc}") from exc
    return trips


def read_rates_csv(path, intervals: int) -> list[DemandMatrix]:
    path = Path(path)
    fp, reader = _open_checked(path, RATES_HEADER)
    buckets: list[dict[OD, float]] = [{} for _ in range(intervals)]
    with fp:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                p, q, i, rate = int(row[0]), int(row[1]), int(row[2]), float(row[3])
                if p == q:
                    raise ValueError("origin equals destination")
                if not 0 <= i < intervals:
                    raise ValueError(f"interval {i} outside [0, {intervals})")
                if not (math.isfinite(rate) and rate >= 0):
                    raise ValueError(f"invalid rate {rate}")
            except (ValueError, IndexError) as exc:
                raise StructuralError(f"{path}:{lineno}: {exc}") from exc
            buckets[i][(p, q)] = buckets[i].get((p, q), 0.0) + rate
    return [DemandMatrix(b) for b in buckets]


def write_trips_csv(trips: Iterable[TripRecord], path) -> None:
    with Path(path).open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(TRIPS_HEADER)
        for t in trips:
            writer.writerow([t.origin, t.destination, repr(float(t.departure)), repr(float(t.count))])


def check_nodes(demand: Iterable[Mapping[OD, float]], n_nodes: int) -> None:
    for i, matrix in enumerate(demand):
        for p, q in matrix:
            if not (0 <= p < n_nodes and 0 <= q < n_nodes):
                raise StructuralError(f"interval {i}: OD ({p}, {q}) references an unknown node")
