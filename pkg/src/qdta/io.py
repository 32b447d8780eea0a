"""Result files: per-interval flows and residuals, metrics, trace and run manifest.

Every file is written to a temporary sibling and renamed into place, so a
crashed run never leaves a truncated output behind.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .demand import RESIDUAL_HEADER
from .engine import IntervalResult, MetricsReport
from .errors import StructuralError
from .network import Network

FLOWS_HEADER = ["link_id", "flow_vph", "cost_min", "voc"]
TRACE_HEADER = ["interval", "iteration", "alpha", "potential", "rel_change", "ls_iters"]
METRICS_HEADER = ["fclass", "vmt", "vht", "vhd", "avg_voc", "congested_length_mi"]


def fmt(x: float) -> str:
    """Shortest decimal that reads back to the same double (at most 17 digits)."""
    return repr(float(x))


@contextmanager
def atomic_open(path, mode: str = "w"):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fp:
            yield fp
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with atomic_open(path) as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_flows(path, network: Network, result: IntervalResult) -> None:
    voc = result.link_flows / network.capacity
    _write_rows(path, FLOWS_HEADER,
                ((a, fmt(result.link_flows[a]), fmt(result.link_costs[a]), fmt(voc[a]))
                 for a in range(network.n_links)))


def read_flows(path) -> tuple[np.ndarray, np.ndarray]:
    """Link flows and costs from a flows file, indexed by link id."""
    path = Path(path)
    with path.open(newline="") as fp:
        reader = csv.reader(fp)
        if next(reader, None) != FLOWS_HEADER:
            raise StructuralError(f"{path}:1: expected header {','.join(FLOWS_HEADER)}")
        rows = [r for r in reader if r]
    flows = np.zeros(len(rows))
    costs = np.zeros(len(rows))
    for lineno, row in enumerate(rows, start=2):
        a = int(row[0])
        if not 0 <= a < len(rows):
            raise StructuralError(f"{path}:{lineno}: link id {a} out of range")
        flows[a], costs[a] = float(row[1]), float(row[2])
    return flows, costs


def write_demand(path, demand: Mapping[tuple[int, int], float]) -> None:
    _write_rows(path, RESIDUAL_HEADER, ((p, q, fmt(rate)) for (p, q), rate in demand.items()))


def write_trace(path, results: Sequence[IntervalResult]) -> None:
    rows = []
    for r in results:
        for t in r.trace:
            rows.append((r.interval, t.iteration, fmt(t.alpha), fmt(t.potential),
                         fmt(t.rel_change), t.ls_iters))
    _write_rows(path, TRACE_HEADER, rows)


def write_metrics(path, report: MetricsReport) -> None:
    def row(name, m):
        return (name, fmt(m.vmt), fmt(m.vht), fmt(m.vhd), fmt(m.avg_voc), fmt(m.congested_length))
    rows = [row(c, m) for c, m in report.by_class.items()]
    rows.append(row("total", report.total))
    _write_rows(path, METRICS_HEADER, rows)


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    inputs: dict[str, str]                 # file name -> sha256, taken before the run
    intervals: list[dict] = field(default_factory=list)
    total_wall_time: float = 0.0
    unroutable: int = 0
    unfinished_pairs: int = 0
    unfinished_rate: float = 0.0

    @classmethod
    def start(cls, config: dict, inputs: Iterable) -> RunManifest:
        return cls(config, {str(p): sha256(p) for p in inputs})

    def record(self, result: IntervalResult) -> None:
        self.intervals.append({
            "interval": result.interval, "fw_iterations": result.fw_iterations,
            "ls_iterations": result.ls_iterations, "converged": result.converged,
            "wall_time": result.wall_time, "demand_vph": result.demand_total,
            "unroutable": len(result.unroutable), "residual_pairs": len(result.residual_out),
        })
        self.unroutable += len(result.unroutable)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path) -> None:
        with atomic_open(path) as fp:
            fp.write(self.to_json())
            fp.write("\n")


def write_results(out_dir, network: Network, results: Sequence[IntervalResult],
                  report: MetricsReport, unfinished: Mapping | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for r in results:
        write_flows(out / f"flows_{r.interval}.csv", network, r)
        write_demand(out / f"residual_{r.interval}.csv", r.residual_out)
        written += [out / f"flows_{r.interval}.csv", out / f"residual_{r.interval}.csv"]
    write_metrics(out / "metrics.csv", report)
    write_trace(out / "trace.csv", results)
    write_demand(out / "unfinished.csv", unfinished or {})
    return written + [out / "metrics.csv", out / "trace.csv", out / "unfinished.csv"]
