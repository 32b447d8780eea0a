"""Work partitioning, fixed-order all-reduce and long-lived worker pools.

Every pool runs the same per-worker state objects; the backends differ only
in where those objects live:

* ``serial``  - all states in this process, called one after another
* ``thread``  - all states in this process, one thread per call
* ``process`` - one state per long-lived child process, driven over pipes

Results always come back in worker-index order and reductions add them in
that order, so a fixed worker count gives bit-identical sums run to run.
"""
from __future__ import annotations

import abc
import gc
import multiprocessing as mp
import os
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, StructuralError

BACKENDS = ("serial", "thread", "process")


def default_workers() -> int:
    return int(os.environ.get("QDTA_THREADS", "1"))


def default_backend(workers: int) -> str:
    backend = os.environ.get("QDTA_BACKEND")
    if backend is None:
        return "serial" if workers == 1 else "process"
    if backend not in BACKENDS:
        raise ConfigError(f"QDTA_BACKEND must be one of {BACKENDS}")
    return backend


@dataclass(frozen=True)
class LinkPartition:
    owner: int
    start: int
    stop: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    def __len__(self):
        return self.stop - self.start


def partition_links(n_links: int, workers: int) -> list[LinkPartition]:
    """Contiguous ranges covering ``[0, n_links)``; sizes differ by at most one."""
    if workers < 1:
        raise ConfigError("worker count must be >= 1")
    base, extra = divmod(n_links, workers)
    parts = []
    start = 0
    for k in range(workers):
        stop = start + base + (1 if k < extra else 0)
        parts.append(LinkPartition(k, start, stop))
        start = stop
    return parts


def all_reduce_sum(local_values: Sequence) -> np.ndarray:
    """Elementwise sum of one array (or scalar batch) per worker, in worker order."""
    if len(local_values) == 0:
        raise StructuralError("nothing to reduce")
    arrays = [np.asarray(v, dtype=float) for v in local_values]
    shape = arrays[0].shape
    total = arrays[0].copy()
    for arr in arrays[1:]:
        if arr.shape != shape:
            raise StructuralError(f"cannot reduce shapes {shape} and {arr.shape}")
        total += arr
    return total


class Reducer(abc.ABC):
    """Combines one vector per worker into the global sum seen by every worker."""

    @abc.abstractmethod
    def all_reduce(self, local_values: Sequence) -> np.ndarray: ...


class SharedMemoryReducer(Reducer):
    def all_reduce(self, local_values):
        return all_reduce_sum(local_values)


class WorkerPool(abc.ABC):
    """A fixed set of worker states addressed by method name."""

    size: int
    reducer: Reducer = SharedMemoryReducer()

    @abc.abstractmethod
    def map(self, method: str, per_worker: Sequence[tuple] | None = None, *common) -> list:
        """Call ``state.method(*per_worker[k], *common)`` on every worker ``k``."""

    @abc.abstractmethod
    def run_exclusive(self, method: str, *args) -> None:
        """Call ``method`` once per address space (shared states see it once)."""

    def all_reduce(self, method: str, per_worker=None, *common) -> np.ndarray:
        return self.reducer.all_reduce(self.map(method, per_worker, *common))

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _args(per_worker, k):
    return tuple(per_worker[k]) if per_worker is not None else ()


class SerialPool(WorkerPool):
    def __init__(self, states: list):
        self.states = states
        self.size = len(states)

    def map(self, method, per_worker=None, *common):
        return [getattr(s, method)(*_args(per_worker, k), *common) for k, s in enumerate(self.states)]

    def run_exclusive(self, method, *args):
        getattr(self.states[0], method)(*args)


class ThreadPool(SerialPool):
    def __init__(self, states: list):
        super().__init__(states)
        self._executor = ThreadPoolExecutor(max_workers=self.size)

    def map(self, method, per_worker=None, *common):
        futures = [self._executor.submit(getattr(s, method), *_args(per_worker, k), *common)
                   for k, s in enumerate(self.states)]
        return [f.result() for f in futures]

    def close(self):
        self._executor.shutdown()


class WorkerError(RuntimeError):
    pass


def _worker_main(conn, inherited, factory, k, init_args):
    # drop the driver-side pipe ends copied by fork so a dead driver means EOF here
    for other in inherited:
        other.close()
    state = factory(k, *init_args)
    while True:
        try:
            msg = conn.recv()
        except EOFError:
            break
        if msg is None:
            break
        method, args = msg
        try:
            conn.send((True, getattr(state, method)(*args)))
        except BaseException as exc:  # reported back to the driver
            conn.send((False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"))
    conn.close()


class ProcessPool(WorkerPool):
    """One child process per worker, each holding its own state replica."""

    def __init__(self, factory: Callable[..., Any], size: int, init_args: tuple = ()):
        ctx = mp.get_context("fork")
        self.size = size
        self._conns = []
        self._procs = []
        # objects that exist now are never scanned by the children's collector,
        # so the driver's heap stays shared instead of being copied page by page
        gc.freeze()
        try:
            for k in range(size):
                parent, child = ctx.Pipe()
                proc = ctx.Process(target=_worker_main, daemon=True,
                                   args=(child, self._conns + [parent], factory, k, init_args))
                proc.start()
                child.close()
                self._conns.append(parent)
                self._procs.append(proc)
        finally:
            gc.unfreeze()

    def map(self, method, per_worker=None, *common):
        for k, conn in enumerate(self._conns):
            conn.send((method, _args(per_worker, k) + common))
        results = []
        failure = None
        for conn in self._conns:
            ok, value = conn.recv()
            if not ok and failure is None:
                failure = value
            results.append(value)
        if failure is not None:
            raise WorkerError(failure)
        return results

    def run_exclusive(self, method, *args):
        self.map(method, None, *args)

    def close(self):
        for conn in self._conns:
            try:
                conn.send(None)
            except (BrokenPipeError, OSError):
                pass
        for proc in self._procs:
            proc.join(timeout=5)
            if proc.is_alive():
                proc.terminate()
        self._conns = []
        self._procs = []


def make_pool(factory: Callable[..., Any], size: int, init_args: tuple = (),
              backend: str | None = None, shared: Callable[[], tuple] | None = None) -> WorkerPool:
    """Build ``size`` worker states with ``factory(k, *init_args)`` on ``backend``.

    For in-process backends, ``shared`` may supply extra init args that all
    states share by reference (e.g. one routing index customized once).
    """
    if size < 1:
        raise ConfigError("worker count must be >= 1")
    backend = backend or default_backend(size)
    if backend not in BACKENDS:
        raise ConfigError(f"unknown parallel backend {backend!r}")
    if backend == "process":
        return ProcessPool(factory, size, init_args)
    extra = shared() if shared is not None else ()
    states = [factory(k, *init_args, *extra) for k in range(size)]
    return ThreadPool(states) if backend == "thread" else SerialPool(states)
