"""Block partitioning, communication graphs and a deterministic in-process worker pool.

Workers are threads. Every parallel phase is fork/join: the pool hands each
worker a contiguous block range, waits for all of them and stacks the results
in block order. Because each result depends only on its own blocks, the
output is bit-identical for every worker count.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .polycore import count, index_table, exponents


@dataclass(frozen=True)
class Partition:
    N: int
    ranges: tuple[range, ...]   # zero-based, contiguous, in worker order

    @property
    def sizes(self) -> list[int]:
        return [len(r) for r in self.ranges]

    def owner(self, block: int) -> int:
        for w, r in enumerate(self.ranges):
            if block in r:
                return w
        raise IndexError(block)


def partition_blocks(total: int, N: int) -> Partition:
    """The first total mod N workers get one extra block."""
    if N < 1:
        raise ValueError("need at least one worker")
    if total < 0:
        raise ValueError("negative block count")
    q, r = divmod(total, N)
    ranges, start = [], 0
    for w in range(N):
        size = q + (1 if w < r else 0)
        ranges.append(range(start, start + size))
        start += size
    return Partition(N, tuple(ranges))


def partition(L: int, M: int, N: int) -> Partition:
    return partition_blocks(L + M, N)


@dataclass(frozen=True)
class CommGraph:
    adjacency: np.ndarray

    @property
    def N(self) -> int:
        return self.adjacency.shape[0]

    def out_degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> list[tuple[int, int]]:
        return [tuple(map(int, e)) for e in np.argwhere(self.adjacency)]


def solver_graph(N: int) -> CommGraph:
    """Star centred at worker 0: every message goes to or from the coordinator."""
    T = np.zeros((N, N), dtype=bool)
    T[0, 1:] = True
    T[1:, 0] = True
    return CommGraph(T)


def monomial_fanout(l: int, d: int) -> list[list[int]]:
    """For each degree-d monomial, zero-based indices of the monomials of (sum a) a^g."""
    nxt = index_table(l, d + 1)
    out = []
    for g in exponents(l, d):
        out.append([nxt[tuple(v + (k == i) for k, v in enumerate(g))] for i in range(l)])
    return out


def setup_monomial_graph(l: int, d_p: int, d1: int) -> CommGraph:
    """One node per monomial of degree d_p + d1 + 1; node i talks to the monomials it feeds."""
    D = d_p + d1
    r0, r1 = count(l, D), count(l, D + 1)
    T = np.zeros((r1, r1), dtype=bool)
    for i, targets in enumerate(monomial_fanout(l, D)):
        for j in targets:
            if i != j:
                T[i, j] = True
    assert not T[r0:].any()
    return CommGraph(T)


def setup_comm_graph(l: int, d_p: int, d1: int, N: int | None = None) -> CommGraph:
    """Set-up exchange pattern.

    Without ``N`` every monomial is its own worker. With ``N`` monomials are
    distributed with :func:`partition_blocks` and edges inside a worker vanish.
    """
    G = setup_monomial_graph(l, d_p, d1)
    if N is None:
        return G
    owner_old = partition_blocks(count(l, d_p + d1), N)
    owner_new = partition_blocks(count(l, d_p + d1 + 1), N)
    T = np.zeros((N, N), dtype=bool)
    for i, j in G.edges():
        # the sender holds source monomial i, the receiver holds target j
        a, b = owner_old.owner(i), owner_new.owner(j)
        if a != b:
            T[a, b] = True
    return CommGraph(T)


def speedup_model(n: int, l: int, d_p: int, d_a: int, d1: int, d2: int, N: int) -> float:
    """Predicted speed-up N / (D + N S) from the per-worker and coordinator operation counts.

    Worker work per iteration ~ c^2 n^7 each, coordinator ~ c^3 n^6 with
    c = f(l, d_p); d_a, d1 and d2 do not enter the leading-order counts.
    """
    if N < 1:
        raise ValueError("N must be positive")
    c = math.comb(d_p + l - 1, l - 1)
    dec = N * c ** 2 * float(n) ** 7
    cen = c ** 3 * float(n) ** 6
    D = dec / (dec + cen)
    S = cen / (dec + cen)
    if N == 1:
        return 1.0
    return N / (D + N * S)


def setup_message_formula(L0: int, L: int, M: int, n: int, N: int) -> int:
    return L0 * (L // N + (M // N) * n * n)


# ----------------------------------------------------------------------------
# worker pool
# ----------------------------------------------------------------------------


@dataclass
class TimingRow:
    phase: str
    worker: int
    ops: int
    bytes: int
    seconds: float


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get("POLYCERT_WORKERS")
    if raw is None or raw == "":
        return default
    try:
        v = int(raw)
    except ValueError as exc:
        raise ValueError(f"POLYCERT_WORKERS must be an integer, got {raw!r}") from exc
    if v < 1:
        raise ValueError("POLYCERT_WORKERS must be >= 1")
    return v


@dataclass
class WorkerPool:
    """Fork/join pool over contiguous block ranges with per-phase instrumentation."""

    size: int = field(default_factory=workers_from_env)
    record: bool = True
    timings: list[TimingRow] = field(default_factory=list)
    messages: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("pool size must be >= 1")
        self._ex = ThreadPoolExecutor(max_workers=self.size) if self.size > 1 else None

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()
            self._ex = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def run(self, fn: Callable[[int, range], object], part: Partition, phase: str = "work") -> list:
        """Call fn(worker, range) for each worker; results returned in worker order."""
        def timed(w):
            t0 = time.perf_counter()
            res = fn(w, part.ranges[w])
            dt = time.perf_counter() - t0
            return res, dt

        if self._ex is None or part.N == 1:
            outs = [timed(w) for w in range(part.N)]
        else:
            futures = [self._ex.submit(timed, w) for w in range(part.N)]
            outs = [f.result() for f in futures]       # barrier
        if self.record:
            for w, (res, dt) in enumerate(outs):
                self.timings.append(TimingRow(phase, w, len(part.ranges[w]), _nbytes(res), dt))
        return [r for r, _ in outs]

    def map_blocks(self, fn: Callable[[range], list], total: int, phase: str = "blocks") -> list:
        """fn(range) returns a list with one entry per block; concatenated in block order."""
        part = partition_blocks(total, self.size)
        out: list = []
        for chunk in self.run(lambda w, rng: fn(rng), part, phase):
            out.extend(chunk)
        return out

    def count_messages(self, phase: str, per_worker: Sequence[int]):
        self.messages[phase] = list(per_worker)

    def write_timing_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["phase", "worker", "ops", "bytes", "seconds"])
            for r in self.timings:
                wr.writerow([r.phase, r.worker, r.ops, r.bytes, f"{r.seconds:.6f}"])


def _nbytes(obj) -> int:
    if isinstance(obj, np.ndarray):
        return int(obj.nbytes)
    if hasattr(obj, "data") and hasattr(obj, "nnz"):
        return int(obj.data.nbytes)
    if isinstance(obj, (list, tuple)):
        return sum(_nbytes(o) for o in obj)
    return 0
