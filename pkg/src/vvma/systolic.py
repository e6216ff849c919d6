"""Cycle-level simulator of a k x k weight-stationary systolic array.

Timing model per weight residency (no overlap between residencies):

* ``load_row``: one weight row shifts in per cycle, k cycles.
* ``fill``: one cycle to latch the loaded weights into the stationary
  registers.  Together with the 2k-1 cycle pass of the first vector through
  the skewed array this is the 2k fill/drain cost.
* ``stream_in``: one input column enters per cycle.  Element ``a`` enters row
  ``a`` with a skew of ``a`` cycles, activations move right one PE per cycle,
  partial sums move down one PE per cycle, and column ``b`` of the result
  leaves the bottom edge ``k - 1 + b`` cycles after ``stream_in``.
* ``stream_out``: the accumulator write-back of a finished column, 2k-1
  cycles after its ``stream_in``.

The shared-matrix mode loads M once and streams every (block, vector) pair
back to back.  Its diagonal pre-unit scales each column in the same cycle
the column enters (``vv_mul``), so it costs no cycles.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .core import VvmaParam, as_matrix, pad_matrix, pad_shape

MAX_TRACE_EVENTS = 1_000_000

EventKind = Literal["load_row", "fill", "stream_in", "stream_out", "vv_mul"]


class TraceBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    k: int
    mode: Literal["baseline", "vvma"] = "baseline"
    record_trace: bool = False
    # shared-matrix mode only: pass inputs straight to the array
    vv_unit: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.mode not in ("baseline", "vvma"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class TraceEvent:
    cycle: int
    kind: str
    block: tuple[int, int]


@dataclass
class SimTrace:
    events: list[TraceEvent] = field(default_factory=list)

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cycle", "kind", "block_i", "block_j"])
        for e in self.events:
            w.writerow([e.cycle, e.kind, e.block[0], e.block[1]])
        return buf.getvalue()


@dataclass
class SimResult:
    output: np.ndarray
    cycles: int
    trace: SimTrace | None = None


class SystolicArray:
    """k x k grid of multiply-accumulate cells holding stationary weights.

    PE (a, b) holds the weight linking input ``a`` to output ``b``;
    activations flow along rows, partial sums flow down columns.
    """

    def __init__(self, k: int):
        self.k = k
        self.weights = np.zeros((k, k))
        self._staged = np.zeros((k, k))
        self.act = np.zeros((k, k))
        self.psum = np.zeros((k, k))

    def load_row(self, a: int, row: np.ndarray) -> None:
        self._staged[a] = row

    def latch(self) -> None:
        self.weights = self._staged.copy()
        self.act[:] = 0.0
        self.psum[:] = 0.0

    def tick(self, edge: np.ndarray) -> np.ndarray:
        """Advance one cycle with ``edge[a]`` entering row ``a``; returns the
        partial sums leaving the bottom edge this cycle."""
        self.act[:, 1:] = self.act[:, :-1]
        self.act[:, 0] = edge
        prod = self.weights * self.act
        # row a adds onto what row a-1 held last cycle
        self.psum[1:] = self.psum[:-1] + prod[1:]
        self.psum[0] = prod[0]
        return self.psum[-1].copy()

    def run_stream(self, columns: np.ndarray) -> np.ndarray:
        """Push ``columns`` (k x n, one per cycle) through the array and return
        ``weights.T @ columns`` as assembled from the bottom edge."""
        k = self.k
        n = columns.shape[1]
        out = np.zeros((k, n))
        rows = np.arange(k)
        total = n + 2 * k - 2
        for cyc in range(total):
            # element a of column s enters at cycle s + a
            s_in = cyc - rows
            ok = (s_in >= 0) & (s_in < n)
            edge = np.zeros(k)
            edge[ok] = columns[rows[ok], s_in[ok]]
            bottom = self.tick(edge)
            # column b of vector s leaves at cycle s + (k - 1) + b
            s_out = cyc - (k - 1) - rows
            ok = (s_out >= 0) & (s_out < n)
            out[rows[ok], s_out[ok]] = bottom[ok]
        return out


class _Recorder:
    def __init__(self, enabled: bool, expected: int):
        if enabled and expected > MAX_TRACE_EVENTS:
            raise TraceBudgetExceeded(
                f"trace would hold {expected} events (limit {MAX_TRACE_EVENTS})")
        self.trace = SimTrace() if enabled else None

    def __call__(self, cycle: int, kind: str, block: tuple[int, int]) -> None:
        if self.trace is not None:
            self.trace.events.append(TraceEvent(cycle, kind, block))

    def finish(self) -> SimTrace | None:
        if self.trace is not None:
            self.trace.events.sort(key=lambda e: e.cycle)
        return self.trace


def accumulate_partials(partials: dict[tuple[int, int], np.ndarray], r: int, c: int) -> np.ndarray:
    """Sum block products over column blocks, j = 0..c-1 in order, and stack
    the row blocks."""
    rows = []
    for i in range(r):
        missing = [j for j in range(c) if (i, j) not in partials]
        if missing:
            raise ValueError(f"row block {i} lacks contributions from column blocks {missing}")
        acc = np.array(partials[(i, 0)], dtype=np.float64, copy=True)
        for j in range(1, c):
            acc = acc + partials[(i, j)]
        rows.append(acc)
    return np.concatenate(rows, axis=0)


def _as_columns(X, n_expected: int, k: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    X = as_matrix(X, "X")
    if X.shape[0] != n_expected:
        raise ValueError(f"input has {X.shape[0]} rows, expected {n_expected}")
    c = -(-n_expected // k)
    if X.shape[0] != c * k:
        pad = np.zeros((c * k, X.shape[1]))
        pad[: X.shape[0]] = X
        X = pad
    return X


def simulate_baseline(W, X, cfg: SimConfig) -> SimResult:
    """Tile ``W`` into k x k blocks and run each block as its own residency."""
    if cfg.mode != "baseline":
        raise ValueError("simulate_baseline needs cfg.mode == 'baseline'")
    W = as_matrix(W, "W")
    k = cfg.k
    m, n = W.shape
    r, c = pad_shape(m, n, k)
    Xp = _as_columns(X, n, k)
    t = Xp.shape[1]
    Wp = pad_matrix(W, k)
    rec = _Recorder(cfg.record_trace, r * c * (k + 1 + 2 * t))
    array = SystolicArray(k)
    partials = {}
    cycle = 0
    for i in range(r):
        for j in range(c):
            block = Wp[i * k:(i + 1) * k, j * k:(j + 1) * k]
            for a in range(k):
                array.load_row(a, block[:, a])
                rec(cycle, "load_row", (i, j))
                cycle += 1
            array.latch()
            rec(cycle, "fill", (i, j))
            cycle += 1
            for s in range(t):
                rec(cycle + s, "stream_in", (i, j))
                rec(cycle + s + 2 * k - 1, "stream_out", (i, j))
            partials[(i, j)] = array.run_stream(Xp[j * k:(j + 1) * k])
            cycle += t + 2 * k - 1
    out = accumulate_partials(partials, r, c)[:m]
    return SimResult(out, cycle, rec.finish())


def simulate_vvma(p: VvmaParam, X, cfg: SimConfig) -> SimResult:
    """Load M once, then stream every (block, vector) pair through the
    diagonal pre-unit and the array without reloading."""
    if cfg.mode != "vvma":
        raise ValueError("simulate_vvma needs cfg.mode == 'vvma'")
    if cfg.k != p.k:
        raise ValueError(f"array size {cfg.k} does not match parametrization k={p.k}")
    k, r, c = p.k, p.r, p.c
    Xp = _as_columns(X, c * k, k)
    t = Xp.shape[1]
    nblk = r * c
    per_col = 3 if cfg.vv_unit else 2
    rec = _Recorder(cfg.record_trace, k + 1 + per_col * nblk * t)
    array = SystolicArray(k)
    M = p.m_scale * p.M
    for a in range(k):
        array.load_row(a, M[:, a])
        rec(a, "load_row", (0, 0))
    array.latch()
    rec(k, "fill", (0, 0))
    start = k + 1

    diags = p.effective_diags()
    columns = np.empty((k, nblk * t))
    q = 0
    for i in range(r):
        for j in range(c):
            xj = Xp[j * k:(j + 1) * k]
            for s in range(t):
                col = xj[:, s]
                if cfg.vv_unit:
                    col = diags[i, j] * col
                    rec(start + q, "vv_mul", (i, j))
                columns[:, q] = col
                rec(start + q, "stream_in", (i, j))
                rec(start + q + 2 * k - 1, "stream_out", (i, j))
                q += 1
    streamed = array.run_stream(columns)
    partials = {}
    for b in range(nblk):
        i, j = divmod(b, c)
        partials[(i, j)] = streamed[:, b * t:(b + 1) * t]
    out = accumulate_partials(partials, r, c)
    cycles = start + nblk * t + 2 * k - 1
    return SimResult(out, cycles, rec.finish())
