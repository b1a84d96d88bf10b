"""Exact samplers and conditional forward samplers.

Everything goes through one row-vectorized routine, :func:`forward`: each
row has its own past (points before its start time) and is completed
independently on [start, T]. Samplers run in rounds; every round each
still-active row draws a few uniforms from a stream object:

* :class:`RowStreams` gives every row a private Philox stream, so row i
  of a batch is identical to sampling path i alone. Outer path batches
  use this, which makes results independent of batching and workers.
* :class:`GroupStreams` gives each group of rows one generator. Nested
  inner completions use it with one group per conditioning time, so the
  estimate at (t, x) depends only on the path's seed, t, x and its past.
* :class:`SharedStream` draws all rows from one generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import singledispatch

import numpy as np

from .core import Configuration, PointBatch, SeedSpec
from .models import CoxMixtureSpec, HawkesSpec, ModelSpec, PoissonSpec, RenewalSpec
from .parallel import map_ranges

# counter words that separate the uses of one stream
SAMPLE = 0
AUX = 1
NODE = 16  # NODE + x: inner completions at (t, x), keyed by the bits of t

_BLOCK = 32


class CeilingViolation(RuntimeError):
    """The thinning ceiling was exceeded: the model spec is invalid."""


class SharedStream:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def uniform(self, idx: np.ndarray) -> np.ndarray:
        return self.rng.random(idx.size)


class GroupStreams:
    """Rows in consecutive groups of ``size``, one generator per group.

    A row's draws depend only on its own group's generator and on which
    rows of that group are still active. Callers pass ascending indices.
    """

    def __init__(self, generators, size: int):
        self.generators = list(generators)
        self.size = int(size)

    def uniform(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        g = idx // self.size
        out = np.empty(idx.size)
        cuts = np.concatenate([[0], np.flatnonzero(np.diff(g)) + 1, [idx.size]])
        for a, b in zip(cuts[:-1], cuts[1:]):
            out[a:b] = self.generators[g[a]].random(b - a)
        return out


class RowStreams:
    """One buffered generator per row."""

    def __init__(self, generators):
        self.generators = list(generators)
        self.buf = np.stack([g.random(_BLOCK) for g in self.generators]) if self.generators else np.empty((0, _BLOCK))
        self.pos = np.zeros(len(self.generators), dtype=np.int64)

    @classmethod
    def for_paths(cls, seed: SeedSpec, start: int, stop: int, purpose: int = SAMPLE) -> "RowStreams":
        return cls(seed.child(i).generator(purpose) for i in range(start, stop))

    def uniform(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        for r in idx[self.pos[idx] >= _BLOCK]:
            self.buf[r] = self.generators[r].random(_BLOCK)
            self.pos[r] = 0
        out = self.buf[idx, self.pos[idx]]
        self.pos[idx] += 1
        return out


def _exp(u):
    return -np.log1p(-u)


def _rows_start(past: PointBatch, start) -> np.ndarray:
    start = np.broadcast_to(np.asarray(start, dtype=float), (past.rows,)).copy()
    finite = np.isfinite(past.times)
    if np.any(finite & (past.times >= start[:, None])):
        raise ValueError("past contains points at or after the conditioning time")
    return start


def _finish(past: PointBatch, cols_t: list, cols_x: list) -> PointBatch:
    """Append new points after each row's past without re-sorting.

    Pasts are compact (finite prefix) and new points come later in time,
    in round order, so a cumulative count gives every target column.
    """
    if not cols_t:
        return past
    new_t = np.concatenate(cols_t, axis=1)
    new_x = np.concatenate(cols_x, axis=1)
    fin_new = np.isfinite(new_t)
    fin_old = np.isfinite(past.times)
    n_old = fin_old.sum(axis=1)
    total = n_old + fin_new.sum(axis=1)
    width = max(int(total.max(initial=0)), 1)
    times = np.full((past.rows, width), np.inf)
    marks = np.full((past.rows, width), -1, dtype=np.int64)
    r, c = np.nonzero(fin_old)
    times[r, c] = past.times[r, c]
    marks[r, c] = past.marks[r, c]
    pos = np.cumsum(fin_new, axis=1) - 1
    r, c = np.nonzero(fin_new)
    dest = n_old[r] + pos[r, c]
    times[r, dest] = new_t[r, c]
    marks[r, dest] = new_x[r, c]
    return PointBatch(past.horizon, times, marks)


@singledispatch
def forward(spec: ModelSpec, past: PointBatch, start, stream) -> PointBatch:
    """Complete each row of ``past`` with fresh points on [start_r, T]."""
    raise TypeError(f"no sampler for {type(spec).__name__}")


def _thin(rate_of, ceil: np.ndarray, start: np.ndarray, T: float, stream, rows: int):
    """Thinning against per-row, per-mark ceilings ``ceil`` (rows, marks).

    ``rate_of(idx, t, x)`` returns the rate of rows idx at times t, marks x.
    """
    total = ceil.sum(axis=1)
    n_marks = ceil.shape[1]
    cum = np.cumsum(ceil, axis=1)
    cur = start.copy()
    active = total > 0
    cols_t, cols_x = [], []
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cand = cur[idx] + _exp(stream.uniform(idx)) / total[idx]
        if n_marks > 1:
            um = stream.uniform(idx) * total[idx]
            mark = np.minimum((cum[idx] <= um[:, None]).sum(axis=1), n_marks - 1)
        else:
            mark = np.zeros(idx.size, dtype=np.int64)
        ua = stream.uniform(idx)
        alive = cand <= T
        rate = np.zeros(idx.size)
        if alive.any():
            rate[alive] = rate_of(idx[alive], cand[alive], mark[alive])
        c = ceil[idx, mark]
        if np.any(rate > c * (1 + 1e-12)):
            raise CeilingViolation("rate exceeds its thinning ceiling")
        acc = alive & (ua * c < rate)
        if acc.any():
            col_t = np.full((rows, 1), np.inf)
            col_x = np.full((rows, 1), -1, dtype=np.int64)
            col_t[idx[acc], 0] = cand[acc]
            col_x[idx[acc], 0] = mark[acc]
            cols_t.append(col_t)
            cols_x.append(col_x)
        cur[idx] = cand
        active[idx[~alive]] = False
    return cols_t, cols_x


@forward.register
def _(spec: PoissonSpec, past, start, stream):
    start = _rows_start(past, start)
    w = spec.marks.weight_array
    ceil = np.array([spec.rate.sup(0.0, spec.horizon, x) * w[x] for x in range(spec.n_marks)])
    ceil = np.broadcast_to(ceil, (past.rows, spec.n_marks))

    def rate_of(idx, t, x):
        out = np.empty(t.size)
        for m in range(spec.n_marks):
            sel = x == m
            out[sel] = spec.rate(t[sel], m) * w[m]
        return out

    return _finish(past, *_thin(rate_of, ceil, start, spec.horizon, stream, past.rows))


@forward.register
def _(spec: CoxMixtureSpec, past, start, stream):
    start = _rows_start(past, start)
    K, w = spec.n_components, spec.marks.weight_array
    post = np.exp(spec.log_posterior_batch(past.times, past.marks, start))
    cum = np.cumsum(post, axis=1)
    u = stream.uniform(np.arange(past.rows)) * cum[:, -1]
    comp = np.minimum((cum <= u[:, None]).sum(axis=1), K - 1)
    sups = np.array([[c.sup(0.0, spec.horizon, x) * w[x] for x in range(spec.n_marks)] for c in spec.components])
    ceil = sups[comp]

    def rate_of(idx, t, x):
        out = np.empty(t.size)
        k = comp[idx]
        for kk, c in enumerate(spec.components):
            for m in range(spec.n_marks):
                sel = (k == kk) & (x == m)
                if sel.any():
                    out[sel] = c(t[sel], m) * w[m]
        return out

    return _finish(past, *_thin(rate_of, ceil, start, spec.horizon, stream, past.rows))


def _last_before(past: PointBatch, start: np.ndarray) -> np.ndarray:
    t = np.where(past.times < start[:, None], past.times, -np.inf)
    last = t.max(axis=1, initial=-np.inf)
    return np.where(np.isfinite(last), last, 0.0)


@forward.register
def _(spec: RenewalSpec, past, start, stream):
    start = _rows_start(past, start)
    law, T, rows = spec.law, spec.horizon, past.rows
    prev = _last_before(past, start)
    age = start - prev
    everyone = np.arange(rows)
    # first arrival after start: the spacing conditioned on exceeding the age
    y = law.log_tail(age) - _exp(stream.uniform(everyone))
    nxt = prev + np.maximum(law.log_tail_inv(y), age)
    cols = []
    active = nxt <= T
    while active.any():
        cols.append(np.where(active, nxt, np.inf)[:, None])
        idx = np.flatnonzero(active)
        step = law.log_tail_inv(-_exp(stream.uniform(idx)))
        nxt = np.full(rows, np.inf)
        nxt[idx] = cols[-1][idx, 0] + step
        active = nxt <= T
    return _finish(past, cols, [np.where(np.isfinite(c), 0, -1).astype(np.int64) for c in cols])


@forward.register
def _(spec: HawkesSpec, past, start, stream):
    start = _rows_start(past, start)
    T, phi, kern, rows = spec.horizon, spec.phi, spec.kernel, past.rows
    ceiling = phi.at_zero
    pts = past.times[:, np.isfinite(past.times).any(axis=0)]
    cur = start.copy()
    cols = []
    active = np.full(rows, ceiling > 0)
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cand = cur[idx] + _exp(stream.uniform(idx)) / ceiling
        ua = stream.uniform(idx)
        alive = cand <= T
        allp = np.concatenate([pts[idx]] + [c[idx] for c in cols], axis=1)
        lag = cand[:, None] - allp
        S = np.sum(np.where(lag > 0, kern(np.where(lag > 0, lag, 0.0)), 0.0), axis=1)
        lam = phi(S)
        if np.any(lam > ceiling * (1 + 1e-12)):
            raise CeilingViolation("Hawkes intensity exceeds phi(0)")
        acc = alive & (ua * ceiling < lam)
        if acc.any():
            col = np.full((rows, 1), np.inf)
            col[idx[acc], 0] = cand[acc]
            cols.append(col)
        cur[idx] = cand
        active[idx[~alive]] = False
    return _finish(past, cols, [np.where(np.isfinite(c), 0, -1).astype(np.int64) for c in cols])


# public API ----------------------------------------------------------------


def _empty(spec: ModelSpec, rows: int) -> PointBatch:
    return PointBatch(spec.horizon, np.full((rows, 0), np.inf), np.full((rows, 0), -1, dtype=np.int64))


def sample(spec: ModelSpec, seed: SeedSpec) -> Configuration:
    return forward(spec, _empty(spec, 1), np.zeros(1), RowStreams([seed.generator(SAMPLE)])).configuration(0)


def sample_conditional(spec: ModelSpec, past: Configuration, t: float, seed: SeedSpec) -> Configuration:
    """Draw N on [0, T] given that N restricted to [0, t) equals ``past``."""
    if len(past) and past.times[-1] >= t:
        raise ValueError("past contains points at or after the conditioning time")
    batch = PointBatch.from_configurations([past])
    return forward(spec, batch, np.array([float(t)]), RowStreams([seed.generator(SAMPLE)])).configuration(0)


def sample_completions(spec: ModelSpec, pasts: PointBatch, starts, stream) -> PointBatch:
    """Row-vectorized conditional completions; ``stream`` may be a bare generator."""
    if isinstance(stream, np.random.Generator):
        stream = SharedStream(stream)
    return forward(spec, pasts, np.asarray(starts, dtype=float), stream)


def node_streams(seed: SeedSpec, t, x: int, m: int) -> GroupStreams:
    """Streams for m completions at each time in t, keyed by (seed, t, x)."""
    bits = np.asarray(t, dtype=np.float64).reshape(-1).view(np.uint64)
    return GroupStreams((seed.generator(NODE + x, int(b)) for b in bits), m)


def sample_points(spec: ModelSpec, seed: SeedSpec, start: int, stop: int, purpose: int = SAMPLE) -> PointBatch:
    """Paths start..stop-1 of the batch keyed by ``seed`` as padded arrays.

    A different ``purpose`` yields a batch independent of the default one.
    """
    streams = RowStreams.for_paths(seed, start, stop, purpose)
    return forward(spec, _empty(spec, stop - start), np.zeros(stop - start), streams)


@dataclass
class PathBatch:
    configurations: list
    seed: SeedSpec

    def __len__(self):
        return len(self.configurations)

    def __getitem__(self, i):
        return self.configurations[i]

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(c) for c in self.configurations])

    def to_points(self) -> PointBatch:
        return PointBatch.from_configurations(self.configurations)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c.to_json()) + "\n" for c in self.configurations)


def sample_batch(spec: ModelSpec, n: int, seed: SeedSpec, threads: int = 1) -> PathBatch:
    """n independent paths; path i uses stream seed.stream_id + i."""
    if n < 1:
        raise ValueError("n must be at least 1")

    def task(a, b):
        return sample_points(spec, seed, a, b).to_configurations()

    return PathBatch(map_ranges(task, n, threads), seed)
