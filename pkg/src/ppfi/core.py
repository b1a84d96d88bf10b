"""Shared value types: marks, configurations, time grids, estimates and seeds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

_U64 = 1 << 64


@dataclass(frozen=True)
class MarkSpace:
    """Finite mark set with atomic reference measure ``weights``."""

    labels: tuple = ("0",)
    weights: tuple = (1.0,)

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        weights = tuple(float(w) for w in self.weights)
        if len(labels) == 0 or len(labels) != len(weights):
            raise ValueError("mark space needs one positive weight per label")
        if any(not (w > 0 and math.isfinite(w)) for w in weights):
            raise ValueError("mark weights must be finite and strictly positive")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def unmarked(cls) -> "MarkSpace":
        return cls()

    def __len__(self):
        return len(self.labels)

    @property
    def total_mass(self) -> float:
        return float(sum(self.weights))

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def to_json(self) -> dict:
        return {"labels": list(self.labels), "weights": list(self.weights)}

    @classmethod
    def from_json(cls, data) -> "MarkSpace":
        if data is None:
            return cls.unmarked()
        if isinstance(data, int):
            return cls(tuple(str(i) for i in range(data)), (1.0,) * data)
        return cls(tuple(data["labels"]), tuple(data["weights"]))


@dataclass(frozen=True)
class MarkedPoint:
    t: float
    x: int = 0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"point time must be positive, got {self.t}")
        if self.x < 0:
            raise ValueError(f"mark index must be non-negative, got {self.x}")


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype).reshape(-1)
    out.setflags(write=False)
    return out


class Configuration:
    """A finite simple configuration of marked points on (0, horizon].

    Times are stored sorted and strictly increasing in a read-only array;
    every operation returns a new value.
    """

    __slots__ = ("horizon", "times", "marks")

    def __init__(self, horizon: float, times: Iterable[float] = (), marks: Iterable[int] | None = None):
        horizon = float(horizon)
        if not (horizon > 0 and math.isfinite(horizon)):
            raise ValueError(f"horizon must be finite and positive, got {horizon}")
        times = np.asarray(list(times) if not isinstance(times, np.ndarray) else times, dtype=float).reshape(-1)
        if marks is None:
            marks = np.zeros(times.size, dtype=np.int64)
        else:
            marks = np.asarray(list(marks) if not isinstance(marks, np.ndarray) else marks, dtype=np.int64).reshape(-1)
        if marks.size != times.size:
            raise ValueError("times and marks differ in length")
        if times.size:
            order = np.argsort(times, kind="stable")
            times, marks = times[order], marks[order]
            if times[0] <= 0 or times[-1] > horizon:
                raise ValueError("point times must lie in (0, horizon]")
            if np.any(np.diff(times) <= 0):
                raise ValueError("configuration is not simple: repeated time")
            if np.any(marks < 0):
                raise ValueError("mark indices must be non-negative")
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "times", _frozen(times, float))
        object.__setattr__(self, "marks", _frozen(marks, np.int64))

    def __setattr__(self, name, value):
        raise AttributeError("Configuration is immutable")

    def __reduce__(self):
        return (Configuration, (self.horizon, np.array(self.times), np.array(self.marks)))

    @classmethod
    def empty(cls, horizon: float) -> "Configuration":
        return cls(horizon)

    @classmethod
    def from_points(cls, horizon: float, points: Sequence[MarkedPoint]) -> "Configuration":
        return cls(horizon, [p.t for p in points], [p.x for p in points])

    @property
    def points(self) -> tuple:
        return tuple(MarkedPoint(float(t), int(x)) for t, x in zip(self.times, self.marks))

    def __len__(self):
        return int(self.times.size)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.marks, other.marks)
        )

    def __hash__(self):
        return hash((self.horizon, self.times.tobytes(), self.marks.tobytes()))

    def __repr__(self):
        pts = ", ".join(f"({t:.6g},{x})" for t, x in zip(self.times, self.marks))
        return f"Configuration(T={self.horizon:g}, [{pts}])"

    def add_point(self, p: MarkedPoint) -> "Configuration":
        return add_point(self, p)

    def restrict_before(self, t: float) -> "Configuration":
        return restrict_before(self, t)

    def restrict_upto(self, t: float) -> "Configuration":
        """Points with time <= t."""
        k = int(np.searchsorted(self.times, t, side="right"))
        return Configuration(self.horizon, self.times[:k], self.marks[:k])

    def count(self, a: float, b: float) -> int:
        return count(self, a, b)

    def to_json(self) -> list:
        return [{"t": float(t), "x": int(x)} for t, x in zip(self.times, self.marks)]

    @classmethod
    def from_json(cls, horizon: float, data) -> "Configuration":
        return cls(horizon, [d["t"] for d in data], [d.get("x", 0) for d in data])


def add_point(omega: Configuration, p: MarkedPoint) -> Configuration:
    """Return omega + eps_(t,x); an existing point at the same time wins."""
    if not (0 < p.t <= omega.horizon):
        raise ValueError(f"point time {p.t} outside (0, {omega.horizon}]")
    k = int(np.searchsorted(omega.times, p.t))
    if k < omega.times.size and omega.times[k] == p.t:
        return omega
    times = np.insert(omega.times, k, p.t)
    marks = np.insert(omega.marks, k, p.x)
    return Configuration(omega.horizon, times, marks)


def restrict_before(omega: Configuration, t: float) -> Configuration:
    """Points strictly before t: the data generating F_{t-}."""
    k = int(np.searchsorted(omega.times, t, side="left"))
    return Configuration(omega.horizon, omega.times[:k], omega.marks[:k])


def count(omega: Configuration, a: float, b: float) -> int:
    """Number of points with time in (a, b]."""
    if a > b:
        raise ValueError(f"empty interval: a={a} > b={b}")
    lo = np.searchsorted(omega.times, a, side="right")
    hi = np.searchsorted(omega.times, b, side="right")
    return int(hi - lo)


@dataclass(frozen=True)
class TimeGrid:
    """Quadrature nodes and weights on [0, T]."""

    horizon: float
    nodes: np.ndarray
    weights: np.ndarray
    rule: str = "trapezoid"

    @classmethod
    def uniform(cls, horizon: float, m: int = 512, rule: str = "trapezoid") -> "TimeGrid":
        if m < 1:
            raise ValueError("grid needs at least one cell")
        horizon = float(horizon)
        if rule == "trapezoid":
            nodes = np.linspace(0.0, horizon, m + 1)
            weights = np.full(m + 1, horizon / m)
            weights[0] = weights[-1] = horizon / (2 * m)
        elif rule == "midpoint":
            nodes = (np.arange(m) + 0.5) * (horizon / m)
            weights = np.full(m, horizon / m)
        else:
            raise ValueError(f"unknown quadrature rule {rule!r}")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        return cls(horizon, nodes, weights, rule)

    @property
    def m(self) -> int:
        return self.nodes.size - 1 if self.rule == "trapezoid" else self.nodes.size

    @property
    def step(self) -> float:
        return self.horizon / self.m

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def trapezoid_with_breaks(f, a: float, b: float, grid: TimeGrid, breaks=(), eps: float | None = None) -> float:
    """Trapezoid integral of a piecewise-smooth f over [a, b].

    Grid nodes inside [a, b] are merged with ``breaks``; each break is
    split into two nodes at break -/+ eps so jumps are integrated exactly.
    ``f`` must accept a sorted array of times.
    """
    if b <= a:
        return 0.0
    if eps is None:
        eps = 1e-10 * grid.horizon
    inner = grid.nodes[(grid.nodes > a) & (grid.nodes < b)]
    br = np.asarray(breaks, dtype=float)
    br = br[(br > a + eps) & (br < b - eps)]
    s = np.unique(np.concatenate([[a, b], inner, br - eps, br + eps]))
    v = np.asarray(f(s), dtype=float)
    return float(np.sum(np.diff(s) * (v[1:] + v[:-1])) / 2)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("an estimate needs at least one sample")
        if self.std_error < 0:
            raise ValueError("standard error must be non-negative")

    @classmethod
    def from_samples(cls, samples) -> "MCEstimate":
        x = np.asarray(samples, dtype=float).reshape(-1)
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(x)), se, n)

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.std_error

    def to_json(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n": self.n}


@dataclass(frozen=True)
class SeedSpec:
    """Counter-based seed: Philox keyed by (master_seed, stream_id).

    Draws for a stream start at counter words (0, 0, purpose, sub), so the
    tuple (master_seed, stream_id, purpose, sub, draw index) pins every
    random number no matter how paths are scheduled across workers.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) % _U64)
        object.__setattr__(self, "stream_id", int(self.stream_id) % _U64)

    def generator(self, purpose: int = 0, sub: int = 0) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=np.array([self.master_seed, self.stream_id], dtype=np.uint64),
            counter=np.array([0, 0, int(purpose) % _U64, int(sub) % _U64], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)

    def child(self, offset: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.stream_id + int(offset))

    def to_json(self) -> dict:
        return {"master_seed": self.master_seed, "stream_id": self.stream_id}


@dataclass
class PointBatch:
    """Many configurations on a common horizon as padded arrays.

    ``times`` is (rows, capacity) with +inf padding, ``marks`` uses -1.
    Rows are sorted. Used by the vectorized samplers and functionals.
    """

    horizon: float
    times: np.ndarray
    marks: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.atleast_2d(np.asarray(self.times, dtype=float))
        if self.marks is None:
            self.marks = np.where(np.isfinite(self.times), 0, -1).astype(np.int64)
        self.marks = np.atleast_2d(np.asarray(self.marks, dtype=np.int64))

    @property
    def rows(self) -> int:
        return self.times.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return np.isfinite(self.times).sum(axis=1)

    @classmethod
    def from_configurations(cls, configs: Sequence[Configuration]) -> "PointBatch":
        horizon = configs[0].horizon
        cap = max([len(c) for c in configs] + [1])
        times = np.full((len(configs), cap), np.inf)
        marks = np.full((len(configs), cap), -1, dtype=np.int64)
        for i, c in enumerate(configs):
            times[i, : len(c)] = c.times
            marks[i, : len(c)] = c.marks
        return cls(horizon, times, marks)

    def configuration(self, i: int) -> Configuration:
        keep = np.isfinite(self.times[i])
        return Configuration(self.horizon, self.times[i][keep], self.marks[i][keep])

    def to_configurations(self) -> list:
        return [self.configuration(i) for i in range(self.rows)]

    def with_point(self, t, x) -> "PointBatch":
        """Append the point (t, x) to every row (rows need not stay sorted)."""
        t = np.broadcast_to(np.asarray(t, dtype=float), (self.rows,))
        x = np.broadcast_to(np.asarray(x, dtype=np.int64), (self.rows,))
        times = np.concatenate([self.times, t[:, None]], axis=1)
        marks = np.concatenate([self.marks, x[:, None]], axis=1)
        return PointBatch(self.horizon, times, marks)

    def sorted(self) -> "PointBatch":
        order = np.argsort(self.times, axis=1, kind="stable")
        return PointBatch(
            self.horizon,
            np.take_along_axis(self.times, order, axis=1),
            np.take_along_axis(self.marks, order, axis=1),
        )
