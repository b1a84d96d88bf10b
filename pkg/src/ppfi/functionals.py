"""Catalog functionals G of a configuration, evaluated on padded batches.

Every functional evaluates a whole :class:`PointBatch` at once; the add-one
cost D_(t,x)G = G(omega + eps_(t,x)) - G(omega) is obtained by appending a
column, so no functional needs its own derivative formula.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import catalog
from .core import Configuration, PointBatch


@dataclass(frozen=True)
class Functional:
    name: str
    batch: object  # PointBatch -> ndarray (rows,)
    lipschitz_d: float | None = None
    breaks: tuple = ()
    params: dict = field(default_factory=dict, compare=False)
    lip_of: object = field(default=None, compare=False)

    def lipschitz(self, horizon: float) -> float | None:
        """Bound on |G(omega + eps) - G(omega)| on [0, horizon]."""
        return self.lip_of(horizon) if self.lip_of is not None else self.lipschitz_d

    def evaluator(self, omega: Configuration) -> float:
        return float(self.batch(PointBatch.from_configurations([omega]))[0])

    __call__ = evaluator

    def eval_batch(self, points: PointBatch) -> np.ndarray:
        return np.asarray(self.batch(points), dtype=float)

    def add_one(self, omega: Configuration, t, x: int = 0) -> np.ndarray:
        """G(omega + eps_(t_j, x)) for every t_j; existing times are left as is."""
        t = np.asarray(t, dtype=float).reshape(-1)
        base = PointBatch.from_configurations([omega])
        rows = PointBatch(omega.horizon, np.repeat(base.times, t.size, axis=0), np.repeat(base.marks, t.size, axis=0))
        dup = np.isin(t, omega.times)
        plus = rows.with_point(np.where(dup, np.inf, t), np.where(dup, -1, x))
        return self.eval_batch(plus)

    def derivative(self, omega: Configuration, t, x: int = 0) -> np.ndarray:
        return self.add_one(omega, t, x) - self.evaluator(omega)

    def to_json(self) -> dict:
        return {"kind": re.split(r"[:(]", self.name, maxsplit=1)[0], **self.params}


def _mask(points: PointBatch, a: float, b: float) -> np.ndarray:
    return np.isfinite(points.times) & (points.times > a) & (points.times <= b)


def count(a: float = 0.0, b: float = math.inf) -> Functional:
    """N((a, b] x E)."""
    return Functional(f"count:a={a:g},b={b:g}", lambda p: _mask(p, a, b).sum(axis=1).astype(float), 1.0, (a, b),
                      {"a": a, "b": b})


def linear(c: float = 1.0) -> Functional:
    """c * N([0, T] x E)."""
    return Functional(f"linear:c={c:g}", lambda p: c * np.isfinite(p.times).sum(axis=1), abs(c), (), {"c": c})


def integral(g, by_mark: bool = False) -> Functional:
    """sum over points of g(t) (or g_x(t) when ``by_mark``)."""
    fns = tuple(catalog.time_function(f) for f in (g if by_mark else [g]))

    def run(p: PointBatch):
        fin = np.isfinite(p.times)
        vals = np.zeros(p.times.shape)
        for x, fn in enumerate(fns):
            sel = fin & ((p.marks == x) if by_mark else True)
            vals[sel] = fn(p.times[sel])
        return vals.sum(axis=1)

    def lip_of(horizon):
        return max(max(abs(fn.sup(0.0, horizon)), abs(fn.inf(0.0, horizon))) for fn in fns)

    brk = tuple(sorted({b for fn in fns for b in fn.breakpoints()}))
    params = {"g": [fn.to_json() for fn in fns] if by_mark else fns[0].to_json()}
    return Functional("integral", run, None, brk, params, lip_of)


def exp_count(c: float = 1.0, a: float = 0.0, b: float = math.inf) -> Functional:
    """exp(-c N((a, b]))."""
    return Functional(f"exp:c={c:g}", lambda p: np.exp(-c * _mask(p, a, b).sum(axis=1)), None, (a, b),
                      {"c": c, "a": a, "b": b})


def constant(value: float = 0.0) -> Functional:
    return Functional(f"constant:value={value:g}", lambda p: np.full(p.rows, float(value)), 0.0, (), {"value": value})


def clipped(inner: Functional, lo: float = -math.inf, hi: float = math.inf) -> Functional:
    return Functional(f"clip({inner.name},{lo:g},{hi:g})", lambda p: np.clip(inner.eval_batch(p), lo, hi),
                      inner.lipschitz_d, inner.breaks, {"inner": inner.to_json(), "lo": lo, "hi": hi},
                      inner.lip_of)


def _number(v):
    if isinstance(v, str) and v in ("+inf", "-inf", "inf"):
        return float(v)
    return v


def parse_functional(spec) -> Functional:
    """Parse "kind:k=v,..." strings or {"kind": ...} objects."""
    if isinstance(spec, Functional):
        return spec
    if isinstance(spec, str):
        kind, _, rest = spec.partition(":")
        params = {}
        for item in filter(None, rest.split(",")):
            k, eq, v = item.partition("=")
            if not eq:
                raise ValueError(f"functional parameter {item!r} is not key=value")
            params[k.strip()] = float(v)
        data = {"kind": kind.strip(), **params}
    else:
        data = dict(spec)
    kind = data.pop("kind", None)
    data = {k: _number(v) for k, v in data.items()}
    if kind == "count":
        return count(data.get("a", 0.0), data.get("b", math.inf))
    if kind == "linear":
        return linear(data.get("c", 1.0))
    if kind == "integral":
        if "g" in data:
            g = data["g"]
            return integral(g, by_mark=isinstance(g, list))
        return integral(catalog.Constant(data.get("value", 1.0)))
    if kind == "exp":
        return exp_count(data.get("c", 1.0), data.get("a", 0.0), data.get("b", math.inf))
    if kind == "constant":
        return constant(data.get("value", 0.0))
    if kind == "clip":
        return clipped(parse_functional(data["inner"]), data.get("lo", -math.inf), data.get("hi", math.inf))
    raise ValueError(f"unknown functional {kind!r}; choose count, linear, integral, exp, constant or clip")
