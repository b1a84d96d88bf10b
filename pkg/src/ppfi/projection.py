"""Predictable projections, the Clark–Ocone integrand and compensated integrals.

Conditional expectations given F_{t-} are estimated by nested Monte Carlo:
the strict past of a path is completed ``m`` times with the conditional
sampler and averaged. All three projections in the integrand share the
same completions (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Configuration, MCEstimate, PointBatch, SeedSpec, TimeGrid, restrict_before
from .functionals import Functional
from .models import ModelSpec, break_eps, merged_nodes, trapezoid
from .parallel import map_ranges
from .simulate import node_streams, sample_completions, sample_points


# predictable fields --------------------------------------------------------


class Predictable:
    """A process X_(t,x)(omega) that only looks at the strict past of t.

    ``values(spec, omega, nodes, x)`` returns X at each node; the generic
    version calls the wrapped callable with ``restrict_before(omega, t)``.
    """

    def __init__(self, fn: Callable[[float, int, Configuration], float], name: str = "custom"):
        self.fn = fn
        self.name = name

    def __call__(self, t, x, past):
        return self.fn(t, x, past)

    def values(self, spec: ModelSpec, omega: Configuration, nodes, x: int = 0) -> np.ndarray:
        return np.array([self.fn(float(t), x, restrict_before(omega, float(t))) for t in nodes], dtype=float)

    def breakpoints(self) -> tuple:
        return ()

    @staticmethod
    def constant(c: float) -> "Predictable":
        return ConstantProcess(float(c))

    @staticmethod
    def deterministic(fn, breaks=()) -> "Predictable":
        return DeterministicProcess(fn, tuple(breaks))


class ConstantProcess(Predictable):
    def __init__(self, c: float):
        super().__init__(lambda t, x, past: c, f"const:{c:g}")
        self.c = c

    def values(self, spec, omega, nodes, x=0):
        return np.full(np.shape(nodes), self.c)


class DeterministicProcess(Predictable):
    """A deterministic function of (t, x), vectorized in t."""

    def __init__(self, fn, breaks=()):
        super().__init__(lambda t, x, past: float(fn(t, x)), "deterministic")
        self.vec = fn
        self.breaks = breaks

    def values(self, spec, omega, nodes, x=0):
        return np.asarray(self.vec(np.asarray(nodes, dtype=float), x), dtype=float)

    def breakpoints(self):
        return self.breaks


def _as_predictable(X) -> Predictable:
    if isinstance(X, Predictable):
        return X
    if isinstance(X, (int, float)):
        return Predictable.constant(X)
    return Predictable(X)


# projections ---------------------------------------------------------------


def _completions(spec: ModelSpec, omega: Configuration, t, m: int, seed: SeedSpec, x: int = 0) -> tuple:
    """m completions of the strict past at each time in t; rows grouped by time.

    The completions at t_j come from a stream keyed by (seed, t_j, x), so
    they depend on omega only through its points before t_j.
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    base = omega.times
    past_t = np.where(base[None, :] < t[:, None], base[None, :], np.inf)
    past_x = np.where(np.isfinite(past_t), omega.marks[None, :], -1)
    times = np.repeat(past_t, m, axis=0)
    marks = np.repeat(past_x, m, axis=0)
    starts = np.repeat(t, m)
    batch = sample_completions(spec, PointBatch(spec.horizon, times, marks), starts, node_streams(seed, t, x, m))
    return batch, starts


def _insertion_times(starts, horizon: float) -> np.ndarray:
    """Where the added point goes: node 0 takes the right limit, as points live in (0, T]."""
    return np.maximum(starts, break_eps(horizon))


def predictable_projection(spec: ModelSpec, X, t: float, x: int, omega: Configuration, m: int, seed: SeedSpec) -> MCEstimate:
    """E[X_(t,x) | F_{t-}](omega) from m conditional completions."""
    if m < 2:
        raise ValueError("need at least two inner samples")
    if X == "papangelou":
        batch, starts = _completions(spec, omega, [t], m, seed, x)
        return MCEstimate.from_samples(spec.papangelou_rows(batch.times, batch.marks, starts, x))
    batch, _ = _completions(spec, omega, [t], m, seed, x)
    vals = [float(X(t, x, batch.configuration(j))) for j in range(m)]
    return MCEstimate.from_samples(vals)


@dataclass(frozen=True)
class IntegrandEstimate:
    """Estimate of phi^(G) at one (t, x) with its stability diagnostics."""

    value: MCEstimate
    p_pi: MCEstimate
    unstable: bool


def _integrand_stats(pi, G, Gplus, m: int):
    """Ratio estimate (mean(pi G+) - mean(G) mean(pi)) / mean(pi) row-wise.

    Inputs are shaped (nodes, m). Returns mean, se, p_pi mean, p_pi se,
    unstable flag; a zero p_pi estimate gives exactly 0 (0/0 := 0).
    """
    # centre at one completion so constant G cancels exactly; the ratio is shift-invariant
    g0 = G[:, :1]
    G, Gplus = G - g0, Gplus - g0
    A = pi * Gplus
    Abar, Bbar, Cbar = A.mean(axis=1), pi.mean(axis=1), G.mean(axis=1)
    se_B = pi.std(axis=1, ddof=1) / math.sqrt(m)
    zero = Bbar == 0
    safeB = np.where(zero, 1.0, Bbar)
    ratio = Abar / safeB
    value = np.where(zero, 0.0, ratio - Cbar)
    # delta-method influence of each completion on the ratio
    infl = (A - ratio[:, None] * pi) / safeB[:, None] - G
    se = np.where(zero, 0.0, infl.std(axis=1, ddof=1) / math.sqrt(m))
    unstable = (~zero) & (Bbar <= 2 * se_B)
    return value, se, Bbar, se_B, unstable


def integrand_rows(spec: ModelSpec, G: Functional, omega: Configuration, t, x: int, m: int, seed: SeedSpec,
                   grid: TimeGrid | None = None):
    """phi^(G)_(t_j, x)(omega) at every t_j from one shared batch of completions."""
    t = np.asarray(t, dtype=float).reshape(-1)
    batch, starts = _completions(spec, omega, t, m, seed, x)
    pi = spec.papangelou_rows(batch.times, batch.marks, starts, x, grid)
    g = G.eval_batch(batch)
    gp = G.eval_batch(batch.with_point(_insertion_times(starts, spec.horizon), x))
    shape = (t.size, m)
    return _integrand_stats(pi.reshape(shape), g.reshape(shape), gp.reshape(shape), m)


def clark_ocone_integrand(spec: ModelSpec, G: Functional, t: float, x: int, omega: Configuration, m: int,
                          seed: SeedSpec, grid: TimeGrid | None = None) -> IntegrandEstimate:
    if m < 2:
        raise ValueError("need at least two inner samples")
    value, se, Bbar, se_B, unstable = integrand_rows(spec, G, omega, [t], x, m, seed, grid)
    return IntegrandEstimate(MCEstimate(float(value[0]), float(se[0]), m), MCEstimate(float(Bbar[0]), float(se_B[0]), m),
                             bool(unstable[0]))


@dataclass
class IntegrandField:
    """Estimated predictable process on nodes x marks."""

    nodes: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    unstable: np.ndarray
    n: int

    def estimate(self, j: int, x: int = 0) -> MCEstimate:
        return MCEstimate(float(self.mean[j, x]), float(self.std_error[j, x]), self.n)


def integrand_field(spec: ModelSpec, G: Functional, omega: Configuration, grid: TimeGrid, m: int, seed: SeedSpec) -> IntegrandField:
    nodes = grid.nodes
    cols = [integrand_rows(spec, G, omega, nodes, x, m, seed, grid) for x in range(spec.n_marks)]
    stack = lambda k: np.stack([c[k] for c in cols], axis=1)
    return IntegrandField(nodes, stack(0), stack(1), stack(4), m)


# compensated integrals -----------------------------------------------------


def compensated_integral(spec: ModelSpec, field, omega: Configuration, grid: TimeGrid) -> float:
    """delta(X) = sum over points of X(t, x, past) - int X lambda dt nu(dx)."""
    X = _as_predictable(field)
    total = 0.0
    for x in range(spec.n_marks):
        pts = omega.times[omega.marks == x]
        if pts.size:
            total += float(np.sum(X.values(spec, omega, pts, x)))
    return total - _compensator_of(spec, X, omega, grid)


def _compensator_of(spec: ModelSpec, X: Predictable, omega: Configuration, grid: TimeGrid, Y: Predictable | None = None) -> float:
    """int X (Y) lambda dt nu(dx) along omega."""
    if isinstance(X, ConstantProcess) and (Y is None or isinstance(Y, ConstantProcess)):
        c = X.c * (1.0 if Y is None else Y.c)
        return 0.0 if c == 0 else c * spec.compensator(omega, grid)
    breaks = np.concatenate([spec.path_breakpoints(omega), X.breakpoints(), () if Y is None else Y.breakpoints()])
    nodes = merged_nodes(grid, breaks)
    lam = spec.intensity_nodes(omega, nodes)
    w = spec.marks.weights
    total = 0.0
    for x in range(spec.n_marks):
        v = X.values(spec, omega, nodes, x)
        if Y is not None:
            v = v * Y.values(spec, omega, nodes, x)
        total += w[x] * trapezoid(v * lam[:, x], nodes)
    return total


def isometry_check(spec: ModelSpec, X, Y, n: int, grid: TimeGrid, seed: SeedSpec, threads: int = 1) -> dict:
    """E[delta(X) delta(Y)] against E[int X Y lambda]."""
    X, Y = _as_predictable(X), _as_predictable(Y)

    def task(a, b):
        pts = sample_points(spec, seed, a, b)
        out = []
        const = isinstance(X, ConstantProcess) and isinstance(Y, ConstantProcess)
        for r in range(pts.rows):
            om = pts.configuration(r)
            if const:
                lam = spec.compensator(om, grid)
                out.append((X.c * Y.c * (len(om) - lam) ** 2, X.c * Y.c * lam))
                continue
            out.append((compensated_integral(spec, X, om, grid) * compensated_integral(spec, Y, om, grid),
                        _compensator_of(spec, X, om, grid, Y)))
        return out

    vals = np.array(map_ranges(task, n, threads)).reshape(n, 2)
    lhs, rhs = MCEstimate.from_samples(vals[:, 0]), MCEstimate.from_samples(vals[:, 1])
    combined = math.hypot(lhs.std_error, rhs.std_error)
    diff = lhs.mean - rhs.mean
    return {
        "lhs": lhs,
        "rhs": rhs,
        "difference": diff,
        "combined_std_error": combined,
        "paired_std_error": float(np.std(vals[:, 0] - vals[:, 1], ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "pass": bool(abs(diff) <= 3 * combined),
    }


# Clark–Ocone residual ------------------------------------------------------


@dataclass
class ResidualReport:
    residual: MCEstimate
    var_G: MCEstimate
    mean_delta: MCEstimate
    unstable_entries: int
    total_entries: int
    m_inner: int
    grid_nodes: int
    bias_note: str = "bias O(1/m_inner) from inner noise at jump times plus O(grid step) quadrature"

    @property
    def relative(self) -> float:
        return self.residual.mean / self.var_G.mean if self.var_G.mean > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "residual": self.residual.to_json(),
            "var_G": self.var_G.to_json(),
            "relative_residual": self.relative,
            "mean_delta": self.mean_delta.to_json(),
            "unstable_entries": self.unstable_entries,
            "total_entries": self.total_entries,
            "m_inner": self.m_inner,
            "grid_nodes": self.grid_nodes,
            "bias": self.bias_note,
        }


def _variance_estimate(x: np.ndarray) -> MCEstimate:
    """Unbiased sample variance with a standard error from its summands."""
    n = x.size
    x = x - x[0]
    dev2 = (x - x.mean()) ** 2
    var = float(dev2.sum() / (n - 1))
    se = float(np.std(dev2, ddof=1) / math.sqrt(n)) * n / (n - 1)
    return MCEstimate(var, se, n)


def _path_residual(spec, G, omega, grid, m, seed_i, integrand):
    """(G(omega), delta(phi)(omega), unstable count, entries) for one outer path."""
    g = G.evaluator(omega)
    if integrand is not None:
        return g, compensated_integral(spec, integrand, omega, grid), 0, 0
    nodes = merged_nodes(grid, spec.path_breakpoints(omega))
    lam = spec.intensity_nodes(omega, nodes)
    comp, jumps, bad, entries = 0.0, 0.0, 0, 0
    for x in range(spec.n_marks):
        val, _, _, _, unstable = integrand_rows(spec, G, omega, nodes, x, m, seed_i, grid)
        val = np.where(unstable, 0.0, val)
        comp += spec.marks.weights[x] * trapezoid(val * lam[:, x], nodes)
        bad += int(unstable.sum())
        entries += val.size
        pts = omega.times[omega.marks == x]
        if pts.size:
            jv, _, _, _, ju = integrand_rows(spec, G, omega, pts, x, m, seed_i, grid)
            jumps += float(np.where(ju, 0.0, jv).sum())
            bad += int(ju.sum())
            entries += jv.size
    return g, jumps - comp, bad, entries


def clark_ocone_residual(spec: ModelSpec, G: Functional, n_outer: int, m_inner: int, grid: TimeGrid, seed: SeedSpec,
                         threads: int = 1, integrand=None) -> ResidualReport:
    """E[(G - E[G] - delta(phi^(G)))^2] by nested Monte Carlo.

    Since E[delta] = 0 this equals Var(G - delta), which is estimated by the
    sample variance of G_i - delta_i; no separate estimate of E[G] enters.
    ``integrand`` replaces the nested estimate by a known predictable process.
    """
    if integrand is not None:
        integrand = _as_predictable(integrand)

    def task(a, b):
        pts = sample_points(spec, seed, a, b)
        return [_path_residual(spec, G, pts.configuration(r), grid, m_inner, seed.child(a + r), integrand)
                for r in range(pts.rows)]

    rows = map_ranges(task, n_outer, threads, chunk=256)
    arr = np.array([(r[0], r[1]) for r in rows], dtype=float).reshape(-1, 2)
    return ResidualReport(
        residual=_variance_estimate(arr[:, 0] - arr[:, 1]),
        var_G=_variance_estimate(arr[:, 0]),
        mean_delta=MCEstimate.from_samples(arr[:, 1]),
        unstable_entries=sum(r[2] for r in rows),
        total_entries=sum(r[3] for r in rows),
        m_inner=m_inner,
        grid_nodes=grid.nodes.size,
    )
