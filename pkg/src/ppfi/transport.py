"""Deviation rates from transport inequalities.

A :class:`RateFunction` holds a bound h(t, x) on the add-one cost (plus
the predictable correction g2) and an envelope beta, both tabulated on
quadrature nodes. From them it computes

    Lambda(theta) = int (exp(theta h) - theta h - 1) beta dt nu(dx),
    c(x) = sup_{theta >= 0} (theta x - Lambda(theta)),

and the explicit lower bound c_tilde(x) when h is bounded. The deviation
bound for the mean of n i.i.d. copies is exp(-n c(r)).

Overflowing quantities are returned as ``math.inf``; reports render
them as the string "+inf".
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import catalog
from .core import MCEstimate, SeedSpec, TimeGrid
from .functionals import Functional
from .models import (CoxMixtureSpec, HawkesSpec, ModelSpec, PoissonSpec, RenewalSpec, merged_nodes,
                     trapezoid)
from .parallel import map_ranges
from .simulate import AUX, sample_points

EXP_GUARD = 700.0
GOLDEN_TOL = 1e-10
_INVPHI = (math.sqrt(5) - 1) / 2


def _quad_weights(nodes: np.ndarray) -> np.ndarray:
    dx = np.diff(nodes)
    w = np.zeros(nodes.size)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def _suffix_integral(values: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """int_{nodes[j]}^{T} values along axis 0, trapezoid rule, all j at once."""
    seg = np.diff(nodes)[:, None] * (values[1:] + values[:-1]) / 2 if values.ndim > 1 else \
        np.diff(nodes) * (values[1:] + values[:-1]) / 2
    out = np.zeros_like(values, dtype=float)
    out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    return out


@dataclass
class RateFunction:
    """h and beta on quadrature nodes, with Lambda, c and c_tilde.

    ``h`` and ``beta`` have shape (len(nodes), n_marks); ``mark_weights``
    are nu({x}). ``g1`` and ``g2`` keep the two parts of h for reports.
    """

    nodes: np.ndarray
    h: np.ndarray
    beta: np.ndarray
    mark_weights: np.ndarray
    g1: np.ndarray | None = None
    g2: np.ndarray | None = None
    label: str = ""
    _w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.h = np.asarray(self.h, dtype=float).reshape(self.nodes.size, -1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(self.nodes.size, -1) * np.ones_like(self.h)
        self.mark_weights = np.asarray(self.mark_weights, dtype=float)
        if np.any(self.h < 0) or np.any(self.beta < 0):
            raise ValueError("h and beta must be non-negative")
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.beta))):
            raise ValueError("h and beta must be finite on the grid")
        self._w = _quad_weights(self.nodes)[:, None] * self.mark_weights[None, :] * self.beta

    def h_field(self, t, x: int = 0):
        return np.interp(t, self.nodes, self.h[:, x])

    def beta_field(self, t, x: int = 0):
        return np.interp(t, self.nodes, self.beta[:, x])

    @property
    def S(self) -> float:
        """int h^2 beta dt nu(dx)."""
        return float(np.sum(self._w * self.h**2))

    @property
    def M(self) -> float:
        """max of h over the nodes."""
        return float(np.max(self.h))

    @property
    def B(self) -> float:
        """int beta dt nu(dx)."""
        return float(np.sum(self._w))

    def lam(self, theta: float) -> float:
        theta = float(theta)
        if theta < 0:
            raise ValueError("theta must be non-negative")
        if theta * self.M > EXP_GUARD:
            return math.inf
        u = theta * self.h
        return float(np.sum(self._w * (np.expm1(u) - u)))

    def dlam(self, theta: float) -> float:
        """Lambda'(theta) = int h (exp(theta h) - 1) beta."""
        if theta * self.M > EXP_GUARD:
            return math.inf
        return float(np.sum(self._w * self.h * np.expm1(theta * self.h)))

    def conjugate(self, x: float, tol: float = GOLDEN_TOL) -> float:
        return monotone_conjugate(self, x, tol)

    def c_tilde(self, x: float) -> float | None:
        if self.M <= 0 or self.S <= 0:
            return None
        return c_tilde(x, self.M, self.S)

    def lambda_table(self, tol: float = 1e-6, max_nodes: int = 4097) -> np.ndarray:
        """Rows (theta, Lambda) on [0, theta_cap], refined until linear interpolation is within tol."""
        if self.M == 0:
            return np.array([[0.0, 0.0], [1.0, 0.0]])
        cap = 20.0 / self.M
        thetas = list(np.linspace(0.0, cap, 33))
        vals = [self.lam(t) for t in thetas]
        i = 0
        while i < len(thetas) - 1 and len(thetas) < max_nodes:
            mid = 0.5 * (thetas[i] + thetas[i + 1])
            lm = self.lam(mid)
            if abs(lm - 0.5 * (vals[i] + vals[i + 1])) > tol * (1 + abs(lm)):
                thetas.insert(i + 1, mid)
                vals.insert(i + 1, lm)
            else:
                i += 1
        return np.column_stack([thetas, vals])

    def is_convex(self, tol: float = 1e-9) -> bool:
        """Slopes of the Lambda table are non-decreasing within tol."""
        tab = self.lambda_table()
        slopes = np.diff(tab[:, 1]) / np.diff(tab[:, 0])
        return bool(tab[0, 1] == 0 and np.all(np.diff(slopes) >= -tol * (1 + np.abs(slopes[1:]))))

    def lambda_csv(self) -> str:
        buf = io.StringIO()
        buf.write("theta,Lambda\n")
        for th, lv in self.lambda_table():
            buf.write(f"{th:.12g},{lv:.12g}\n")
        return buf.getvalue()

    def conjugate_csv(self, xs) -> str:
        buf = io.StringIO()
        buf.write("x,c,c_tilde\n")
        for x in xs:
            c = self.conjugate(float(x))
            ct = self.c_tilde(float(x))
            buf.write(f"{x:.12g},{_fmt(c)},{'' if ct is None else _fmt(ct)}\n")
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"label": self.label, "S": self.S, "M": self.M, "B": self.B, "nodes": int(self.nodes.size)}


def _fmt(v: float) -> str:
    return "+inf" if math.isinf(v) else f"{v:.12g}"


# Lambda and its conjugate --------------------------------------------------


def lambda_eval(rf: RateFunction, theta: float) -> float:
    """Lambda(theta); ``math.inf`` when theta * max h exceeds the exponent guard."""
    return rf.lam(theta)


def _golden_max(f, a: float, b: float, tol: float) -> float:
    """Argmax of a unimodal f on [a, b] to absolute tolerance tol."""
    c, d = b - _INVPHI * (b - a), a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def monotone_conjugate(rf: RateFunction, x: float, tol: float = GOLDEN_TOL) -> float:
    """c(x) = sup_{theta >= 0} (theta x - Lambda(theta)).

    The bracket doubles from theta = 1 until Lambda' reaches x, then a
    golden-section search locates the maximizer to ``tol`` in theta.
    Returns ``math.inf`` if the objective still rises at the exponent guard.
    """
    x = float(x)
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    hi = 1.0
    while rf.dlam(hi) < x:
        hi *= 2
        if hi * rf.M > EXP_GUARD or rf.M == 0:
            return math.inf
    lo = hi / 2 if hi > 1 else 0.0
    obj = lambda th: th * x - rf.lam(th)
    th = _golden_max(obj, lo, hi, tol)
    return max(0.0, obj(th), obj(lo), obj(hi))


def c_tilde(x: float, M: float, S: float) -> float:
    """((x + S/M) / M) log(1 + x M / S) - x / M."""
    if not (M > 0 and S > 0):
        raise ValueError("c_tilde needs M > 0 and S > 0")
    return ((x + S / M) / M) * math.log1p(x * M / S) - x / M


# h constructors ------------------------------------------------------------


def _g_table(g, nodes: np.ndarray, n_marks: int) -> tuple:
    """Values of g at nodes as (len, n_marks), and its breakpoints."""
    if isinstance(g, (list, tuple)):
        fns = [catalog.time_function(f) for f in g]
        if len(fns) != n_marks:
            raise ValueError(f"g lists {len(fns)} functions for {n_marks} marks")
    elif callable(g) and not isinstance(g, catalog.TimeFunction):
        vals = np.stack([np.asarray(g(nodes, x), dtype=float) * np.ones_like(nodes) for x in range(n_marks)], axis=1)
        return vals, ()
    else:
        fns = [catalog.time_function(g)] * n_marks
    vals = np.stack([np.asarray(f(nodes), dtype=float) * np.ones_like(nodes) for f in fns], axis=1)
    return vals, tuple(b for f in fns for b in f.breakpoints())


def _g_breaks(g) -> tuple:
    if isinstance(g, (list, tuple)):
        return tuple(b for f in g for b in catalog.time_function(f).breakpoints())
    if callable(g) and not isinstance(g, catalog.TimeFunction):
        return ()
    return tuple(catalog.time_function(g).breakpoints())


def _nodes(spec: ModelSpec, grid: TimeGrid, g, extra=()) -> np.ndarray:
    br = np.concatenate([np.asarray(spec.breakpoints(), dtype=float), np.asarray(_g_breaks(g), dtype=float),
                         np.asarray(extra, dtype=float)])
    return merged_nodes(grid, br)


def _finish(spec, nodes, g, g2, beta, label):
    g1 = np.abs(g)
    return RateFunction(nodes, g1 + g2, beta, spec.marks.weight_array, g1, g2, label)


def g2_poisson(spec: PoissonSpec, g, grid: TimeGrid):
    nodes = _nodes(spec, grid, g)
    vals, _ = _g_table(g, nodes, spec.n_marks)
    return nodes, vals, np.zeros_like(vals), spec.rate.values(nodes)


def g2_renewal(spec: RenewalSpec, g, grid: TimeGrid):
    tail_T = spec.tail_at_horizon
    if tail_T <= 0:
        raise ValueError("int_T^C f = 0: the renewal correction is undefined")
    beta = spec.envelope_constant
    nodes = _nodes(spec, grid, g)
    vals, _ = _g_table(g, nodes, 1)
    a = _suffix_integral(vals[:, 0] ** 2, nodes)
    b = _suffix_integral(np.abs(vals[:, 0]), nodes)
    pref = math.sqrt(2 * (spec.h_bar**2 + tail_T**-2 - 1))
    g2 = pref * np.sqrt(beta * a + beta**2 * b**2)
    return nodes, vals, g2[:, None], np.full((nodes.size, 1), beta)


def g2_hawkes(spec: HawkesSpec, g, grid: TimeGrid):
    T, lip, phi0 = spec.horizon, spec.phi.lip, spec.phi.at_zero
    env = spec.envelope()
    nodes = _nodes(spec, grid, g, env.breakpoints())
    vals, _ = _g_table(g, nodes, 1)
    k0 = float(spec.kernel.primitive(0.0))
    K = spec.kernel.primitive(T - nodes) - k0  # int_0^{T - s} h
    E = np.exp(lip * K)
    a = phi0 * _suffix_integral(vals[:, 0] ** 2 * E, nodes)
    b = phi0 * _suffix_integral(np.abs(vals[:, 0]) * E, nodes)
    g2 = math.sqrt(2) * np.sqrt(a + b**2) * np.sqrt(np.expm1(2 * lip * K))
    return nodes, vals, g2[:, None], (phi0 * E)[:, None]


def g2_cox(spec: CoxMixtureSpec, g, grid: TimeGrid):
    br = np.concatenate([np.asarray(spec.alpha.breakpoints(), dtype=float), np.asarray(spec.beta.breakpoints(), dtype=float)])
    nodes = _nodes(spec, grid, g, br)
    vals, _ = _g_table(g, nodes, spec.n_marks)
    alpha, beta = spec.alpha.values(nodes), spec.beta.values(nodes)
    if np.any(alpha <= 0):
        raise ValueError("the Cox correction needs alpha > 0 everywhere")
    w = spec.marks.weight_array[None, :]
    a = _suffix_integral(np.sum(vals**2 * beta * w, axis=1), nodes)
    b = _suffix_integral(np.sum(np.abs(vals) * beta * w, axis=1), nodes)
    ratio = np.sqrt(np.maximum(beta**2 / alpha**2 - 1, 0.0))
    g2 = math.sqrt(2) * np.sqrt(a + b**2)[:, None] * ratio
    return nodes, vals, g2, beta


def _g2_parts(spec: ModelSpec, g, grid: TimeGrid):
    if isinstance(spec, PoissonSpec):
        return g2_poisson(spec, g, grid)
    if isinstance(spec, RenewalSpec):
        return g2_renewal(spec, g, grid)
    if isinstance(spec, HawkesSpec):
        return g2_hawkes(spec, g, grid)
    if isinstance(spec, CoxMixtureSpec):
        return g2_cox(spec, g, grid)
    raise ValueError(f"no h constructor for model kind {spec.kind!r}")


def build_h_renewal(spec: RenewalSpec, g, grid: TimeGrid) -> RateFunction:
    return _finish(spec, *g2_renewal(spec, g, grid), "renewal")


def build_h_hawkes(spec: HawkesSpec, g, grid: TimeGrid) -> RateFunction:
    return _finish(spec, *g2_hawkes(spec, g, grid), "hawkes")


def build_h_cox(spec: CoxMixtureSpec, g, grid: TimeGrid) -> RateFunction:
    return _finish(spec, *g2_cox(spec, g, grid), "cox")


def build_h(spec: ModelSpec, g, grid: TimeGrid) -> RateFunction:
    """h = |g| + g2 for the first-order integral G = int g dN under ``spec``."""
    return _finish(spec, *_g2_parts(spec, g, grid), spec.kind)


def build_h_law(spec: ModelSpec, weight, grid: TimeGrid) -> RateFunction:
    """h_phi = phi + psi for the metric d_phi on configurations; psi is g2 with g := phi."""
    nodes, vals, psi, beta = _g2_parts(spec, weight, grid)
    if np.any(vals < 0):
        raise ValueError("the metric weight must be non-negative")
    return RateFunction(nodes, vals + psi, beta, spec.marks.weight_array, vals, psi, f"{spec.kind}-law")


# deviation -----------------------------------------------------------------


def deviation_bound(rf: RateFunction, n: int, r: float) -> float:
    """exp(-n c(r))."""
    if n < 1 or r < 0:
        raise ValueError("need n >= 1 and r >= 0")
    c = monotone_conjugate(rf, r)
    return 0.0 if math.isinf(c) else math.exp(-n * c)


@dataclass
class DeviationReport:
    empirical: MCEstimate
    bound: float
    rate: float
    mean_G: MCEstimate
    n: int
    r: float
    reps: int
    lipschitz: float
    pass_: bool

    def to_json(self) -> dict:
        return {
            "empirical": self.empirical.to_json(),
            "bound": self.bound,
            "c_r": self.rate,
            "mean_G": self.mean_G.to_json(),
            "n": self.n,
            "r": self.r,
            "reps": self.reps,
            "lipschitz": self.lipschitz,
            "pass": self.pass_,
        }


def empirical_deviation(spec: ModelSpec, G: Functional, rf: RateFunction, n: int, r: float, reps: int, seed: SeedSpec,
                        threads: int = 1, n_mean: int | None = None, bound_override: float | None = None) -> DeviationReport:
    """Frequency over ``reps`` blocks of n paths that the block mean of G reaches E[G] + r.

    E[G] comes from an independent batch of ``n_mean`` paths (default
    max(10^4, n * reps / 2)). Passes when the frequency is at most the bound
    plus three binomial standard errors.
    """
    lip = G.lipschitz(spec.horizon)
    if lip is None or lip > float(np.max(rf.g1 if rf.g1 is not None else rf.h)) + 1e-12:
        raise ValueError("G must have an add-one cost bounded by g1 = |g| of the rate function")
    n_mean = n_mean or max(10_000, n * reps // 2)

    def mean_task(a, b):
        return G.eval_batch(sample_points(spec, seed, a, b, AUX))

    def block_task(a, b):
        return G.eval_batch(sample_points(spec, seed, a, b))

    mean_G = MCEstimate.from_samples(np.asarray(map_ranges(mean_task, n_mean, threads)))
    vals = np.asarray(map_ranges(block_task, n * reps, threads)).reshape(reps, n)
    hits = (vals.mean(axis=1) >= mean_G.mean + r).astype(float)
    p = float(hits.mean())
    empirical = MCEstimate(p, math.sqrt(p * (1 - p) / reps), reps)
    c = monotone_conjugate(rf, r)
    bound = deviation_bound(rf, n, r) if bound_override is None else float(bound_override)
    ok = p <= bound + 3 * empirical.std_error
    return DeviationReport(empirical, bound, c, mean_G, n, r, reps, float(lip), bool(ok))
