"""Doob exponentials, entropy cost and the variational formula for -log E[exp(-G)].

For a predictable control phi > -1 the Doob exponential

    E_t(phi) = exp( sum_{points <= t} log(1 + phi) - int_0^t phi lambda )

is the density of a tilted measure P_phi on F_t. The variational formula
reads -log E[exp(-G)] = inf_phi E_phi[G + L(phi)] with entropy cost
L(phi) = int ((1 + phi) log(1 + phi) - phi) lambda. Expectations under
P_phi are importance-weighted averages under P.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import Configuration, MCEstimate, PointBatch, SeedSpec, TimeGrid
from .functionals import Functional, clipped
from .models import ModelSpec, PoissonSpec, RateField, merged_nodes, trapezoid
from .parallel import map_ranges
from .projection import ConstantProcess, Predictable, _as_predictable, _completions, _insertion_times
from .simulate import sample_points


class SmallSampleWarning(UserWarning):
    """Effective sample size of an importance-weighted estimate is low."""


# controls ------------------------------------------------------------------


@dataclass(frozen=True)
class ControlProcess:
    """A predictable control phi with bounds lower <= phi <= upper, lower > -1."""

    process: Predictable
    lower: float
    upper: float
    name: str = "custom"

    def __post_init__(self):
        if not self.lower > -1:
            raise ValueError("controls need a lower bound strictly above -1")
        if not (math.isfinite(self.upper) and self.lower <= self.upper):
            raise ValueError("controls need a finite upper bound >= the lower bound")
        object.__setattr__(self, "process", _as_predictable(self.process))

    @classmethod
    def constant(cls, u: float) -> "ControlProcess":
        return cls(ConstantProcess(u), u, u, f"const:u={u:g}")

    @classmethod
    def deterministic(cls, fn, lower: float, upper: float, breaks=(), name: str = "deterministic") -> "ControlProcess":
        return cls(Predictable.deterministic(fn, breaks), lower, upper, name)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.process, ConstantProcess)

    def breakpoints(self) -> tuple:
        return self.process.breakpoints()

    def for_path(self, seed: SeedSpec) -> "ControlProcess":
        """The control used on the outer path keyed by ``seed``."""
        return self

    def values(self, spec: ModelSpec, omega: Configuration, nodes, x: int = 0) -> np.ndarray:
        v = np.asarray(self.process.values(spec, omega, nodes, x), dtype=float) * np.ones(np.shape(nodes))
        if np.any(v < self.lower - 1e-12) or np.any(v > self.upper + 1e-12):
            raise ValueError(f"control {self.name} left its declared bounds")
        return v

    def to_json(self) -> dict:
        return {"name": self.name, "lower": self.lower, "upper": self.upper}


def _optimal_stats(pi, F, Fplus, m):
    """Row-wise mean(pi F+) / (mean(F) mean(pi)) - 1 with a delta-method error."""
    A = pi * Fplus
    Abar, Bbar, Cbar = A.mean(axis=1), pi.mean(axis=1), F.mean(axis=1)
    se_B = pi.std(axis=1, ddof=1) / math.sqrt(m)
    zero = Bbar == 0
    safeB = np.where(zero, 1.0, Bbar)
    R = Abar / (safeB * Cbar)
    with np.errstate(divide="ignore", invalid="ignore"):
        infl = R[:, None] * (A / np.where(Abar == 0, 1.0, Abar)[:, None] - pi / safeB[:, None] - F / Cbar[:, None])
    se = np.where(zero, 0.0, infl.std(axis=1, ddof=1) / math.sqrt(m))
    value = np.where(zero, 0.0, R - 1)
    unstable = (~zero) & (Bbar <= 2 * se_B)
    return value, se, unstable


def optimal_control_rows(spec: ModelSpec, G: Functional, omega: Configuration, t, x: int, m: int, seed: SeedSpec,
                         grid: TimeGrid | None = None):
    """p(pi F+) / (p(F) p(pi)) - 1 with F = exp(-G) at each t, sharing completions."""
    t = np.asarray(t, dtype=float).reshape(-1)
    batch, starts = _completions(spec, omega, t, m, seed, x)
    pi = spec.papangelou_rows(batch.times, batch.marks, starts, x, grid)
    F = np.exp(-G.eval_batch(batch))
    Fp = np.exp(-G.eval_batch(batch.with_point(_insertion_times(starts, spec.horizon), x)))
    shape = (t.size, m)
    return _optimal_stats(pi.reshape(shape), F.reshape(shape), Fp.reshape(shape), m)


@dataclass(frozen=True)
class ControlEstimate:
    value: MCEstimate
    unstable: bool


def optimal_control(spec: ModelSpec, G: Functional, t: float, x: int, omega: Configuration, m: int, seed: SeedSpec,
                    grid: TimeGrid | None = None) -> ControlEstimate:
    """The minimizing control at (t, x) estimated from m completions of the past of omega."""
    if m < 2:
        raise ValueError("need at least two inner samples")
    value, se, unstable = optimal_control_rows(spec, G, omega, [t], x, m, seed, grid)
    return ControlEstimate(MCEstimate(float(value[0]), float(se[0]), m), bool(unstable[0]))


class _EstimatedProcess(Predictable):
    def __init__(self, G, m, seed, grid):
        super().__init__(lambda t, x, past: 0.0, "optimal")
        self.G, self.m, self.seed, self.grid = G, m, seed, grid

    def values(self, spec, omega, nodes, x=0):
        value, _, unstable = optimal_control_rows(spec, self.G, omega, nodes, x, self.m, self.seed, self.grid)
        return np.where(unstable, 0.0, value)


def estimated_optimal_control(G: Functional, lo: float, hi: float, m: int, grid: TimeGrid | None = None,
                              seed: SeedSpec | None = None) -> ControlProcess:
    """Nested estimate of the minimizing control for G with lo <= G <= hi.

    With F = exp(-G) bounded in [e^-hi, e^-lo], both the control and its
    estimate lie in [e^-(hi - lo) - 1, e^(hi - lo) - 1]. On each outer
    path the estimate at (t, x) uses completions keyed by the path seed,
    t and x, so it is a function of the strict past.
    """
    if not hi >= lo:
        raise ValueError("need lo <= hi")
    width = hi - lo
    ctrl = _BoundControl(_EstimatedProcess(G, m, seed or SeedSpec(0), grid), math.exp(-width) - 1, math.expm1(width),
                         f"optimal:m={m},lo={lo:g},hi={hi:g}")
    return ctrl


class _BoundControl(ControlProcess):
    def for_path(self, seed):
        p = self.process
        return replace(self, process=_EstimatedProcess(p.G, p.m, seed, p.grid))


def parse_control(text: str, G: Functional | None = None, grid: TimeGrid | None = None,
                  horizon: float | None = None) -> ControlProcess:
    """``const:u=...``, ``zero``, ``linear:a=...,b=...`` or ``optimal:m=...,lo=...,hi=...``."""
    kind, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        k, eq, v = item.partition("=")
        if not eq:
            raise ValueError(f"control parameter {item!r} is not key=value")
        params[k.strip()] = float(v)
    kind = kind.strip()
    if kind == "zero":
        return ControlProcess.constant(0.0)
    if kind == "const":
        return ControlProcess.constant(params.get("u", 0.0))
    if kind == "linear":
        a, b = params.get("a", 0.0), params.get("b", 0.0)
        T = horizon if horizon is not None else (grid.horizon if grid is not None else 1.0)
        lo, hi = sorted((a, a + b * T))
        return ControlProcess.deterministic(lambda t, x: a + b * np.asarray(t, dtype=float), lo, hi,
                                            name=f"linear:a={a:g},b={b:g}")
    if kind == "optimal":
        if G is None:
            raise ValueError("the optimal control needs the functional G")
        return estimated_optimal_control(G, params.get("lo", 0.0), params["hi"] if "hi" in params else _hi_of(G),
                                         int(params.get("m", 64)), grid)
    raise ValueError(f"unknown control {kind!r}; choose zero, const, linear or optimal")


def _hi_of(G: Functional) -> float:
    hi = G.params.get("hi")
    if hi is None or not math.isfinite(hi):
        raise ValueError("the optimal control needs an upper bound hi for G")
    return float(hi)


# path quantities -----------------------------------------------------------


def _entropy_density(u):
    u = np.asarray(u, dtype=float)
    return (1 + u) * np.log1p(u) - u


def _path_terms(spec: ModelSpec, phi: ControlProcess, omega: Configuration, grid: TimeGrid, t: float | None = None):
    """(log E_t(phi), L(phi) on [0, t]) along one path."""
    T = spec.horizon if t is None else float(t)
    jumps = 0.0
    for x in range(spec.n_marks):
        pts = omega.times[(omega.marks == x) & (omega.times <= T)]
        if pts.size:
            jumps += float(np.sum(np.log1p(phi.values(spec, omega, pts, x))))
    if phi.is_constant:
        u = phi.process.c
        lam_int = spec.compensator(omega, grid, 0.0, T) if T > 0 else 0.0
        return jumps - u * lam_int, float(_entropy_density(u)) * lam_int
    nodes = merged_nodes(grid, np.concatenate([spec.path_breakpoints(omega), phi.breakpoints()]), 0.0, T)
    lam = spec.intensity_nodes(omega, nodes)
    comp = cost = 0.0
    for x, w in enumerate(spec.marks.weights):
        v = phi.values(spec, omega, nodes, x)
        comp += w * trapezoid(v * lam[:, x], nodes)
        cost += w * trapezoid(_entropy_density(v) * lam[:, x], nodes)
    return jumps - comp, cost


def doob_exponential(spec: ModelSpec, phi: ControlProcess, omega: Configuration, t: float, grid: TimeGrid) -> float:
    """E_t(phi)(omega)."""
    logw, _ = _path_terms(spec, phi, omega, grid, t)
    if not math.isfinite(logw):
        raise ValueError("Doob exponent is not finite")
    return math.exp(logw)


def entropy_cost(spec: ModelSpec, phi: ControlProcess, omega: Configuration, grid: TimeGrid) -> float:
    """L(phi)(omega) = int ((1 + phi) log(1 + phi) - phi) lambda dt nu(dx)."""
    return _path_terms(spec, phi, omega, grid)[1]


def _weighted_paths(spec, phi, G_list, n, grid, seed, threads):
    """Per path: log E_T, L, and each functional of G_list."""
    def task(a, b):
        pts = sample_points(spec, seed, a, b)
        gv = [G.eval_batch(pts) for G in G_list]
        out = []
        for r in range(pts.rows):
            ctrl = phi.for_path(seed.child(a + r))
            logw, cost = _path_terms(spec, ctrl, pts.configuration(r), grid)
            out.append((logw, cost, *[g[r] for g in gv]))
        return out

    return np.array(map_ranges(task, n, threads), dtype=float).reshape(n, 2 + len(G_list))


def _check_envelope(spec: ModelSpec) -> bool:
    """True if the envelope is integrable, False if the model has no envelope."""
    try:
        env = spec.envelope()
    except ValueError:
        return False
    mass = sum(w * env.integral(0.0, spec.horizon, x) for x, w in enumerate(spec.marks.weights))
    if not math.isfinite(mass):
        raise ValueError("the model envelope is not integrable")
    return True


@dataclass
class TiltedEstimate:
    estimate: MCEstimate
    weight_mean: MCEstimate
    ess: float

    def to_json(self) -> dict:
        return {"estimate": self.estimate.to_json(), "weight_mean": self.weight_mean.to_json(), "ess": self.ess}


def _ess(w: np.ndarray) -> float:
    s2 = float(np.sum(w * w))
    return float(np.sum(w)) ** 2 / s2 if s2 > 0 else 0.0


def tilted_expectation(spec: ModelSpec, phi: ControlProcess, H: Functional, n: int, grid: TimeGrid, seed: SeedSpec,
                       threads: int = 1) -> TiltedEstimate:
    """E_phi[H] = E[H E_T(phi)], weights not self-normalized."""
    arr = _weighted_paths(spec, phi, [H], n, grid, seed, threads)
    w = np.exp(arr[:, 0])
    ess = _ess(w)
    if ess < 0.1 * n:
        warnings.warn(f"effective sample size {ess:.1f} is below 10% of n={n}", SmallSampleWarning, stacklevel=2)
    return TiltedEstimate(MCEstimate.from_samples(arr[:, 2] * w), MCEstimate.from_samples(w), ess)


@dataclass
class GapReport:
    lhs: MCEstimate
    rhs: MCEstimate
    gap: MCEstimate
    weight_mean: MCEstimate
    ess: float
    control: str
    envelope_checked: bool = True

    @property
    def nonnegative(self) -> bool:
        return self.gap.mean >= -3 * self.gap.std_error

    @property
    def tight(self) -> bool:
        return abs(self.gap.mean) <= 3 * self.gap.std_error

    @property
    def weights_ok(self) -> bool:
        return abs(self.weight_mean.mean - 1) <= 3 * self.weight_mean.std_error

    def to_json(self) -> dict:
        return {
            "control": self.control,
            "lhs": self.lhs.to_json(),
            "rhs": self.rhs.to_json(),
            "gap": self.gap.to_json(),
            "weight_mean": self.weight_mean.to_json(),
            "ess": self.ess,
            "nonnegative": self.nonnegative,
            "tight": self.tight,
            "weights_ok": self.weights_ok,
            "envelope_checked": self.envelope_checked,
        }


def variational_gap(spec: ModelSpec, G: Functional, phi: ControlProcess, n: int, grid: TimeGrid, seed: SeedSpec,
                    threads: int = 1) -> GapReport:
    """E_phi[G + L(phi)] - (-log E[exp(-G)]) on one set of n paths.

    The left side uses a delta-method error; the gap's error comes from the
    per-path influence w (G + L) + (exp(-G) - m) / m with m = mean exp(-G),
    which accounts for the two sides sharing paths.
    """
    checked = _check_envelope(spec)
    arr = _weighted_paths(spec, phi, [G], n, grid, seed, threads)
    w, cost, g = np.exp(arr[:, 0]), arr[:, 1], arr[:, 2]
    e = np.exp(-g)
    m = float(e.mean())
    if m <= 0:
        raise ValueError("E[exp(-G)] underflows on this sample")
    lhs_val = -math.log(m)
    lhs = MCEstimate(lhs_val, float(np.std(e, ddof=1) / math.sqrt(n) / m), n)
    rhs_s = w * (g + cost)
    rhs = MCEstimate.from_samples(rhs_s)
    infl = rhs_s + (e - m) / m
    gap = MCEstimate(rhs.mean - lhs_val, float(np.std(infl, ddof=1) / math.sqrt(n)), n)
    return GapReport(lhs, rhs, gap, MCEstimate.from_samples(w), _ess(w), phi.name, checked)


def truncation_trend(spec: ModelSpec, G: Functional, phi: ControlProcess, n: int, grid: TimeGrid, seed: SeedSpec,
                     levels=(1, 2, 4, 8), threads: int = 1) -> list:
    """Gaps for the truncations max(G, -k), k in ``levels``, on common paths."""
    return [{"level": k, **variational_gap(spec, clipped(G, lo=-k), phi, n, grid, seed, threads).to_json()}
            for k in levels]


# checks --------------------------------------------------------------------


def conditional_identity_check(spec: ModelSpec, G: Functional, phi: ControlProcess, times, n: int, m: int,
                               grid: TimeGrid, seed: SeedSpec) -> list:
    """E[G | F_t] against E[G] E_t(phi) at each t, phi the normalized integrand of G > 0.

    Per path, the left side averages G over m completions of the past; its
    inner variance / m is subtracted from the mean squared difference, so
    for the right control both the mean difference and the excess are 0.
    """
    pts = sample_points(spec, seed, 0, n)
    configs = pts.to_configurations()
    g_all = G.eval_batch(pts)
    EG = float(g_all.mean())
    rows = []
    for t in np.asarray(times, dtype=float):
        lhs, doob, noise = np.empty(n), np.empty(n), np.empty(n)
        for i, om in enumerate(configs):
            batch, _ = _completions(spec, om, [t], m, seed.child(i))
            gv = G.eval_batch(batch)
            ctrl = phi.for_path(seed.child(i))
            lhs[i] = gv.mean()
            doob[i] = math.exp(_path_terms(spec, ctrl, om, grid, t)[0])
            noise[i] = gv.var(ddof=1) / m
        diff = lhs - EG * doob
        # E[G] comes from the same paths; its error enters through doob's mean
        infl = diff - (g_all - EG) * doob.mean()
        d = MCEstimate(float(diff.mean()), float(np.std(infl, ddof=1) / math.sqrt(n)), n)
        excess = MCEstimate.from_samples(diff**2 - noise)
        rows.append({
            "t": float(t),
            "mean_difference": d.to_json(),
            "excess_square": excess.to_json(),
            "pass": bool(d.within(0.0) and excess.mean <= 3 * excess.std_error),
        })
    return rows


def tilted_poisson(spec: PoissonSpec, u: float) -> PoissonSpec:
    """Under a constant control u the Poisson rate becomes (1 + u) times the rate."""
    if not u > -1:
        raise ValueError("need u > -1")
    fns = tuple(_scaled(f, 1 + u) for f in spec.rate.functions)
    return PoissonSpec(spec.horizon, RateField(fns), spec.marks)


def _scaled(f, k: float):
    from . import catalog
    if isinstance(f, catalog.Constant):
        return catalog.Constant(f.value * k)
    if isinstance(f, catalog.Linear):
        return catalog.Linear(f.a * k, f.b * k)
    if isinstance(f, catalog.Indicator):
        return catalog.Indicator(f.lo, f.hi, f.value * k)
    if isinstance(f, catalog.Exponential):
        return catalog.Exponential(f.scale * k, f.rate)
    if isinstance(f, catalog.Cosine):
        return catalog.Cosine(f.base * k, f.amp * k, f.freq)
    raise ValueError(f"cannot scale rate function {f.kind!r}")


def direct_tilted_expectation(spec: PoissonSpec, u: float, H: Functional, n: int, seed: SeedSpec,
                              threads: int = 1) -> MCEstimate:
    """E_phi[H] for constant phi = u by simulating the tilted Poisson process."""
    tilted = tilted_poisson(spec, u)

    def task(a, b):
        return H.eval_batch(sample_points(tilted, seed, a, b))

    return MCEstimate.from_samples(np.asarray(map_ranges(task, n, threads)))
