"""Model families: Poisson, renewal, nonlinear Hawkes and finite-mixture Cox.

Each spec exposes the Papangelou conditional intensity ``papangelou``,
the stochastic intensity ``intensity`` (its predictable projection, known
in closed form for all four families) and a dominating envelope.

Node sweeps (``papangelou_nodes``, ``intensity_nodes``) evaluate one path
at many times at once and return arrays of shape (len(nodes), n_marks).
``path_breakpoints`` lists the times where those sweeps can jump, so
quadratures can split there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from . import catalog
from .core import Configuration, MarkSpace, TimeGrid

_EPS_REL = 1e-10


def break_eps(horizon: float) -> float:
    """Half-width used to split quadrature nodes around a jump."""
    return _EPS_REL * horizon


def merged_nodes(grid: TimeGrid, breaks, a: float = 0.0, b: float | None = None) -> np.ndarray:
    """Grid nodes in [a, b] merged with every break at -/+ eps."""
    b = grid.horizon if b is None else b
    eps = break_eps(grid.horizon)
    br = np.asarray(breaks, dtype=float).reshape(-1)
    br = br[(br > a + eps) & (br < b - eps)]
    inner = grid.nodes[(grid.nodes > a) & (grid.nodes < b)]
    return np.unique(np.concatenate([[a, b], inner, br - eps, br + eps]))


def trapezoid(values: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Trapezoid rule along axis 0."""
    dx = np.diff(nodes)
    v = np.asarray(values)
    if v.ndim == 1:
        return float(np.dot(dx, v[1:] + v[:-1]) / 2)
    return np.tensordot(dx, v[1:] + v[:-1], axes=(0, 0)) / 2


# fields --------------------------------------------------------------------


class Field:
    """A non-negative function of (time, mark index), vectorized in time."""

    n_marks: int = 1

    def __call__(self, t, x: int = 0):
        raise NotImplementedError

    def values(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float).reshape(-1)
        return np.stack([np.asarray(self(t, x), dtype=float) for x in range(self.n_marks)], axis=1)

    def breakpoints(self) -> tuple:
        return ()

    def integral(self, a: float, b: float, x: int, grid: TimeGrid | None = None) -> float:
        grid = grid or TimeGrid.uniform(b if b > 0 else 1.0, 4096)
        nodes = merged_nodes(grid, self.breakpoints(), a, b)
        return trapezoid(np.asarray(self(nodes, x), dtype=float), nodes)


@dataclass(frozen=True)
class RateField(Field):
    """One catalog time function per mark."""

    functions: tuple

    def __post_init__(self):
        fns = tuple(catalog.time_function(f) for f in self.functions)
        if not fns:
            raise ValueError("rate field needs at least one function")
        object.__setattr__(self, "functions", fns)

    @classmethod
    def parse(cls, data, n_marks: int = 1) -> "RateField":
        if isinstance(data, RateField):
            return data
        if isinstance(data, (list, tuple)):
            if len(data) != n_marks:
                raise ValueError(f"rate field lists {len(data)} functions for {n_marks} marks")
            return cls(tuple(data))
        return cls((data,) * n_marks)

    @property
    def n_marks(self):
        return len(self.functions)

    def __call__(self, t, x: int = 0):
        return self.functions[x](t)

    def primitive(self, t, x: int = 0):
        return self.functions[x].primitive(t)

    def integral(self, a, b, x, grid=None):
        return float(self.functions[x].integral(a, b))

    def breakpoints(self):
        return tuple(sorted({b for f in self.functions for b in f.breakpoints()}))

    def sup(self, a, b, x):
        return self.functions[x].sup(a, b)

    def inf(self, a, b, x):
        return self.functions[x].inf(a, b)

    def to_json(self):
        return [f.to_json() for f in self.functions]


@dataclass(frozen=True)
class PointwiseExtremum(Field):
    """Pointwise min or max of several rate fields."""

    fields: tuple
    mode: str = "max"

    @property
    def n_marks(self):
        return self.fields[0].n_marks

    def __call__(self, t, x: int = 0):
        vals = np.stack([np.asarray(f(t, x), dtype=float) for f in self.fields])
        out = vals.max(axis=0) if self.mode == "max" else vals.min(axis=0)
        return float(out) if np.ndim(t) == 0 else out

    def breakpoints(self):
        return tuple(sorted({b for f in self.fields for b in f.breakpoints()}))

    def sup(self, a, b, x):
        if self.mode == "max":
            return max(f.sup(a, b, x) for f in self.fields)
        s = np.linspace(a, b, 4097)
        return float(np.max(self(s, x)))


@dataclass(frozen=True)
class ConstantField(Field):
    value: float
    marks: int = 1

    @property
    def n_marks(self):
        return self.marks

    def __call__(self, t, x: int = 0):
        return float(self.value) if np.ndim(t) == 0 else np.full(np.shape(t), float(self.value))

    def integral(self, a, b, x, grid=None):
        return float(self.value) * (b - a)


@dataclass(frozen=True)
class HawkesEnvelope(Field):
    """phi(0) * exp(lip * int_0^{T-t} h)."""

    spec: "HawkesSpec"

    def __call__(self, t, x: int = 0):
        s = self.spec
        out = s.phi.at_zero * np.exp(s.phi.lip * s.kernel.primitive(s.horizon - np.asarray(t, dtype=float)))
        return float(out) if np.ndim(t) == 0 else out

    def breakpoints(self):
        return tuple(self.spec.horizon - b for b in self.spec.kernel.breakpoints())


# model specs ---------------------------------------------------------------


class ModelSpec:
    kind = "abstract"
    horizon: float
    marks: MarkSpace

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    def envelope(self) -> Field:
        raise NotImplementedError

    def breakpoints(self) -> tuple:
        """Deterministic times where intensities may jump."""
        return ()

    def path_breakpoints(self, omega: Configuration) -> np.ndarray:
        """Times where node sweeps of this path may jump."""
        return np.concatenate([np.asarray(self.breakpoints(), dtype=float), omega.times])

    def _check_time(self, t):
        if not (0 < t <= self.horizon):
            raise ValueError(f"time {t} outside (0, {self.horizon}]")

    def intensity(self, t: float, omega: Configuration, x: int = 0) -> float:
        """lambda_(t,x) given the strict past of omega."""
        self._check_time(t)
        return float(self.intensity_nodes(omega, np.array([t]))[0, x])

    def papangelou(self, t: float, omega: Configuration, x: int = 0, grid: TimeGrid | None = None) -> float:
        self._check_time(t)
        return float(self.papangelou_nodes(omega, np.array([t]), grid)[0, x])

    def intensity_nodes(self, omega: Configuration, nodes) -> np.ndarray:
        raise NotImplementedError

    def papangelou_nodes(self, omega: Configuration, nodes, grid: TimeGrid | None = None) -> np.ndarray:
        raise NotImplementedError

    def papangelou_rows(self, times: np.ndarray, marks: np.ndarray, t, x: int = 0, grid: TimeGrid | None = None) -> np.ndarray:
        """pi_(t_r, x)(omega_r) for padded rows omega_r, one time per row."""
        t = np.asarray(t, dtype=float).reshape(-1)
        out = np.empty(t.size)
        for r in range(t.size):
            keep = np.isfinite(times[r])
            omega = Configuration(self.horizon, times[r][keep], marks[r][keep])
            out[r] = self.papangelou_nodes(omega, t[r : r + 1], grid)[0, x]
        return out

    def compensator(self, omega: Configuration, grid: TimeGrid, a: float = 0.0, b: float | None = None) -> float:
        """int_a^b sum_x lambda_(s,x) nu({x}) ds along omega."""
        nodes = merged_nodes(grid, self.path_breakpoints(omega), a, b)
        lam = self.intensity_nodes(omega, nodes) @ self.marks.weight_array
        return trapezoid(lam, nodes)

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PoissonSpec(ModelSpec):
    horizon: float
    rate: RateField
    marks: MarkSpace = field(default_factory=MarkSpace.unmarked)
    kind = "poisson"

    def __post_init__(self):
        object.__setattr__(self, "rate", RateField.parse(self.rate, len(self.marks)))
        if self.rate.n_marks != len(self.marks):
            raise ValueError("rate field and mark space disagree on the number of marks")

    def envelope(self):
        return self.rate

    def breakpoints(self):
        return self.rate.breakpoints()

    def path_breakpoints(self, omega):
        return np.asarray(self.breakpoints(), dtype=float)

    def intensity_nodes(self, omega, nodes):
        return self.rate.values(nodes)

    def papangelou_nodes(self, omega, nodes, grid=None):
        return self.rate.values(nodes)

    def papangelou_rows(self, times, marks, t, x=0, grid=None):
        return np.asarray(self.rate(np.asarray(t, dtype=float).reshape(-1), x), dtype=float)

    def compensator(self, omega, grid, a=0.0, b=None):
        b = self.horizon if b is None else b
        return float(sum(w * self.rate.integral(a, b, x) for x, w in enumerate(self.marks.weights)))

    def mean_measure(self) -> float:
        return self.compensator(Configuration.empty(self.horizon), None)

    def to_json(self):
        return {"kind": self.kind, "horizon": self.horizon, "rate": self.rate.to_json(), "marks": self.marks.to_json()}


@dataclass(frozen=True)
class RenewalSpec(ModelSpec):
    horizon: float
    law: catalog.SpacingLaw
    marks: MarkSpace = field(default_factory=MarkSpace.unmarked)
    kind = "renewal"

    def __post_init__(self):
        object.__setattr__(self, "law", catalog.spacing(self.law))
        if len(self.marks) != 1:
            raise ValueError("renewal processes are unmarked")
        x = np.linspace(0.0, self.horizon, 1025)
        tail = self.law.tail(x)
        if abs(tail[0] - 1) > 1e-6 or np.any(np.diff(tail) > 1e-12):
            raise ValueError("spacing tail must start at 1 and be non-increasing")

    # spacing helpers
    def f(self, x):
        return self.law.pdf(x)

    def tail(self, x):
        return self.law.tail(x)

    @cached_property
    def tail_at_horizon(self) -> float:
        """int_T^C f = Fbar(T) - Fbar(C)."""
        return float(self.law.tail(self.horizon)) - (0.0 if math.isinf(self.law.C) else float(self.law.tail(self.law.C)))

    def h_ratio(self, z: float, nodes: int = 1024) -> float:
        """h(z) = sup_{x in [z, T]} f(x - z) / f(x) by grid search plus refinement."""
        T = self.horizon
        if z > T:
            raise ValueError("h(z) is defined for z in [0, T]")
        x = np.linspace(z, T, nodes + 1)
        fx = self.f(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(fx > 0, self.f(x - z) / fx, np.where(self.f(x - z) > 0, np.inf, 0.0))
        if not np.all(np.isfinite(r)):
            raise ValueError(f"h({z}) diverges: f vanishes where f(x - z) does not")
        k = int(np.argmax(r))
        best = float(r[k])
        lo, hi = x[max(k - 1, 0)], x[min(k + 1, nodes)]
        if hi > lo:
            res = minimize_scalar(lambda u: -float(self.f(u - z) / self.f(u)), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12})
            if res.success and np.isfinite(res.fun):
                best = max(best, -float(res.fun))
        return best

    @cached_property
    def h_bar(self) -> float:
        """sup_z h(z) over [0, T]."""
        zs = np.linspace(0.0, self.horizon, 257)
        vals = [self.h_ratio(float(z)) for z in zs]
        k = int(np.argmax(vals))
        best = vals[k]
        lo, hi = zs[max(k - 1, 0)], zs[min(k + 1, zs.size - 1)]
        res = minimize_scalar(lambda z: -self.h_ratio(z), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        return max(best, -float(res.fun))

    def _sup_f(self, a: float, b: float) -> float:
        x = np.linspace(a, b, 4097)
        fx = self.f(x)
        k = int(np.argmax(fx))
        lo, hi = x[max(k - 1, 0)], x[min(k + 1, x.size - 1)]
        res = minimize_scalar(lambda u: -float(self.f(u)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        return max(float(fx[k]), -float(res.fun))

    @cached_property
    def envelope_constant(self) -> float:
        T = self.horizon
        sup_T = self._sup_f(0.0, T)
        far = self.law.C if math.isfinite(self.law.C) else float(self.law.log_tail_inv(math.log(1e-16)))
        sup_C = max(sup_T, self._sup_f(0.0, max(far, T)))
        x = np.linspace(self.law.a, T, 4097)
        min_f = float(np.min(self.f(x)))
        if min_f <= 0:
            raise ValueError("renewal envelope undefined: min of f over [a, T] is 0")
        tail_T = self.tail_at_horizon
        if tail_T <= 0:
            raise ValueError("renewal envelope undefined: int_T^C f = 0")
        return max(sup_T / tail_T, sup_C + sup_T**2 / min_f)

    def envelope(self):
        return ConstantField(self.envelope_constant)

    def _last_before(self, omega: Configuration, nodes: np.ndarray):
        k = np.searchsorted(omega.times, nodes, side="left")
        prev = np.where(k > 0, np.concatenate([[0.0], omega.times])[k], 0.0)
        return k, prev

    def intensity_nodes(self, omega, nodes):
        nodes = np.asarray(nodes, dtype=float)
        _, prev = self._last_before(omega, nodes)
        return self.law.hazard(nodes - prev)[:, None]

    def papangelou_nodes(self, omega, nodes, grid=None):
        nodes = np.asarray(nodes, dtype=float)
        # T_{i-1} <= t < T_i: previous point is the last one <= t
        times = omega.times
        k = np.searchsorted(times, nodes, side="right")
        prev = np.concatenate([[0.0], times])[k]
        nxt = np.concatenate([times, [np.inf]])[k]
        return self._pi_from_neighbours(nodes, prev, nxt)[:, None]

    def papangelou_rows(self, times, marks, t, x=0, grid=None):
        times = np.atleast_2d(times)
        t = np.asarray(t, dtype=float).reshape(-1)
        k = (times <= t[:, None]).sum(axis=1)
        ext = np.concatenate([np.zeros((times.shape[0], 1)), times, np.full((times.shape[0], 1), np.inf)], axis=1)
        rows = np.arange(t.size)
        prev, nxt = ext[rows, k], ext[rows, k + 1]
        return self._pi_from_neighbours(t, prev, nxt)

    def _pi_from_neighbours(self, t, prev, nxt):
        f = self.f
        has_next = np.isfinite(nxt)
        left = f(t - prev)
        with np.errstate(divide="ignore", invalid="ignore"):
            right = np.where(has_next, f(np.where(has_next, nxt - t, 0.0)), self.law.tail(self.horizon - t))
            den = np.where(has_next, f(np.where(has_next, nxt - prev, 1.0)), self.law.tail(self.horizon - prev))
            num = left * right
            return np.where(num == 0, 0.0, num / den)

    def compensator(self, omega, grid, a=0.0, b=None):
        """Exact: sum of cumulative hazards over the spacings cut at a and b."""
        b = self.horizon if b is None else b
        return self._cumhaz(omega, b) - self._cumhaz(omega, a)

    def _cumhaz(self, omega, t):
        times = omega.times[omega.times < t]
        pts = np.concatenate([[0.0], times])
        full = -np.sum(self.law.log_tail(np.diff(pts))) if times.size else 0.0
        return float(full - self.law.log_tail(t - pts[-1]))

    def to_json(self):
        return {"kind": self.kind, "horizon": self.horizon, "spacing": self.law.to_json()}


@dataclass(frozen=True)
class HawkesSpec(ModelSpec):
    horizon: float
    phi: catalog.Link
    kernel: catalog.TimeFunction
    marks: MarkSpace = field(default_factory=MarkSpace.unmarked)
    kind = "hawkes"

    def __post_init__(self):
        object.__setattr__(self, "phi", catalog.link(self.phi))
        object.__setattr__(self, "kernel", catalog.time_function(self.kernel))
        if len(self.marks) != 1:
            raise ValueError("Hawkes processes are unmarked here")
        if not self.phi.at_zero >= 0:
            raise ValueError("phi(0) must be non-negative")
        u = np.linspace(0.0, 10.0, 257)
        if np.any(np.diff(self.phi(u)) > 1e-12):
            raise ValueError("phi must be non-increasing")
        rng = np.random.default_rng(0)
        a, b = rng.uniform(0, 10, 64), rng.uniform(0, 10, 64)
        if np.any(np.abs(self.phi(a) - self.phi(b)) > self.phi.lip * np.abs(a - b) + 1e-12):
            raise ValueError("phi violates its Lipschitz constant")
        if self.kernel.inf(0.0, self.horizon) < 0:
            raise ValueError("kernel must be non-negative")

    def envelope(self):
        return HawkesEnvelope(self)

    @property
    def kernel_reach(self) -> float:
        return min(self.kernel.support_end(), self.horizon)

    @cached_property
    def _kernel_breaks(self) -> np.ndarray:
        br = np.asarray(self.kernel.breakpoints(), dtype=float)
        return br[(br > 0) & (br <= self.horizon)]

    def path_breakpoints(self, omega):
        u = omega.times
        kb = self._kernel_breaks
        return np.concatenate([u, (u[:, None] + kb[None, :]).ravel(), (u[:, None] - kb[None, :]).ravel()])

    def excitation(self, omega: Configuration, s) -> np.ndarray:
        """S(s) = sum_{u in omega, u < s} h(s - u)."""
        s = np.asarray(s, dtype=float)
        u = omega.times
        if u.size == 0:
            return np.zeros(s.shape)
        lag = s[..., None] - u
        return np.sum(np.where(lag > 0, self.kernel(np.maximum(lag, 0.0)), 0.0), axis=-1)

    def intensity_nodes(self, omega, nodes):
        return np.asarray(self.phi(self.excitation(omega, nodes)), dtype=float).reshape(-1, 1)

    def _sgrid(self, omega: Configuration, grid: TimeGrid) -> np.ndarray:
        u = omega.times
        kb = self._kernel_breaks
        br = np.concatenate([u, (u[:, None] + kb[None, :]).ravel()])
        return merged_nodes(grid, br)

    def papangelou_nodes(self, omega, nodes, grid=None):
        grid = grid or TimeGrid.uniform(self.horizon)
        nodes = np.asarray(nodes, dtype=float).reshape(-1)
        T = self.horizon
        eps = break_eps(T)
        phi, kern = self.phi, self.kernel
        lam = phi(self.excitation(omega, nodes))

        # continuous exponent: int_t^{end} phi(S) - phi(h(s - t) + S) ds
        reach = self.kernel_reach
        end = np.minimum(nodes + reach, T)
        P = self._sgrid(omega, grid)
        lo = np.searchsorted(P, nodes, side="right")
        hi = np.searchsorted(P, end, side="left")
        width = int(np.max(hi - lo, initial=0))
        idx = lo[:, None] + np.arange(width)[None, :]
        inside = idx < hi[:, None]
        window = np.where(inside, P[np.minimum(idx, P.size - 1)], end[:, None])
        kb = self._kernel_breaks
        kb = kb[kb < reach]
        extra = (nodes[:, None] + np.concatenate([kb - eps, kb + eps])[None, :]) if kb.size else np.empty((nodes.size, 0))
        extra = np.clip(extra, nodes[:, None], end[:, None])
        s = np.sort(np.concatenate([nodes[:, None], window, extra, end[:, None]], axis=1), axis=1)
        S = self.excitation(omega, s)
        shift = kern(np.clip(s - nodes[:, None], 0.0, reach))
        integrand = phi(S) - phi(shift + S)
        expo1 = np.sum(np.diff(s, axis=1) * (integrand[:, 1:] + integrand[:, :-1]), axis=1) / 2

        # jump exponent: sum over later points of log phi(h + S(u)) - log phi(S(u))
        u = omega.times
        expo2 = np.zeros(nodes.size)
        dead = np.zeros(nodes.size, dtype=bool)
        if u.size:
            Su = self.excitation(omega, u)
            base = phi(Su)
            if np.any(base <= 0):
                raise ValueError("configuration has a point where phi(S) = 0; it has probability zero")
            later = u[None, :] > nodes[:, None]
            shifted = phi(kern(np.maximum(u[None, :] - nodes[:, None], 0.0)) * later + Su[None, :])
            dead = np.any(later & (shifted <= 0), axis=1)
            with np.errstate(divide="ignore"):
                ratio = np.where(later & ~dead[:, None], np.log(np.where(shifted > 0, shifted, 1.0)) - np.log(base), 0.0)
            expo2 = ratio.sum(axis=1)
        out = np.where(dead | (lam <= 0), 0.0, lam * np.exp(expo1 + expo2))
        return out.reshape(-1, 1)

    def to_json(self):
        return {"kind": self.kind, "horizon": self.horizon, "phi": self.phi.to_json(), "kernel": self.kernel.to_json()}


@dataclass(frozen=True)
class CoxMixtureSpec(ModelSpec):
    horizon: float
    components: tuple
    prior: tuple
    marks: MarkSpace = field(default_factory=MarkSpace.unmarked)
    alpha: Field | None = None
    beta: Field | None = None
    kind = "cox"

    def __post_init__(self):
        comps = tuple(RateField.parse(c, len(self.marks)) for c in self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        prior = np.asarray(self.prior, dtype=float)
        if prior.size != len(comps) or np.any(prior < 0) or abs(prior.sum() - 1) > 1e-9:
            raise ValueError("prior weights must be non-negative, one per component, summing to 1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "prior", tuple(float(p) for p in prior))
        alpha = self.alpha if self.alpha is not None else PointwiseExtremum(comps, "min")
        beta = self.beta if self.beta is not None else PointwiseExtremum(comps, "max")
        alpha = alpha if isinstance(alpha, Field) else RateField.parse(alpha, len(self.marks))
        beta = beta if isinstance(beta, Field) else RateField.parse(beta, len(self.marks))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        nodes = merged_nodes(TimeGrid.uniform(self.horizon, 512), self.breakpoints())
        lo, hi = alpha.values(nodes), beta.values(nodes)
        for c in comps:
            v = c.values(nodes)
            if np.any(v < lo - 1e-12) or np.any(v > hi + 1e-12):
                raise ValueError("every component must lie between the envelopes alpha and beta")

    @property
    def n_components(self) -> int:
        return len(self.components)

    def envelope(self):
        return self.beta

    def breakpoints(self):
        return tuple(sorted({b for c in self.components for b in c.breakpoints()}))

    @cached_property
    def _log_prior(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.prior))

    def _cum_mass(self, t) -> np.ndarray:
        """int_0^t sum_x lambda_k nu: shape (len(t), K)."""
        t = np.asarray(t, dtype=float).reshape(-1)
        w = self.marks.weight_array
        return np.stack([sum(w[x] * c.primitive(t, x) - w[x] * c.primitive(0.0, x) for x in range(len(w)))
                         for c in self.components], axis=1)

    def _point_logs(self, omega: Configuration) -> np.ndarray:
        """log lambda_k at each point of omega: shape (N, K)."""
        if len(omega) == 0:
            return np.zeros((0, self.n_components))
        vals = np.stack([np.array([c(t, x) for t, x in zip(omega.times, omega.marks)], dtype=float)
                         for c in self.components], axis=1)
        with np.errstate(divide="ignore"):
            return np.log(vals)

    def log_posterior(self, omega: Configuration, upto=None) -> np.ndarray:
        """Normalized log weights given the points of omega before each time in ``upto``.

        Returns shape (len(upto), K); ``upto=None`` means the whole horizon.
        """
        logs = self._point_logs(omega)
        cum = np.vstack([np.zeros((1, self.n_components)), np.cumsum(logs, axis=0)])
        if upto is None:
            upto, k = np.array([self.horizon]), np.array([len(omega)])
        else:
            upto = np.asarray(upto, dtype=float).reshape(-1)
            k = np.searchsorted(omega.times, upto, side="left")
        raw = self._log_prior[None, :] - self._cum_mass(upto) + cum[k]
        norm = logsumexp(raw, axis=1, keepdims=True)
        if np.any(~np.isfinite(norm)):
            raise ValueError("every mixture component has zero likelihood for this configuration")
        return raw - norm

    def log_posterior_batch(self, times: np.ndarray, marks: np.ndarray, upto=None) -> np.ndarray:
        """Row-wise log weights from padded point arrays, counting points < upto[r].

        ``upto=None`` uses every point and the mass of the whole horizon.
        """
        times = np.atleast_2d(times)
        if upto is None:
            use = np.isfinite(times)
            upto = np.full(times.shape[0], self.horizon)
        else:
            upto = np.asarray(upto, dtype=float).reshape(-1)
            use = np.isfinite(times) & (times < upto[:, None])
        raw = self._log_prior[None, :] - self._cum_mass(upto)
        for k, c in enumerate(self.components):
            vals = np.zeros(times.shape)
            for x in range(self.n_marks):
                sel = use & (marks == x)
                vals[sel] = c(times[sel], x)
            with np.errstate(divide="ignore"):
                logs = np.where(use, np.log(np.where(use, vals, 1.0)), 0.0)
            raw[:, k] += logs.sum(axis=1)
        norm = logsumexp(raw, axis=1, keepdims=True)
        if np.any(~np.isfinite(norm)):
            raise ValueError("every mixture component has zero likelihood for this configuration")
        return raw - norm

    def posterior(self, omega: Configuration) -> np.ndarray:
        return np.exp(self.log_posterior(omega)[0])

    def compensator(self, omega, grid=None, a=0.0, b=None):
        """Exact: log Z(a) - log Z(b) + sum of log lambda at the points in [a, b).

        Z(t) is the unnormalized mixture likelihood of the points before t;
        between points -d log Z/dt is the intensity, and each point multiplies
        Z by the intensity just before it.
        """
        b = self.horizon if b is None else b
        if b <= a:
            return 0.0
        cum = np.vstack([np.zeros((1, self.n_components)), np.cumsum(self._point_logs(omega), axis=0)])
        i0, i1 = np.searchsorted(omega.times, [a, b], side="left")
        pts = omega.times[i0:i1]
        idx = np.arange(i0, i1)
        t = np.concatenate([[a, b], pts, pts])
        k = np.concatenate([[i0, i1], idx, idx + 1])
        with np.errstate(divide="ignore"):
            raw = self._log_prior[None, :] - self._cum_mass(t) + cum[k]
        z = logsumexp(raw, axis=1)
        n = pts.size
        return float(z[0] - z[1] + np.sum(z[2 + n :] - z[2 : 2 + n]))

    def _component_values(self, nodes) -> np.ndarray:
        return np.stack([c.values(nodes) for c in self.components], axis=1)  # (len, K, marks)

    def papangelou_nodes(self, omega, nodes, grid=None):
        w = self.posterior(omega)
        return np.einsum("k,nkx->nx", w, self._component_values(nodes))

    def papangelou_rows(self, times, marks, t, x=0, grid=None):
        w = np.exp(self.log_posterior_batch(times, marks))
        t = np.asarray(t, dtype=float).reshape(-1)
        lam = np.stack([np.asarray(c(t, x), dtype=float) for c in self.components], axis=1)
        return np.sum(w * lam, axis=1)

    def intensity_nodes(self, omega, nodes):
        w = np.exp(self.log_posterior(omega, nodes))
        return np.einsum("nk,nkx->nx", w, self._component_values(nodes))

    def to_json(self):
        out = {"kind": self.kind, "horizon": self.horizon, "components": [c.to_json() for c in self.components],
               "prior": list(self.prior), "marks": self.marks.to_json()}
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            if isinstance(val, RateField):
                out[name] = val.to_json()
        return out


# spec-level operations -----------------------------------------------------


def renewal_papangelou(spec: RenewalSpec, t: float, omega: Configuration) -> float:
    return spec.papangelou(t, omega)


def hawkes_intensity(spec: HawkesSpec, t: float, omega: Configuration) -> float:
    return spec.intensity(t, omega)


def hawkes_papangelou(spec: HawkesSpec, t: float, omega: Configuration, grid: TimeGrid | None = None) -> float:
    return spec.papangelou(t, omega, grid=grid)


def cox_papangelou(spec: CoxMixtureSpec, t: float, x: int, omega: Configuration, grid: TimeGrid | None = None) -> float:
    return spec.papangelou(t, omega, x=x, grid=grid)


def dominating_envelope(spec: ModelSpec) -> Field:
    return spec.envelope()


# JSON ----------------------------------------------------------------------


def _require(data: dict, key: str):
    if key not in data:
        raise ValueError(f"model field {key!r} is required for kind {data.get('kind')!r}")
    return data[key]


def model_from_json(data: dict) -> ModelSpec:
    """Parse the tagged union {"kind": "poisson" | "renewal" | "hawkes" | "cox", ...}."""
    if not isinstance(data, dict):
        raise ValueError("model must be a JSON object")
    kind = data.get("kind")
    horizon = float(data.get("horizon", 1.0))
    marks = MarkSpace.from_json(data.get("marks"))
    if kind == "poisson":
        return PoissonSpec(horizon, RateField.parse(_require(data, "rate"), len(marks)), marks)
    if kind == "renewal":
        return RenewalSpec(horizon, catalog.spacing(_require(data, "spacing")))
    if kind == "hawkes":
        return HawkesSpec(horizon, catalog.link(_require(data, "phi")), catalog.time_function(_require(data, "kernel")))
    if kind == "cox":
        return CoxMixtureSpec(
            horizon,
            tuple(_require(data, "components")),
            tuple(_require(data, "prior")),
            marks,
            data.get("alpha"),
            data.get("beta"),
        )
    raise ValueError(f"unknown model kind {kind!r}; choose poisson, renewal, hawkes or cox")


def erlang_hawkes(alpha: float = 1.0, K: float = 2.0, z: float = 0.1, horizon: float = 1.0) -> HawkesSpec:
    """Inhibitory Hawkes desk case: clamp link and indicator kernel on [0, z]."""
    return HawkesSpec(horizon, catalog.ClampLink(alpha, K), catalog.Indicator(0.0, z, 1.0))
