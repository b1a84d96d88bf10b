"""Poincaré constants gamma for each model family and a Monte Carlo verifier.

For gamma < 1 the variance of a square-integrable G is bounded by
(1 - sqrt(gamma))^{-2} E[int pi |D G|^2 dt nu(dx)]. ``poincare_check``
estimates both sides on i.i.d. paths, with pi in closed form per model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import catalog
from .core import MCEstimate, MarkSpace, SeedSpec, TimeGrid
from .functionals import Functional
from .models import (CoxMixtureSpec, Field, HawkesSpec, ModelSpec, PoissonSpec, RenewalSpec, break_eps, merged_nodes,
                     trapezoid)
from .parallel import map_ranges
from .projection import _variance_estimate
from .simulate import sample_points


class GammaUnavailable(ValueError):
    """No omega-free bound on the Poincaré constant is known for this model."""


# renewal -------------------------------------------------------------------


def _ratio(spec: RenewalSpec, x, z):
    fx, fz = spec.f(x), spec.f(x - z)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(fx > 0, fz / fx, np.where(fz > 0, np.inf, 0.0))


def _parabola_offset(y0, y1, y2, ok):
    """Vertex offset (in steps) of the parabola through three equispaced values."""
    den = np.where(ok, y0 - 2 * y1 + y2, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ok & (den < 0), 0.5 * (y0 - y2) / den, 0.0)


def h_table(spec: RenewalSpec, z, nx: int = 1024) -> np.ndarray:
    """h(z) = sup_{x in [z, T]} f(x - z) / f(x) for each z, by grid search plus a parabolic step."""
    T = spec.horizon
    z = np.asarray(z, dtype=float).reshape(-1)
    x = z[:, None] + (T - z[:, None]) * np.linspace(0.0, 1.0, nx + 1)[None, :]
    r = _ratio(spec, x, z[:, None])
    if not np.all(np.isfinite(r)):
        raise ValueError("h(z) diverges: f vanishes where f(x - z) does not")
    rows = np.arange(z.size)
    k = np.argmax(r, axis=1)
    best = r[rows, k]
    off = _parabola_offset(r[rows, np.maximum(k - 1, 0)], best, r[rows, np.minimum(k + 1, nx)], (k > 0) & (k < nx))
    xs = x[rows, k] + off * (T - z) / nx
    return np.maximum(best, _ratio(spec, xs, z))


def _renewal_integrand(spec: RenewalSpec, t, z, h):
    T, tail = spec.horizon, spec.tail
    return spec.f(z) * (tail(T - t) ** 2 / tail(T - t + z) + h**2 * (tail(z) - tail(T - t + z)) - 1.0 / tail(z))


def gamma_renewal_profile(spec: RenewalSpec, grid: TimeGrid | None = None, nz: int = 1024):
    """(t nodes, sup_z integrand at each node).

    The inner sup over z in [0, t] uses a fixed z grid of nz + 1 nodes on
    [0, T], the endpoint z = t, and one parabolic step around the best node.
    """
    grid = grid or TimeGrid.uniform(spec.horizon)
    T = spec.horizon
    t = grid.nodes
    Z = np.linspace(0.0, T, nz + 1)
    Q = _renewal_integrand(spec, t[:, None], Z[None, :], h_table(spec, Z)[None, :])
    Q = np.where(Z[None, :] <= t[:, None], Q, -np.inf)
    rows = np.arange(t.size)
    k = np.argmax(Q, axis=1)
    best = np.maximum(Q[rows, k], _renewal_integrand(spec, t, t, h_table(spec, t)))
    y0, y2 = Q[rows, np.maximum(k - 1, 0)], Q[rows, np.minimum(k + 1, nz)]
    ok = (k > 0) & (k < nz) & np.isfinite(y0) & np.isfinite(y2)
    zs = np.clip(Z[k] + _parabola_offset(y0, Q[rows, k], y2, ok) * T / nz, 0.0, t)
    best = np.maximum(best, _renewal_integrand(spec, t, zs, h_table(spec, zs)))
    if not np.all(np.isfinite(best)):
        raise ValueError("renewal gamma integrand is not finite")
    return t, best


def gamma_renewal(spec: RenewalSpec, grid: TimeGrid | None = None, nz: int = 1024) -> float:
    t, q = gamma_renewal_profile(spec, grid, nz)
    return trapezoid(q, t)


def gamma_star_weibull(shape: float, horizon: float = 1.0) -> float:
    """Closed-form upper bound T^b (exp(2 (b - 1) T^b) - 1) for unit-scale Weibull spacings."""
    Tb = horizon**shape
    return Tb * math.expm1(2 * (shape - 1) * Tb)


def gamma_star_pareto(rate: float, xi: float, horizon: float = 1.0) -> float:
    """Closed-form upper bound xi rate^2 T^2 (1 + xi rate T / 3) for generalized Pareto spacings."""
    return xi * rate**2 * horizon**2 * (1 + xi * rate * horizon / 3)


def gamma_bound(spec: ModelSpec) -> float | None:
    """Closed-form upper bound on gamma where one is known, else None."""
    if isinstance(spec, RenewalSpec):
        law = spec.law
        if isinstance(law, catalog.ExponentialSpacing):
            return 0.0
        if isinstance(law, catalog.WeibullSpacing) and law.scale == 1.0 and law.shape > 1:
            return gamma_star_weibull(law.shape, spec.horizon)
        if isinstance(law, catalog.ParetoSpacing):
            return gamma_star_pareto(law.rate, law.xi, spec.horizon)
    if isinstance(spec, HawkesSpec) and isinstance(spec.phi, catalog.ClampLink) and isinstance(spec.kernel, catalog.Indicator) \
            and spec.kernel.lo == 0 and spec.kernel.value == 1:
        return gamma_erlang(spec.phi.alpha, spec.kernel.hi, spec.horizon)
    return None


# Hawkes --------------------------------------------------------------------


def gamma_hawkes(spec: HawkesSpec, grid: TimeGrid | None = None) -> float:
    """phi(0) int_0^T (exp(2 lip int_0^tau h) - 1) dtau by adaptive quadrature.

    The inner integral is the kernel's exact primitive; ``grid`` is accepted
    for a uniform signature and not needed.
    """
    lip, T, kern = spec.phi.lip, spec.horizon, spec.kernel
    if lip == 0 or spec.phi.at_zero == 0:
        return 0.0
    k0 = float(kern.primitive(0.0))
    pts = sorted({b for b in kern.breakpoints() if 0 < b < T})
    val, _ = quad(lambda tau: math.expm1(2 * lip * (float(kern.primitive(tau)) - k0)), 0.0, T,
                  points=pts or None, epsabs=1e-13, epsrel=1e-12, limit=200)
    return spec.phi.at_zero * val


def gamma_erlang(alpha: float, z: float, horizon: float = 1.0) -> float:
    """Closed form of the Hawkes constant for the clamp link and kernel 1_[0, z]."""
    a, T = alpha, horizon
    mz = min(z, T)
    return a * (math.exp(2 * a * mz) / (2 * a) - 1 / (2 * a) - mz + math.expm1(2 * a * z) * max(T - z, 0.0) * (z <= T))


# envelopes -----------------------------------------------------------------


def gamma_envelope(alpha: Field, beta: Field, grid: TimeGrid, marks: MarkSpace | None = None) -> float:
    """||beta||_1 - ||alpha||_1 over [0, T] x E."""
    marks = marks or MarkSpace.unmarked()
    breaks = np.concatenate([np.asarray(alpha.breakpoints(), dtype=float), np.asarray(beta.breakpoints(), dtype=float)])
    nodes = merged_nodes(grid, breaks)
    total = 0.0
    for x, w in enumerate(marks.weights):
        a = np.asarray(alpha(nodes, x), dtype=float) * np.ones_like(nodes)
        b = np.asarray(beta(nodes, x), dtype=float) * np.ones_like(nodes)
        if np.any(a > b + 1e-12):
            bad = nodes[np.argmax(a - b)]
            raise ValueError(f"alpha exceeds beta at t={bad:g}, mark {x}")
        total += w * trapezoid(b - a, nodes)
    return float(total)


def gamma_for(spec: ModelSpec, grid: TimeGrid | None = None) -> float:
    """The model family's gamma."""
    grid = grid or TimeGrid.uniform(spec.horizon)
    if isinstance(spec, PoissonSpec):
        return 0.0
    if isinstance(spec, RenewalSpec):
        return gamma_renewal(spec, grid)
    if isinstance(spec, HawkesSpec):
        return gamma_hawkes(spec, grid)
    if isinstance(spec, CoxMixtureSpec):
        return gamma_envelope(spec.alpha, spec.beta, grid, spec.marks)
    raise GammaUnavailable(f"gamma unavailable for model kind {spec.kind!r}")


# verifier ------------------------------------------------------------------


def poincare_factor(gamma: float) -> float:
    if not 0 <= gamma < 1:
        return math.inf
    return (1 - math.sqrt(gamma)) ** -2


@dataclass
class PoincareReport:
    gamma: float
    factor: float
    var_G: MCEstimate
    rhs: MCEstimate
    pass_: bool | None
    combined_std_error: float
    rhs_scale: float = 1.0

    @property
    def applicable(self) -> bool:
        return self.gamma < 1

    def rescaled(self, k: float) -> "PoincareReport":
        """The verdict with the right side multiplied by k, on the same paths."""
        rhs = MCEstimate(k * self.rhs.mean, abs(k) * self.rhs.std_error, self.rhs.n)
        if not self.applicable:
            return PoincareReport(self.gamma, self.factor, self.var_G, rhs, None, math.nan, k * self.rhs_scale)
        combined = math.hypot(self.var_G.std_error, self.factor * rhs.std_error)
        ok = self.var_G.mean <= self.factor * rhs.mean + 3 * combined
        return PoincareReport(self.gamma, self.factor, self.var_G, rhs, bool(ok), combined, k * self.rhs_scale)

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "factor": self.factor if self.applicable else "not-applicable",
            "var_G": self.var_G.to_json(),
            "rhs": self.rhs.to_json(),
            "bound": self.factor * self.rhs.mean if self.applicable else "not-applicable",
            "combined_std_error": self.combined_std_error,
            "rhs_scale": self.rhs_scale,
            "pass": self.pass_,
            "status": ("pass" if self.pass_ else "fail") if self.applicable else "not-applicable",
        }


def dirichlet_form(spec: ModelSpec, G: Functional, omega, grid: TimeGrid) -> float:
    """int pi_(t,x)(omega) (G(omega + eps_(t,x)) - G(omega))^2 dt nu(dx) on one path."""
    nodes = merged_nodes(grid, np.concatenate([spec.path_breakpoints(omega), np.asarray(G.breaks, dtype=float)]))
    # no point can sit at time 0, so the first node takes its right limit
    probe = np.maximum(nodes, break_eps(spec.horizon))
    pi = spec.papangelou_nodes(omega, probe, grid)
    g0 = G.evaluator(omega)
    total = 0.0
    for x, w in enumerate(spec.marks.weights):
        d = G.add_one(omega, probe, x) - g0
        total += w * trapezoid(pi[:, x] * d * d, nodes)
    return total


def poincare_check(spec: ModelSpec, G: Functional, gamma: float, n: int, m_inner: int | None, grid: TimeGrid,
                   seed: SeedSpec, threads: int = 1, rhs_scale: float = 1.0) -> PoincareReport:
    """Estimate Var(G) and E[int pi |DG|^2] on n paths.

    pi is exact for all four families, so ``m_inner`` is unused; it is kept
    so every check shares one signature. ``rhs_scale`` multiplies the right
    side and exists to exercise the failure path.
    """
    def task(a, b):
        pts = sample_points(spec, seed, a, b)
        vals = G.eval_batch(pts)
        return [(vals[r], dirichlet_form(spec, G, pts.configuration(r), grid)) for r in range(pts.rows)]

    arr = np.array(map_ranges(task, n, threads), dtype=float).reshape(n, 2)
    var_G = _variance_estimate(arr[:, 0])
    rhs = MCEstimate.from_samples(rhs_scale * arr[:, 1])
    factor = poincare_factor(gamma)
    if gamma >= 1:
        return PoincareReport(gamma, factor, var_G, rhs, None, math.nan, rhs_scale)
    combined = math.hypot(var_G.std_error, factor * rhs.std_error)
    ok = var_G.mean <= factor * rhs.mean + 3 * combined
    return PoincareReport(gamma, factor, var_G, rhs, bool(ok), combined, rhs_scale)
