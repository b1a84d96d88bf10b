import math

import numpy as np
import pytest

from ppfi import catalog
from ppfi import functionals as fn
from ppfi.core import Configuration, MCEstimate, SeedSpec, TimeGrid
from ppfi.models import CoxMixtureSpec, PoissonSpec, RenewalSpec, erlang_hawkes
from ppfi.projection import (Predictable, _integrand_stats, clark_ocone_integrand, clark_ocone_residual,
                             compensated_integral, integrand_field, isometry_check, predictable_projection)
from ppfi.simulate import sample_points

GRID = TimeGrid.uniform(1.0, 128)


def renewal(kind, **kw):
    return RenewalSpec(1.0, catalog.spacing({"kind": kind, **kw}))


class TestPredictableProjection:
    def test_deterministic_process_is_returned_exactly(self):
        spec = erlang_hawkes()
        X = lambda t, x, w: 3.0 * t + x
        est = predictable_projection(spec, X, 0.4, 0, Configuration(1.0, [0.1]), 16, SeedSpec(1))
        assert est.mean == pytest.approx(1.2, abs=1e-15)
        assert est.std_error == 0.0

    def test_poisson_papangelou_is_the_rate(self):
        spec = PoissonSpec(1.0, catalog.Linear(0.5, 2.0))
        est = predictable_projection(spec, "papangelou", 0.3, 0, Configuration(1.0, [0.1, 0.2]), 32, SeedSpec(2))
        assert est.mean == pytest.approx(1.1, abs=1e-12)
        assert est.std_error == 0.0

    def test_exponential_renewal_papangelou_is_constant(self):
        spec = renewal("exponential", rate=2.5)
        est = predictable_projection(spec, "papangelou", 0.6, 0, Configuration(1.0, [0.25]), 32, SeedSpec(3))
        assert est.mean == pytest.approx(2.5, abs=1e-12)
        assert est.std_error == pytest.approx(0.0, abs=1e-12)

    def test_projection_of_future_count(self):
        """E[N(t, T] | past] = lambda (T - t) for Poisson."""
        spec = PoissonSpec(1.0, 3.0)
        X = lambda t, x, w: w.count(0.5, 1.0)
        est = predictable_projection(spec, X, 0.5, 0, Configuration(1.0, [0.4]), 4000, SeedSpec(4))
        assert est.within(1.5)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            predictable_projection(PoissonSpec(1.0, 1.0), "papangelou", 0.5, 0, Configuration.empty(1.0), 1, SeedSpec(0))


class TestIntegrand:
    def test_constant_functional_gives_zero(self):
        for spec in (renewal("weibull", shape=1.1), erlang_hawkes()):
            est = clark_ocone_integrand(spec, fn.constant(2.0), 0.5, 0, Configuration(1.0, [0.2]), 20, SeedSpec(5))
            assert est.value.mean == pytest.approx(0.0, abs=1e-12)

    def test_poisson_count_integrand_is_one_at_random_probes(self):
        spec = PoissonSpec(1.0, 1.7)
        rng = np.random.default_rng(6)
        paths = sample_points(spec, SeedSpec(6), 0, 20)
        for r in range(20):
            w = paths.configuration(r)
            t = float(rng.uniform(0.01, 0.99))
            est = clark_ocone_integrand(spec, fn.count(), t, 0, w, 32, SeedSpec(7, r))
            assert est.value.mean == pytest.approx(1.0, abs=1e-12)
            assert abs(est.value.mean - 1.0) <= 3 * est.value.std_error + 1e-12
            assert not est.unstable

    def test_poisson_exponential_functional(self):
        lam, c, t = 1.3, 0.7, 0.35
        spec = PoissonSpec(1.0, lam)
        past = Configuration(1.0, [0.1, 0.3])
        G = fn.exp_count(c)
        est = clark_ocone_integrand(spec, G, t, 0, past, 4000, SeedSpec(8))
        # common completions make phi / mean(G) exact
        pG = predictable_projection(spec, lambda s, x, w: G.evaluator(w), t, 0, past, 4000, SeedSpec(8))
        assert est.value.mean / pG.mean == pytest.approx(math.exp(-c) - 1, rel=1e-12)
        exact = (math.exp(-c) - 1) * math.exp(-2 * c + lam * (1 - t) * (math.exp(-c) - 1))
        assert est.value.within(exact)

    def test_zero_intensity_gives_exact_zero(self):
        spec = PoissonSpec(1.0, catalog.Indicator(0.0, 0.5, 1.0))
        est = clark_ocone_integrand(spec, fn.count(), 0.8, 0, Configuration(1.0, [0.2]), 16, SeedSpec(9))
        assert est.value.mean == 0.0 and est.value.std_error == 0.0
        assert not est.unstable

    def test_unstable_flag(self):
        m = 10
        pi = np.zeros((1, m))
        pi[0, -1] = 1.0
        G = np.arange(m, dtype=float)[None, :]
        _, _, _, _, unstable = _integrand_stats(pi, G, G + 1, m)
        assert unstable[0]
        _, _, _, _, unstable = _integrand_stats(np.ones((1, m)), G, G + 1, m)
        assert not unstable[0]

    def test_field_shape(self):
        spec = PoissonSpec(1.0, 1.0)
        f = integrand_field(spec, fn.count(), Configuration(1.0, [0.5]), TimeGrid.uniform(1.0, 16), 8, SeedSpec(1))
        assert f.mean.shape == (17, 1)
        assert np.allclose(f.mean, 1.0)
        assert f.estimate(3).n == 8

    def test_depends_only_on_strict_past(self):
        spec = renewal("weibull", shape=1.1)
        a = clark_ocone_integrand(spec, fn.count(), 0.5, 0, Configuration(1.0, [0.2]), 50, SeedSpec(10))
        b = clark_ocone_integrand(spec, fn.count(), 0.5, 0, Configuration(1.0, [0.2, 0.7]), 50, SeedSpec(10))
        assert a == b


class TestCompensatedIntegral:
    def test_zero_field(self):
        w = Configuration(1.0, [0.3, 0.6])
        assert compensated_integral(erlang_hawkes(), 0.0, w, GRID) == 0.0

    def test_poisson_unit_field(self):
        w = Configuration(1.0, [0.3, 0.6, 0.9])
        assert compensated_integral(PoissonSpec(1.0, 2.0), 1.0, w, GRID) == pytest.approx(3 - 2.0, abs=1e-12)

    def test_mean_zero_for_bounded_field(self):
        spec = erlang_hawkes()
        X = Predictable.deterministic(lambda t, x: np.cos(3 * t))
        pts = sample_points(spec, SeedSpec(12), 0, 100_000)
        vals = [compensated_integral(spec, X, pts.configuration(r), GRID) for r in range(pts.rows)]
        assert MCEstimate.from_samples(vals).within(0.0)

    def test_path_dependent_field_mean_zero(self):
        spec = renewal("weibull", shape=1.1)
        X = Predictable(lambda t, x, past: 1.0 / (1 + len(past)))
        pts = sample_points(spec, SeedSpec(13), 0, 3000)
        grid = TimeGrid.uniform(1.0, 32)
        vals = [compensated_integral(spec, X, pts.configuration(r), grid) for r in range(pts.rows)]
        assert MCEstimate.from_samples(vals).within(0.0)


class TestIsometry:
    def test_poisson_unit_rate(self):
        res = isometry_check(PoissonSpec(1.0, 1.0), 1.0, 1.0, 100_000, GRID, SeedSpec(14))
        assert res["pass"]
        assert res["rhs"].mean == pytest.approx(1.0, abs=1e-12)
        assert res["lhs"].within(1.0)

    def test_zero_integrand(self):
        res = isometry_check(erlang_hawkes(), 1.0, 0.0, 200, GRID, SeedSpec(15))
        assert res["lhs"].mean == 0.0 and res["rhs"].mean == 0.0 and res["pass"]

    def test_hawkes_desk_case(self):
        res = isometry_check(erlang_hawkes(), 1.0, 1.0, 100_000, TimeGrid.uniform(1.0, 512), SeedSpec(16))
        assert res["pass"]

    def test_deterministic_integrands(self):
        spec = CoxMixtureSpec(1.0, (1.0, 2.0), (0.5, 0.5))
        X = Predictable.deterministic(lambda t, x: 1 + t)
        Y = Predictable.deterministic(lambda t, x: np.where(t < 0.5, 1.0, -1.0), breaks=(0.5,))
        assert isometry_check(spec, X, Y, 3000, GRID, SeedSpec(17))["pass"]

    def test_worker_count_does_not_matter(self):
        spec = erlang_hawkes()
        a = isometry_check(spec, 1.0, 1.0, 5000, GRID, SeedSpec(18), threads=1)
        b = isometry_check(spec, 1.0, 1.0, 5000, GRID, SeedSpec(18), threads=4)
        assert a == b


class TestResidual:
    def test_constant_functional(self):
        rep = clark_ocone_residual(erlang_hawkes(), fn.constant(1.5), 50, 4, TimeGrid.uniform(1.0, 16), SeedSpec(19))
        assert rep.residual.mean == 0.0

    def test_poisson_analytic_integrand(self):
        spec = PoissonSpec(1.0, 1.0)
        rep = clark_ocone_residual(spec, fn.count(), 20_000, 2, GRID, SeedSpec(20), integrand=1.0)
        assert rep.residual.mean <= 1e-4 * rep.var_G.mean

    def test_poisson_nested_integrand(self):
        rep = clark_ocone_residual(PoissonSpec(1.0, 1.0), fn.count(), 200, 4, TimeGrid.uniform(1.0, 32), SeedSpec(21))
        assert rep.residual.mean <= 1e-20
        assert rep.unstable_entries == 0

    def test_renewal_small_scale(self):
        spec = renewal("weibull", shape=1.05)
        rep = clark_ocone_residual(spec, fn.count(), 300, 32, TimeGrid.uniform(1.0, 32), SeedSpec(22))
        assert rep.mean_delta.within(0.0)
        assert rep.relative < 0.1
        assert "O(1/m_inner)" in rep.to_json()["bias"]
