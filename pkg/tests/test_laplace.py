import math
import warnings

import numpy as np
import pytest

from ppfi import catalog
from ppfi import functionals as fn
from ppfi.core import Configuration, MCEstimate, SeedSpec, TimeGrid
from ppfi.laplace import (ControlProcess, SmallSampleWarning, conditional_identity_check, direct_tilted_expectation,
                          doob_exponential, entropy_cost, estimated_optimal_control, optimal_control, parse_control,
                          tilted_expectation, tilted_poisson, truncation_trend, variational_gap)
from ppfi.models import CoxMixtureSpec, PoissonSpec, RenewalSpec, erlang_hawkes
from ppfi.simulate import sample_points

# frozen values from tests/oracles.py
ENTROPY_TILT = 0.26424111765711536  # 1 - 2/e
GAP_LHS = 0.63212055882855768  # 1 - 1/e
RHS_HALF = 1.6081976621622466

U_OPT = math.exp(-1) - 1
GRID = TimeGrid.uniform(1.0, 256)
POISSON = PoissonSpec(1.0, 1.0)


def renewal(kind, **kw):
    return RenewalSpec(1.0, catalog.spacing({"kind": kind, **kw}))


MODELS = {
    "poisson": PoissonSpec(1.0, catalog.Linear(0.5, 1.0)),
    "weibull": renewal("weibull", shape=1.1),
    "pareto": renewal("pareto", rate=1.0, xi=0.1),
    "hawkes": erlang_hawkes(),
    "cox": CoxMixtureSpec(1.0, (0.9, 1.1), (0.5, 0.5)),
}

CONTROLS = [
    ControlProcess.constant(0.0),
    ControlProcess.constant(0.5),
    ControlProcess.constant(-0.4),
    parse_control("linear:a=-0.3,b=0.8", horizon=1.0),
    ControlProcess.deterministic(lambda t, x: 0.6 * np.cos(7 * t), -0.6, 0.6, name="cos"),
]


class TestControl:
    def test_bounds(self):
        with pytest.raises(ValueError):
            ControlProcess.constant(-1.0)
        with pytest.raises(ValueError):
            ControlProcess.deterministic(lambda t, x: t, -0.5, math.inf)

    def test_values_outside_bounds_rejected(self):
        c = ControlProcess.deterministic(lambda t, x: 2 * t, 0.0, 1.0)
        with pytest.raises(ValueError):
            c.values(POISSON, Configuration.empty(1.0), np.array([0.2, 0.9]))

    def test_parse(self):
        assert parse_control("zero").is_constant
        assert parse_control("const:u=0.25").process.c == 0.25
        lin = parse_control("linear:a=-0.3,b=0.8", horizon=1.0)
        assert (lin.lower, lin.upper) == (-0.3, pytest.approx(0.5))
        opt = parse_control("optimal:m=8,lo=0,hi=3", fn.clipped(fn.count(), 0, 3), GRID)
        assert opt.lower == pytest.approx(math.exp(-3) - 1) and opt.upper == pytest.approx(math.expm1(3))
        with pytest.raises(ValueError):
            parse_control("const:u")


class TestDoob:
    def test_zero_control(self):
        w = Configuration(1.0, [0.2, 0.7])
        for spec in MODELS.values():
            assert doob_exponential(spec, CONTROLS[0], w, 0.8, GRID) == 1.0

    def test_poisson_constant(self):
        u, lam = 0.3, 2.0
        spec = PoissonSpec(1.0, lam)
        w = Configuration(1.0, [0.1, 0.4, 0.9])
        for t in (0.0, 0.25, 0.6, 1.0):
            expect = (1 + u) ** w.count(0, t + 1e-15) * math.exp(-lam * t * u)
            assert doob_exponential(spec, ControlProcess.constant(u), w, t, GRID) == pytest.approx(expect, rel=1e-12)

    def test_linear_control_by_hand(self):
        ctrl = parse_control("linear:a=-0.3,b=0.8", horizon=1.0)
        w = Configuration(1.0, [0.25, 0.5])
        # int_0^1 (-0.3 + 0.8 s) ds = 0.1
        expect = (1 - 0.3 + 0.2) * (1 - 0.3 + 0.4) * math.exp(-0.1)
        assert doob_exponential(POISSON, ctrl, w, 1.0, GRID) == pytest.approx(expect, rel=1e-12)

    def test_poisson_weight_mean_large_sample(self):
        u = 0.5
        pts = sample_points(POISSON, SeedSpec(1), 0, 100_000)
        w = (1 + u) ** pts.counts * math.exp(-u)
        ctrl = ControlProcess.constant(u)
        sub = [doob_exponential(POISSON, ctrl, pts.configuration(r), 1.0, GRID) for r in range(200)]
        assert np.allclose(sub, w[:200], rtol=1e-12)
        assert MCEstimate.from_samples(w).within(1.0)

    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_weight_martingale_for_five_controls(self, name):
        spec = MODELS[name]
        for k, ctrl in enumerate(CONTROLS):
            rep = tilted_expectation(spec, ctrl, fn.constant(1.0), 2000, GRID, SeedSpec(2, 10_000 * k))
            assert rep.weight_mean.within(1.0), (name, ctrl.name, rep.weight_mean)


class TestEntropy:
    def test_zero(self):
        assert entropy_cost(erlang_hawkes(), CONTROLS[0], Configuration(1.0, [0.3]), GRID) == 0.0

    def test_tilt_value(self):
        got = entropy_cost(POISSON, ControlProcess.constant(U_OPT), Configuration(1.0, [0.3]), GRID)
        assert got == pytest.approx(ENTROPY_TILT, rel=1e-12)

    def test_density_non_negative(self):
        from ppfi.laplace import _entropy_density
        u = np.linspace(-0.99, 10, 10_001)
        assert np.all(_entropy_density(u) >= 0)
        assert _entropy_density(0.0) == 0.0

    def test_path_values_non_negative(self):
        pts = sample_points(erlang_hawkes(), SeedSpec(3), 0, 50)
        for ctrl in CONTROLS:
            assert all(entropy_cost(erlang_hawkes(), ctrl, pts.configuration(r), GRID) >= 0 for r in range(50))


class TestTilted:
    def test_zero_control_is_plain_mean(self):
        rep = tilted_expectation(POISSON, CONTROLS[0], fn.count(), 5000, GRID, SeedSpec(4))
        plain = sample_points(POISSON, SeedSpec(4), 0, 5000).counts.mean()
        assert rep.estimate.mean == pytest.approx(plain, rel=1e-12)
        assert rep.ess == pytest.approx(5000)

    def test_exponential_tilt_mean(self):
        rep = tilted_expectation(POISSON, ControlProcess.constant(U_OPT), fn.count(), 100_000, GRID, SeedSpec(5))
        assert rep.estimate.within(math.exp(-1))

    def test_direct_simulation_agrees(self):
        direct = direct_tilted_expectation(POISSON, U_OPT, fn.count(), 20_000, SeedSpec(6))
        weighted = tilted_expectation(POISSON, ControlProcess.constant(U_OPT), fn.count(), 20_000, GRID, SeedSpec(7))
        assert abs(direct.mean - weighted.estimate.mean) <= 3 * math.hypot(direct.std_error, weighted.estimate.std_error)
        assert direct.within(math.exp(-1))

    def test_tilted_poisson_scales_rate(self):
        spec = tilted_poisson(PoissonSpec(1.0, catalog.Cosine(1.0, 0.5, 2.0)), 0.5)
        assert spec.rate(0.3, 0) == pytest.approx(1.5 * (1.0 + 0.5 * math.cos(2 * math.pi * 2.0 * 0.3)), rel=1e-12)
        with pytest.raises(ValueError):
            tilted_poisson(POISSON, -1.0)

    def test_small_ess_warns(self):
        with pytest.warns(SmallSampleWarning):
            tilted_expectation(POISSON, ControlProcess.constant(30.0), fn.count(), 300, GRID, SeedSpec(8))

    def test_moderate_tilt_does_not_warn(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", SmallSampleWarning)
            tilted_expectation(POISSON, ControlProcess.constant(0.2), fn.count(), 300, GRID, SeedSpec(8))


class TestGap:
    def test_zero_control_is_jensen_gap(self):
        rep = variational_gap(POISSON, fn.count(), CONTROLS[0], 20_000, GRID, SeedSpec(9))
        assert rep.rhs.mean == pytest.approx(sample_points(POISSON, SeedSpec(9), 0, 20_000).counts.mean())
        assert rep.gap.mean >= 0 and rep.nonnegative

    def test_optimal_tilt_is_tight(self):
        rep = variational_gap(POISSON, fn.linear(1.0), ControlProcess.constant(U_OPT), 100_000, GRID, SeedSpec(10))
        assert rep.lhs.within(GAP_LHS)
        assert rep.rhs.within(GAP_LHS)
        assert rep.tight and rep.weights_ok

    def test_suboptimal_control_has_positive_gap(self):
        rep = variational_gap(POISSON, fn.linear(1.0), ControlProcess.constant(0.5), 100_000, GRID, SeedSpec(10))
        assert rep.gap.mean >= 3 * rep.gap.std_error
        assert rep.rhs.within(RHS_HALF)

    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_random_constant_controls_are_nonnegative(self, name):
        spec = MODELS[name]
        G = fn.clipped(fn.count(), 0, 4)
        rng = np.random.default_rng(11)
        for k, u in enumerate(rng.uniform(-0.8, 1.5, 10)):
            rep = variational_gap(spec, G, ControlProcess.constant(float(u)), 1000, GRID, SeedSpec(11, 10_000 * k))
            assert rep.nonnegative, (name, u, rep.gap)

    def test_envelope_flag(self):
        rep = variational_gap(MODELS["weibull"], fn.count(), CONTROLS[0], 50, GRID, SeedSpec(12))
        assert rep.envelope_checked is False
        rep = variational_gap(MODELS["pareto"], fn.count(), CONTROLS[0], 50, GRID, SeedSpec(12))
        assert rep.envelope_checked is True

    def test_truncation_trend(self):
        G = fn.linear(-1.0)  # bounded above only
        rows = truncation_trend(POISSON, G, CONTROLS[0], 2000, GRID, SeedSpec(13))
        assert [r["level"] for r in rows] == [1, 2, 4, 8]
        lhs = [r["lhs"]["mean"] for r in rows]
        assert np.all(np.diff(lhs) <= 1e-12)  # max(G, -k) falls with k, so -log E[exp(-G)] does too


class TestOptimalControl:
    def test_constant_functional(self):
        est = optimal_control(erlang_hawkes(), fn.constant(2.0), 0.4, 0, Configuration(1.0, [0.1]), 16, SeedSpec(14))
        assert est.value.mean == pytest.approx(0.0, abs=1e-12)

    def test_poisson_linear_functional(self):
        for c in (0.5, 1.0, 2.0):
            est = optimal_control(POISSON, fn.linear(c), 0.6, 0, Configuration(1.0, [0.2]), 16, SeedSpec(15))
            assert est.value.mean == pytest.approx(math.exp(-c) - 1, rel=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            optimal_control(POISSON, fn.count(), 0.5, 0, Configuration.empty(1.0), 1, SeedSpec(0))

    def test_estimated_control_is_bounded_and_predictable(self):
        G = fn.clipped(fn.count(), 0, 3)
        ctrl = estimated_optimal_control(G, 0, 3, 16, TimeGrid.uniform(1.0, 16)).for_path(SeedSpec(1, 7))
        nodes = np.linspace(0, 1, 9)
        a = ctrl.values(MODELS["weibull"], Configuration(1.0, [0.3]), nodes)
        b = ctrl.values(MODELS["weibull"], Configuration(1.0, [0.3, 0.8]), nodes)
        assert np.array_equal(a[nodes <= 0.8], b[nodes <= 0.8])
        assert np.all(a >= ctrl.lower) and np.all(a <= ctrl.upper)

    def test_estimated_control_on_renewal_is_tight(self):
        G = fn.clipped(fn.count(), 0, 3)
        grid = TimeGrid.uniform(1.0, 64)
        ctrl = estimated_optimal_control(G, 0, 3, 32, grid)
        rep = variational_gap(renewal("weibull", shape=1.05), G, ctrl, 400, grid, SeedSpec(16))
        assert rep.tight


class TestConditionalIdentity:
    def test_poisson_exponential_functional(self):
        G = fn.exp_count(1.0)
        rows = conditional_identity_check(POISSON, G, ControlProcess.constant(U_OPT), [0.1, 0.3, 0.5, 0.7, 0.9],
                                          3000, 32, GRID, SeedSpec(17))
        assert len(rows) == 5
        assert all(r["pass"] for r in rows), rows

    def test_wrong_control_is_detected(self):
        G = fn.exp_count(1.0)
        rows = conditional_identity_check(POISSON, G, ControlProcess.constant(0.3), [0.5], 3000, 32, GRID, SeedSpec(17))
        assert not rows[0]["pass"]
