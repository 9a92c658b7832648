import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npprior.errors import DomainError, EvaluationError
from npprior.models import BetaPrior, BinomialData, DirichletPrior, MultinomialData, NormalLinearPrior, NormalSummary
from npprior.numkit import RngStream
from npprior.scalefactor import (
    BinomialPoweredSampler,
    KnotGrid,
    LogCInterpolant,
    MetropolisPoweredSampler,
    MultinomialPoweredSampler,
    NonMonotonicLogCWarning,
    NormalPoweredSampler,
    _cumulate,
    _cumulate_singular,
    closed_form_gap,
    convexity_violations,
    design_knots,
    estimate_log_c,
    interpolate_log_c,
    powered_sampler_for,
)


class TestKnots:
    def test_power_spacing(self):
        g = design_knots(8, 2.0)
        np.testing.assert_allclose(g.knots, (np.arange(1, 9) / 8) ** 2)
        assert g.knots[-1] == 1.0
        assert g.spacings.sum() == pytest.approx(1.0, abs=1e-15)

    def test_extra_points_are_merged(self):
        g = design_knots(4, 3.0, extra=[0.5, 1.0])
        assert 0.5 in g.knots and np.all(np.diff(g.knots) > 0) and len(g) == 5

    @pytest.mark.parametrize("S,c", [(1, 2.0), (4.5, 2.0), (8, 1.0), (8, 0.5)])
    def test_invalid(self, S, c):
        with pytest.raises(DomainError):
            design_knots(S, c)

    def test_grid_validation(self):
        with pytest.raises(DomainError):
            KnotGrid(np.array([0.0, 1.0]), 2.0, 2)
        with pytest.raises(DomainError):
            KnotGrid(np.array([0.5, 0.9]), 2.0, 2)


class TestCumulativeRules:
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_trapezoid_exact_for_linear_h(self, c0, c1):
        g = design_knots(16, 2.0)
        h = c0 + c1 * g.knots
        vals, _ = _cumulate(h, np.zeros_like(h), g.spacings.copy(), "trapezoid", c0, 0.0, True)
        np.testing.assert_allclose(vals, c0 * g.knots + c1 * g.knots**2 / 2, atol=1e-12)

    @given(st.floats(0.1, 5), st.floats(-5, 5))
    def test_product_rule_exact_for_reciprocal_plus_constant(self, kappa, c0):
        # delta * h = -kappa + c0 delta is linear, so the rule integrates it exactly
        g = design_knots(16, 2.0)
        x = g.knots
        h = -kappa / x + c0
        vals, _ = _cumulate_singular(x, h, np.zeros_like(h))
        np.testing.assert_allclose(vals, -kappa * np.log(x / x[0]) + c0 * (x - x[0]), atol=1e-11)

    def test_product_rule_standard_error(self):
        x = np.array([0.25, 0.5, 1.0])
        se = np.array([1.0, 2.0, 3.0])
        _, out = _cumulate_singular(x, np.zeros(3), se)
        a, b = x[:-1], x[1:]
        L = np.log(b / a)
        w_hi = 1 - a * L / (b - a)
        w_lo = L - w_hi
        c = np.array([w_lo[0], w_hi[0] + w_lo[1], w_hi[1]])
        assert out[2] == pytest.approx(math.sqrt(np.sum((c * se * x) ** 2)))
        assert out[0] == 0.0

    def test_trapezoid_standard_error(self):
        s = np.array([0.25, 0.75])
        _, se = _cumulate(np.zeros(2), np.array([1.0, 1.0]), s, "trapezoid", 0.0, 2.0, True)
        expected = math.sqrt((0.125 * 2.0) ** 2 + (0.125 + 0.375) ** 2 + 0.375**2)
        assert se[1] == pytest.approx(expected)


class TestBinomialEstimate:
    SAMPLER = BinomialPoweredSampler(BinomialData(40, 20), BetaPrior(1, 1))

    def test_close_to_closed_form(self):
        interp = estimate_log_c(self.SAMPLER, design_knots(64, 2.0), 5000, RngStream(20190606))
        rep = closed_form_gap(interp, self.SAMPLER)
        assert rep.reference == "zero" and rep.queries[0] == 0.0
        assert rep.max_gap <= 0.05
        assert interp(0.0) == 0.0
        # the stated standard errors are of the right size
        exact = self.SAMPLER.exact_log_c(interp.knots.knots)
        z = (interp.log_c_values - exact) / interp.mc_standard_errors
        assert np.max(np.abs(z)) < 6

    def test_reproducible_and_worker_independent(self):
        g = design_knots(8, 2.0)
        a = estimate_log_c(self.SAMPLER, g, 500, RngStream(3), workers=1)
        b = estimate_log_c(self.SAMPLER, g, 500, RngStream(3), workers=3)
        np.testing.assert_array_equal(a.log_c_values, b.log_c_values)
        c = estimate_log_c(self.SAMPLER, g, 500, 4)
        assert not np.array_equal(a.log_c_values, c.log_c_values)

    def test_riemann_rule_and_convexity(self):
        g = design_knots(32, 2.0)
        interp = estimate_log_c(self.SAMPLER, g, 2000, RngStream(1), rule="riemann_left")
        assert interp.rule == "riemann_left"
        assert np.all(np.isfinite(interp.log_c_values))
        exact = LogCInterpolant(g, self.SAMPLER.exact_log_c(g.knots), "trapezoid", np.zeros(len(g)), np.zeros(len(g)), np.zeros(len(g)))
        assert convexity_violations(exact).size == 0

    def test_json_round_trip(self, tmp_path):
        interp = estimate_log_c(self.SAMPLER, design_knots(8, 2.0), 200, RngStream(2))
        path = tmp_path / "logc.json"
        interp.to_json(path)
        back = LogCInterpolant.from_json(path)
        q = np.linspace(0, 1, 13)
        np.testing.assert_array_equal(back(q), interp(q))
        assert back.to_dict() == interp.to_dict()

    @pytest.mark.parametrize("kw", [dict(m_per_knot=50), dict(rule="simpson")])
    def test_bad_arguments(self, kw):
        with pytest.raises(DomainError):
            estimate_log_c(self.SAMPLER, design_knots(8, 2.0), **{"m_per_knot": 200, **kw})

    def test_query_domain(self):
        interp = estimate_log_c(self.SAMPLER, design_knots(8, 2.0), 200, RngStream(2))
        with pytest.raises(DomainError):
            interpolate_log_c(interp, 1.5)


class TestOtherFamilies:
    def test_multinomial(self):
        s = MultinomialPoweredSampler(MultinomialData((12, 5, 3)), DirichletPrior((1, 1, 1)))
        interp = estimate_log_c(s, design_knots(32, 2.0), 3000, RngStream(5))
        assert closed_form_gap(interp, s).max_gap < 0.05

    def test_normal_improper_prior_uses_first_knot(self):
        s = NormalPoweredSampler(NormalSummary(40, 0.3, 1.1), NormalLinearPrior(2.0, 1, [0.0], [[1.0]]))
        interp = estimate_log_c(s, design_knots(64, 2.0), 5000, RngStream(20190606))
        assert interp.anchor == "first_knot" and interp.h0 is None
        rep = closed_form_gap(interp, s)
        assert rep.reference == "one" and rep.queries[0] == interp.knots.knots[0]
        assert rep.max_gap < 0.1
        # below the first knot the tangent is used
        x0 = interp.knots.knots[0]
        assert interp(x0 / 2) == pytest.approx(interp.log_c_values[0] - interp.h[0] * x0 / 2)

    def test_normal_sampler_rejects_improper_delta(self):
        s = NormalPoweredSampler(NormalSummary(10, 0.0, 1.0), NormalLinearPrior())
        with pytest.raises(DomainError):
            s.sample(0.05, RngStream(0), 10)

    def test_dispatch(self):
        assert isinstance(powered_sampler_for(BinomialData(3, 1), BetaPrior()), BinomialPoweredSampler)
        with pytest.raises(TypeError):
            powered_sampler_for(BinomialData(3, 1), object())


class TestMetropolisSampler:
    def test_logit_binomial_agrees_with_closed_form(self):
        hist = BinomialData(20, 6)

        def log_lik(v):
            t = v[0]
            return -hist.y * np.logaddexp(0, -t) - hist.failures * np.logaddexp(0, t)

        def log_prior(v):  # uniform p on the logit scale
            return -np.logaddexp(0, -v[0]) - np.logaddexp(0, v[0])

        mh = MetropolisPoweredSampler(log_prior, log_lik, init=[0.0], step=1.5, burn_in=300, thin=2)
        g = design_knots(6, 2.0)
        interp = estimate_log_c(mh, g, 1500, RngStream(9), rule="riemann_left")
        exact = BinomialPoweredSampler(hist, BetaPrior(1, 1)).exact_log_c(g.knots)
        # the left Riemann sum on six knots carries visible bias; the shape must still match
        assert np.corrcoef(interp.log_c_values, exact)[0, 1] > 0.99
        assert not hasattr(mh, "prior_sample")

    def test_non_finite_start(self):
        mh = MetropolisPoweredSampler(lambda v: -np.inf, lambda v: 0.0, init=[0.0], burn_in=0)
        with pytest.raises(EvaluationError):
            estimate_log_c(mh, design_knots(2, 2.0), 100, RngStream(0))


class _SignFlip:
    def sample(self, delta, stream, m):
        return np.full(m, delta)

    def log_likelihood(self, x):
        return (x - 0.5) + np.random.default_rng(0).normal(0, 1e-3, x.size)

    def prior_sample(self, stream, m):
        return np.zeros(m)


class TestWarnings:
    def test_direction_change_warns(self):
        with pytest.warns(NonMonotonicLogCWarning):
            estimate_log_c(_SignFlip(), design_knots(8, 2.0), 100, RngStream(0))

    def test_gap_needs_closed_form(self):
        interp = estimate_log_c(_SignFlip(), design_knots(4, 2.0), 100, RngStream(0))
        with pytest.raises(DomainError):
            closed_form_gap(interp, _SignFlip())
