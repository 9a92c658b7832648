import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from _oracles import binomial_log_ratio, matched_configuration, multinomial_log_ratio, normal_log_integral, normal_log_ratio
from npprior import numkit
from npprior.conjugate import (
    _normal_terms,
    combine_quadratics,
    conditional_posterior_given_delta,
    delta_lower_bound,
    delta_posterior,
    intercept_only_terms,
    log_marginal_delta,
    log_normal_gamma_integral,
    normal_intermediates,
    normal_log_c,
    sample_posterior,
    verify_kl_optimality,
)
from npprior.errors import DomainError
from npprior.models import (
    BetaPrior,
    BinomialData,
    DeltaPrior,
    DirichletPrior,
    MultinomialData,
    NormalLinearPrior,
    NormalSummary,
    from_raw,
)

UNIFORM = DeltaPrior.uniform()
LOG_2PI = math.log(2 * math.pi)


def intercept(y):
    y = np.asarray(y, float)
    return from_raw("normal_linear", np.ones((y.size, 1)), y)


class TestBinomialEvaluator:
    def test_hand_computed(self):
        # y0 = n0 = y = n = 1 under Beta(1, 1): B(d + 2, 1) / B(d + 1, 1) = (d + 1) / (d + 2)
        d = np.linspace(0, 1, 11)
        got = log_marginal_delta(BinomialData(1, 1), BinomialData(1, 1), BetaPrior(1, 1), UNIFORM, d)
        np.testing.assert_allclose(got, np.log((d + 1) / (d + 2)), rtol=1e-13)

    @given(
        n0=st.integers(1, 4), n=st.integers(1, 4), data=st.data(),
        alpha=st.sampled_from([0.5, 1.0, 2.0]), delta=st.floats(0.0, 1.0),
    )
    @settings(max_examples=25)
    def test_matches_brute_force(self, n0, n, data, alpha, delta):
        y0 = data.draw(st.integers(0, n0))
        y = data.draw(st.integers(0, n))
        got = log_marginal_delta(BinomialData(n0, y0), BinomialData(n, y), BetaPrior(alpha, 1.0), UNIFORM, delta)
        assert got == pytest.approx(binomial_log_ratio(y0, n0, y, n, alpha, 1.0, delta), abs=1e-8)

    def test_beta_delta_prior_adds_log_density(self):
        h, c, p = BinomialData(10, 4), BinomialData(8, 5), BetaPrior(1, 1)
        d = np.array([0.1, 0.5, 0.9])
        diff = log_marginal_delta(h, c, p, DeltaPrior.beta(2, 3), d) - log_marginal_delta(h, c, p, UNIFORM, d)
        ref = stats.beta(2, 3).logpdf(d)
        np.testing.assert_allclose(diff - diff[0], ref - ref[0], rtol=1e-12)


class TestMultinomialEvaluator:
    @pytest.mark.parametrize(
        "c0,c,alpha",
        [((1, 2, 1), (2, 0, 1), (1, 1, 1)), ((0, 0, 3), (1, 1, 1), (1.5, 1, 2)), ((2, 1, 0), (0, 3, 1), (1, 2, 1))],
    )
    @pytest.mark.parametrize("delta", [0.0, 0.35, 1.0])
    def test_matches_brute_force(self, c0, c, alpha, delta):
        got = log_marginal_delta(MultinomialData(c0), MultinomialData(c), DirichletPrior(alpha), UNIFORM, delta)
        assert got == pytest.approx(multinomial_log_ratio(c0, c, alpha, delta), abs=1e-7)

    @given(st.integers(1, 30), st.integers(1, 30), st.data())
    def test_two_categories_reduce_to_binomial(self, n0, n, data):
        y0, y = data.draw(st.integers(0, n0)), data.draw(st.integers(0, n))
        h, c = BinomialData(n0, y0), BinomialData(n, y)
        d = np.linspace(0, 1, 7)
        a = log_marginal_delta(h, c, BetaPrior(0.5, 2.0), UNIFORM, d)
        b = log_marginal_delta(h.to_multinomial(), c.to_multinomial(), DirichletPrior((0.5, 2.0)), UNIFORM, d)
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-11)

    def test_category_mismatch(self):
        with pytest.raises(DomainError):
            log_marginal_delta(MultinomialData((1, 2)), MultinomialData((1, 2, 3)), DirichletPrior((1, 1, 1)), UNIFORM, 0.5)


class TestNormalEvaluator:
    Y0 = [0.3, 1.2, -0.5, 0.8]
    Y = [1.0, 0.1, 0.6]

    @pytest.mark.parametrize(
        "prior,args",
        [(NormalLinearPrior(1.0, 0), (1.0, 0, 0.0, 0.0)), (NormalLinearPrior(2.0, 1, [0.5], [[2.0]]), (2.0, 1, 0.5, 2.0))],
    )
    def test_matches_brute_force(self, prior, args):
        d = np.array([0.45, 0.7, 1.0])
        got = log_marginal_delta(intercept(self.Y0), intercept(self.Y), prior, UNIFORM, d)
        ref = np.array([normal_log_ratio(self.Y0, self.Y, *args, x) for x in d])
        # the evaluator drops the current-data factor (2 pi)^(-n/2)
        np.testing.assert_allclose(got - len(self.Y) / 2 * LOG_2PI, ref, atol=1e-6)

    def test_summary_and_linear_agree(self):
        y0, y = np.array(self.Y0), np.array(self.Y)
        s0 = from_raw("normal_summary", y0)
        s = from_raw("normal_summary", y)
        d = np.linspace(0.3, 1, 5)
        a = log_marginal_delta(s0, s, NormalLinearPrior(), UNIFORM, d)
        b = log_marginal_delta(intercept(y0), intercept(y), NormalLinearPrior(), UNIFORM, d)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_intercept_only_terms_match_general_path(self):
        y0, y = np.array(self.Y0), np.array(self.Y)
        d = np.linspace(0.3, 1, 8)
        t = intercept_only_terms(
            y0.size, y0.mean(), np.sum((y0 - y0.mean()) ** 2), y.size, y.mean(), np.sum((y - y.mean()) ** 2), 1.0, d
        )
        ref = log_marginal_delta(intercept(y0), intercept(y), NormalLinearPrior(), UNIFORM, d)
        np.testing.assert_allclose(t.log_npp, ref, rtol=1e-12)

    @pytest.mark.parametrize(
        "a,b,k,n0,expected",
        [(1.0, 0, 1, 10, 0.1), (1.0, 0, 3, 10, 0.3), (2.0, 0, 1, 10, 0.0), (2.0, 1, 2, 10, 0.0), (0.5, 1, 1, 4, 0.25)],
    )
    def test_lower_bound_formula(self, a, b, k, n0, expected):
        rng = np.random.default_rng(k)
        X = np.column_stack([np.ones(n0)] + [rng.normal(size=n0) for _ in range(k - 1)])
        hist = from_raw("normal_linear", X, rng.normal(size=n0))
        prior = NormalLinearPrior(a, b, np.zeros(k), np.eye(k)) if b else NormalLinearPrior(a, b)
        assert delta_lower_bound(hist, prior) == pytest.approx(expected)

    def test_below_bound_raises(self):
        with pytest.raises(DomainError, match="propriety bound"):
            log_marginal_delta(intercept(self.Y0), intercept(self.Y), NormalLinearPrior(), UNIFORM, 0.25)
        with pytest.raises(DomainError):
            delta_posterior(intercept(self.Y0), intercept(self.Y), NormalLinearPrior(), DeltaPrior.fixed(0.1))

    @pytest.mark.parametrize(
        "prior,args", [(NormalLinearPrior(2.0, 1, [0.0], [[1.0]]), (2.0, 1, 0.0, 1.0)), (NormalLinearPrior(), (1.0, 0, 0.0, 0.0))]
    )
    def test_normal_log_c_against_brute_force(self, prior, args):
        y0 = np.array(self.Y0)
        d = np.array([0.4, 0.6, 1.0])
        got = normal_log_c(intercept(y0), prior, d)
        ref = np.array([normal_log_integral(y0, *args, x) for x in d])
        np.testing.assert_allclose(got - got[-1], ref - ref[-1], atol=1e-6)


class TestConditionalLaw:
    def test_beta_and_dirichlet(self):
        law = conditional_posterior_given_delta(BinomialData(10, 3), BinomialData(5, 4), BetaPrior(1, 2), 0.5)
        assert (law.a, law.b) == (1 + 1.5 + 4, 2 + 3.5 + 1)
        law = conditional_posterior_given_delta(
            MultinomialData((2, 4)), MultinomialData((1, 1)), DirichletPrior((1, 1)), 0.5
        )
        np.testing.assert_allclose(law.alpha, [3.0, 4.0])

    def test_normal_moments_against_brute_force(self):
        # k = 1, b = 0, a = 1, delta = 1 on three-point samples
        y0, y = np.array([0.2, 1.1, -0.4]), np.array([0.9, 0.3, 1.4])
        law = conditional_posterior_given_delta(intercept(y0), intercept(y), NormalLinearPrior(), 1.0)
        pooled = np.concatenate([y0, y])

        t = np.linspace(-15, 40, 5501)[None, :]
        u = np.linspace(-40, 40, 1601)[:, None]
        beta = pooled.mean() + np.exp(t / 2) * u
        ss = np.sum((pooled - pooled.mean()) ** 2) + pooled.size * (pooled.mean() - beta) ** 2
        # flat beta, s2^-1 prior; ds2 dbeta = s2^(3/2) dt du
        lw = -(pooled.size / 2 + 1) * t - ss / (2 * np.exp(t)) + 1.5 * t
        w = np.exp(lw - lw.max())
        z = w.sum()
        m_beta = (w * beta).sum() / z
        m_s2 = (w * np.exp(t)).sum() / z
        assert law.shape == pytest.approx((-1 + 3 + 3) / 2 + 1 - 1)
        assert law.mu[0] == pytest.approx(m_beta, abs=1e-6)
        assert law.scale / (law.shape - 1) == pytest.approx(m_s2, rel=1e-5)

    def test_intermediates_nonnegative(self):
        rng = np.random.default_rng(3)
        X0, X = rng.normal(size=(12, 2)), rng.normal(size=(9, 2))
        hist = from_raw("normal_linear", X0, rng.normal(size=12))
        cur = from_raw("normal_linear", X, rng.normal(size=9))
        prior = NormalLinearPrior(1.5, 1, [0.0, 1.0], [[2.0, 0.3], [0.3, 1.0]])
        for d in (0.0, 0.2, 1.0):
            it = normal_intermediates(hist, cur, prior, d)
            assert it.h0 >= 0 and it.h >= 0
            np.linalg.cholesky(it.sigma_cond)
            assert it.shape == pytest.approx(((1 - 1) * 2 + d * 12 + 9) / 2 + 1.5 - 1)


class TestQuadraticIdentity:
    @given(st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_completing_the_square(self, k, seed):
        rng = np.random.default_rng(seed)
        M1, M2 = rng.normal(size=(k, k)), rng.normal(size=(k, k))
        A, B = M1 @ M1.T + 0.1 * np.eye(k), M2 @ M2.T + 0.1 * np.eye(k)
        y, z, x = rng.normal(size=k), rng.normal(size=k), rng.normal(size=k)
        center, residual = combine_quadratics(A, y, B, z)
        lhs = (x - y) @ A @ (x - y) + (x - z) @ B @ (x - z)
        rhs = residual + (x - center) @ (A + B) @ (x - center)
        np.testing.assert_allclose(rhs, lhs, rtol=1e-8)
        assert residual >= -1e-12

    def test_residual_is_the_evaluator_h(self):
        rng = np.random.default_rng(7)
        hist = from_raw("normal_linear", rng.normal(size=(10, 2)), rng.normal(size=10))
        cur = from_raw("normal_linear", rng.normal(size=(6, 2)), rng.normal(size=6))
        prior = NormalLinearPrior(1.0, 1, [0.2, -0.1], [[1.0, 0.2], [0.2, 0.5]])
        d = 0.4
        t = _normal_terms(hist, cur, prior, np.array([d]))
        A = prior.R + d * hist.xtx
        _, residual = combine_quadratics(A, t.beta_star[0], cur.xtx, cur.beta_hat)
        assert t.h[0] == pytest.approx(residual, rel=1e-10)


class TestNormalGammaIntegral:
    @pytest.mark.parametrize("a,b,A", [(2.0, 1.0, 1.0), (3.5, 0.4, 2.5), (1.7, 5.0, 0.3)])
    def test_against_2d_quadrature(self, a, b, A):
        # s2 = e^t and x = x0 + e^(t/2) u keep both axes on unit scale
        def f(u, t):
            return math.exp(-(a - 1.5) * t - b / (2 * math.exp(t)) - A * u * u / 2)

        val, _ = integrate.dblquad(f, -30, 200, -40, 40, epsabs=0, epsrel=1e-11)
        assert log_normal_gamma_integral(a, b, A) == pytest.approx(math.log(val), abs=1e-6)

    def test_divergent(self):
        with pytest.raises(DomainError):
            log_normal_gamma_integral(1.4, 1.0, 1.0)
        with pytest.raises(DomainError):
            log_normal_gamma_integral(3.0, 1.0, -1.0)


class TestDeltaPosterior:
    CASES = [
        (BinomialData(40, 20), BinomialData(30, 12), BetaPrior(1, 1)),
        (MultinomialData((5, 9, 2)), MultinomialData((3, 4, 4)), DirichletPrior((0.5, 0.5, 0.5))),
        (NormalSummary(30, 0.2, 1.1), NormalSummary(20, 0.5, 0.9), NormalLinearPrior()),
    ]

    @pytest.mark.parametrize("hist,cur,prior", CASES)
    def test_normalised_and_consistent(self, hist, cur, prior):
        post = delta_posterior(hist, cur, prior, UNIFORM)
        assert post.total_mass() == pytest.approx(1.0, abs=1e-8)
        assert post.lower <= post.mode <= 1.0
        assert post.lower < post.mean < 1.0
        assert np.all(np.diff(post.cdf) >= 0)
        # mean by an independent adaptive rule
        lo = post.lower
        f = lambda x: math.exp(float(log_marginal_delta(hist, cur, prior, UNIFORM, x)) - post.log_normalizer)
        z, _ = integrate.quad(f, lo, 1, epsabs=0, epsrel=1e-10, limit=200)
        m, _ = integrate.quad(lambda x: x * f(x), lo, 1, epsabs=0, epsrel=1e-10, limit=200)
        assert z == pytest.approx(1.0, abs=1e-7)
        assert post.mean == pytest.approx(m, abs=1e-8)

    def test_normal_support_is_truncated(self):
        post = delta_posterior(NormalSummary(10, 0.0, 1.0), NormalSummary(10, 0.1, 1.0), NormalLinearPrior(), UNIFORM)
        assert post.truncated and post.lower == pytest.approx(0.1)
        assert post.grid.min() > 0.1

    def test_fixed_prior_gives_point_mass(self):
        post = delta_posterior(BinomialData(10, 2), BinomialData(10, 5), BetaPrior(1, 1), DeltaPrior.fixed(0.3))
        assert post.degenerate and post.mean == post.mode == 0.3 and post.sd == 0.0

    def test_sampling_matches_quadrature(self):
        h, c, p = BinomialData(40, 20), BinomialData(30, 12), BetaPrior(1, 1)
        draws = sample_posterior(h, c, p, UNIFORM, 40000, numkit.RngStream(11, 0))
        post = draws.delta_posterior
        assert draws.delta.mean() == pytest.approx(post.mean, abs=4 * post.sd / 200)
        again = sample_posterior(h, c, p, UNIFORM, 40000, numkit.RngStream(11, 0))
        np.testing.assert_array_equal(draws["p"], again["p"])
        with pytest.raises(DomainError):
            sample_posterior(h, c, p, UNIFORM, 0, numkit.RngStream(11, 0))


class TestModeAtOneUnderCompatibility:
    @pytest.mark.parametrize("family", ["binomial", "multinomial", "normal"])
    def test_nondecreasing_and_mode_one(self, family):
        rng = np.random.default_rng(hash(family) % 2**32)
        for _ in range(5):
            hist, cur, prior = matched_configuration(family, rng)
            lo = delta_lower_bound(hist, prior)
            x = np.linspace(lo + 1e-3, 1, 400)
            f = log_marginal_delta(hist, cur, prior, UNIFORM, x)
            assert np.min(np.diff(f) / np.diff(x)) >= -1e-6
            assert delta_posterior(hist, cur, prior, UNIFORM).mode == 1.0


class TestKLOptimality:
    @pytest.mark.parametrize("delta", [0.25, 0.8])
    def test_power_prior_minimises_weighted_kl(self, delta):
        rep = verify_kl_optimality(BinomialData(10, 4), BetaPrior(1, 1), delta, lo=0.5, hi=8, step=0.1)
        assert rep.coincides
        assert rep.loss_at_expected <= rep.loss_at_minimizer + 1e-9


class TestLikelihoodConstants:
    CASES = TestDeltaPosterior.CASES

    @pytest.mark.parametrize("hist,cur,prior", CASES)
    def test_npp_ignores_the_constant_bitwise(self, hist, cur, prior):
        base = delta_posterior(hist, cur, prior, UNIFORM)
        for ls in (math.log(1e-6), math.log(1e6), 250.0):
            other = delta_posterior(hist, cur, prior, UNIFORM, log_scale=ls)
            assert other.mean == base.mean and other.mode == base.mode
            np.testing.assert_array_equal(other.log_density, base.log_density)

    def test_scaled_brute_force_agrees(self):
        # the defining ratio with c L0 in both integrals gives the same values
        for ls in (-13.8, 0.0, 13.8):
            assert binomial_log_ratio(2, 4, 3, 4, 1, 1, 0.6, log_scale=ls) == pytest.approx(
                log_marginal_delta(BinomialData(4, 2), BinomialData(4, 3), BetaPrior(1, 1), UNIFORM, 0.6), abs=1e-9
            )

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            delta_posterior(BinomialData(4, 2), BinomialData(4, 3), BetaPrior(1, 1), UNIFORM, log_scale=math.inf)


class TestDomain:
    @pytest.mark.parametrize("d", [-0.1, 1.2, math.nan])
    def test_delta_outside_unit_interval(self, d):
        with pytest.raises(DomainError):
            log_marginal_delta(BinomialData(4, 2), BinomialData(4, 3), BetaPrior(1, 1), UNIFORM, d)

    def test_unsupported_prior(self):
        with pytest.raises(TypeError):
            log_marginal_delta(BinomialData(4, 2), BinomialData(4, 3), object(), UNIFORM, 0.5)
