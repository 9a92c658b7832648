"""Exact normalized power prior computations for the conjugate families.

The unnormalised log marginal posterior of the power parameter ``delta`` is
available in closed form for Bernoulli/binomial data with a beta prior,
multinomial data with a Dirichlet prior and the normal linear model with a
normal/inverse-gamma type prior. Given ``delta``, the parameters have a
standard conditional law, so joint draws are obtained by composition.

All evaluators accept scalar or array ``delta`` and work in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln

from . import numkit
from .errors import DomainError
from .models import (
    BetaPrior,
    BinomialData,
    DeltaPrior,
    DirichletPrior,
    MultinomialData,
    NormalLinearData,
    NormalLinearPrior,
    NormalSummary,
)

#: 256 panels x 8 nodes, panels crowded quadratically toward the lower end.
DELTA_RULE = numkit.gauss_legendre_rule(panels=256, order=8, grading=2.0)


def _delta_array(delta: ArrayLike) -> NDArray[np.float64]:
    d = np.asarray(delta, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d < 0.0) or np.any(d > 1.0):
        raise DomainError(f"delta must lie in [0, 1], got {delta!r}")
    return d


def _prior_term(dprior: DeltaPrior, d: NDArray[np.float64]) -> NDArray[np.float64]:
    # a point-mass prior has no density; it contributes nothing here
    if dprior.is_fixed:
        return np.zeros_like(d)
    return dprior.log_density(d)


def _out(x: NDArray[np.float64]):
    return float(x) if np.ndim(x) == 0 else x


def _as_linear(data):
    return data.to_linear() if isinstance(data, NormalSummary) else data


# ---------------------------------------------------------------------------
# binomial and multinomial
# ---------------------------------------------------------------------------


def log_marginal_delta_binomial(
    hist: BinomialData,
    cur: BinomialData,
    prior: BetaPrior,
    dprior: DeltaPrior,
    delta: ArrayLike,
):
    """log pi0(delta) + log B(d y0 + y + a, d f0 + f + b) - log B(d y0 + a, d f0 + b)."""
    d = _delta_array(delta)
    a0 = d * hist.y + prior.alpha
    b0 = d * hist.failures + prior.beta
    val = numkit.log_beta(a0 + cur.y, b0 + cur.failures) - numkit.log_beta(a0, b0)
    return _out(_prior_term(dprior, d) + val)


def _check_k(hist: MultinomialData, cur: MultinomialData, prior: DirichletPrior) -> None:
    if not hist.k == cur.k == len(prior.alpha):
        raise DomainError(
            f"category counts differ: historical k={hist.k}, current k={cur.k}, "
            f"prior k={len(prior.alpha)}"
        )


def log_marginal_delta_multinomial(
    hist: MultinomialData,
    cur: MultinomialData,
    prior: DirichletPrior,
    dprior: DeltaPrior,
    delta: ArrayLike,
):
    """Dirichlet-multinomial analogue of the binomial evaluator."""
    _check_k(hist, cur, prior)
    d = _delta_array(delta)
    dd = d[..., None]
    alpha = prior.array
    a0 = dd * hist.array + alpha
    val = (
        gammaln(d * hist.n + alpha.sum())
        - gammaln(d * hist.n + cur.n + alpha.sum())
        + np.sum(gammaln(a0 + cur.array) - gammaln(a0), axis=-1)
    )
    return _out(_prior_term(dprior, d) + val)


# ---------------------------------------------------------------------------
# normal linear model
# ---------------------------------------------------------------------------


def delta_lower_bound(hist, prior) -> float:
    """Propriety bound: the powered prior is proper only for delta above this.

    Equals ``max(0, ((1 - b) k + 2 - 2 a) / n0)`` for the normal linear
    model and 0 for the other families. For the normal model ``delta = 0``
    itself is always excluded because the inverse-gamma part of the initial
    prior is improper.
    """
    if not isinstance(prior, NormalLinearPrior):
        return 0.0
    hist = _as_linear(hist)
    k = hist.k
    return max(0.0, ((1 - prior.b) * k + 2.0 - 2.0 * prior.a) / hist.n)


@dataclass(frozen=True)
class NormalLinearIntermediates:
    """Quantities entering the normal-model posterior at one ``delta``.

    ``log_m0`` is the log of the normalising factor of the powered prior,
    ``log_m`` the log of the data factor in the marginal density of delta.
    ``nu`` is the degrees of freedom of the multivariate t law of beta given
    delta, with location ``mu_cond`` and shape matrix ``sigma_cond``.
    ``shape``/``scale`` parametrise the inverse gamma law of sigma^2 given
    delta. At ``delta = 0`` with ``b = 0`` the historical part is void:
    ``beta_star`` is NaN and ``log_m0``, ``log_m`` are undefined (NaN).
    """

    delta: float
    beta_star: NDArray[np.float64]
    h0: float
    log_m0: float
    h: float
    log_m: float
    nu: float
    mu_cond: NDArray[np.float64]
    sigma_cond: NDArray[np.float64]
    shape: float
    scale: float
    precision: NDArray[np.float64]
    nu0: float


@dataclass(frozen=True)
class _NormalTerms:
    """Batched pieces of the normal model over a vector of delta values."""

    d: NDArray[np.float64]
    beta_star: NDArray[np.float64]  # (m, k)
    h0: NDArray[np.float64]
    h: NDArray[np.float64]
    tot: NDArray[np.float64]  # S + H + d (S0 + b H0)
    hist_part: NDArray[np.float64]  # d (S0 + b H0)
    logdet_a: NDArray[np.float64]
    logdet_tot: NDArray[np.float64]
    nu0: NDArray[np.float64]
    nu_star: NDArray[np.float64]
    mu: NDArray[np.float64]  # (m, k)
    a_tot: NDArray[np.float64]  # (m, k, k)


def _normal_terms(
    hist: NormalLinearData, cur: NormalLinearData, prior: NormalLinearPrior, d: NDArray[np.float64]
) -> _NormalTerms:
    if hist.k != cur.k:
        raise DomainError(f"design dimensions differ: k0={hist.k}, k={cur.k}")
    k, b = cur.k, prior.b
    d = np.atleast_1d(d)
    R = prior.R_for(k)
    mu0 = prior.mu0_for(k)
    g0, g = hist.xtx, cur.xtx
    A = b * R[None] + d[:, None, None] * g0[None]
    A_tot = A + g[None]
    r = b * (R @ mu0)[None] + d[:, None] * (g0 @ hist.beta_hat)[None]  # = A beta*

    void = (d == 0.0) & (b == 0)  # A = 0: historical information absent
    ok = ~void
    m = d.size
    beta_star = np.full((m, k), np.nan)
    h0 = np.zeros(m)
    h = np.zeros(m)
    logdet_a = np.full(m, -np.inf)
    if np.any(ok):
        Aok = A[ok]
        beta_star[ok] = np.linalg.solve(Aok, r[ok][..., None])[..., 0]
        logdet_a[ok] = np.linalg.slogdet(Aok)[1]
        if b == 1:
            dm = mu0 - hist.beta_hat
            w = np.linalg.solve(Aok, np.broadcast_to(R @ dm, (Aok.shape[0], k))[..., None])[..., 0]
            h0[ok] = w @ (g0 @ dm)
        diff = beta_star[ok] - cur.beta_hat
        v = np.linalg.solve(A_tot[ok], (Aok @ diff[..., None]))[..., 0]
        h[ok] = np.einsum("mi,ij,mj->m", diff, g, v)
    h0 = np.maximum(h0, 0.0)
    h = np.maximum(h, 0.0)
    hist_part = d * (hist.s + b * h0)
    tot = cur.s + h + hist_part
    nu0 = (d * hist.n + (b - 1) * k) / 2.0 + prior.a - 1.0
    nu_star = nu0 + cur.n / 2.0
    mu = np.linalg.solve(A_tot, (r + (g @ cur.beta_hat)[None])[..., None])[..., 0]
    return _NormalTerms(
        d=d,
        beta_star=beta_star,
        h0=h0,
        h=h,
        tot=tot,
        hist_part=hist_part,
        logdet_a=logdet_a,
        logdet_tot=np.linalg.slogdet(A_tot)[1],
        nu0=nu0,
        nu_star=nu_star,
        mu=mu,
        a_tot=A_tot,
    )


def _log_m0(t: _NormalTerms) -> NDArray[np.float64]:
    with np.errstate(divide="ignore", invalid="ignore"):
        return 0.5 * t.logdet_a - gammaln(t.nu0) + t.nu0 * np.log(t.hist_part / 2.0)


def _log_m(t: _NormalTerms, n: int) -> NDArray[np.float64]:
    with np.errstate(divide="ignore", invalid="ignore"):
        return 0.5 * n * np.log(t.tot) + t.nu0 * np.log1p((t.tot - t.hist_part) / t.hist_part)


def normal_intermediates(
    hist, cur, prior: NormalLinearPrior, delta: float
) -> NormalLinearIntermediates:
    """Intermediate quantities at a single ``delta``.

    ``delta = 0`` is accepted here (the conditional law given ``delta`` is
    still proper once the current data are included) as long as the
    posterior shape is positive.
    """
    hist, cur = _as_linear(hist), _as_linear(cur)
    d = float(_delta_array(delta))
    t = _normal_terms(hist, cur, prior, np.array([d]))
    nu = 2.0 * float(t.nu_star[0])
    if nu <= 0.0:
        raise DomainError(
            f"conditional posterior improper at delta={d}: degrees of freedom {nu} <= 0"
        )
    cov_unit = np.linalg.inv(t.a_tot[0])
    tot = float(t.tot[0])
    proper_prior = d > delta_lower_bound(hist, prior)
    return NormalLinearIntermediates(
        delta=d,
        beta_star=t.beta_star[0],
        h0=float(t.h0[0]),
        log_m0=float(_log_m0(t)[0]) if proper_prior else math.nan,
        h=float(t.h[0]),
        log_m=float(_log_m(t, cur.n)[0]) if proper_prior else math.nan,
        nu=nu,
        mu_cond=t.mu[0],
        sigma_cond=tot / nu * cov_unit,
        shape=float(t.nu_star[0]),
        scale=tot / 2.0,
        precision=t.a_tot[0],
        nu0=float(t.nu0[0]),
    )


def _check_normal_domain(d: NDArray[np.float64], hist, prior) -> None:
    lo = delta_lower_bound(hist, prior)
    if np.any(d <= lo):
        bad = float(np.min(d))
        raise DomainError(
            f"delta={bad!r} is at or below the propriety bound delta_min={lo!r}; "
            f"the powered prior is improper there"
        )


def log_marginal_delta_normal(
    hist, cur, prior: NormalLinearPrior, dprior: DeltaPrior, delta: ArrayLike
):
    """Unnormalised log marginal posterior of delta for the normal linear model.

    Evaluated as ``log pi0(delta) + log M0 + lgamma(nu*) - log|A_tot|/2 -
    nu* log(tot/2)``, which equals the product form with ``M(delta)`` up to
    an additive constant. Only ``delta`` above the propriety bound is valid.
    """
    hist, cur = _as_linear(hist), _as_linear(cur)
    d = _delta_array(delta)
    _check_normal_domain(np.atleast_1d(d), hist, prior)
    t = _normal_terms(hist, cur, prior, np.atleast_1d(d).ravel())
    val = _log_m0(t) + gammaln(t.nu_star) - 0.5 * t.logdet_tot - t.nu_star * np.log(t.tot / 2.0)
    val = val.reshape(np.shape(d))
    return _out(_prior_term(dprior, d) + val)


def normal_log_c(hist, prior: NormalLinearPrior, delta: ArrayLike):
    """Closed-form log of the powered prior's normalising constant.

    Uses the likelihood with its ``(2 pi)^(-n0/2)`` factor and is exact up
    to an additive constant independent of ``delta``.
    """
    hist = _as_linear(hist)
    d = np.atleast_1d(_delta_array(delta)).astype(float)
    _check_normal_domain(d, hist, prior)
    empty = NormalLinearData(1, hist.xtx, hist.beta_hat, 0.0)
    t = _normal_terms(hist, empty, prior, d)
    val = -d * hist.n / 2.0 * math.log(2.0 * math.pi) - _log_m0(t)
    return _out(val.reshape(np.shape(delta)))


@dataclass(frozen=True)
class InterceptOnlyTerms:
    """Delta-dependent pieces for the intercept-only normal model, b = 0.

    ``log_npp`` is the unnormalised log marginal posterior of delta under
    the normalized power prior (flat delta prior), ``log_jpp`` the kernel
    part shared by the joint power prior forms, and ``cond_mean`` the
    posterior mean of mu given delta. All broadcast over the inputs.
    """

    log_npp: NDArray[np.float64]
    log_jpp: NDArray[np.float64]
    cond_mean: NDArray[np.float64]


def intercept_only_terms(n0, xbar0, s0_sq_sum, n, xbar, s_sq_sum, a, delta) -> InterceptOnlyTerms:
    """Vectorised special case of the normal evaluator for many datasets at once.

    ``s0_sq_sum`` and ``s_sq_sum`` are residual sums of squares. Only
    delta above 1/n0 (and the corresponding bound for other ``a``) gives a
    finite ``log_npp``.
    """
    d = np.asarray(delta, dtype=float)
    a_hist = d * n0
    a_tot = a_hist + n
    h = n * a_hist * (xbar0 - xbar) ** 2 / a_tot
    hist_part = d * s0_sq_sum
    tot = s_sq_sum + h + hist_part
    nu0 = (a_hist - 1.0) / 2.0 + a - 1.0
    nu_star = nu0 + n / 2.0
    log_jpp = gammaln(nu_star) - 0.5 * np.log(a_tot) - nu_star * np.log(tot / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_m0 = 0.5 * np.log(a_hist) - gammaln(nu0) + nu0 * np.log(hist_part / 2.0)
    log_npp = np.where(nu0 > 0, log_m0 + log_jpp, -np.inf)
    cond_mean = (a_hist * xbar0 + n * xbar) / a_tot
    return InterceptOnlyTerms(log_npp, log_jpp, cond_mean)


# ---------------------------------------------------------------------------
# the two identities behind the normal results
# ---------------------------------------------------------------------------


def combine_quadratics(A, y, B, z) -> Tuple[NDArray[np.float64], float]:
    """Complete the square in ``(x-y)'A(x-y) + (x-z)'B(x-z)``.

    Returns ``(center, residual)`` with ``center = (A+B)^-1 (Ay + Bz)`` and
    ``residual = (y-z)' B (A+B)^-1 A (y-z)``, so the sum equals
    ``residual + (x-center)'(A+B)(x-center)`` for every x.
    """
    A, B = np.atleast_2d(np.asarray(A, float)), np.atleast_2d(np.asarray(B, float))
    y, z = np.atleast_1d(np.asarray(y, float)), np.atleast_1d(np.asarray(z, float))
    S = A + B
    center = np.linalg.solve(S, A @ y + B @ z)
    diff = y - z
    residual = float(diff @ B @ np.linalg.solve(S, A @ diff))
    return center, residual


def log_normal_gamma_integral(a: float, b: float, A) -> float:
    """log of the integral over t > 0 and x in R^k of t^-a exp{-(b + (x-x0)'A(x-x0)) / (2t)}.

    Finite only for ``a > k/2 + 1`` and ``b > 0``; does not depend on x0.
    """
    A = np.atleast_2d(np.asarray(A, float))
    k = A.shape[0]
    shape = a - k / 2.0 - 1.0
    if shape <= 0 or b <= 0:
        raise DomainError(f"integral diverges: need a > k/2 + 1 and b > 0 (a={a}, b={b}, k={k})")
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0:
        raise DomainError("A must be positive definite")
    return float(k / 2.0 * math.log(2.0 * math.pi) + math.lgamma(shape) - 0.5 * logdet - shape * math.log(b / 2.0))


# ---------------------------------------------------------------------------
# dispatch and the posterior of delta
# ---------------------------------------------------------------------------


def _check_log_scale(log_scale: float) -> None:
    if not math.isfinite(log_scale):
        raise DomainError(f"log_scale must be finite, got {log_scale!r}")


def log_marginal_delta(hist, cur, prior, dprior: DeltaPrior, delta: ArrayLike, log_scale: float = 0.0):
    """Family dispatch over the three closed-form evaluators.

    ``log_scale`` is the log of a positive constant multiplying the
    historical likelihood. It contributes ``delta * log_scale`` to both the
    numerator and the normalising constant of the powered prior, so it
    cancels before any arithmetic and the result does not depend on it.
    """
    _check_log_scale(log_scale)
    if isinstance(prior, BetaPrior):
        return log_marginal_delta_binomial(hist, cur, prior, dprior, delta)
    if isinstance(prior, DirichletPrior):
        return log_marginal_delta_multinomial(hist, cur, prior, dprior, delta)
    if isinstance(prior, NormalLinearPrior):
        return log_marginal_delta_normal(hist, cur, prior, dprior, delta)
    raise TypeError(f"unsupported prior type {type(prior).__name__}")


@dataclass(frozen=True)
class DeltaPosterior:
    """Normalised posterior of delta tabulated on quadrature nodes.

    ``grid``/``log_density``/``weights`` are the nodes, normalised log
    densities and quadrature weights on ``(lower, upper)``; ``cdf_x``/``cdf``
    is a piecewise-linear CDF table used for inverse-CDF sampling. A
    degenerate posterior (fixed delta) has a single grid point.
    """

    grid: NDArray[np.float64]
    log_density: NDArray[np.float64]
    weights: NDArray[np.float64]
    mean: float
    mode: float
    cdf_x: NDArray[np.float64]
    cdf: NDArray[np.float64]
    multimodal_flag: bool = False
    lower: float = 0.0
    upper: float = 1.0
    degenerate: bool = False
    log_normalizer: float = 0.0

    @property
    def truncated(self) -> bool:
        """True when the delta prior was renormalised above a propriety bound."""
        return self.lower > 0.0

    @property
    def sd(self) -> float:
        if self.degenerate:
            return 0.0
        p = self.weights * np.exp(self.log_density)
        return float(np.sqrt(max(np.dot(p, (self.grid - self.mean) ** 2), 0.0)))

    def total_mass(self) -> float:
        return float(np.dot(self.weights, np.exp(self.log_density)))

    def sample(self, stream, count: int) -> NDArray[np.float64]:
        if self.degenerate:
            return np.full(count, self.mean)
        u = numkit.sample_distribution("uniform", {}, stream, count)
        return numkit.inverse_cdf_sample(self.cdf_x, self.cdf, u)

    def quantile(self, q: ArrayLike) -> NDArray[np.float64]:
        return numkit.inverse_cdf_sample(self.cdf_x, self.cdf, q)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "mode": self.mode,
            "sd": self.sd,
            "multimodal": self.multimodal_flag,
            "lower": self.lower,
            "truncated": self.truncated,
            "degenerate": self.degenerate,
        }


def degenerate_posterior(delta0: float) -> DeltaPosterior:
    x = np.array([delta0])
    return DeltaPosterior(
        grid=x,
        log_density=np.zeros(1),
        weights=np.ones(1),
        mean=delta0,
        mode=delta0,
        cdf_x=np.array([delta0, delta0]),
        cdf=np.array([0.0, 1.0]),
        lower=delta0,
        upper=delta0,
        degenerate=True,
    )


def _masked(f: Callable, lower: float) -> Callable:
    """Wrap ``f`` so points at or below ``lower`` evaluate to -inf."""

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -np.inf)
        ok = x > lower
        if np.any(ok):
            out[ok] = f(x[ok])
        return _out(out)

    return g


def posterior_from_log_density(
    f: Callable,
    lower: float = 0.0,
    upper: float = 1.0,
    rule: numkit.QuadratureRule = DELTA_RULE,
    open_lower: bool = False,
) -> DeltaPosterior:
    """Normalise a vectorised unnormalised log-density of delta on ``(lower, upper)``.

    With ``open_lower`` the lower end is excluded from the mode search
    (the density is undefined there).
    """
    res = numkit.integrate_unit(f, rule, lower, upper)
    g = _masked(f, lower) if open_lower else f
    am = numkit.argmax_on_interval(g, lower, upper)
    return DeltaPosterior(
        grid=res.nodes,
        log_density=res.log_density,
        weights=res.weights,
        mean=res.mean,
        mode=am.x_star,
        cdf_x=res.cdf_x,
        cdf=res.cdf,
        multimodal_flag=am.multimodal,
        lower=lower,
        upper=upper,
        log_normalizer=res.log_normalizer,
    )


def delta_posterior(
    hist,
    cur,
    prior,
    dprior: DeltaPrior,
    rule: numkit.QuadratureRule = DELTA_RULE,
    log_scale: float = 0.0,
) -> DeltaPosterior:
    """Posterior of delta under the normalized power prior.

    With a fixed delta prior the result is a point mass. For the normal
    model with an improper initial prior the support is the open interval
    above the propriety bound and the delta prior is renormalised there.
    ``log_scale`` is accepted for symmetry with the joint power prior and
    cancels (see :func:`log_marginal_delta`).
    """
    _check_log_scale(log_scale)
    if dprior.is_fixed:
        d0 = dprior.delta0
        if isinstance(prior, NormalLinearPrior):
            _check_normal_domain(np.array([d0]), _as_linear(hist), prior)
        return degenerate_posterior(d0)
    lower = delta_lower_bound(hist, prior)
    f = lambda d: log_marginal_delta(hist, cur, prior, dprior, d)
    return posterior_from_log_density(
        f, lower, 1.0, rule, open_lower=isinstance(prior, NormalLinearPrior)
    )


# ---------------------------------------------------------------------------
# conditional laws and composition sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaLaw:
    a: float
    b: float

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def sample(self, stream, count: int) -> NDArray[np.float64]:
        return numkit.sample_distribution("beta", {"a": self.a, "b": self.b}, stream, count)


@dataclass(frozen=True)
class DirichletLaw:
    alpha: NDArray[np.float64]

    @property
    def mean(self) -> NDArray[np.float64]:
        return self.alpha / self.alpha.sum()

    def sample(self, stream, count: int) -> NDArray[np.float64]:
        return numkit.sample_distribution("dirichlet", {"alpha": self.alpha}, stream, count)


@dataclass(frozen=True)
class NormalLinearLaw:
    """Joint law of (beta, sigma^2) given delta.

    sigma^2 ~ InvGamma(shape, scale); beta | sigma^2 ~ N(mu, sigma^2 precision^-1);
    marginally beta ~ t_nu(mu, sigma_t).
    """

    intermediates: NormalLinearIntermediates

    @property
    def shape(self) -> float:
        return self.intermediates.shape

    @property
    def scale(self) -> float:
        return self.intermediates.scale

    @property
    def mu(self) -> NDArray[np.float64]:
        return self.intermediates.mu_cond

    @property
    def sigma_t(self) -> NDArray[np.float64]:
        return self.intermediates.sigma_cond

    @property
    def nu(self) -> float:
        return self.intermediates.nu

    def sample(self, stream, count: int) -> Dict[str, NDArray[np.float64]]:
        rng = numkit._as_stream(stream)
        sigma2 = numkit.sample_distribution(
            "inverse_gamma", {"shape": self.shape, "scale": self.scale}, rng, count
        )
        chol = np.linalg.cholesky(np.linalg.inv(self.intermediates.precision))
        z = rng.standard_normal((count, self.mu.size))
        beta = self.mu + np.sqrt(sigma2)[:, None] * (z @ chol.T)
        return {"beta": beta, "sigma2": sigma2}


def conditional_posterior_given_delta(hist, cur, prior, delta: float):
    """Exact law of the model parameters given delta and both datasets."""
    d = float(_delta_array(delta))
    if isinstance(prior, BetaPrior):
        return BetaLaw(d * hist.y + cur.y + prior.alpha, d * hist.failures + cur.failures + prior.beta)
    if isinstance(prior, DirichletPrior):
        _check_k(hist, cur, prior)
        return DirichletLaw(d * hist.array + cur.array + prior.array)
    if isinstance(prior, NormalLinearPrior):
        return NormalLinearLaw(normal_intermediates(hist, cur, prior, d))
    raise TypeError(f"unsupported prior type {type(prior).__name__}")


@dataclass(frozen=True)
class PosteriorDraws:
    """Joint posterior draws: ``delta`` plus named parameter arrays."""

    delta: NDArray[np.float64]
    params: Dict[str, NDArray[np.float64]] = field(default_factory=dict)
    delta_posterior: Optional[DeltaPosterior] = None

    def __getitem__(self, name: str) -> NDArray[np.float64]:
        return self.delta if name == "delta" else self.params[name]


def _sample_given_deltas(hist, cur, prior, d: NDArray[np.float64], rng) -> Dict[str, NDArray]:
    count = d.size
    if isinstance(prior, BetaPrior):
        a = d * hist.y + cur.y + prior.alpha
        b = d * hist.failures + cur.failures + prior.beta
        return {"p": rng.beta(a, b)}
    if isinstance(prior, DirichletPrior):
        _check_k(hist, cur, prior)
        alpha = d[:, None] * hist.array + cur.array + prior.array
        g = rng.standard_gamma(alpha)
        return {"theta": g / g.sum(axis=1, keepdims=True)}
    if isinstance(prior, NormalLinearPrior):
        hist, cur = _as_linear(hist), _as_linear(cur)
        t = _normal_terms(hist, cur, prior, d)
        if np.any(t.nu_star <= 0):
            raise DomainError("conditional posterior improper for some delta draws")
        sigma2 = (t.tot / 2.0) / rng.standard_gamma(t.nu_star)
        chol = np.linalg.cholesky(np.linalg.inv(t.a_tot))
        z = rng.standard_normal((count, cur.k))
        beta = t.mu + np.sqrt(sigma2)[:, None] * np.einsum("mij,mj->mi", chol, z)
        return {"beta": beta, "sigma2": sigma2}
    raise TypeError(f"unsupported prior type {type(prior).__name__}")


def sample_given_delta_posterior(
    hist, cur, prior, post: DeltaPosterior, draws: int, stream
) -> PosteriorDraws:
    """Composition sampling from a precomputed posterior of delta."""
    rng = numkit._as_stream(stream)
    if post.degenerate:
        d = np.full(draws, post.mean)
    else:
        d = numkit.inverse_cdf_sample(post.cdf_x, post.cdf, rng.random(draws))
        d = np.clip(d, np.nextafter(post.lower, 1.0) if post.lower > 0 else 0.0, post.upper)
    return PosteriorDraws(d, _sample_given_deltas(hist, cur, prior, d, rng), post)


def sample_posterior(hist, cur, prior, dprior: DeltaPrior, draws: int, stream) -> PosteriorDraws:
    """Joint draws of (theta, delta): delta by inverse CDF, then theta given delta."""
    if draws < 1:
        raise DomainError("draws must be positive")
    post = delta_posterior(hist, cur, prior, dprior)
    return sample_given_delta_posterior(hist, cur, prior, post, draws, stream)


# ---------------------------------------------------------------------------
# weighted KL optimality (binomial)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KLOptimalityReport:
    delta: float
    grid_minimizer: tuple
    expected: tuple
    loss_at_minimizer: float
    loss_at_expected: float
    step: float

    @property
    def coincides(self) -> bool:
        return all(abs(g - e) <= self.step * (1 + 1e-9) for g, e in zip(self.grid_minimizer, self.expected))


def weighted_kl_loss(
    a: ArrayLike, b: ArrayLike, pi0: tuple, pi1: tuple, delta: float
) -> NDArray[np.float64]:
    """(1 - delta) KL(g, pi0) + delta KL(g, pi1) for g = Beta(a, b), by quadrature.

    The integral over p is taken on the logit scale, which removes the
    endpoint singularities of the beta densities.
    """
    t, w = numkit.logit_gauss_legendre()
    logp = -np.logaddexp(0.0, -t)
    log1mp = -np.logaddexp(0.0, t)
    a = np.atleast_1d(np.asarray(a, dtype=float))[:, None]
    b = np.atleast_1d(np.asarray(b, dtype=float))[:, None]

    def logpdf(aa, bb):
        return (aa - 1.0) * logp + (bb - 1.0) * log1mp - numkit.log_beta(aa, bb)

    log_g = logpdf(a, b)
    # density on the logit scale: g(p) p (1 - p)
    mass = np.exp(log_g + logp + log1mp) * w
    target = (1.0 - delta) * logpdf(*pi0) + delta * logpdf(*pi1)
    return np.sum(mass * (log_g - target), axis=1)


def verify_kl_optimality(
    hist: BinomialData,
    prior: BetaPrior,
    delta: float,
    lo: float = 0.5,
    hi: float = 10.0,
    step: float = 0.05,
) -> KLOptimalityReport:
    """Grid-search the Beta(a, b) minimiser of the weighted KL loss.

    The expected minimiser is the power prior Beta(delta y0 + alpha,
    delta (n0 - y0) + beta).
    """
    d = float(_delta_array(delta))
    pi0 = (prior.alpha, prior.beta)
    pi1 = (hist.y + prior.alpha, hist.failures + prior.beta)
    axis = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    A, B = np.meshgrid(axis, axis, indexing="ij")
    loss = np.concatenate(
        [weighted_kl_loss(ra, rb, pi0, pi1, d) for ra, rb in zip(np.array_split(A.ravel(), 64), np.array_split(B.ravel(), 64))]
    )
    i = int(np.argmin(loss))
    expected = (d * hist.y + prior.alpha, d * hist.failures + prior.beta)
    at_expected = float(weighted_kl_loss(expected[0], expected[1], pi0, pi1, d)[0])
    return KLOptimalityReport(
        delta=d,
        grid_minimizer=(float(A.ravel()[i]), float(B.ravel()[i])),
        expected=expected,
        loss_at_minimizer=float(loss[i]),
        loss_at_expected=at_expected,
        step=step,
    )
