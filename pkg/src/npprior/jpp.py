"""Joint power prior comparators.

Unlike the normalized power prior, the joint power prior does not divide
by the normalising constant of the powered likelihood, so any constant in
front of the historical likelihood tilts the posterior of delta. The
:class:`LikelihoodForm` makes that constant explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import gammaln

from . import numkit
from .conjugate import (
    DELTA_RULE,
    DeltaPosterior,
    _as_linear,
    _check_k,
    _delta_array,
    _normal_terms,
    _out,
    _prior_term,
    degenerate_posterior,
    posterior_from_log_density,
)
from .errors import DomainError, EvaluationError
from .models import (
    BetaPrior,
    BinomialData,
    DeltaPrior,
    DirichletPrior,
    MultinomialData,
    NormalLinearPrior,
)

FORMS = {
    "binomial": ("bernoulli_product", "binomial_density"),
    "multinomial": ("categorical_product", "multinomial_density"),
    "normal": ("normal_raw_product", "normal_sufficient_density", "normal_scaled"),
}

_LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_SCALED_EXTRA = 200.0  # added on top of (n0 / 2) log(2 pi)


@dataclass(frozen=True)
class LikelihoodForm:
    """Which version of the historical likelihood enters the joint power prior.

    ``extra_log_constant`` is only used by ``normal_scaled``; ``None`` means
    ``(n0 / 2) log(2 pi) + 200``, i.e. the raw product multiplied by
    ``(2 pi)^(n0/2) e^200``.
    """

    family: str
    form: str
    extra_log_constant: Optional[float] = None

    def __post_init__(self) -> None:
        if self.family not in FORMS:
            raise DomainError(f"unknown family {self.family!r}")
        if self.form not in FORMS[self.family]:
            raise DomainError(f"form {self.form!r} is not valid for family {self.family!r}")
        if self.extra_log_constant is not None and not math.isfinite(self.extra_log_constant):
            raise DomainError("extra_log_constant must be finite")

    @classmethod
    def of(cls, form: str, extra_log_constant: Optional[float] = None) -> "LikelihoodForm":
        for fam, forms in FORMS.items():
            if form in forms:
                return cls(fam, form, extra_log_constant)
        raise DomainError(f"unknown likelihood form {form!r}")


def binomial_log_c1(hist: BinomialData) -> float:
    """log of the binomial coefficient C(n0, y0)."""
    return float(gammaln(hist.n + 1) - gammaln(hist.y + 1) - gammaln(hist.failures + 1))


def multinomial_log_coefficient(hist: MultinomialData) -> float:
    return float(gammaln(hist.n + 1) - np.sum(gammaln(hist.array + 1)))


def normal_log_c2(n0: int, s0: float) -> float:
    """log c2 of the sufficient-statistic density (x-bar0, s0^2) of a normal sample."""
    h = (n0 - 1) / 2.0
    return (
        (n0 - 3) * math.log(s0)
        + h * math.log(h)
        + 0.5 * math.log(n0)
        - 0.5 * _LOG_2PI
        - math.lgamma(h)
    )


def form_log_constant(hist, form: LikelihoodForm) -> float:
    """Per-unit-delta log constant that the form adds to the kernel-based value."""
    name = form.form
    if name in ("bernoulli_product", "categorical_product"):
        return 0.0
    if name == "binomial_density":
        return binomial_log_c1(hist)
    if name == "multinomial_density":
        return multinomial_log_coefficient(hist)
    hist = _as_linear(hist)
    raw = -hist.n / 2.0 * _LOG_2PI
    if name == "normal_raw_product":
        return raw
    if name == "normal_sufficient_density":
        if hist.k != 1:
            raise DomainError("the sufficient-statistic density form needs an intercept-only model")
        s0 = math.sqrt(hist.s / (hist.n - 1))
        return normal_log_c2(hist.n, s0)
    extra = form.extra_log_constant
    if extra is None:
        extra = hist.n / 2.0 * _LOG_2PI + DEFAULT_SCALED_EXTRA
    return raw + extra


def _kernel_value(hist, cur, prior, d):
    """log of the integral of prior x L(D) x L(D0)^delta using likelihood kernels only."""
    if isinstance(prior, BetaPrior):
        return numkit.log_beta(d * hist.y + cur.y + prior.alpha, d * hist.failures + cur.failures + prior.beta)
    if isinstance(prior, DirichletPrior):
        _check_k(hist, cur, prior)
        a = d[..., None] * hist.array + cur.array + prior.array
        return np.sum(gammaln(a), axis=-1) - gammaln(np.sum(a, axis=-1))
    if isinstance(prior, NormalLinearPrior):
        hist, cur = _as_linear(hist), _as_linear(cur)
        t = _normal_terms(hist, cur, prior, np.atleast_1d(d).ravel())
        if np.any(t.nu_star <= 0):
            raise DomainError("joint power prior posterior improper: shape <= 0")
        val = gammaln(t.nu_star) - 0.5 * t.logdet_tot - t.nu_star * np.log(t.tot / 2.0)
        return val.reshape(np.shape(d))
    raise TypeError(f"unsupported prior type {type(prior).__name__}")


def jpp_log_marginal_delta(
    hist,
    cur,
    prior,
    dprior: DeltaPrior,
    form: LikelihoodForm,
    delta: ArrayLike,
    log_scale: float = 0.0,
):
    """Unnormalised log posterior of delta under the joint power prior.

    ``log_scale`` multiplies the historical likelihood by a further
    constant ``exp(log_scale)``, which enters as ``delta * log_scale``.
    """
    d = _delta_array(delta)
    const = form_log_constant(hist, form) + log_scale
    return _out(_prior_term(dprior, d) + _kernel_value(hist, cur, prior, d) + d * const)


def jpp_delta_posterior(
    hist,
    cur,
    prior,
    dprior: DeltaPrior,
    form: LikelihoodForm,
    log_scale: float = 0.0,
    rule: numkit.QuadratureRule = DELTA_RULE,
) -> DeltaPosterior:
    """Normalised posterior of delta under the joint power prior on [0, 1]."""
    if dprior.is_fixed:
        return degenerate_posterior(dprior.delta0)
    f = lambda d: jpp_log_marginal_delta(hist, cur, prior, dprior, form, d, log_scale)
    return posterior_from_log_density(f, 0.0, 1.0, rule)


# ---------------------------------------------------------------------------
# constant forcing the mode to zero (binomial)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class K0Result:
    """Per-observation likelihood constant that puts the JPP mode at zero.

    ``max_log_derivative`` is the largest numerical derivative of the JPP
    log posterior of delta (uniform delta prior, likelihood ``k0 f``)
    found on the check grid; ``mode_at_zero`` is true when it is <= 1e-6.
    """

    k0: float
    max_ratio: float
    argmax_delta: float
    max_log_derivative: float

    @property
    def mode_at_zero(self) -> bool:
        return self.max_log_derivative <= 1e-6


def expected_log_f0(hist: BinomialData, cur: BinomialData, prior: BetaPrior, delta: ArrayLike):
    """E[log f(D0 | p)] under the JPP conditional law of p given delta.

    Evaluated by quadrature over p; with f the Bernoulli product this is the
    ratio of integrals whose maximum over delta defines k0.
    """
    d = np.asarray(delta, dtype=float)
    a = d * hist.y + cur.y + prior.alpha
    b = d * hist.failures + cur.failures + prior.beta
    out = numkit.beta_expectation(lambda lp, lq: hist.y * lp + hist.failures * lq, a, b)
    if not np.all(np.isfinite(out)):
        raise EvaluationError("expected historical log-likelihood is not finite")
    return _out(out)


def compute_k0(
    hist: BinomialData,
    cur: BinomialData,
    prior: BetaPrior,
    grid_points: int = 201,
    check_points: int = 1001,
) -> K0Result:
    """k0 = exp(-max_delta ratio(delta) / n0).

    The maximum is taken over an equispaced grid of ``grid_points`` values,
    then refined by golden section so that the bound also holds between
    grid points. The construction is checked by differentiating the JPP log
    posterior numerically on ``check_points`` points.
    """
    if hist.n == 0:
        raise DomainError("k0 needs historical data (n0 > 0)")
    grid = np.linspace(0.0, 1.0, grid_points)
    ratios = expected_log_f0(hist, cur, prior, grid)
    i = int(np.argmax(ratios))
    best, at = float(ratios[i]), float(grid[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    if hi > lo:
        ref = numkit.argmax_on_interval(lambda x: expected_log_f0(hist, cur, prior, x), lo, hi)
        if ref.f_star > best:
            best, at = float(ref.f_star), ref.x_star
    k0 = math.exp(-best / hist.n)

    # derivative check on log pi(delta) = n0 delta log k0 + log B(...)
    x = np.linspace(0.0, 1.0, check_points)
    f = hist.n * x * math.log(k0) + numkit.log_beta(
        x * hist.y + cur.y + prior.alpha, x * hist.failures + cur.failures + prior.beta
    )
    deriv = np.gradient(f, x)
    exact = hist.n * math.log(k0) + expected_log_f0(hist, cur, prior, x)
    return K0Result(k0, best, at, float(max(np.max(deriv), np.max(exact))))
