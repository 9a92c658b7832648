"""Path-sampling estimation of the power prior's normalising constant.

For C(delta) = integral of L(theta|D0)^delta pi0(theta) d theta,

    d/d delta log C(delta) = E[log L(theta|D0)]  under  L^delta pi0 / C(delta),

so log C is the integral of the expected historical log-likelihood along
the path from 0 to delta. The expectation ``h`` is estimated by Monte Carlo
at a grid of knots and integrated cumulatively; log C at other points is
obtained by piecewise-linear interpolation.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import numkit
from .conjugate import _as_linear, delta_lower_bound, normal_log_c
from .errors import DomainError, EvaluationError
from .models import BetaPrior, BinomialData, DirichletPrior, MultinomialData, NormalLinearPrior

RULES = ("trapezoid", "riemann_left")


class NonMonotonicLogCWarning(UserWarning):
    """The estimated log C(delta) changes direction between knots."""


# ---------------------------------------------------------------------------
# knots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnotGrid:
    knots: NDArray[np.float64]
    c_exponent: float
    count: int

    def __post_init__(self) -> None:
        k = np.asarray(self.knots, dtype=float)
        if k.ndim != 1 or k.size == 0:
            raise DomainError("knot grid must be a non-empty vector")
        if k[0] <= 0.0 or k[-1] != 1.0 or np.any(np.diff(k) <= 0.0):
            raise DomainError("knots must be strictly ascending in (0, 1] and end at 1")
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    def __len__(self) -> int:
        return self.knots.size

    @property
    def spacings(self) -> NDArray[np.float64]:
        """Successive differences with delta_0 = 0; they sum to exactly 1."""
        return np.diff(self.knots, prepend=0.0)


def design_knots(S: int = 64, c: float = 2.0, extra: Optional[Sequence[float]] = None) -> KnotGrid:
    """Knots (s/S)^c for s = 1..S, merged with any extra points in (0, 1]."""
    if int(S) != S or S < 2:
        raise DomainError(f"S must be an integer >= 2, got {S!r}")
    if not c > 1.0:
        raise DomainError(f"knot exponent c must exceed 1, got {c!r}")
    knots = (np.arange(1, S + 1) / S) ** c
    knots[-1] = 1.0
    if extra:
        ex = np.asarray(extra, dtype=float)
        if np.any(ex <= 0.0) or np.any(ex > 1.0):
            raise DomainError("extra knots must lie in (0, 1]")
        knots = np.unique(np.concatenate([knots, ex]))
    return KnotGrid(knots, float(c), int(S))


# ---------------------------------------------------------------------------
# powered posterior samplers
# ---------------------------------------------------------------------------


@runtime_checkable
class PoweredPosteriorSampler(Protocol):
    """Draws from L(theta|D0)^delta pi0(theta), normalised, plus log L(theta|D0).

    ``prior_sample`` is optional; provide it when pi0 is proper so the
    trapezoid rule can use h(0).
    """

    def sample(self, delta: float, stream, m: int) -> Any: ...

    def log_likelihood(self, draws: Any) -> NDArray[np.float64]: ...


@dataclass(frozen=True)
class BinomialPoweredSampler:
    hist: BinomialData
    prior: BetaPrior = field(default_factory=BetaPrior)

    def sample(self, delta, stream, m):
        a = delta * self.hist.y + self.prior.alpha
        b = delta * self.hist.failures + self.prior.beta
        return numkit._as_stream(stream).beta(a, b, size=m)

    def prior_sample(self, stream, m):
        return self.sample(0.0, stream, m)

    def log_likelihood(self, p):
        # Bernoulli product; 0 * log(0) is taken as 0
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = self.hist.y * np.log(p) if self.hist.y else 0.0
            ll = ll + (self.hist.failures * np.log1p(-p) if self.hist.failures else 0.0)
        return np.asarray(ll, dtype=float) + np.zeros(np.shape(p))

    def exact_log_c(self, delta):
        d = np.asarray(delta, dtype=float)
        a = d * self.hist.y + self.prior.alpha
        b = d * self.hist.failures + self.prior.beta
        return numkit.log_beta(a, b) - numkit.log_beta(self.prior.alpha, self.prior.beta)


@dataclass(frozen=True)
class MultinomialPoweredSampler:
    hist: MultinomialData
    prior: DirichletPrior

    def sample(self, delta, stream, m):
        alpha = delta * self.hist.array + self.prior.array
        return numkit.sample_distribution("dirichlet", {"alpha": alpha}, stream, m)

    def prior_sample(self, stream, m):
        return self.sample(0.0, stream, m)

    def log_likelihood(self, theta):
        y = self.hist.array
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(y > 0, y * np.log(theta), 0.0)
        return terms.sum(axis=-1)

    def exact_log_c(self, delta):
        from scipy.special import gammaln

        d = np.asarray(delta, dtype=float)[..., None]
        a = d * self.hist.array + self.prior.array
        a0 = self.prior.array
        lb = lambda x: np.sum(gammaln(x), axis=-1) - gammaln(np.sum(x, axis=-1))
        return lb(a) - lb(a0)


@dataclass(frozen=True)
class NormalPoweredSampler:
    """Powered posterior of (beta, sigma^2) for the normal linear model.

    The log-likelihood includes the (2 pi)^(-n0/2) factor. The initial prior
    is improper in sigma^2, so there is no ``prior_sample``.
    """

    hist: Any
    prior: NormalLinearPrior

    def __post_init__(self) -> None:
        object.__setattr__(self, "hist", _as_linear(self.hist))

    def _params(self, delta):
        h, pr = self.hist, self.prior
        k = h.k
        R, mu0 = pr.R_for(k), pr.mu0_for(k)
        A = pr.b * R + delta * h.xtx
        beta_star = np.linalg.solve(A, pr.b * R @ mu0 + delta * h.xtx @ h.beta_hat)
        h0 = 0.0
        if pr.b == 1:
            dm = mu0 - h.beta_hat
            h0 = float(dm @ h.xtx @ np.linalg.solve(A, R @ dm))
        shape = (delta * h.n + (pr.b - 1) * k) / 2.0 + pr.a - 1.0
        scale = delta * (h.s + pr.b * h0) / 2.0
        return A, beta_star, shape, scale

    def sample(self, delta, stream, m):
        if delta <= delta_lower_bound(self.hist, self.prior):
            raise DomainError(f"powered prior improper at delta={delta}")
        rng = numkit._as_stream(stream)
        A, beta_star, shape, scale = self._params(delta)
        sigma2 = scale / rng.standard_gamma(shape, size=m)
        chol = np.linalg.cholesky(np.linalg.inv(A))
        z = rng.standard_normal((m, beta_star.size))
        beta = beta_star + np.sqrt(sigma2)[:, None] * (z @ chol.T)
        return beta, sigma2

    def log_likelihood(self, draws):
        beta, sigma2 = draws
        h = self.hist
        diff = beta - h.beta_hat
        quad = h.s + np.einsum("mi,ij,mj->m", diff, h.xtx, diff)
        return -0.5 * h.n * np.log(2.0 * math.pi * sigma2) - quad / (2.0 * sigma2)

    def exact_log_c(self, delta):
        """Closed form up to an additive constant."""
        return normal_log_c(self.hist, self.prior, delta)


@dataclass
class MetropolisPoweredSampler:
    """Generic random-walk Metropolis sampler for the powered posterior.

    For models with no conjugate structure: supply ``log_prior`` and
    ``log_lik`` on a real parameter vector. Each call runs a fresh chain of
    ``burn_in + m * thin`` steps from ``init``.
    """

    log_prior: Any
    log_lik: Any
    init: ArrayLike
    step: float = 0.5
    burn_in: int = 1000
    thin: int = 1
    prior_sampler: Any = None

    def sample(self, delta, stream, m):
        rng = numkit._as_stream(stream)
        x = np.atleast_1d(np.asarray(self.init, dtype=float)).copy()
        target = lambda v: delta * self.log_lik(v) + self.log_prior(v)
        cur = target(x)
        if not np.isfinite(cur):
            raise EvaluationError(f"log target not finite at the initial point for delta={delta}")
        out = np.empty((m, x.size))
        total = self.burn_in + m * self.thin
        steps = rng.standard_normal((total, x.size)) * self.step
        logu = np.log(rng.random(total))
        j = 0
        for i in range(total):
            prop = x + steps[i]
            new = target(prop)
            if logu[i] < new - cur:
                x, cur = prop, new
            if i >= self.burn_in and (i - self.burn_in) % self.thin == self.thin - 1:
                out[j] = x
                j += 1
        return out

    def log_likelihood(self, draws):
        return np.array([self.log_lik(v) for v in draws])

    def __getattr__(self, name):
        if name == "prior_sample" and self.__dict__.get("prior_sampler") is not None:
            return self.__dict__["prior_sampler"]
        raise AttributeError(name)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogCInterpolant:
    """Path-sampled log C(delta) at knots, with linear interpolation between them.

    ``anchor == "zero"`` means log C(0) = 0 (proper initial prior).
    ``anchor == "first_knot"`` is used when the initial prior is improper:
    C(0) is infinite, values are relative to the first knot, and queries
    below it extrapolate along the tangent h(first knot).
    """

    knots: KnotGrid
    log_c_values: NDArray[np.float64]
    rule: str
    mc_standard_errors: NDArray[np.float64]
    h: NDArray[np.float64]
    h_se: NDArray[np.float64]
    anchor: str = "zero"
    h0: Optional[float] = None

    def __post_init__(self) -> None:
        if self.rule not in RULES:
            raise DomainError(f"unknown rule {self.rule!r}")
        v = np.asarray(self.log_c_values, dtype=float)
        if v.shape != self.knots.knots.shape or not np.all(np.isfinite(v)):
            raise DomainError("log C values must be finite, one per knot")
        object.__setattr__(self, "log_c_values", v)

    def __call__(self, delta: ArrayLike):
        return interpolate_log_c(self, delta)

    def to_dict(self) -> dict:
        return {
            "knots": self.knots.knots.tolist(),
            "log_c": self.log_c_values.tolist(),
            "se": np.asarray(self.mc_standard_errors).tolist(),
            "rule": self.rule,
            "h": np.asarray(self.h).tolist(),
            "h_se": np.asarray(self.h_se).tolist(),
            "anchor": self.anchor,
            "h0": self.h0,
            "c_exponent": self.knots.c_exponent,
            "S": self.knots.count,
        }

    def to_json(self, path: Union[str, Path, None] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "LogCInterpolant":
        knots = np.asarray(doc["knots"], dtype=float)
        grid = KnotGrid(knots, float(doc.get("c_exponent", 2.0)), int(doc.get("S", knots.size)))
        n = knots.size
        return cls(
            knots=grid,
            log_c_values=np.asarray(doc["log_c"], dtype=float),
            rule=doc["rule"],
            mc_standard_errors=np.asarray(doc.get("se", [0.0] * n), dtype=float),
            h=np.asarray(doc.get("h", [math.nan] * n), dtype=float),
            h_se=np.asarray(doc.get("h_se", [math.nan] * n), dtype=float),
            anchor=doc.get("anchor", "zero"),
            h0=doc.get("h0"),
        )

    @classmethod
    def from_json(cls, source: Union[str, Path]) -> "LogCInterpolant":
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        return cls.from_dict(json.loads(text))


def interpolate_log_c(interp: LogCInterpolant, delta: ArrayLike):
    """Piecewise-linear log C(delta); exact at knots, 0 at delta = 0 when anchored there."""
    d = np.asarray(delta, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d < 0.0) or np.any(d > 1.0):
        raise DomainError(f"delta must lie in [0, 1], got {delta!r}")
    x, v = interp.knots.knots, interp.log_c_values
    if interp.anchor == "zero":
        out = np.interp(d, np.concatenate(([0.0], x)), np.concatenate(([0.0], v)))
    else:
        out = np.interp(d, x, v)
        below = d < x[0]
        if np.any(below):
            out = np.where(below, v[0] + interp.h[0] * (d - x[0]), out)
    return float(out) if out.ndim == 0 else out


def _cumulate(h, h_se, spacings, rule, h0, h0_se, anchored):
    """Cumulative integral of h over the knots and its Monte Carlo standard error."""
    n = h.size
    if rule == "riemann_left":
        # the literal recipe: each interval is weighted by h at its upper knot
        w_terms = spacings * h
        var_terms = (spacings * h_se) ** 2
        if not anchored:
            w_terms[0] = 0.0
            var_terms[0] = 0.0
        return np.cumsum(w_terms), np.sqrt(np.cumsum(var_terms))
    # trapezoid
    lower = np.concatenate(([h0 if anchored else 0.0], h[:-1]))
    lower_se = np.concatenate(([h0_se if anchored else 0.0], h_se[:-1]))
    incr = 0.5 * spacings * (lower + h)
    if not anchored:
        incr[0] = 0.0
    vals = np.cumsum(incr)
    # knot j < i carries weight (spacing_j + spacing_{j+1}) / 2, knot i only spacing_i / 2
    full = 0.5 * (spacings + np.append(spacings[1:], 0.0))
    var = np.empty(n)
    for i in range(n):
        wi = full[: i + 1].copy()
        wi[i] = 0.5 * spacings[i]
        if not anchored:
            wi[0] -= 0.5 * spacings[0]
        extra = (0.5 * spacings[0] * h0_se) ** 2 if anchored else 0.0
        var[i] = np.sum((wi * h_se[: i + 1]) ** 2) + extra
    return vals, np.sqrt(var)


def _cumulate_singular(knots, h, h_se):
    """Integral of h from the first knot when h behaves like -kappa / delta near 0.

    ``g = delta * h`` is interpolated linearly between knots and ``g / delta``
    is integrated exactly on each interval (product integration), so both
    the 1/delta singularity and the smooth remainder are handled.
    """
    a, b = knots[:-1], knots[1:]
    L = np.log(b / a)
    w_hi = 1.0 - a * L / (b - a)
    w_lo = L - w_hi
    g, g_se = h * knots, h_se * knots
    vals = np.concatenate(([0.0], np.cumsum(w_lo * g[:-1] + w_hi * g[1:])))
    var = np.zeros(knots.size)
    coef = np.zeros(knots.size)
    for i in range(1, knots.size):
        coef[i - 1] += w_lo[i - 1]
        coef[i] += w_hi[i - 1]
        var[i] = np.sum((coef[: i + 1] * g_se[: i + 1]) ** 2)
    return vals, np.sqrt(var)


def estimate_log_c(
    sampler: PoweredPosteriorSampler,
    grid: Optional[KnotGrid] = None,
    m_per_knot: int = 5000,
    stream: Any = 0,
    rule: str = "trapezoid",
    workers: Optional[int] = None,
) -> LogCInterpolant:
    """Estimate log C at every knot by path sampling.

    Knot ``l`` draws from ``stream.substream(l)``; h(0) for the trapezoid
    rule uses ``stream.substream(len(grid))`` and the sampler's
    ``prior_sample``. Without ``prior_sample`` the prior is treated as
    improper and the result is anchored at the first knot; the trapezoid
    rule is then replaced by product integration of ``delta * h`` against
    ``1 / delta``, which copes with the blow-up of h near 0.
    """
    if rule not in RULES:
        raise DomainError(f"unknown rule {rule!r}; choose from {RULES}")
    if m_per_knot < 100:
        raise DomainError("m_per_knot must be at least 100")
    grid = grid or design_knots()
    base = stream if isinstance(stream, numkit.RngStream) else numkit.RngStream(int(stream))

    def at_knot(i):
        delta = float(grid.knots[i])
        try:
            ll = np.asarray(sampler.log_likelihood(sampler.sample(delta, base.substream(i), m_per_knot)), dtype=float)
        except Exception as exc:
            raise EvaluationError(f"powered sampler failed at knot {i} (delta={delta}): {exc}") from exc
        if not np.all(np.isfinite(ll)):
            raise EvaluationError(f"non-finite log-likelihood at knot {i} (delta={delta})")
        return ll.mean(), ll.std(ddof=1) / math.sqrt(ll.size)

    res = numkit.parallel_map(at_knot, range(len(grid)), workers)
    h = np.array([r[0] for r in res])
    h_se = np.array([r[1] for r in res])

    anchored = hasattr(sampler, "prior_sample")
    h0 = h0_se = None
    if rule == "trapezoid" and anchored:
        ll = np.asarray(sampler.log_likelihood(sampler.prior_sample(base.substream(len(grid)), m_per_knot)))
        if not np.all(np.isfinite(ll)):
            raise EvaluationError("non-finite log-likelihood under the initial prior (h at delta=0)")
        h0, h0_se = float(ll.mean()), float(ll.std(ddof=1) / math.sqrt(ll.size))
    if anchored or rule != "trapezoid":
        vals, se = _cumulate(h, h_se, grid.spacings.copy(), rule, h0 or 0.0, h0_se or 0.0, anchored)
    else:
        vals, se = _cumulate_singular(grid.knots, h, h_se)

    signs = np.sign(h)
    if np.any(signs[1:] * signs[:-1] < 0):
        i = int(np.flatnonzero(signs[1:] * signs[:-1] < 0)[0])
        warnings.warn(
            f"estimated log C(delta) changes direction between knots {grid.knots[i]:.4g} "
            f"and {grid.knots[i + 1]:.4g}",
            NonMonotonicLogCWarning,
            stacklevel=2,
        )
    return LogCInterpolant(
        knots=grid,
        log_c_values=vals,
        rule=rule,
        mc_standard_errors=se,
        h=h,
        h_se=h_se,
        anchor="zero" if anchored else "first_knot",
        h0=h0,
    )


def convexity_violations(interp: LogCInterpolant, slack: float = 0.0) -> NDArray[np.int_]:
    """Knot indices where the discrete slope of log C decreases by more than ``slack``."""
    x = interp.knots.knots
    v = interp.log_c_values
    if interp.anchor == "zero":
        x, v = np.concatenate(([0.0], x)), np.concatenate(([0.0], v))
    slopes = np.diff(v) / np.diff(x)
    return np.flatnonzero(np.diff(slopes) < -slack) + 1


def powered_sampler_for(hist, prior) -> PoweredPosteriorSampler:
    """Built-in conjugate powered sampler for a family/prior pair."""
    if isinstance(prior, BetaPrior):
        return BinomialPoweredSampler(hist, prior)
    if isinstance(prior, DirichletPrior):
        return MultinomialPoweredSampler(hist, prior)
    if isinstance(prior, NormalLinearPrior):
        return NormalPoweredSampler(hist, prior)
    raise TypeError(f"unsupported prior type {type(prior).__name__}")


@dataclass(frozen=True)
class GapReport:
    """Path-sampled versus closed-form log C on a query grid."""

    queries: NDArray[np.float64]
    estimated: NDArray[np.float64]
    exact: NDArray[np.float64]
    max_gap: float
    reference: str

    def to_dict(self) -> dict:
        return {
            "queries": self.queries.tolist(),
            "estimated": self.estimated.tolist(),
            "exact": self.exact.tolist(),
            "max_gap": self.max_gap,
            "reference": self.reference,
        }


def closed_form_gap(interp: LogCInterpolant, sampler, points: int = 21) -> GapReport:
    """Largest absolute error of ``interp`` against ``sampler.exact_log_c``.

    With a proper prior both sides vanish at 0 and the queries span [0, 1].
    Otherwise the closed form is only known up to a constant, so the queries
    span [first knot, 1] and both curves are compared as differences from
    their value at delta = 1.
    """
    if not hasattr(sampler, "exact_log_c"):
        raise DomainError("this sampler has no closed-form log C")
    lo = 0.0 if interp.anchor == "zero" else float(interp.knots.knots[0])
    q = np.linspace(lo, 1.0, points)
    est = np.asarray(interp(q), dtype=float)
    exact = np.asarray(sampler.exact_log_c(q), dtype=float)
    reference = "zero"
    if interp.anchor != "zero":
        est, exact, reference = est - est[-1], exact - exact[-1], "one"
    return GapReport(q, est, exact, float(np.max(np.abs(est - exact))), reference)
