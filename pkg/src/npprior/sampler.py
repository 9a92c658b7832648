"""Metropolis-Hastings within Gibbs sampling over (theta, delta).

Each iteration updates delta by a Metropolis-Hastings step (Gaussian random
walk on logit(delta) by default, or an independent beta proposal), then
refreshes theta with exact draws from its full conditional(s).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from . import numkit
from .conjugate import (
    _as_linear,
    conditional_posterior_given_delta,
    delta_lower_bound,
    log_marginal_delta,
)
from .errors import DomainError, InitializationError
from .jpp import LikelihoodForm, form_log_constant
from .models import (
    BetaPrior,
    DeltaPrior,
    DirichletPrior,
    NormalLinearPrior,
)


class DegenerateChainWarning(UserWarning):
    """A coordinate of the chain never moves."""


# ---------------------------------------------------------------------------
# configuration and proposals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogitRandomWalk:
    """Gaussian random walk on logit(delta) with variance ``c``.

    ``jacobian=False`` drops the delta(1 - delta) factors from the
    acceptance ratio; it exists only to show that they matter.
    """

    c: float = 1.0
    jacobian: bool = True

    def propose(self, delta: float, z: float, u: float) -> tuple:
        theta = math.log(delta) - math.log1p(-delta) + math.sqrt(self.c) * z
        new = 1.0 / (1.0 + math.exp(-theta)) if theta > -700 else 0.0
        if not 0.0 < new < 1.0:
            return new, -math.inf
        if not self.jacobian:
            return new, 0.0
        return new, math.log(new) + math.log1p(-new) - math.log(delta) - math.log1p(-delta)

    def with_c(self, c: float) -> "LogitRandomWalk":
        return LogitRandomWalk(c, self.jacobian)


@dataclass(frozen=True)
class BetaIndependenceProposal:
    """delta* ~ Beta(a, b) independently of the current state."""

    a: float
    b: float

    def __post_init__(self) -> None:
        for name, v in (("a", self.a), ("b", self.b)):
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"beta proposal parameter {name} must be > 0, got {v!r}")

    def log_q(self, x: float) -> float:
        return (self.a - 1.0) * math.log(x) + (self.b - 1.0) * math.log1p(-x)

    def propose(self, delta: float, z: float, u: float) -> tuple:
        # z is unused; u is a Beta(a, b) variate supplied by the caller
        new = u
        if not 0.0 < new < 1.0:
            return new, -math.inf
        return new, self.log_q(delta) - self.log_q(new)


def beta_independence_proposal(a: float, b: float) -> BetaIndependenceProposal:
    return BetaIndependenceProposal(float(a), float(b))


@dataclass(frozen=True)
class McmcConfig:
    """Run length, proposal tuning and seed for one chain.

    ``iterations`` counts all iterations including ``burn_in``. ``tuning_c``
    is the variance of the random-walk proposal on logit(delta); with
    ``adapt`` it is rescaled during burn-in toward an acceptance rate in
    [0.3, 0.5] and then frozen.
    """

    iterations: int = 100_000
    burn_in: int = 10_000
    tuning_c: float = 1.0
    adapt: bool = True
    master_seed: int = 0
    thin: int = 1
    stream_index: int = 0
    proposal: Optional[BetaIndependenceProposal] = None
    jacobian: bool = True
    adapt_every: int = 100

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.burn_in < 0 or not self.burn_in < self.iterations:
            raise DomainError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if not (math.isfinite(self.tuning_c) and self.tuning_c > 0):
            raise DomainError("tuning_c must be > 0")


# ---------------------------------------------------------------------------
# model contract
# ---------------------------------------------------------------------------


class ModelConditionals(Protocol):
    """What the sampler needs from a model.

    ``log_target_delta(theta, delta)`` is log pi(delta | theta, D0, D) up to
    a constant (it may ignore theta for a collapsed update).
    ``gibbs_sweep(theta, delta, rng)`` applies the exact full-conditional
    steps for each theta block in turn and returns the new theta.
    ``init_theta(delta, rng)`` gives a starting theta. ``fixed_delta`` is
    None unless delta is held fixed.
    """

    names: Sequence[str]
    fixed_delta: Optional[float]

    def log_target_delta(self, theta: NDArray, delta: float) -> float: ...

    def gibbs_sweep(self, theta: NDArray, delta: float, rng: np.random.Generator) -> NDArray: ...

    def init_theta(self, delta: float, rng: np.random.Generator) -> NDArray: ...


@dataclass
class CallbackModel:
    """ModelConditionals assembled from plain callables."""

    names: Sequence[str]
    log_target_delta: Callable
    gibbs_sweep: Callable
    init_theta: Callable
    fixed_delta: Optional[float] = None
    delta_lower: float = 0.0


# ---------------------------------------------------------------------------
# chain and diagnostics
# ---------------------------------------------------------------------------


def _autocorr(x: NDArray[np.float64]) -> NDArray[np.float64]:
    n = x.size
    y = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(x: NDArray[np.float64]) -> float:
    """ESS from the autocorrelation sum truncated at Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        raise DomainError("need at least 4 draws for an ESS")
    if np.ptp(x) == 0.0:
        return 1.0
    rho = _autocorr(x)
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    stop = np.flatnonzero(pairs <= 0.0)
    m = int(stop[0]) if stop.size else pairs.size
    pairs = np.minimum.accumulate(pairs[:m]) if m else pairs[:0]
    tau = -1.0 + 2.0 * float(np.sum(pairs))
    tau = max(tau, 1.0 / math.log10(max(n, 10)))
    return float(min(n / tau, n * math.log10(max(n, 10))))


def split_rhat(chains: Sequence[NDArray[np.float64]]) -> float:
    """Potential scale reduction with each chain split in half."""
    if len(chains) < 2:
        raise DomainError("split R-hat needs at least two chains")
    n = min(len(c) for c in chains) // 2
    if n < 2:
        raise DomainError("chains too short for split R-hat")
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        halves += [c[:n], c[n : 2 * n]]
    h = np.array(halves)
    w = h.var(axis=1, ddof=1).mean()
    b = n * h.mean(axis=1).var(ddof=1)
    if w == 0.0:
        return 1.0 if b == 0.0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


@dataclass(frozen=True)
class Chain:
    """Retained draws (one column per coordinate, delta last)."""

    names: tuple
    draws: NDArray[np.float64]
    acceptance_rate: float
    tuning_c: float
    ess: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        d = np.asarray(self.draws, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise DomainError("acceptance rate must be in [0, 1]")

    def __getitem__(self, name: str) -> NDArray[np.float64]:
        return self.draws[:, self.names.index(name)]

    @property
    def delta(self) -> NDArray[np.float64]:
        return self["delta"]

    def mean(self) -> Dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.draws.mean(axis=0))}

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.names)
            w.writerows(self.draws.tolist())

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Chain":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        draws = np.array(rows[1:], dtype=float)
        return cls(tuple(rows[0]), draws, 0.0, math.nan)


@dataclass(frozen=True)
class DiagnosticsReport:
    ess: Dict[str, float]
    rhat: Optional[Dict[str, float]]
    acceptance_rate: float
    degenerate: List[str]


def diagnostics(chain: Chain, others: Sequence[Chain] = ()) -> DiagnosticsReport:
    """ESS per coordinate and, given further chains, split R-hat."""
    if chain.draws.shape[0] < 1000:
        raise DomainError("diagnostics need at least 1000 retained draws")
    ess, degenerate = {}, []
    for i, name in enumerate(chain.names):
        col = chain.draws[:, i]
        if np.ptp(col) == 0.0:
            degenerate.append(name)
        ess[name] = effective_sample_size(col)
    if degenerate:
        warnings.warn(f"degenerate chain coordinates: {degenerate}", DegenerateChainWarning, stacklevel=2)
    rhat = None
    if others:
        rhat = {n: split_rhat([chain[n]] + [o[n] for o in others]) for n in chain.names}
    return DiagnosticsReport(ess, rhat, chain.acceptance_rate, degenerate)


# ---------------------------------------------------------------------------
# the sampler
# ---------------------------------------------------------------------------


def run_mh_within_gibbs(model: ModelConditionals, config: McmcConfig) -> Chain:
    """One chain of MH-within-Gibbs; bit-reproducible for a given config."""
    rng = numkit.RngStream(config.master_seed, config.stream_index).generator
    fixed = getattr(model, "fixed_delta", None)
    lower = getattr(model, "delta_lower", 0.0)
    delta = fixed if fixed is not None else (0.5 if lower < 0.5 else 0.5 * (lower + 1.0))
    theta = np.asarray(model.init_theta(delta, rng), dtype=float)
    cur = model.log_target_delta(theta, delta) if fixed is None else 0.0
    if not math.isfinite(cur):
        raise InitializationError(f"log target is not finite at the initial state delta={delta}")

    names = tuple(model.names) + ("delta",)
    keep = (config.iterations - config.burn_in) // config.thin
    out = np.empty((keep, len(names)))
    walk = LogitRandomWalk(config.tuning_c, config.jacobian)
    indep = config.proposal
    accepted = post_accepted = window = 0
    block = 4096
    j = 0
    for it in range(config.iterations):
        b = it % block
        if b == 0:
            zs = rng.standard_normal(block)
            us = np.log(rng.random(block))
            if indep is not None:
                vs = rng.beta(indep.a, indep.b, block)
        if fixed is None:
            prop = indep if indep is not None else walk
            new, log_h = prop.propose(delta, zs[b], vs[b] if indep is not None else 0.0)
            if log_h > -math.inf:
                cand = model.log_target_delta(theta, new)
                if us[b] < cand - cur + log_h:
                    delta, cur = new, cand
                    accepted += 1
                    window += 1
                    if it >= config.burn_in:
                        post_accepted += 1
        theta = np.asarray(model.gibbs_sweep(theta, delta, rng), dtype=float)
        if fixed is None:
            cur = model.log_target_delta(theta, delta)
        if (
            config.adapt
            and indep is None
            and fixed is None
            and it < config.burn_in
            and (it + 1) % config.adapt_every == 0
        ):
            rate = window / config.adapt_every
            if rate < 0.3:
                walk = walk.with_c(walk.c * 0.7)
            elif rate > 0.5:
                walk = walk.with_c(walk.c * 1.4)
            window = 0
        if it >= config.burn_in and (it - config.burn_in) % config.thin == config.thin - 1:
            out[j, :-1] = theta
            out[j, -1] = delta
            j += 1
    n_post = config.iterations - config.burn_in
    rate = post_accepted / n_post if fixed is None else 0.0
    ess = {}
    if keep >= 4:
        ess = {n: effective_sample_size(out[:, i]) for i, n in enumerate(names)}
    return Chain(names, out, rate, walk.c, ess)


def run_chains(model: ModelConditionals, config: McmcConfig, n_chains: int = 2) -> List[Chain]:
    """Independent chains on stream indices ``stream_index + i``."""
    from dataclasses import replace

    cfgs = [replace(config, stream_index=config.stream_index + i) for i in range(n_chains)]
    return numkit.parallel_map(lambda c: run_mh_within_gibbs(model, c), cfgs)


# ---------------------------------------------------------------------------
# model builders for the conjugate families
# ---------------------------------------------------------------------------


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _delta_prior_fn(dprior: DeltaPrior) -> Callable[[float], float]:
    if dprior.is_fixed:
        return lambda d: 0.0
    a, b = dprior.alpha_delta, dprior.beta_delta
    return lambda d: (a - 1.0) * math.log(d) + (b - 1.0) * math.log1p(-d)


def _log_c_fn(hist, prior, log_c) -> Callable[[float], float]:
    """Closed-form log C unless an interpolant (callable) is supplied."""
    if log_c is not None:
        return lambda d: float(log_c(d))
    if isinstance(prior, BetaPrior):
        y0, f0 = hist.y, hist.failures
        return lambda d: _log_beta(d * y0 + prior.alpha, d * f0 + prior.beta)
    if isinstance(prior, DirichletPrior):
        y0, al = hist.array, prior.array

        def lc(d):
            a = d * y0 + al
            return float(sum(math.lgamma(x) for x in a) - math.lgamma(float(a.sum())))

        return lc
    cache = _NormalCache(_as_linear(hist), _as_linear(hist), prior)
    return lambda d: cache.at(d).log_c


def _historical_loglik(hist, prior) -> Callable[[NDArray], float]:
    """log L(theta | D0) for the parameter vector used by the chain."""
    if isinstance(prior, BetaPrior):
        y0, f0 = hist.y, hist.failures

        def ll(th):
            p = th[0]
            if not 0.0 < p < 1.0:
                return -math.inf
            return y0 * math.log(p) + f0 * math.log1p(-p)

        return ll
    if isinstance(prior, DirichletPrior):
        y0 = hist.array
        pos = y0 > 0

        def ll(th):
            if np.any(th[pos] <= 0):
                return -math.inf
            return float(np.dot(y0[pos], np.log(th[pos])))

        return ll
    h = _as_linear(hist)
    k = h.k

    def ll(th):
        beta, s2 = th[:k], th[k]
        diff = beta - h.beta_hat
        quad = h.s + float(diff @ h.xtx @ diff)
        return -0.5 * h.n * math.log(2.0 * math.pi * s2) - quad / (2.0 * s2)

    return ll


def _names(hist, prior) -> List[str]:
    if isinstance(prior, BetaPrior):
        return ["p"]
    if isinstance(prior, DirichletPrior):
        return [f"theta{i + 1}" for i in range(hist.k)]
    k = _as_linear(hist).k
    return [f"beta{i}" for i in range(k)] + ["sigma2"]


@dataclass(frozen=True)
class _NormalAt:
    mu: NDArray[np.float64]
    precision: NDArray[np.float64]
    chol_cov: NDArray[np.float64]
    shape: float
    scale: float
    log_c: float


class _NormalCache:
    """Per-delta normal-model quantities, memoised for the last few deltas.

    Within one iteration the chain revisits the same delta several times,
    so a tiny cache removes most of the linear algebra.
    """

    def __init__(self, hist, cur, prior: NormalLinearPrior, size: int = 4):
        self.hist, self.cur, self.prior = hist, cur, prior
        self.k = hist.k
        b = prior.b
        R, mu0 = prior.R_for(self.k), prior.mu0_for(self.k)
        self._bR, self._bRmu0 = b * R, b * (R @ mu0)
        self._g0b0 = hist.xtx @ hist.beta_hat
        self._gb = cur.xtx @ cur.beta_hat
        self._dm = mu0 - hist.beta_hat
        self._Rdm = R @ self._dm
        self._g0dm = hist.xtx @ self._dm
        self._size = size
        self._memo: Dict[float, _NormalAt] = {}

    def at(self, d: float) -> _NormalAt:
        hit = self._memo.get(d)
        if hit is not None:
            return hit
        h, c, pr, k = self.hist, self.cur, self.prior, self.k
        A = self._bR + d * h.xtx
        A_tot = A + c.xtx
        r = self._bRmu0 + d * self._g0b0
        void = d == 0.0 and pr.b == 0
        if void:
            hh = h0 = 0.0
            logdet_a = -math.inf
        else:
            beta_star = np.linalg.solve(A, r)
            h0 = float(self._g0dm @ np.linalg.solve(A, self._Rdm)) if pr.b == 1 else 0.0
            diff = beta_star - c.beta_hat
            hh = max(float(diff @ c.xtx @ np.linalg.solve(A_tot, A @ diff)), 0.0)
            logdet_a = np.linalg.slogdet(A)[1]
        hist_part = d * (h.s + pr.b * max(h0, 0.0))
        nu0 = (d * h.n + (pr.b - 1) * k) / 2.0 + pr.a - 1.0
        cov = np.linalg.inv(A_tot)
        mu = cov @ (r + self._gb)
        if nu0 > 0 and hist_part > 0:
            log_m0 = 0.5 * logdet_a - math.lgamma(nu0) + nu0 * math.log(hist_part / 2.0)
            log_c = -d * h.n / 2.0 * math.log(2.0 * math.pi) - log_m0
        else:
            log_c = math.inf
        out = _NormalAt(
            mu=mu,
            precision=A_tot,
            chol_cov=np.linalg.cholesky(cov),
            shape=nu0 + c.n / 2.0,
            scale=(c.s + hh + hist_part) / 2.0,
            log_c=log_c,
        )
        if len(self._memo) >= self._size:
            self._memo.pop(next(iter(self._memo)))
        self._memo[d] = out
        return out


def _gibbs(hist, cur, prior) -> Callable:
    """Exact full-conditional sweep for theta given delta."""
    if isinstance(prior, BetaPrior):

        def sweep(th, d, rng):
            return np.array([rng.beta(d * hist.y + cur.y + prior.alpha, d * hist.failures + cur.failures + prior.beta)])

        return sweep
    if isinstance(prior, DirichletPrior):

        def sweep(th, d, rng):
            g = rng.standard_gamma(d * hist.array + cur.array + prior.array)
            return g / g.sum()

        return sweep
    cache = _NormalCache(_as_linear(hist), _as_linear(cur), prior)
    k = cache.k

    def sweep(th, d, rng):
        law = cache.at(d)
        # sigma^2 | beta, delta, then beta | sigma^2, delta
        diff = th[:k] - law.mu
        scale = law.scale + 0.5 * float(diff @ law.precision @ diff)
        s2 = scale / rng.standard_gamma(law.shape + k / 2.0)
        beta = law.mu + math.sqrt(s2) * (law.chol_cov @ rng.standard_normal(k))
        return np.concatenate([beta, [s2]])

    return sweep


def _init(hist, cur, prior) -> Callable:
    def init(d, rng):
        law = conditional_posterior_given_delta(hist, cur, prior, d)
        if isinstance(prior, BetaPrior):
            return np.array([law.mean])
        if isinstance(prior, DirichletPrior):
            return law.mean
        return np.concatenate([law.mu, [law.scale / (law.shape + 1.0)]])

    return init


def _scalar_marginal(hist, cur, prior, dprior: DeltaPrior) -> Callable[[float], float]:
    """Scalar log marginal posterior of delta, avoiding array overhead."""
    lp = _delta_prior_fn(dprior)
    if isinstance(prior, BetaPrior):
        y0, f0, y, f = hist.y, hist.failures, cur.y, cur.failures
        al, be = prior.alpha, prior.beta
        return lambda d: lp(d) + _log_beta(d * y0 + y + al, d * f0 + f + be) - _log_beta(d * y0 + al, d * f0 + be)
    if isinstance(prior, DirichletPrior):
        y0, y, al = hist.array.tolist(), cur.array.tolist(), prior.array.tolist()
        n0, n, sa = hist.n, cur.n, sum(al)

        def f(d):
            v = math.lgamma(d * n0 + sa) - math.lgamma(d * n0 + n + sa)
            for a0, a1, a in zip(y0, y, al):
                v += math.lgamma(d * a0 + a1 + a) - math.lgamma(d * a0 + a)
            return lp(d) + v

        return f
    return lambda d: float(log_marginal_delta(hist, cur, prior, dprior, d))


def npp_model(
    hist,
    cur,
    prior,
    dprior: DeltaPrior,
    log_c: Optional[Callable[[float], float]] = None,
    collapsed: bool = False,
) -> CallbackModel:
    """NPP model for the sampler.

    The default delta update targets the full conditional
    ``pi0(delta) L(theta|D0)^delta / C(delta)``, with ``log_c`` either the
    closed form or a path-sampled interpolant. ``collapsed=True`` targets
    the marginal posterior of delta instead (theta integrated out).
    """
    fixed = dprior.delta0 if dprior.is_fixed else None
    lower = delta_lower_bound(hist, prior)
    init = _init(hist, cur, prior)
    sweep = _gibbs(hist, cur, prior)
    names = _names(hist, prior)
    lp = _delta_prior_fn(dprior)
    if collapsed:
        marginal = _scalar_marginal(hist, cur, prior, dprior)

        def target(th, d):
            if d <= lower:
                return -math.inf
            return marginal(d)

    else:
        ll = _historical_loglik(hist, prior)
        lc = _log_c_fn(hist, prior, log_c)

        def target(th, d):
            if d <= lower:
                return -math.inf
            return lp(d) + d * ll(th) - lc(d)

    return CallbackModel(names, target, sweep, init, fixed, lower)


def jpp_model(hist, cur, prior, dprior: DeltaPrior, form: LikelihoodForm) -> CallbackModel:
    """Joint power prior model: the delta update has no normalising constant."""
    fixed = dprior.delta0 if dprior.is_fixed else None
    ll = _historical_loglik(hist, prior)
    lp = _delta_prior_fn(dprior)
    const = form_log_constant(hist, form)
    if isinstance(prior, NormalLinearPrior):
        # the chain's likelihood includes (2 pi)^(-n0/2); the form constant replaces it
        const += _as_linear(hist).n / 2.0 * math.log(2.0 * math.pi)

    def target(th, d):
        return lp(d) + d * (ll(th) + const)

    return CallbackModel(_names(hist, prior), target, _gibbs(hist, cur, prior), _init(hist, cur, prior), fixed)
