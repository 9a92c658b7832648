"""Deterministic numerical kernel.

Special functions, composite Gauss-Legendre quadrature on sub-intervals of
[0, 1], bounded maximisation, reproducible random streams and interval
summaries. Nothing in here knows about power priors.
"""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln, logsumexp

from .errors import DomainError, EvaluationError

_U64 = 2**64
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def log_gamma(x: ArrayLike) -> np.ndarray | float:
    """Natural log of the gamma function for positive finite arguments."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"log_gamma requires finite x > 0, got {x!r}")
    out = gammaln(arr)
    return float(out) if out.ndim == 0 else out


def log_beta(a: ArrayLike, b: ArrayLike) -> np.ndarray | float:
    """log B(a, b) = log_gamma(a) + log_gamma(b) - log_gamma(a + b)."""
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if (
        not np.all(np.isfinite(a_arr))
        or not np.all(np.isfinite(b_arr))
        or np.any(a_arr <= 0.0)
        or np.any(b_arr <= 0.0)
    ):
        raise DomainError(f"log_beta requires a, b > 0, got a={a!r}, b={b!r}")
    # symmetric in (a, b) bit for bit: the sum is formed in a fixed order
    lo = np.minimum(a_arr, b_arr)
    hi = np.maximum(a_arr, b_arr)
    out = gammaln(lo) + gammaln(hi) - gammaln(lo + hi)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Composite Gauss-Legendre rule on the unit interval.

    ``nodes`` are strictly interior; ``weights`` are positive and sum to one.
    ``edges`` holds the panel boundaries (``panels + 1`` values from 0 to 1).
    """

    nodes: NDArray[np.float64]
    weights: NDArray[np.float64]
    panels: int
    edges: NDArray[np.float64]

    @property
    def order(self) -> int:
        return len(self.nodes) // self.panels


def gauss_legendre_rule(panels: int = 64, order: int = 8, grading: float = 1.0) -> QuadratureRule:
    """Build a composite rule with ``panels`` panels of ``order`` nodes each.

    Panel edges sit at ``(j / panels) ** grading``; ``grading > 1`` crowds
    panels toward the left end of the interval.
    """
    if panels < 1 or order < 1:
        raise DomainError("panels and order must be positive")
    if grading < 1.0:
        raise DomainError("grading must be >= 1")
    edges = (np.arange(panels + 1) / panels) ** grading
    edges[-1] = 1.0
    x, w = np.polynomial.legendre.leggauss(order)
    left = edges[:-1, None]
    width = np.diff(edges)[:, None]
    nodes = (left + 0.5 * width * (x + 1.0)).ravel()
    weights = (0.5 * width * w).ravel()
    weights = weights / weights.sum()
    return QuadratureRule(nodes=nodes, weights=weights, panels=panels, edges=edges)


DEFAULT_RULE = gauss_legendre_rule()


@functools.lru_cache(maxsize=None)
def logit_gauss_legendre(
    panels: int = 96, order: int = 16, half_width: float = 60.0
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Composite Gauss-Legendre nodes and weights on ``[-half_width, half_width]``.

    Meant for integrals over p in (0, 1) rewritten on the logit scale
    ``t = log(p / (1 - p))``, where ``dp = p (1 - p) dt`` tames the endpoint
    singularities of beta-type integrands.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-half_width, half_width, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * np.diff(edges)[:, None]
    nodes, weights = (mid + half * x).ravel(), (half * w).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def beta_expectation(
    g: Callable, a: ArrayLike, b: ArrayLike
) -> NDArray[np.float64]:
    """E[g(log p, log(1 - p))] under Beta(a, b), by logit-scale quadrature.

    ``a`` and ``b`` broadcast against each other; ``g`` receives arrays of
    shape ``(..., nodes)``.
    """
    t, w = logit_gauss_legendre()
    logp = -np.logaddexp(0.0, -t)
    log1mp = -np.logaddexp(0.0, t)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    logpdf = a * logp + b * log1mp - log_beta(a, b)  # includes the p(1 - p) Jacobian
    return np.sum(np.exp(logpdf) * w * g(logp, log1mp), axis=-1)


@dataclass(frozen=True)
class UnitIntegral:
    """Result of normalising a log-density on ``(lo, hi)``.

    ``cdf_x``/``cdf`` tabulate a piecewise-linear CDF whose cells are the
    Gauss-Legendre weight cells (each node owns a cell of length equal to its
    weight), so the table has one more entry than there are nodes.
    """

    log_normalizer: float
    mean: float
    nodes: NDArray[np.float64]
    log_density: NDArray[np.float64]
    weights: NDArray[np.float64]
    cdf_x: NDArray[np.float64]
    cdf: NDArray[np.float64]

    @property
    def cdf_grid(self) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        return self.cdf_x, self.cdf


def _evaluate(f: Callable, x: NDArray[np.float64]) -> NDArray[np.float64]:
    try:
        out = np.asarray(f(x), dtype=float)
        if out.shape == x.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(f(float(xi))) for xi in x])


def integrate_unit(
    f: Callable,
    rule: QuadratureRule = DEFAULT_RULE,
    lo: float = 0.0,
    hi: float = 1.0,
) -> UnitIntegral:
    """Normalise ``exp(f)`` on ``(lo, hi)`` by composite quadrature.

    ``f`` may be vectorised; otherwise it is called node by node. All
    arithmetic happens in log space.
    """
    if not lo < hi:
        raise DomainError(f"integrate_unit needs lo < hi, got ({lo}, {hi})")
    span = hi - lo
    x = lo + span * rule.nodes
    logf = _evaluate(f, x)
    bad = np.flatnonzero(np.isnan(logf))
    if bad.size:
        raise EvaluationError(f"log-density is NaN at node x={x[bad[0]]!r}")
    if np.any(logf == np.inf):
        raise EvaluationError(f"log-density is +inf at node x={x[np.argmax(logf)]!r}")
    logw = np.log(rule.weights) + math.log(span)
    terms = logw + logf
    log_norm = float(logsumexp(terms))
    if not np.isfinite(log_norm):
        raise EvaluationError("density integrates to zero on the interval")
    mass = np.exp(terms - log_norm)
    mean = float(np.dot(mass, x))
    cdf = np.concatenate(([0.0], np.cumsum(mass)))
    cdf /= cdf[-1]
    cdf_x = lo + span * np.concatenate(([0.0], np.cumsum(rule.weights)))
    cdf_x[-1] = hi
    return UnitIntegral(
        log_normalizer=log_norm,
        mean=mean,
        nodes=x,
        log_density=logf - log_norm,
        weights=rule.weights * span,
        cdf_x=cdf_x,
        cdf=cdf,
    )


# ---------------------------------------------------------------------------
# bounded maximisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArgmaxResult:
    x_star: float
    f_star: float
    multimodal: bool = False


def argmax_on_interval(
    f: Callable,
    lo: float,
    hi: float,
    scan_points: int = 1001,
    tol: float = 1e-6,
) -> ArgmaxResult:
    """Maximise ``f`` on ``[lo, hi]``: equispaced scan, then golden section.

    A maximum found at the first or last scan point is returned as exactly
    ``lo`` or ``hi``. Ties keep the smallest abscissa and set ``multimodal``,
    as does the presence of more than one strict local maximum in the scan.
    NaN values count as ``-inf``.
    """
    if not lo < hi:
        raise DomainError(f"argmax_on_interval needs lo < hi, got ({lo}, {hi})")
    scan_points = max(int(scan_points), 1001)
    xs = np.linspace(lo, hi, scan_points)
    fs = _evaluate(f, xs)
    fs = np.where(np.isnan(fs), -np.inf, fs)
    best = float(np.max(fs))
    if best == -np.inf:
        raise EvaluationError("function is -inf everywhere on the scan")
    ties = np.flatnonzero(fs == best)
    i = int(ties[0])
    interior = fs[1:-1]
    peaks = np.count_nonzero((interior > fs[:-2]) & (interior > fs[2:]))
    peaks += int(fs[0] > fs[1]) + int(fs[-1] > fs[-2])
    multimodal = ties.size > 1 or peaks > 1
    if i == 0:
        return ArgmaxResult(float(lo), best, bool(multimodal))
    if i == scan_points - 1:
        return ArgmaxResult(float(hi), best, bool(multimodal))

    def g(t: float) -> float:
        v = float(f(t))
        return -np.inf if math.isnan(v) else v

    a, b = float(xs[i - 1]), float(xs[i + 1])
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = g(c), g(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = g(d)
    cands = [(float(xs[i]), best), (c, fc), (d, fd)]
    x_star, f_star = max(cands, key=lambda t: t[1])
    return ArgmaxResult(x_star, f_star, bool(multimodal))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(master_seed, stream_index)``.

    Streams are counter-based (Philox) generators seeded from a
    :class:`numpy.random.SeedSequence` whose spawn key carries the stream
    index, so distinct keys give independent sequences and equal keys give
    identical ones. A stream is meant to have a single owner.
    """

    master_seed: int
    stream_index: int = 0
    subkey: Tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name, v in (("master_seed", self.master_seed), ("stream_index", self.stream_index)):
            if not 0 <= int(v) < _U64:
                raise DomainError(f"{name} must be a 64-bit unsigned integer, got {v}")
        self.master_seed = int(self.master_seed)
        self.stream_index = int(self.stream_index)
        seq = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.stream_index, *self.subkey)
        )
        self.generator = np.random.Generator(np.random.Philox(seq))

    def substream(self, j: int) -> "RngStream":
        """Independent child stream; the parent is left untouched."""
        return RngStream(self.master_seed, self.stream_index, (*self.subkey, int(j)))


def _as_stream(stream) -> np.random.Generator:
    if isinstance(stream, RngStream):
        return stream.generator
    if isinstance(stream, np.random.Generator):
        return stream
    raise TypeError("stream must be an RngStream or numpy Generator")


def worker_count() -> int:
    """Worker cap from ``NPP_THREADS`` (default 1; invalid values fall back to 1)."""
    try:
        return max(1, int(os.environ.get("NPP_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items, workers: int | None = None) -> list:
    """Ordered map over ``items``, threaded when more than one worker is allowed.

    Results never depend on the worker count as long as ``fn`` draws its
    randomness from streams indexed by the item.
    """
    items = list(items)
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _positive(name: str, *values) -> None:
    for v in values:
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise DomainError(f"{name} parameters must be finite and > 0")


def sample_distribution(kind: str, params: dict, stream, count: int) -> np.ndarray:
    """Draw ``count`` variates of the named distribution.

    Scalar parameters may be replaced by arrays of length ``count`` (one
    parameter set per draw); for ``dirichlet`` and ``multivariate_t`` the
    per-draw parameters carry a leading axis of length ``count``.

    kinds and parameters::

        uniform         low, high
        normal          mean, sd
        gamma           shape, scale
        beta            a, b
        dirichlet       alpha (k,) or (count, k)
        inverse_gamma   shape, scale
        multivariate_t  df, loc (k,) or (count, k), shape (k, k) or (count, k, k)
    """
    rng = _as_stream(stream)
    count = int(count)
    if count < 0:
        raise DomainError("count must be nonnegative")
    if kind == "uniform":
        low, high = params.get("low", 0.0), params.get("high", 1.0)
        if np.any(np.asarray(high) <= np.asarray(low)):
            raise DomainError("uniform requires low < high")
        return rng.uniform(low, high, size=count)
    if kind == "normal":
        _positive("normal sd", params["sd"])
        return rng.normal(params["mean"], params["sd"], size=count)
    if kind == "gamma":
        _positive("gamma", params["shape"], params.get("scale", 1.0))
        return rng.gamma(params["shape"], params.get("scale", 1.0), size=count)
    if kind == "beta":
        _positive("beta", params["a"], params["b"])
        return rng.beta(params["a"], params["b"], size=count)
    if kind == "inverse_gamma":
        _positive("inverse_gamma", params["shape"], params["scale"])
        return np.asarray(params["scale"]) / rng.gamma(params["shape"], 1.0, size=count)
    if kind == "dirichlet":
        alpha = np.asarray(params["alpha"], dtype=float)
        _positive("dirichlet", alpha)
        if alpha.ndim == 1:
            if alpha.size < 2:
                raise DomainError("dirichlet needs at least two categories")
            alpha = np.broadcast_to(alpha, (count, alpha.size))
        g = rng.gamma(alpha)
        return g / g.sum(axis=1, keepdims=True)
    if kind == "multivariate_t":
        return _sample_mvt(rng, params, count)
    raise DomainError(f"unknown distribution kind {kind!r}")


def _sample_mvt(rng: np.random.Generator, params: dict, count: int) -> np.ndarray:
    df = np.asarray(params["df"], dtype=float)
    loc = np.asarray(params["loc"], dtype=float)
    shape = np.asarray(params["shape"], dtype=float)
    _positive("multivariate_t df", df)
    k = shape.shape[-1]
    try:
        chol = np.linalg.cholesky(shape)
    except np.linalg.LinAlgError as exc:
        raise DomainError("multivariate_t shape matrix must be positive definite") from exc
    z = rng.standard_normal((count, k))
    w = rng.chisquare(np.broadcast_to(df, (count,))) / df
    if chol.ndim == 2:
        y = z @ chol.T
    else:
        y = np.einsum("nij,nj->ni", chol, z)
    return loc + y / np.sqrt(w)[:, None]


# ---------------------------------------------------------------------------
# interval summaries
# ---------------------------------------------------------------------------


def hpd_interval(samples: ArrayLike, mass: float = 0.95) -> Tuple[float, float]:
    """Shortest window holding ``ceil(mass * N)`` order statistics."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 100:
        raise DomainError(f"hpd_interval needs at least 100 samples, got {n}")
    if not 0.0 < mass < 1.0:
        raise DomainError("mass must lie in (0, 1)")
    m = int(math.ceil(mass * n))
    widths = x[m - 1 :] - x[: n - m + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + m - 1])


def equal_tailed_interval(samples: ArrayLike, mass: float = 0.95) -> Tuple[float, float]:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise DomainError(f"equal_tailed_interval needs at least 100 samples, got {x.size}")
    if not 0.0 < mass < 1.0:
        raise DomainError("mass must lie in (0, 1)")
    tail = 50.0 * (1.0 - mass)
    lo, hi = np.percentile(x, [tail, 100.0 - tail])
    return float(lo), float(hi)


def credible_interval(samples: ArrayLike, mass: float = 0.95, kind: str = "hpd") -> Tuple[float, float]:
    if kind == "hpd":
        return hpd_interval(samples, mass)
    if kind == "equal_tailed":
        return equal_tailed_interval(samples, mass)
    raise DomainError(f"unknown interval kind {kind!r}")


def inverse_cdf_sample(
    cdf_x: NDArray[np.float64], cdf: NDArray[np.float64], u: ArrayLike
) -> np.ndarray:
    """Invert a piecewise-linear CDF table at uniforms ``u``."""
    return np.interp(np.asarray(u, dtype=float), cdf, cdf_x)


def log_beta_density(x: ArrayLike, a: float, b: float) -> np.ndarray:
    """Beta(a, b) log-density evaluated at ``x`` in [0, 1]."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        left = 0.0 if a == 1.0 else (a - 1.0) * np.log(x)
        right = 0.0 if b == 1.0 else (b - 1.0) * np.log1p(-x)
    return left + right - log_beta(a, b) + np.zeros_like(x)
