"""Monte Carlo root mean squared error of posterior-mean estimators.

Replicate ``i`` always uses the uniforms of stream ``(seed, i)``, pushed
through inverse CDFs of the scenario's sampling distributions. Every cell
therefore sees common random numbers, results do not depend on the worker
count, and two normal scenarios with the same standardised configuration
see the same standardised data.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .. import numkit
from ..conjugate import intercept_only_terms
from ..errors import ConfigurationError

RMSE_METHODS = ("npp", "jpp1", "jpp2", "pool", "discard")
RMSE_RULE = numkit.gauss_legendre_rule(panels=128, order=8, grading=2.0)
CSV_COLUMNS = ("panel", "family", "n", "n0", "p", "p0", "mu", "sigma", "mu0", "sigma0",
               "method", "rmse", "delta_mean_avg", "m")
_LOG_2PI = math.log(2.0 * math.pi)
_U_PER_REPLICATE = 4


@dataclass(frozen=True)
class RmseSpec:
    """A grid of simulation scenarios.

    Cells are the Cartesian product of ``n``, ``n0`` and the truths:
    ``p`` x ``p0`` for the binomial family, ``mu0`` x ``sigma0`` (with
    scalar ``mu``, ``sigma``) for the normal family. Initial priors are
    Beta(1, 1) for p, 1/sigma^2 for (mu, sigma^2) and Beta(1, 1) for delta.
    """

    family: str
    n: Tuple[int, ...]
    n0: Tuple[int, ...]
    m: int = 5000
    methods: Tuple[str, ...] = RMSE_METHODS
    p: Tuple[float, ...] = ()
    p0: Tuple[float, ...] = ()
    mu: float = 0.0
    sigma: float = 1.0
    mu0: Tuple[float, ...] = ()
    sigma0: Tuple[float, ...] = ()
    panel: str = ""

    def __post_init__(self) -> None:
        for name in ("n", "n0", "methods", "p", "p0", "mu0", "sigma0"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.family not in ("binomial", "normal"):
            raise ConfigurationError(f"rMSE family must be binomial or normal, not {self.family!r}")
        if self.m < 100:
            raise ConfigurationError("m must be at least 100")
        min_n = 1 if self.family == "binomial" else 2
        if not self.n or not self.n0 or min(self.n + self.n0) < min_n:
            raise ConfigurationError(f"sample sizes must be >= {min_n}")
        bad = set(self.methods) - set(RMSE_METHODS)
        if bad or not self.methods:
            raise ConfigurationError(f"invalid rMSE methods {sorted(bad)}")
        if self.family == "binomial":
            if not self.p or not self.p0 or not all(0 < x < 1 for x in self.p + self.p0):
                raise ConfigurationError("binomial truths p and p0 must lie in (0, 1)")
        else:
            if not self.mu0 or not self.sigma0:
                raise ConfigurationError("normal scenarios need mu0 and sigma0 values")
            if not all(math.isfinite(x) for x in (self.mu, *self.mu0)):
                raise ConfigurationError("means must be finite")
            if not all(s > 0 and math.isfinite(s) for s in (self.sigma, *self.sigma0)):
                raise ConfigurationError("standard deviations must be positive")

    def cells(self):
        if self.family == "binomial":
            return list(itertools.product(self.n, self.n0, self.p, self.p0))
        return list(itertools.product(self.n, self.n0, self.mu0, self.sigma0))


def replicate_uniforms(seed: int, m: int) -> np.ndarray:
    """``(m, 4)`` uniforms; row ``i`` comes from stream ``(seed, i)`` only."""
    return np.stack([numkit.RngStream(seed, i).generator.random(_U_PER_REPLICATE) for i in range(m)])


# ---------------------------------------------------------------------------
# posterior means for many datasets at once
# ---------------------------------------------------------------------------


def _nodes(lo: float):
    x = lo + (1.0 - lo) * RMSE_RULE.nodes
    return x, np.log(RMSE_RULE.weights)


def _weighted_means(logf: np.ndarray, logw: np.ndarray, x: np.ndarray, cond: np.ndarray):
    """Posterior means of delta and of the parameter from a (datasets, nodes) log-density."""
    lp = logf + logw
    lp = lp - logsumexp(lp, axis=1, keepdims=True)
    p = np.exp(lp)
    return p @ x, np.sum(p * cond, axis=1)


def _binomial_estimates(y0, n0, y, n, methods) -> Dict[str, Tuple[np.ndarray, Optional[np.ndarray]]]:
    a, b = 1.0, 1.0
    f0, f = n0 - y0, n - y
    out = {}
    if "pool" in methods:
        out["pool"] = ((y0 + y + a) / (n0 + n + a + b), None)
    if "discard" in methods:
        out["discard"] = ((y + a) / (n + a + b), None)
    x, logw = _nodes(0.0)
    d = x[None, :]
    ya, fb = (y0[:, None], f0[:, None]), (y[:, None] + a, f[:, None] + b)
    kernel = gammaln(d * ya[0] + fb[0]) + gammaln(d * ya[1] + fb[1]) - gammaln(d * n0 + n + a + b)
    cond = (d * ya[0] + fb[0]) / (d * n0 + n + a + b)
    for method in ("npp", "jpp1", "jpp2"):
        if method not in methods:
            continue
        if method == "npp":
            logf = kernel - (gammaln(d * ya[0] + a) + gammaln(d * ya[1] + b) - gammaln(d * n0 + a + b))
        elif method == "jpp1":
            logf = kernel
        else:
            log_c1 = gammaln(n0 + 1.0) - gammaln(y0 + 1.0) - gammaln(f0 + 1.0)
            logf = kernel + d * log_c1[:, None]
        dm, pm = _weighted_means(logf, logw, x, cond)
        out[method] = (pm, dm)
    return out


def _normal_log_c2(n0: int, ss0: np.ndarray) -> np.ndarray:
    s0 = np.sqrt(ss0 / (n0 - 1.0))
    h = (n0 - 1.0) / 2.0
    return (n0 - 3.0) * np.log(s0) + h * math.log(h) + 0.5 * math.log(n0) - 0.5 * _LOG_2PI - math.lgamma(h)


def _normal_estimates(n0, xbar0, ss0, n, xbar, ss, methods):
    out = {}
    if "pool" in methods:
        out["pool"] = ((n0 * xbar0 + n * xbar) / (n0 + n), None)
    if "discard" in methods:
        out["discard"] = (xbar, None)
    a = 1.0
    col = lambda v: np.asarray(v, dtype=float)[:, None]
    if "npp" in methods:
        x, logw = _nodes(max(0.0, (1.0 + 2.0 - 2.0 * a) / n0))
        t = intercept_only_terms(n0, col(xbar0), col(ss0), n, col(xbar), col(ss), a, x[None, :])
        dm, pm = _weighted_means(t.log_npp, logw, x, t.cond_mean)
        out["npp"] = (pm, dm)
    jpp = [m for m in ("jpp1", "jpp2") if m in methods]
    if jpp:
        x, logw = _nodes(0.0)
        t = intercept_only_terms(n0, col(xbar0), col(ss0), n, col(xbar), col(ss), a, x[None, :])
        for method in jpp:
            const = -0.5 * n0 * _LOG_2PI if method == "jpp1" else col(_normal_log_c2(n0, ss0))
            dm, pm = _weighted_means(t.log_jpp + x[None, :] * const, logw, x, t.cond_mean)
            out[method] = (pm, dm)
    return out


# ---------------------------------------------------------------------------
# simulation cells
# ---------------------------------------------------------------------------


def _binomial_cell(cell, u, methods):
    n, n0, p, p0 = cell
    y0 = stats.binom.ppf(u[:, 0], n0, p0).astype(int)
    y = stats.binom.ppf(u[:, 1], n, p).astype(int)
    # many replicates share (y0, y); solve each distinct pair once
    pairs, inv = np.unique(np.stack([y0, y], axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    est = _binomial_estimates(pairs[:, 0].astype(float), n0, pairs[:, 1].astype(float), n, methods)
    return {k: (pm[inv], None if dm is None else dm[inv]) for k, (pm, dm) in est.items()}, p


def standardized_summaries(u: np.ndarray, n0: int, n: int):
    """Standardised sample means and residual sums of squares from the replicate uniforms."""
    z0 = stats.norm.ppf(u[:, 0]) / math.sqrt(n0)
    q0 = stats.chi2.ppf(u[:, 1], n0 - 1)
    z = stats.norm.ppf(u[:, 2]) / math.sqrt(n)
    q = stats.chi2.ppf(u[:, 3], n - 1)
    return z0, q0, z, q


def _normal_cell(cell, u, methods, mu, sigma):
    n, n0, mu0, sigma0 = cell
    z0, q0, z, q = standardized_summaries(u, n0, n)
    # raw-scale data; the JPP constant with log s0 is not scale free, so no shortcut here
    est = _normal_estimates(n0, mu0 + sigma0 * z0, sigma0**2 * q0, n, mu + sigma * z, sigma**2 * q, methods)
    return est, mu


def run_rmse(spec: RmseSpec, seed: int = 0, workers: Optional[int] = None) -> List[dict]:
    """rMSE of the posterior mean (and the average posterior mean of delta) per cell and method."""
    u = replicate_uniforms(seed, spec.m)

    def one(cell):
        if spec.family == "binomial":
            est, truth = _binomial_cell(cell, u, spec.methods)
        else:
            est, truth = _normal_cell(cell, u, spec.methods, spec.mu, spec.sigma)
        rows = []
        for method in spec.methods:
            pm, dm = est[method]
            row = {"panel": spec.panel, "family": spec.family, "n": cell[0], "n0": cell[1]}
            if spec.family == "binomial":
                row.update(p=cell[2], p0=cell[3])
            else:
                row.update(mu=spec.mu, sigma=spec.sigma, mu0=cell[2], sigma0=cell[3])
            row.update(
                method=method,
                rmse=float(np.sqrt(np.mean((pm - truth) ** 2))),
                delta_mean_avg={"pool": 1.0, "discard": 0.0}.get(method) if dm is None else float(dm.mean()),
                m=spec.m,
            )
            rows.append(row)
        return rows

    return [r for rows in numkit.parallel_map(one, spec.cells(), workers) for r in rows]


def _grid(lo: float, hi: float, step: float) -> Tuple[float, ...]:
    k = int(round((hi - lo) / step))
    return tuple(round(lo + i * step, 10) for i in range(k + 1))


_P0 = _grid(0.05, 0.95, 0.05)
_MU0 = _grid(-1.0, 1.0, 0.1)
_SIGMA0 = _grid(0.5, 2.0, 0.1)


def presets(m: int = 5000) -> Dict[str, List[RmseSpec]]:
    """Scenario grids behind the three simulation figures, at ``m`` replicates."""
    return {
        "fig3": [RmseSpec("binomial", (30,), (15, 30, 60), m, p=(0.5, 0.2), p0=_P0, panel="binomial")],
        "fig4": [
            RmseSpec("normal", (30,), (15, 30, 60), m, mu0=_MU0, sigma0=(1.0,), panel="sigma0=1"),
            RmseSpec("normal", (30,), (15, 30, 60), m, mu0=(0.2,), sigma0=_SIGMA0, panel="mu0=0.2"),
        ],
        "fig5": [
            RmseSpec("binomial", (30,), (30,), m, ("npp", "jpp1", "jpp2"), p=(0.5,), p0=_P0, panel="binomial"),
            RmseSpec("normal", (30,), (30,), m, ("npp", "jpp1", "jpp2"), mu0=_MU0, sigma0=(1.0,),
                     panel="sigma0=1"),
            RmseSpec("normal", (30,), (30,), m, ("npp", "jpp1", "jpp2"), mu0=(0.2,), sigma0=_SIGMA0,
                     panel="mu0=0.2"),
        ],
    }


def run_preset(name: str, m: int = 5000, seed: int = 0, workers: Optional[int] = None) -> List[dict]:
    table = presets(m)
    if name not in table:
        raise ConfigurationError(f"unknown simulation preset {name!r}; expected one of {sorted(table)}")
    rows: List[dict] = []
    for spec in table[name]:
        rows += run_rmse(spec, seed, workers)
    return rows


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] = CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]))
                    for k in columns})
    return buf.getvalue()
