"""Posterior behaviour as the historical data drift away from the current data.

Every cell is computed by quadrature over delta, so the tables are exact up
to the quadrature error and do not depend on a seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..conjugate import degenerate_posterior, delta_posterior, DeltaPosterior
from ..errors import ConfigurationError
from ..jpp import LikelihoodForm, jpp_delta_posterior
from ..models import BetaPrior, BinomialData, DeltaPrior, NormalLinearPrior, NormalSummary

AXES = ("n0_over_n", "stat_gap", "var_ratio")
SWEEP_METHODS = ("npp", "jpp1", "jpp2", "pool", "discard")
_JPP_FORMS = {
    "binomial": {"jpp1": "bernoulli_product", "jpp2": "binomial_density"},
    "normal": {"jpp1": "normal_raw_product", "jpp2": "normal_sufficient_density"},
}
CSV_COLUMNS = ("panel", "axis", "axis_value", "n0", "hist_stat", "hist_var", "method",
               "param_mean", "delta_mean", "delta_mode")


@dataclass(frozen=True)
class SweepSpec:
    """One panel of a sweep.

    Args:
        family: ``binomial`` or ``normal``.
        current: current-data statistics; ``{"n", "p_hat"}`` or ``{"n", "mean", "var"}``.
        historical: baseline historical statistics; the axis overrides one of them.
            Binomial: ``{"n0", "p_hat0"}``; normal: ``{"n0", "mean0", "var0"}``.
        axis: which quantity varies. ``n0_over_n`` scales n0, ``stat_gap`` moves
            the historical estimate (p_hat0 - p_hat or mean0 - mean) and
            ``var_ratio`` sets var0 / var (normal only).
        values: axis values.
        methods: subset of ``SWEEP_METHODS``.
        panel: label copied into every row.

    Variances are sample variances (divisor n - 1).
    """

    family: str
    current: Dict[str, float]
    historical: Dict[str, float]
    axis: str
    values: Tuple[float, ...]
    methods: Tuple[str, ...] = SWEEP_METHODS
    panel: str = ""

    def __post_init__(self) -> None:
        if self.family not in _JPP_FORMS:
            raise ConfigurationError(f"sweeps support binomial and normal, not {self.family!r}")
        if self.axis not in AXES:
            raise ConfigurationError(f"unknown axis {self.axis!r}; expected one of {AXES}")
        if self.axis == "var_ratio" and self.family != "normal":
            raise ConfigurationError("the var_ratio axis needs the normal family")
        vals = np.asarray(self.values, dtype=float)
        if vals.size < 2 or not np.all(np.isfinite(vals)):
            raise ConfigurationError("a sweep needs at least two finite axis values")
        bad = set(self.methods) - set(SWEEP_METHODS)
        if bad or not self.methods:
            raise ConfigurationError(f"invalid sweep methods {sorted(bad)}")
        object.__setattr__(self, "values", tuple(float(v) for v in vals))
        object.__setattr__(self, "methods", tuple(self.methods))


def _binomial_cells(spec: SweepSpec):
    n, p = int(spec.current["n"]), spec.current["p_hat"]
    cur = BinomialData(n, int(round(n * p)))
    for v in spec.values:
        n0, p0 = spec.historical["n0"], spec.historical["p_hat0"]
        if spec.axis == "n0_over_n":
            n0 = v * n
        else:
            p0 = p + v
        n0 = int(round(n0))
        if not 0.0 <= p0 <= 1.0 or n0 < 1:
            raise ConfigurationError(f"axis value {v} gives an invalid historical sample")
        yield v, BinomialData(n0, int(round(n0 * p0))), cur


def _normal_cells(spec: SweepSpec):
    c, h = spec.current, spec.historical
    cur = NormalSummary(int(c["n"]), c["mean"], float(np.sqrt(c["var"])))
    for v in spec.values:
        n0, m0, v0 = h["n0"], h["mean0"], h["var0"]
        if spec.axis == "n0_over_n":
            n0 = v * cur.n
        elif spec.axis == "stat_gap":
            m0 = c["mean"] + v
        else:
            v0 = v * c["var"]
        n0 = int(round(n0))
        if n0 < 2 or v0 <= 0:
            raise ConfigurationError(f"axis value {v} gives an invalid historical sample")
        yield v, NormalSummary(n0, m0, float(np.sqrt(v0))), cur


def _expect(post: DeltaPosterior, g) -> float:
    if post.degenerate:
        return float(g(np.array([post.mean]))[0])
    return float(np.sum(post.weights * np.exp(post.log_density) * g(post.grid)))


def _cond_mean(family: str, hist, cur, prior):
    if family == "binomial":
        a = prior.alpha + cur.y
        ab = prior.alpha + prior.beta + cur.n
        return lambda d: (d * hist.y + a) / (d * hist.n + ab)
    # flat prior on the mean (b = 0): precision-weighted average of the sample means
    return lambda d: (d * hist.n * hist.mean + cur.n * cur.mean) / (d * hist.n + cur.n)


def _delta_post(method: str, family: str, hist, cur, prior) -> DeltaPosterior:
    if method == "pool":
        return degenerate_posterior(1.0)
    if method == "discard":
        return degenerate_posterior(0.0)
    dprior = DeltaPrior.uniform()
    if method == "npp":
        return delta_posterior(hist, cur, prior, dprior)
    form = LikelihoodForm(family, _JPP_FORMS[family][method])
    return jpp_delta_posterior(hist, cur, prior, dprior, form)


def run_sweep(spec: SweepSpec, draws: Optional[int] = None, seed: Optional[int] = None) -> List[dict]:
    """Posterior mean of the parameter of interest and mean/mode of delta per axis point.

    ``draws`` and ``seed`` are accepted for a uniform interface with the
    simulation commands; the computation is deterministic quadrature and
    ignores them.
    """
    del draws, seed
    if spec.family == "binomial":
        prior, cells = BetaPrior(1.0, 1.0), _binomial_cells(spec)
    else:
        prior, cells = NormalLinearPrior(a=1.0, b=0), _normal_cells(spec)
    rows = []
    for v, hist, cur in cells:
        g = _cond_mean(spec.family, hist, cur, prior)
        for method in spec.methods:
            post = _delta_post(method, spec.family, hist, cur, prior)
            rows.append(
                {
                    "panel": spec.panel,
                    "axis": spec.axis,
                    "axis_value": v,
                    "n0": hist.n,
                    "hist_stat": hist.y / hist.n if spec.family == "binomial" else hist.mean,
                    "hist_var": None if spec.family == "binomial" else hist.sd**2,
                    "method": method,
                    "param_mean": _expect(post, g),
                    "delta_mean": post.mean,
                    "delta_mode": post.mode,
                }
            )
    return rows


def _grid(lo: float, hi: float, step: float) -> Tuple[float, ...]:
    k = int(round((hi - lo) / step))
    return tuple(round(lo + i * step, 10) for i in range(k + 1))


PRESETS: Dict[str, List[SweepSpec]] = {
    "fig1": [
        SweepSpec("binomial", {"n": 20, "p_hat": 0.65}, {"n0": 40, "p_hat0": 0.5}, "n0_over_n",
                  _grid(0.5, 10.0, 0.5), panel="left"),
        SweepSpec("binomial", {"n": 20, "p_hat": 0.65}, {"n0": 40, "p_hat0": 0.5}, "stat_gap",
                  tuple(round(k / 40 - 0.65, 10) for k in range(41)), panel="right"),
    ],
    "fig2": [
        SweepSpec("normal", {"n": 20, "mean": 0.5, "var": 1.0}, {"n0": 40, "mean0": 1.0, "var0": 0.8},
                  "n0_over_n", _grid(0.5, 10.0, 0.5), panel="left"),
        SweepSpec("normal", {"n": 20, "mean": 0.5, "var": 1.0}, {"n0": 40, "mean0": 1.0, "var0": 0.8},
                  "stat_gap", _grid(-2.0, 2.0, 0.1), panel="middle"),
        SweepSpec("normal", {"n": 20, "mean": 0.5, "var": 1.0}, {"n0": 40, "mean0": 1.0, "var0": 0.8},
                  "var_ratio", _grid(0.2, 4.0, 0.2), panel="right"),
    ],
}


def run_preset(name: str) -> List[dict]:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown sweep preset {name!r}; expected one of {sorted(PRESETS)}")
    rows: List[dict] = []
    for spec in PRESETS[name]:
        rows += run_sweep(spec)
    return rows


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] = CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]))
                    for k in columns})
    return buf.getvalue()
