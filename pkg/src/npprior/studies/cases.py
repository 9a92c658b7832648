"""The three worked applications: water quality, vaccine noninferiority and
diagnostic test evaluation.

Each runner returns a :class:`CaseStudyResult` whose rows line up with the
published tables, plus a cell-by-cell comparison against the reference
values and tolerances shipped in ``resources/reference_values.json``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.stats import norm

from .. import numkit
from ..conjugate import (
    degenerate_posterior,
    delta_posterior,
    sample_given_delta_posterior,
)
from ..jpp import LikelihoodForm, jpp_delta_posterior
from ..models import (
    BetaPrior,
    BinomialData,
    DeltaPrior,
    DirichletPrior,
    NormalLinearPrior,
    load_dataset,
    pool,
)
from ..report import DeltaSummary, ParameterSummary


def load_resource(name: str) -> dict:
    return json.loads(resources.files("npprior.resources").joinpath(name).read_text())


def reference_values() -> dict:
    return load_resource("reference_values.json")


@dataclass(frozen=True)
class Comparison:
    """One computed cell checked against its published value."""

    row: str
    column: str
    computed: float
    published: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.computed - self.published) <= self.tolerance + 1e-12

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


@dataclass(frozen=True)
class CaseStudyResult:
    study: str
    rows: List[Dict[str, Any]]
    comparisons: List[Comparison] = field(default_factory=list)
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.comparisons)

    def failures(self) -> List[Comparison]:
        return [c for c in self.comparisons if not c.passed]

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "rows": self.rows,
            "comparisons": [c.to_dict() for c in self.comparisons],
            "all_passed": self.all_passed,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)

    def to_csv(self) -> str:
        keys: List[str] = []
        for r in self.rows:
            keys += [k for k in r if k not in keys]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys)
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _flat(v) for k, v in r.items()})
        return buf.getvalue()


def _flat(v):
    if isinstance(v, (list, tuple)):
        return ";".join(f"{x:.6g}" if isinstance(x, float) else str(x) for x in v)
    return v


def _stream(seed: int, index: int) -> numkit.RngStream:
    return numkit.RngStream(seed, index)


# ---------------------------------------------------------------------------
# water quality
# ---------------------------------------------------------------------------

PH_METHODS = {
    "reference": None,
    "npp": None,
    "jpp_form1": "normal_sufficient_density",
    "jpp_form2": "normal_raw_product",
    "jpp_form3": "normal_scaled",
}


def run_case_ph(draws: Optional[int] = None, seed: Optional[int] = None) -> CaseStudyResult:
    """Posterior probability of no impairment, P(mu + z_0.1 sigma >= 6), per site and method.

    The initial prior is pi0(mu, sigma^2) ∝ 1/sigma^2 (a = 1, b = 0) and
    delta ~ Beta(1, 1). ``reference`` uses the current data only.
    """
    ref = reference_values()
    draws = draws or ref["draws"]
    seed = ref["seeds"]["ph"] if seed is None else seed
    data = load_resource("ph.json")
    z = norm.ppf(data["percentile"])
    prior = NormalLinearPrior(a=1.0, b=0)
    dprior = DeltaPrior.uniform()
    tol = ref["ph"]["tolerance"]
    rows, comps = [], []
    for si, (site, doc) in enumerate(sorted(data["sites"].items())):
        ds = load_dataset(doc)
        hist, cur = ds.pooled_historical, ds.current
        row: Dict[str, Any] = {"site": site, "n": cur.n, "mean": cur.mean, "sd": cur.sd,
                               "n0": hist.n, "mean0": hist.mean, "sd0": hist.sd}
        for mi, (method, form) in enumerate(PH_METHODS.items()):
            if method == "reference":
                post = degenerate_posterior(0.0)
            elif method == "npp":
                post = delta_posterior(hist, cur, prior, dprior)
            else:
                post = jpp_delta_posterior(hist, cur, prior, dprior, LikelihoodForm("normal", form))
            s = sample_given_delta_posterior(hist, cur, prior, post, draws, _stream(seed, 10 * si + mi))
            L = s["beta"][:, 0] + z * np.sqrt(s["sigma2"])
            p_h0 = float(np.mean(L >= data["threshold"]))
            sd_l = float(L.std(ddof=1))
            row[f"p_h0_{method}"] = p_h0
            row[f"sd_l_{method}"] = sd_l
            row[f"delta_mean_{method}"] = None if post.degenerate else post.mean
            comps.append(Comparison(site, f"p_h0_{method}", p_h0, ref["ph"]["p_h0"][site][method], tol["p_h0"]))
            comps.append(Comparison(site, f"sd_l_{method}", sd_l, ref["ph"]["sd_l"][site][method], tol["sd_l"]))
        rows.append(row)
    return CaseStudyResult("ph", rows, comps, {"draws": draws, "seed": seed})


# ---------------------------------------------------------------------------
# vaccine noninferiority
# ---------------------------------------------------------------------------

VACCINE_METHODS = ("jeffreys", "jpp1", "jpp2", "npp")


def _vaccine_rows(
    hist: BinomialData,
    control: BinomialData,
    test: BinomialData,
    prior: BetaPrior,
    margin: float,
    draws: int,
    seed: int,
    offset: int,
) -> List[Dict[str, Any]]:
    dprior = DeltaPrior.uniform()
    jeff = BetaPrior(0.5, 0.5)
    rows = []
    for mi, method in enumerate(VACCINE_METHODS):
        arm_prior = jeff if method == "jeffreys" else prior
        if method == "jeffreys":
            post = degenerate_posterior(0.0)
        elif method == "npp":
            post = delta_posterior(hist, control, arm_prior, dprior)
        else:
            form = "bernoulli_product" if method == "jpp1" else "binomial_density"
            post = jpp_delta_posterior(hist, control, arm_prior, dprior, LikelihoodForm("binomial", form))
        stream = _stream(seed, offset + mi)
        pc = sample_given_delta_posterior(hist, control, arm_prior, post, draws, stream.substream(0))["p"]
        pt = numkit.sample_distribution(
            "beta", {"a": test.y + arm_prior.alpha, "b": test.failures + arm_prior.beta}, stream.substream(1), draws
        )
        diff = ParameterSummary.from_draws(pt - pc).scaled(100.0)
        row = {
            "method": method,
            "prior": [arm_prior.alpha, arm_prior.beta],
            "p_c": 100.0 * float(pc.mean()),
            "ci_lower": diff.lower,
            "ci_upper": diff.upper,
            "delta_mean": None if post.degenerate else post.mean,
            "delta_mode": None if post.degenerate else post.mode,
            "margin": margin,
            "noninferior": bool(diff.lower > -100.0 * margin),
        }
        row["verdict"] = "noninferior" if row["noninferior"] else "questionable"
        rows.append(row)
    return rows


def run_case_vaccine(
    margin: float = 0.05,
    draws: Optional[int] = None,
    seed: Optional[int] = None,
    prior: BetaPrior = BetaPrior(1.0, 1.0),
) -> CaseStudyResult:
    """Two-arm noninferiority analysis borrowing historical control data.

    The test arm uses its own data and the initial prior only; the control
    arm borrows the pooled historical controls. The Jeffreys row uses
    Beta(0.5, 0.5) and no borrowing. A sensitivity table with Beta(0.5, 0.5)
    as the initial prior of the power-prior rows is always included.
    """
    if not margin > 0:
        raise ValueError("margin must be positive")
    ref = reference_values()
    draws = draws or ref["draws"]
    seed = ref["seeds"]["vaccine"] if seed is None else seed
    doc = load_resource("vaccine.json")
    ds = load_dataset(doc)
    hist = pool(ds.historical)
    test = BinomialData(doc["test"]["n"], doc["test"]["y"])
    rows = _vaccine_rows(hist, ds.current, test, prior, margin, draws, seed, 0)
    sens = _vaccine_rows(hist, ds.current, test, BetaPrior(0.5, 0.5), margin, draws, seed, 10)

    tol = ref["vaccine"]["tolerance"]
    comps = []
    for row in rows:
        pub = ref["vaccine"]["rows"][row["method"]]
        m = row["method"]
        comps.append(Comparison(m, "p_c", row["p_c"], pub["p_c"], tol["p_c"]))
        comps.append(Comparison(m, "ci_lower", row["ci_lower"], pub["ci"][0], tol["ci"]))
        comps.append(Comparison(m, "ci_upper", row["ci_upper"], pub["ci"][1], tol["ci"]))
        if "delta_mean" in pub:
            comps.append(Comparison(m, "delta_mean", row["delta_mean"], pub["delta_mean"], tol["delta_mean"]))
            comps.append(Comparison(m, "delta_mode", row["delta_mode"], pub["delta_mode"], tol["delta_mode"]))
    extra = {
        "draws": draws,
        "seed": seed,
        "historical_pooled": {"n": hist.n, "y": hist.y},
        "sensitivity_prior": [0.5, 0.5],
        "sensitivity": sens,
    }
    return CaseStudyResult("vaccine", rows, comps, extra)


# ---------------------------------------------------------------------------
# diagnostic test
# ---------------------------------------------------------------------------

DIAGNOSTIC_METHODS = ("fixed0", "fixed1", "jpp", "npp")


def run_case_diagnostic(draws: Optional[int] = None, seed: Optional[int] = None) -> CaseStudyResult:
    """Sensitivity eta = t1/(t1+t3) and specificity lambda = t4/(t2+t4) with Dir(0.5,...) prior."""
    ref = reference_values()
    draws = draws or ref["draws"]
    seed = ref["seeds"]["diagnostic"] if seed is None else seed
    ds = load_dataset(load_resource("diagnostic.json"))
    hist, cur = ds.pooled_historical, ds.current
    prior = DirichletPrior.symmetric(cur.k, 0.5)
    dprior = DeltaPrior.uniform()
    rows = []
    for mi, method in enumerate(DIAGNOSTIC_METHODS):
        if method == "fixed0":
            post = degenerate_posterior(0.0)
        elif method == "fixed1":
            post = degenerate_posterior(1.0)
        elif method == "npp":
            post = delta_posterior(hist, cur, prior, dprior)
        else:
            post = jpp_delta_posterior(hist, cur, prior, dprior, LikelihoodForm("multinomial", "multinomial_density"))
        th = sample_given_delta_posterior(hist, cur, prior, post, draws, _stream(seed, mi))["theta"]
        eta = ParameterSummary.from_draws(th[:, 0] / (th[:, 0] + th[:, 2])).scaled(100.0)
        lam = ParameterSummary.from_draws(th[:, 3] / (th[:, 1] + th[:, 3])).scaled(100.0)
        rows.append(
            {
                "method": method,
                "eta": eta.mean,
                "eta_ci": [eta.lower, eta.upper],
                "lambda": lam.mean,
                "lambda_ci": [lam.lower, lam.upper],
                "delta_mean": None if post.degenerate else post.mean,
                "delta_mode": None if post.degenerate else post.mode,
            }
        )
    tol = ref["diagnostic"]["tolerance"]
    comps = []
    for row in rows:
        pub = ref["diagnostic"]["rows"][row["method"]]
        m = row["method"]
        for key in ("eta", "lambda"):
            comps.append(Comparison(m, key, row[key], pub[key], tol[key]))
            for side, i in (("lower", 0), ("upper", 1)):
                comps.append(Comparison(m, f"{key}_ci_{side}", row[f"{key}_ci"][i], pub[f"{key}_ci"][i], tol[f"{key}_ci"]))
        if "delta_mean" in pub:
            comps.append(Comparison(m, "delta_mean", row["delta_mean"], pub["delta_mean"], tol["delta_mean"]))
            if m == "npp":
                comps.append(Comparison(m, "delta_mode", row["delta_mode"], pub["delta_mode"], tol["delta_mode"]))
    return CaseStudyResult("diagnostic", rows, comps, {"draws": draws, "seed": seed})


CASES = {"ph": run_case_ph, "vaccine": run_case_vaccine, "diagnostic": run_case_diagnostic}
