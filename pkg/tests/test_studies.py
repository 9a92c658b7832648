import csv
import io
import json
import math

import numpy as np
import pytest

from npprior.conjugate import delta_posterior
from npprior.errors import ConfigurationError
from npprior.jpp import LikelihoodForm, jpp_delta_posterior
from npprior.models import BetaPrior, BinomialData, DeltaPrior, NormalLinearPrior, NormalSummary
from npprior.numkit import RngStream
from npprior.studies import cases, rmse, sweeps

UNIFORM = DeltaPrior.uniform()


# ---------------------------------------------------------------------------
# case studies
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def case_results():
    return {name: run() for name, run in cases.CASES.items()}


class TestCaseStudies:
    @pytest.mark.parametrize("name", sorted(cases.CASES))
    def test_published_values_within_tolerance(self, case_results, name):
        res = case_results[name]
        assert res.comparisons
        assert res.all_passed, [c.to_dict() for c in res.failures()]

    def test_ph_covers_every_site_and_method(self, case_results):
        rows = case_results["ph"].rows
        assert {r["site"] for r in rows} == {"A", "B", "C", "D"}
        assert len(case_results["ph"].comparisons) == 40

    def test_vaccine_verdict_follows_margin(self, case_results):
        for row in case_results["vaccine"].rows:
            assert row["noninferior"] == (row["ci_lower"] > -100 * row["margin"])
        tight = cases.run_case_vaccine(margin=0.03)
        verdicts = {r["method"]: r["verdict"] for r in tight.rows}
        assert verdicts["jeffreys"] == "noninferior" and verdicts["npp"] == "questionable"
        with pytest.raises(ValueError):
            cases.run_case_vaccine(margin=0.0)

    def test_vaccine_sensitivity_rows(self, case_results):
        sens = case_results["vaccine"].extra["sensitivity"]
        assert [r["method"] for r in sens] == list(cases.VACCINE_METHODS)
        assert all(r["prior"] == [0.5, 0.5] for r in sens)

    def test_diagnostic_ordering(self, case_results):
        rows = {r["method"]: r for r in case_results["diagnostic"].rows}
        # borrowing more pulls specificity toward the historical value
        assert rows["fixed0"]["delta_mean"] is None
        assert rows["jpp"]["delta_mean"] < rows["npp"]["delta_mean"]
        for r in rows.values():
            assert r["eta_ci"][0] <= r["eta"] <= r["eta_ci"][1]

    def test_reproducible_and_seed_sensitive(self):
        a = cases.run_case_vaccine(draws=5000, seed=1)
        b = cases.run_case_vaccine(draws=5000, seed=1)
        c = cases.run_case_vaccine(draws=5000, seed=2)
        assert a.rows == b.rows
        assert a.rows[0]["p_c"] != c.rows[0]["p_c"]

    def test_serialisation(self, case_results):
        res = case_results["diagnostic"]
        doc = json.loads(res.to_json())
        assert doc["all_passed"] is True and len(doc["rows"]) == 4
        table = list(csv.DictReader(io.StringIO(res.to_csv())))
        assert [r["method"] for r in table] == list(cases.DIAGNOSTIC_METHODS)
        assert ";" in table[0]["eta_ci"]

    def test_comparison_tolerance_edge(self):
        assert cases.Comparison("r", "c", 1.05, 1.0, 0.05).passed
        assert not cases.Comparison("r", "c", 1.0501, 1.0, 0.05).passed


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_rows():
    return {name: sweeps.run_preset(name) for name in sweeps.PRESETS}


def _by_point(rows):
    out = {}
    for r in rows:
        out.setdefault((r["panel"], r["axis_value"]), {})[r["method"]] = r
    return out


class TestSweeps:
    @pytest.mark.parametrize("name", ["fig1", "fig2"])
    def test_adaptive_estimates_are_bracketed(self, sweep_rows, name):
        for point in _by_point(sweep_rows[name]).values():
            lo, hi = sorted((point["pool"]["param_mean"], point["discard"]["param_mean"]))
            for m in ("npp", "jpp1", "jpp2"):
                assert lo - 1e-12 <= point[m]["param_mean"] <= hi + 1e-12
                assert 0.0 <= point[m]["delta_mean"] <= 1.0

    def test_fixed_methods(self, sweep_rows):
        for r in sweep_rows["fig1"]:
            if r["method"] in ("pool", "discard"):
                assert r["delta_mean"] == (1.0 if r["method"] == "pool" else 0.0)

    def test_borrowing_peaks_near_agreement(self, sweep_rows):
        right = [r for r in sweep_rows["fig1"] if r["panel"] == "right" and r["method"] == "npp"]
        best = max(right, key=lambda r: r["delta_mean"])
        assert abs(best["axis_value"]) <= 0.05
        assert right[0]["delta_mean"] < 0.2 and right[-1]["delta_mean"] < 0.2

    def test_npp_row_matches_library(self, sweep_rows):
        row = next(r for r in sweep_rows["fig1"] if r["panel"] == "left" and r["axis_value"] == 2.0 and r["method"] == "npp")
        hist, cur = BinomialData(40, 20), BinomialData(20, 13)
        post = delta_posterior(hist, cur, BetaPrior(1, 1), UNIFORM)
        assert row["delta_mean"] == post.mean and row["n0"] == 40

    def test_jpp2_row_matches_library(self, sweep_rows):
        row = next(r for r in sweep_rows["fig2"] if r["panel"] == "middle" and r["axis_value"] == 0.0 and r["method"] == "jpp2")
        hist = NormalSummary(40, 0.5, math.sqrt(0.8))
        cur = NormalSummary(20, 0.5, 1.0)
        post = jpp_delta_posterior(hist, cur, NormalLinearPrior(), UNIFORM, LikelihoodForm.of("normal_sufficient_density"))
        assert row["delta_mean"] == pytest.approx(post.mean, rel=1e-12)

    def test_draws_and_seed_are_ignored(self):
        spec = sweeps.PRESETS["fig1"][0]
        assert sweeps.run_sweep(spec, draws=10, seed=1) == sweeps.run_sweep(spec)

    @pytest.mark.parametrize(
        "kw",
        [dict(family="poisson"), dict(axis="width"), dict(axis="var_ratio"), dict(values=(1.0,)),
         dict(values=(1.0, math.nan)), dict(methods=("npp", "magic"))],
    )
    def test_invalid_specs(self, kw):
        base = dict(family="binomial", current={"n": 20, "p_hat": 0.5}, historical={"n0": 20, "p_hat0": 0.5},
                    axis="n0_over_n", values=(1.0, 2.0))
        with pytest.raises(ConfigurationError):
            sweeps.SweepSpec(**{**base, **kw})

    def test_out_of_range_axis_value(self):
        spec = sweeps.SweepSpec("binomial", {"n": 20, "p_hat": 0.5}, {"n0": 20, "p_hat0": 0.5}, "stat_gap", (0.0, 0.7))
        with pytest.raises(ConfigurationError):
            sweeps.run_sweep(spec)

    def test_csv(self, sweep_rows):
        text = sweeps.rows_to_csv(sweep_rows["fig2"])
        header = text.splitlines()[0].split(",")
        assert tuple(header) == sweeps.CSV_COLUMNS
        with pytest.raises(ConfigurationError):
            sweeps.run_preset("fig9")


# ---------------------------------------------------------------------------
# rMSE simulations
# ---------------------------------------------------------------------------


def _binomial_spec(**kw):
    base = {"family": "binomial", "n": (30,), "n0": (30,), "m": 400, "p": (0.5,), "p0": (0.5, 0.9)}
    return rmse.RmseSpec(**{**base, **kw})


class TestReplicateStreams:
    def test_rows_come_from_their_own_stream(self):
        u = rmse.replicate_uniforms(7, 5)
        np.testing.assert_array_equal(u[3], RngStream(7, 3).generator.random(4))
        np.testing.assert_array_equal(rmse.replicate_uniforms(7, 3), u[:3])

    def test_worker_count_does_not_matter(self):
        spec = _binomial_spec()
        assert rmse.run_rmse(spec, seed=3, workers=1) == rmse.run_rmse(spec, seed=3, workers=3)


class TestEstimators:
    def test_binomial_matches_library(self):
        y0, y = np.array([12.0, 25.0]), np.array([18.0, 4.0])
        est = rmse._binomial_estimates(y0, 30, y, 30, rmse.RMSE_METHODS)
        for i in range(2):
            hist, cur = BinomialData(30, int(y0[i])), BinomialData(30, int(y[i]))
            post = delta_posterior(hist, cur, BetaPrior(1, 1), UNIFORM)
            g = (post.grid * y0[i] + y[i] + 1) / (post.grid * 30 + 32)
            pm = np.sum(post.weights * np.exp(post.log_density) * g)
            assert est["npp"][1][i] == pytest.approx(post.mean, abs=1e-8)
            assert est["npp"][0][i] == pytest.approx(pm, abs=1e-8)
            jp = jpp_delta_posterior(hist, cur, BetaPrior(1, 1), UNIFORM, LikelihoodForm.of("binomial_density"))
            assert est["jpp2"][1][i] == pytest.approx(jp.mean, abs=1e-8)
        np.testing.assert_allclose(est["pool"][0], (y0 + y + 1) / 62)
        np.testing.assert_allclose(est["discard"][0], (y + 1) / 32)

    def test_normal_matches_library(self):
        n0, n = 30, 30
        xbar0, ss0, xbar, ss = np.array([0.4]), np.array([25.0]), np.array([0.1]), np.array([31.0])
        est = rmse._normal_estimates(n0, xbar0, ss0, n, xbar, ss, rmse.RMSE_METHODS)
        hist = NormalSummary(n0, 0.4, math.sqrt(25.0 / 29))
        cur = NormalSummary(n, 0.1, math.sqrt(31.0 / 29))
        post = delta_posterior(hist, cur, NormalLinearPrior(), UNIFORM)
        assert est["npp"][1][0] == pytest.approx(post.mean, abs=1e-7)
        for method, form in (("jpp1", "normal_raw_product"), ("jpp2", "normal_sufficient_density")):
            jp = jpp_delta_posterior(hist, cur, NormalLinearPrior(), UNIFORM, LikelihoodForm.of(form))
            assert est[method][1][0] == pytest.approx(jp.mean, abs=1e-7)


class TestRmseBehaviour:
    def test_fixed_methods_report_fixed_delta(self):
        rows = rmse.run_rmse(_binomial_spec(), seed=1)
        for r in rows:
            if r["method"] == "pool":
                assert r["delta_mean_avg"] == 1.0
            if r["method"] == "discard":
                assert r["delta_mean_avg"] == 0.0

    def test_discard_matches_exact_rmse(self):
        from scipy import stats

        rows = rmse.run_rmse(_binomial_spec(m=4000, methods=("discard",)), seed=5)
        y = np.arange(31)
        exact = math.sqrt(np.sum(stats.binom.pmf(y, 30, 0.5) * ((y + 1) / 32 - 0.5) ** 2))
        # the Monte Carlo error of an rMSE at m = 4000 is about 1.5%
        assert rows[0]["rmse"] == pytest.approx(exact, rel=0.05)

    def test_conflict_lowers_borrowing(self):
        rows = rmse.run_rmse(_binomial_spec(methods=("npp",)), seed=2)
        agree, clash = rows[0]["delta_mean_avg"], rows[1]["delta_mean_avg"]
        assert agree > clash

    def test_normal_standardisation_invariance(self):
        a = rmse.run_rmse(rmse.RmseSpec("normal", (30,), (30,), 500, mu=0.0, sigma=1.0, mu0=(0.2,), sigma0=(1.0,)), seed=9)
        b = rmse.run_rmse(rmse.RmseSpec("normal", (30,), (30,), 500, mu=5.0, sigma=2.0, mu0=(5.4,), sigma0=(2.0,)), seed=9)
        ra = {r["method"]: r for r in a}
        rb = {r["method"]: r for r in b}
        for m in ("npp", "pool", "discard"):
            assert rb[m]["rmse"] / 2.0 == pytest.approx(ra[m]["rmse"], rel=1e-9)
        assert rb["npp"]["delta_mean_avg"] == pytest.approx(ra["npp"]["delta_mean_avg"], rel=1e-9)
        # the sufficient-statistic constant depends on the scale, so jpp2 is not invariant
        assert rb["jpp2"]["delta_mean_avg"] != pytest.approx(ra["jpp2"]["delta_mean_avg"], rel=1e-3)

    @pytest.mark.parametrize(
        "kw", [dict(family="gamma"), dict(m=50), dict(p=(1.0,)), dict(methods=("npp", "x")), dict(n=(0,))]
    )
    def test_invalid_spec(self, kw):
        with pytest.raises(ConfigurationError):
            _binomial_spec(**kw)

    def test_normal_spec_checks(self):
        with pytest.raises(ConfigurationError):
            rmse.RmseSpec("normal", (30,), (30,), 200, mu0=(0.0,), sigma0=(0.0,))
        with pytest.raises(ConfigurationError):
            rmse.RmseSpec("normal", (30,), (1,), 200, mu0=(0.0,), sigma0=(1.0,))

    def test_presets_and_csv(self):
        table = rmse.presets(200)
        assert set(table) == {"fig3", "fig4", "fig5"}
        assert len(table["fig3"][0].cells()) == 1 * 3 * 2 * 19
        rows = rmse.run_rmse(_binomial_spec(), seed=0)
        assert tuple(rmse.rows_to_csv(rows).splitlines()[0].split(",")) == rmse.CSV_COLUMNS
        with pytest.raises(ConfigurationError):
            rmse.run_preset("fig7", m=200)
