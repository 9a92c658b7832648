"""Command-line front end.

Exit codes: 0 on success, 2 for configuration or schema problems, 3 when
the numbers themselves are out of bounds (for example a fixed delta below
the propriety bound of an improper initial prior).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__, numkit
from .conjugate import delta_posterior, sample_given_delta_posterior
from .errors import ConfigurationError, DomainError, EvaluationError
from .jpp import FORMS, LikelihoodForm, jpp_delta_posterior
from .models import (
    BetaPrior,
    Dataset,
    DeltaPrior,
    DirichletPrior,
    NormalLinearPrior,
    load_dataset,
)
from .report import DeltaSummary, ParameterSummary, PosteriorReport
from .scalefactor import RULES, closed_form_gap, design_knots, estimate_log_c, powered_sampler_for
from .studies import cases, rmse, sweeps

METHODS = ("npp", "jpp", "fixed", "pool", "discard")
DEFAULT_SEED = 0
DEFAULT_DRAWS = 100_000
BUNDLED_SCALEFACTOR_DATA = "scalefactor_binomial.json"


def _family_group(family: str) -> str:
    return "normal" if family.startswith("normal") else family


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def _json_arg(text: Optional[str], what: str) -> Optional[dict]:
    """A JSON object given inline or as a path to a file."""
    if text is None:
        return None
    path = Path(text)
    try:
        raw = path.read_text() if path.is_file() else text
        doc = json.loads(raw)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{what}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{what}: expected a JSON object")
    return doc


def _pair(text: str, what: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"{what}: expected two numbers 'a,b', got {text!r}") from exc
    if len(vals) != 2:
        raise ConfigurationError(f"{what}: expected two numbers 'a,b', got {text!r}")
    return vals


def build_prior(family: str, spec: Optional[dict], k: int):
    """Initial prior for ``family`` from a JSON spec; defaults are flat/reference priors."""
    spec = dict(spec or {})
    group = _family_group(family)
    try:
        if group == "binomial":
            return BetaPrior(float(spec.pop("alpha", 1.0)), float(spec.pop("beta", 1.0))), spec
        if group == "multinomial":
            alpha = spec.pop("alpha", 1.0)
            if isinstance(alpha, (int, float)):
                return DirichletPrior.symmetric(k, float(alpha)), spec
            return DirichletPrior(tuple(float(a) for a in alpha)), spec
        a, b = float(spec.pop("a", 1.0)), int(spec.pop("b", 0))
        return NormalLinearPrior(a=a, b=b, mu0=spec.pop("mu0", None), R=spec.pop("R", None)), spec
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"prior: {exc}") from exc


def prior_to_dict(prior) -> dict:
    if isinstance(prior, BetaPrior):
        return {"alpha": prior.alpha, "beta": prior.beta}
    if isinstance(prior, DirichletPrior):
        return {"alpha": list(prior.alpha)}
    out: Dict[str, Any] = {"a": prior.a, "b": prior.b}
    if prior.b == 1:
        out.update(mu0=np.asarray(prior.mu0).tolist(), R=np.asarray(prior.R).tolist())
    return out


def _dataset_k(ds: Dataset) -> int:
    return getattr(ds.current, "k", 1)


def _write(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    Path(out).write_text(text if text.endswith("\n") else text + "\n")


def _csv(rows: Sequence[dict]) -> str:
    keys: List[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def analyze(config: Dict[str, Any]) -> PosteriorReport:
    """Run one analysis from a configuration mapping.

    The mapping is echoed back into the report with every default filled
    in, so ``analyze(report.config)`` reproduces the report exactly.
    """
    cfg = dict(config)
    data_path = cfg.get("data")
    if not data_path:
        raise ConfigurationError("data: a dataset path is required")
    if not Path(data_path).is_file():
        raise ConfigurationError(f"data: no such file {data_path!r}")
    raw = Path(data_path).read_bytes()
    expected = cfg.get("data_sha256")
    if expected and hashlib.sha256(raw).hexdigest() != expected:
        raise ConfigurationError(f"data: {data_path} has changed since the report was written")
    ds = load_dataset(data_path)
    family = cfg.get("family") or ds.family
    if _family_group(family) != _family_group(ds.family):
        raise ConfigurationError(f"family: --family {family} does not match the dataset family {ds.family}")

    method = cfg.get("method", "npp")
    if method not in METHODS:
        raise ConfigurationError(f"method: expected one of {METHODS}, got {method!r}")
    prior, leftover = build_prior(ds.family, cfg.get("prior"), _dataset_k(ds))
    if leftover:
        raise ConfigurationError(f"prior: unknown fields {sorted(leftover)}")
    ab = cfg.get("delta_prior", [1.0, 1.0])
    try:
        dprior = DeltaPrior.beta(float(ab[0]), float(ab[1]))
    except DomainError as exc:
        raise ConfigurationError(f"delta_prior: {exc}") from exc

    group = _family_group(ds.family)
    form = cfg.get("form")
    fixed = cfg.get("fixed_delta")
    if method == "jpp":
        form = form or FORMS[group][0]
        try:
            lform = LikelihoodForm(group, form)
        except DomainError as exc:
            raise ConfigurationError(f"form: {exc}") from exc
    elif form is not None:
        raise ConfigurationError("form: only used with --method jpp")
    if method == "fixed":
        if fixed is None:
            raise ConfigurationError("fixed_delta: --method fixed needs --fixed-delta")
        fixed = float(fixed)
        if not 0.0 <= fixed <= 1.0:
            raise ConfigurationError(f"fixed_delta: must lie in [0, 1], got {fixed}")
    elif fixed is not None:
        raise ConfigurationError("fixed_delta: only used with --method fixed")
    if method in ("pool", "discard"):
        fixed = 1.0 if method == "pool" else 0.0

    draws = int(cfg.get("draws", DEFAULT_DRAWS))
    seed = int(cfg.get("seed", DEFAULT_SEED))
    if draws < 2:
        raise ConfigurationError("draws: need at least 2")
    if seed < 0:
        raise ConfigurationError("seed: must be non-negative")

    hist, cur = ds.pooled_historical, ds.current
    if method == "npp":
        post = delta_posterior(hist, cur, prior, dprior)
    elif method == "jpp":
        post = jpp_delta_posterior(hist, cur, prior, dprior, lform)
    else:
        post = delta_posterior(hist, cur, prior, DeltaPrior.fixed(fixed))

    s = sample_given_delta_posterior(hist, cur, prior, post, draws, numkit.RngStream(seed))
    params: Dict[str, ParameterSummary] = {}
    if group == "binomial":
        params["p"] = ParameterSummary.from_draws(s["p"])
    elif group == "multinomial":
        for j in range(s["theta"].shape[1]):
            params[f"theta{j + 1}"] = ParameterSummary.from_draws(s["theta"][:, j])
    else:
        beta = np.atleast_2d(s["beta"].T).T
        for j in range(beta.shape[1]):
            params[f"beta{j}"] = ParameterSummary.from_draws(beta[:, j])
        params["sigma2"] = ParameterSummary.from_draws(s["sigma2"])

    echo = {
        "command": "analyze",
        "data": str(Path(data_path).resolve()),
        "data_sha256": hashlib.sha256(raw).hexdigest(),
        "family": ds.family,
        "method": method,
        "form": form,
        "fixed_delta": fixed if method == "fixed" else None,
        "prior": prior_to_dict(prior),
        "delta_prior": [dprior.alpha_delta, dprior.beta_delta],
        "draws": draws,
        "seed": seed,
    }
    notes = []
    if len(ds.historical) > 1:
        notes.append(f"{len(ds.historical)} historical samples pooled into one")
    return PosteriorReport(
        method=method if method != "jpp" else f"jpp:{form}",
        parameters=params,
        delta=DeltaSummary.from_posterior(post),
        config=echo,
        notes=notes,
    )


def _cmd_analyze(args) -> int:
    if args.from_report:
        doc = _json_arg(args.from_report, "from_report")
        cfg = doc.get("config", doc)
    else:
        cfg = {
            "data": args.data,
            "family": args.family,
            "method": args.method,
            "form": args.form,
            "fixed_delta": args.fixed_delta,
            "prior": _json_arg(args.prior, "prior"),
            "delta_prior": _pair(args.delta_prior, "delta_prior"),
            "draws": args.draws if args.draws is not None else DEFAULT_DRAWS,
            "seed": args.seed if args.seed is not None else DEFAULT_SEED,
        }
    rep = analyze(cfg)
    _write(rep.to_json() if args.format == "json" else _csv(rep.csv_rows()), args.out)
    return 0


# ---------------------------------------------------------------------------
# other commands
# ---------------------------------------------------------------------------


def _cmd_case(args) -> int:
    kwargs: Dict[str, Any] = {"draws": args.draws, "seed": args.seed}
    if args.study == "vaccine":
        kwargs["margin"] = args.margin if args.margin is not None else 0.05
    elif args.margin is not None:
        raise ConfigurationError("margin: only used by the vaccine study")
    res = cases.CASES[args.study](**kwargs)
    _write(res.to_json() if args.format == "json" else res.to_csv(), args.out)
    failed = res.failures()
    print(
        f"{args.study}: {len(res.comparisons) - len(failed)}/{len(res.comparisons)} cells within tolerance",
        file=sys.stderr,
    )
    for c in failed:
        print(f"  off: {c.row}/{c.column} computed {c.computed:.4g} vs {c.published:.4g} (tol {c.tolerance})",
              file=sys.stderr)
    return 0


def _cmd_scale_factor(args) -> int:
    if args.data:
        ds = load_dataset(args.data)
        source = str(Path(args.data).resolve())
    else:
        ds = load_dataset(cases.load_resource(BUNDLED_SCALEFACTOR_DATA))
        source = f"bundled:{BUNDLED_SCALEFACTOR_DATA}"
    prior, leftover = build_prior(ds.family, _json_arg(args.prior, "prior"), _dataset_k(ds))
    if leftover:
        raise ConfigurationError(f"prior: unknown fields {sorted(leftover)}")
    if args.rule not in RULES:
        raise ConfigurationError(f"rule: expected one of {RULES}")
    try:
        grid = design_knots(args.knots, args.c)
    except DomainError as exc:
        raise ConfigurationError(f"knots: {exc}") from exc
    if args.m < 100:
        raise ConfigurationError("m: need at least 100 draws per knot")
    sampler = powered_sampler_for(ds.pooled_historical, prior)
    interp = estimate_log_c(sampler, grid, args.m, args.seed, rule=args.rule)
    doc = interp.to_dict()
    doc["closed_form_check"] = closed_form_gap(interp, sampler).to_dict()
    doc["config"] = {
        "command": "scale-factor", "data": source, "prior": prior_to_dict(prior), "S": args.knots,
        "c": args.c, "m": args.m, "rule": args.rule, "seed": args.seed, "version": __version__,
    }
    _write(json.dumps(doc, indent=2), args.out)
    print(f"max |log C gap| vs closed form: {doc['closed_form_check']['max_gap']:.4g}", file=sys.stderr)
    return 0


def _cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else cases.reference_values()["seeds"]["rmse"]
    rows = rmse.run_preset(args.preset, m=args.m, seed=seed)
    _write(rmse.rows_to_csv(rows) if args.format == "csv" else json.dumps(rows, indent=2), args.out)
    return 0


def _cmd_sweep(args) -> int:
    rows = sweeps.run_preset(args.preset)
    _write(sweeps.rows_to_csv(rows) if args.format == "csv" else json.dumps(rows, indent=2), args.out)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse's exit code 2, but with our prefix
        self.print_usage(sys.stderr)
        self.exit(2, f"npprior: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="npprior", description="Normalized power prior analyses for borrowing historical data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt_default="json"):
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default=fmt_default)

    a = sub.add_parser("analyze", help="posterior analysis of one dataset")
    a.add_argument("--data", help="dataset JSON")
    a.add_argument("--family", choices=("binomial", "multinomial", "normal", "normal_summary", "normal_linear"))
    a.add_argument("--method", choices=METHODS, default="npp")
    a.add_argument("--form", help="likelihood form for --method jpp")
    a.add_argument("--delta-prior", default="1,1", help="Beta prior on delta as 'a,b' (default 1,1)")
    a.add_argument("--fixed-delta", type=float, help="delta for --method fixed")
    a.add_argument("--prior", help="initial prior as JSON text or a JSON file")
    a.add_argument("--draws", type=int, help=f"posterior draws (default {DEFAULT_DRAWS})")
    a.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
    a.add_argument("--from-report", help="rerun the configuration echoed in a report")
    common(a)
    a.set_defaults(func=_cmd_analyze)

    c = sub.add_parser("case", help="reproduce one of the bundled applications")
    c.add_argument("study", choices=sorted(cases.CASES))
    c.add_argument("--margin", type=float, help="noninferiority margin (vaccine; default 0.05)")
    c.add_argument("--draws", type=int)
    c.add_argument("--seed", type=int)
    common(c)
    c.set_defaults(func=_cmd_case)

    s = sub.add_parser("scale-factor", help="path-sampling estimate of log C(delta)")
    s.add_argument("--data", help="dataset JSON (default: bundled binomial example)")
    s.add_argument("--prior", help="initial prior as JSON text or a JSON file")
    s.add_argument("--knots", "-S", type=int, default=64)
    s.add_argument("--c", type=float, default=2.0, help="knot exponent")
    s.add_argument("--m", type=int, default=5000, help="draws per knot")
    s.add_argument("--rule", default="trapezoid")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_scale_factor)

    m = sub.add_parser("simulate", help="rMSE simulation studies")
    m.add_argument("study", choices=("rmse",))
    m.add_argument("--preset", required=True, choices=sorted(rmse.presets(100)))
    m.add_argument("--m", type=int, default=5000, help="replicates per cell")
    m.add_argument("--seed", type=int)
    common(m, "csv")
    m.set_defaults(func=_cmd_simulate)

    w = sub.add_parser("sweep", help="posterior behaviour sweeps")
    w.add_argument("--preset", required=True, choices=sorted(sweeps.PRESETS))
    common(w, "csv")
    w.set_defaults(func=_cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"npprior: configuration error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, EvaluationError) as exc:
        print(f"npprior: domain error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"npprior: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
