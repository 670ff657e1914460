"""Command-line interface.

Commands: fit, model-select, estimate, simulate, evaluate, sensitivity.
Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
Primary outputs are deterministic; run timestamps go to ``metadata.json`` only.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .copulas import CopulaFamily, CopulaSpec
from .data import CountTable, filter_sections, load_count_table, validate_against_population, write_count_table
from .design import TermKind, TermSpec
from .errors import DataError, FitError
from .estimators import (
    fit_propensity,
    gh_prevalence,
    gh_prevalence_by_domain,
    naive_prevalence,
    posterior_interval,
    ps_weighted_prevalence,
)
from .links import LinkFunction
from .model import FitOptions, FitResult, ModelSpec, fit, model_grid
from .simulate import evaluate_estimators, inspection_config, simple_config, simulate_population

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- model configuration ---------------------------------------------------------------

def parse_term(item) -> TermSpec:
    """``"intercept"`` or a one-key mapping such as ``{factor: industry}``;
    smooths accept ``n_basis``."""
    if isinstance(item, str):
        if item.strip().lower() == "intercept":
            return TermSpec(TermKind.INTERCEPT)
        raise UsageError(f"cannot read term {item!r}")
    if not isinstance(item, dict):
        raise UsageError(f"cannot read term {item!r}")
    item = dict(item)
    n_basis = int(item.pop("n_basis", 10))
    if len(item) != 1:
        raise UsageError(f"a term needs exactly one kind: {item!r}")
    (kind, cov), = item.items()
    aliases = {"re": "random", "s": "smooth", "random_effect": "random"}
    try:
        tk = TermKind(aliases.get(kind, kind))
    except ValueError:
        raise UsageError(f"unknown term kind {kind!r}") from None
    return TermSpec(tk, str(cov), n_basis)


def parse_links(text: str) -> list[tuple[LinkFunction, LinkFunction]]:
    """``probit:logit,logit:logit`` -> link pairs."""
    out = []
    for pair in text.split(","):
        parts = pair.strip().split(":")
        if len(parts) != 2:
            raise UsageError(f"link pair must look like selection:outcome, got {pair!r}")
        try:
            out.append((LinkFunction.parse(parts[0]), LinkFunction.parse(parts[1])))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return out


def parse_copulas(text: str) -> list[CopulaFamily]:
    try:
        return [CopulaFamily.parse(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def load_model_config(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"no such model config: {path}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from None
    if not isinstance(doc, dict) or "selection" not in doc or "outcome" not in doc:
        raise UsageError("model config needs 'selection' and 'outcome' sections")
    return doc


def model_spec_from_config(doc: dict, copula=None, links=None) -> ModelSpec:
    sel, out = doc["selection"], doc["outcome"]
    l1 = sel.get("link", "probit")
    l2 = out.get("link", "logit")
    if links is not None:
        l1, l2 = links
    try:
        return ModelSpec(tuple(parse_term(t) for t in sel.get("terms", [])),
                         tuple(parse_term(t) for t in out.get("terms", [])),
                         l1, l2, copula if copula is not None else doc.get("copula", "gumbel"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def fit_options_from_config(doc: dict, n_override=None) -> FitOptions:
    opts = dict(doc.get("fit") or {})
    known = {"lambdas", "lambda_bounds", "lambda_sweeps", "lambda_tol", "initial_log_lambda", "max_iter",
             "gtol", "ftol", "n_override"}
    unknown = set(opts) - known
    if unknown:
        raise UsageError(f"unknown fit option(s): {sorted(unknown)}")
    if "lambda_bounds" in opts:
        opts["lambda_bounds"] = tuple(opts["lambda_bounds"])
    if n_override is not None:
        opts["n_override"] = n_override
    return FitOptions(**opts)


# -- output helpers ----------------------------------------------------------------------

def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _write_metadata(out: Path, args, extra=None) -> None:
    meta = {"command": args.command, "argv": sys.argv[1:], "version": __version__,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    if extra:
        meta.update(extra)
    _write_json(meta, out / "metadata.json")


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is None:
        return int(np.random.SeedSequence().entropy % (2 ** 32))
    return int(args.seed)


def _load(args, path) -> CountTable:
    policy = getattr(args, "unselected_informal", "reject")
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        table = load_count_table(path, getattr(args, "districts", None), unselected_informal=policy)
    if getattr(args, "exclude_sections", None):
        table, _ = filter_sections(table, args.exclude_sections.split(","))
    return table


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.4f}"


def render_fit(res: FitResult) -> str:
    tab = res.coefficient_table()
    lines = [f"copula: {res.spec.copula.value}  theta = {res.theta:.4f}  Kendall tau = {res.kendall_tau:.4f}",
             f"links: selection {res.spec.selection_link.value}, outcome {res.spec.outcome_link.value}", ""]
    for eq in ("selection", "outcome"):
        lines.append(f"[{eq}]")
        for _, r in tab[tab["equation"] == eq].iterrows():
            if r["kind"] == "smooth":
                lines.append(f"  {r['term']:<28} edf {r['estimate']:.2f} ({int(r['std_error'])})")
            else:
                lines.append(f"  {r['column']:<28} {r['estimate']: .4f} ({r['std_error']:.4f})")
    lines += ["", f"logLik {res.loglik:.2f}   edf {res.edf:.2f}   AIC {res.aic:.2f}   BIC {res.bic:.2f}",
              f"converged: {res.converged} ({res.diagnostics.get('message', '')})"]
    if res.diagnostics.get("separation_suspected"):
        lines.append("warning: |eta| > 20 somewhere; possible separation")
    return "\n".join(lines) + "\n"


# -- commands ----------------------------------------------------------------------------

def cmd_fit(args) -> int:
    doc = load_model_config(args.model)
    spec = model_spec_from_config(doc, args.copula, parse_links(args.links)[0] if args.links else None)
    opts = fit_options_from_config(doc, args.n_override)
    table = _load(args, args.data)
    res = fit(spec, table, opts)
    out = _out_dir(args)
    _write_json(res.to_dict(), out / "fit.json")
    tab = res.coefficient_table()
    summary = pd.DataFrame([
        {"equation": "summary", "kind": k, "term": "", "column": "", "estimate": v,
         "std_error": np.nan, "z": np.nan, "p_value": np.nan}
        for k, v in (("logLik", res.loglik), ("edf", res.edf), ("AIC", res.aic), ("BIC", res.bic),
                     ("theta", res.theta), ("tau", res.kendall_tau))
    ])
    _write_csv(pd.concat([tab, summary], ignore_index=True), out / "coefficients.csv")
    (out / "coefficients.txt").write_text(render_fit(res), encoding="utf-8")
    _write_metadata(out, args)
    print(render_fit(res), end="")
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_model_select(args) -> int:
    doc = load_model_config(args.model)
    base = model_spec_from_config(doc)
    copulas = parse_copulas(args.copula) if args.copula else list(CopulaFamily)
    links = parse_links(args.links) if args.links else [(base.selection_link, base.outcome_link)]
    table = _load(args, args.data)
    grid = model_grid(table, copulas, links, base.selection_terms, base.outcome_terms,
                      fit_options_from_config(doc, args.n_override), n_jobs=args.jobs)
    grid = grid.rename(columns={"aic": "AIC", "bic": "BIC"})
    cols = ["selection_link", "outcome_link", "copula", "AIC", "BIC", "prevalence",
            "loglik", "edf", "theta", "tau", "converged", "error"]
    out = _out_dir(args)
    _write_csv(grid[cols], out / "grid.csv")
    text = grid[cols].to_string(index=False) + "\n"
    (out / "grid.txt").write_text(text, encoding="utf-8")
    _write_metadata(out, args)
    print(text, end="")
    failed = grid["error"] != ""
    if failed.all():
        return EXIT_NUMERIC
    if failed.any():
        print(f"warning: {int(failed.sum())} grid cell(s) failed", file=sys.stderr)
    return EXIT_OK


def _parse_quantiles(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise UsageError("--quantiles needs two comma-separated numbers") from None
    if not 0.0 <= lo < hi <= 1.0:
        raise UsageError("--quantiles must satisfy 0 <= lower < upper <= 1")
    return lo, hi


def cmd_estimate(args) -> int:
    try:
        res = FitResult.from_dict(json.loads(Path(args.fit).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise UsageError(f"no such fit file: {args.fit}") from None
    q = _parse_quantiles(args.quantiles)
    seed = _resolve_seed(args)
    data = _load(args, args.data)
    population = _load(args, args.population) if args.population else data
    N = args.n if args.n is not None else population.N
    rows = []
    gh = gh_prevalence(res, population)
    lo = hi = None
    if args.draws > 0:
        lo, hi = posterior_interval(res, population, args.draws, q, seed=np.random.SeedSequence([seed, 0]))
    rows.append({"estimator": "GH", "domain": "Total", "estimate": gh.value, "lower": lo, "upper": hi,
                 "n": gh.n_units})
    for col in args.domains.split(",") if args.domains else []:
        for k, est in enumerate(gh_prevalence_by_domain(res, population, col.strip())):
            lo = hi = None
            if args.draws > 0:
                sub = CountTable(population.frame[population.frame[col.strip()].astype(str)
                                                  == est.domain.split("=", 1)[1]], population.flags)
                lo, hi = posterior_interval(res, sub, args.draws, q, seed=np.random.SeedSequence([seed, 0]))
            rows.append({"estimator": "GH", "domain": est.domain, "estimate": est.value, "lower": lo,
                         "upper": hi, "n": est.n_units})
    nv = naive_prevalence(data, N, among_selected=args.among_selected)
    rows.append({"estimator": "Naive" + (" (among selected)" if args.among_selected else ""),
                 "domain": "Total", "estimate": nv.value, "lower": None, "upper": None, "n": nv.n_units})
    ps_terms = res.spec.selection_terms
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prop = fit_propensity(data, ps_terms)
    ps = ps_weighted_prevalence(data, prop, N)
    rows.append({"estimator": "PSWeighted", "domain": "Total", "estimate": ps.value, "lower": None,
                 "upper": None, "n": ps.n_units})
    df = pd.DataFrame(rows)
    out = _out_dir(args)
    _write_csv(df, out / "estimates.csv")
    lines = [f"quantiles {q[0]}, {q[1]}; draws {args.draws}; seed {seed}"]
    for r in rows:
        lines.append(f"{r['estimator']:<26} {r['domain']:<18} {100 * r['estimate']:8.3f}%"
                     + (f"  [{100 * r['lower']:.3f}, {100 * r['upper']:.3f}]" if r["lower"] is not None else ""))
    text = "\n".join(lines) + "\n"
    (out / "estimates.txt").write_text(text, encoding="utf-8")
    _write_metadata(out, args, {"seed": seed})
    print(text, end="")
    return EXIT_OK


def _scenario(args):
    copula = None
    if args.copula:
        fam, _, theta = args.copula.partition(":")
        try:
            family = CopulaFamily.parse(fam)
            copula = CopulaSpec(family, float(theta) if theta else family.independence_theta)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.scenario == "inspection":
        cfg = inspection_config(n_districts=args.districts or 380,
                                population_size=args.population_size or 871_327,
                                copula=copula, seed=args.seed_value)
    else:
        cfg = simple_config(copula, population_size=args.population_size or 50_000,
                            n_districts=args.districts or 20, seed=args.seed_value)
    return cfg


def cmd_simulate(args) -> int:
    args.seed_value = _resolve_seed(args)
    cfg = _scenario(args)
    table = simulate_population(cfg)
    out = _out_dir(args)
    write_count_table(table, out / "population.csv")
    truth = pd.DataFrame([{"true_prevalence": cfg.true_prevalence(table), "N": table.N,
                           "selected": int(table.frame.loc[table.frame["selected"] == 1, "n"].sum())}])
    _write_csv(truth, out / "truth.csv")
    _write_metadata(out, args, {"seed": args.seed_value})
    print(f"wrote {len(table)} rows, N = {table.N}, true prevalence {truth['true_prevalence'][0]:.6f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.replicates < 1:
        raise UsageError("--replicates must be at least 1")
    args.seed_value = _resolve_seed(args)
    cfg = _scenario(args)
    rep = evaluate_estimators(cfg, args.replicates, n_draws=args.draws, quantiles=_parse_quantiles(args.quantiles))
    out = _out_dir(args)
    _write_csv(rep.summary, out / "report.csv")
    _write_csv(rep.replicates, out / "replicates.csv")
    (out / "report.txt").write_text(rep.render() + "\n", encoding="utf-8")
    _write_metadata(out, args, {"seed": args.seed_value})
    print(rep.render())
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    doc = load_model_config(args.model)
    base = model_spec_from_config(doc)
    opts = fit_options_from_config(doc, args.n_override)
    variants = [{"name": "base", "selection": None, "outcome": None}]
    if args.variants:
        try:
            extra = yaml.safe_load(Path(args.variants).read_text(encoding="utf-8")) or []
        except FileNotFoundError:
            raise UsageError(f"no such variants file: {args.variants}") from None
        if not isinstance(extra, list):
            raise UsageError("variants file must hold a list")
        variants += extra
    table = _load(args, args.data)
    rows = []
    for k, v in enumerate(variants):
        sel = tuple(parse_term(t) for t in v["selection"]) if v.get("selection") else base.selection_terms
        out_t = tuple(parse_term(t) for t in v["outcome"]) if v.get("outcome") else base.outcome_terms
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            spec = ModelSpec(sel, out_t, base.selection_link, base.outcome_link, base.copula)
        name = v.get("name", f"variant {k}")
        try:
            res = fit(spec, table, opts)
            rows.append({"variant": name, "selection_terms": " + ".join(t.label for t in sel),
                         "outcome_terms": " + ".join(t.label for t in out_t),
                         "prevalence": gh_prevalence(res, table).value, "AIC": res.aic, "error": ""})
        except (FitError, DataError, np.linalg.LinAlgError) as exc:
            rows.append({"variant": name, "selection_terms": " + ".join(t.label for t in sel),
                         "outcome_terms": " + ".join(t.label for t in out_t),
                         "prevalence": np.nan, "AIC": np.nan, "error": str(exc)})
    df = pd.DataFrame(rows)
    out = _out_dir(args)
    _write_csv(df, out / "sensitivity.csv")
    text = df.to_string(index=False) + "\n"
    (out / "sensitivity.txt").write_text(text, encoding="utf-8")
    _write_metadata(out, args)
    print(text, end="")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ghselect", description="Copula sample-selection prevalence estimation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_opts(sp, required=True):
        sp.add_argument("--data", required=required, help="count table CSV")
        sp.add_argument("--districts", help="district covariate CSV joined on 'district'")
        sp.add_argument("--exclude-sections", help="comma-separated NACE sections to drop, e.g. B,D,O")
        sp.add_argument("--unselected-informal", choices=["reject", "blank"], default="reject",
                        help="outcome values on unselected rows: reject (default) or blank them")

    def model_opts(sp):
        sp.add_argument("--model", required=True, help="model config (YAML or JSON)")
        sp.add_argument("--n-override", type=int, help="N used in BIC instead of the table total")

    sp = sub.add_parser("fit", help="fit one model")
    data_opts(sp)
    model_opts(sp)
    sp.add_argument("--copula", help="override the config's copula family")
    sp.add_argument("--links", help="override links as selection:outcome")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("model-select", help="AIC-ranked grid over copulas and link pairs")
    data_opts(sp)
    model_opts(sp)
    sp.add_argument("--copula", help="comma-separated families (default: all five)")
    sp.add_argument("--links", help="comma-separated selection:outcome pairs")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_model_select)

    sp = sub.add_parser("estimate", help="GH, naive and PS-weighted prevalence")
    data_opts(sp)
    sp.add_argument("--fit", required=True, help="fit.json written by 'fit'")
    sp.add_argument("--population", help="population count table (default: --data)")
    sp.add_argument("--domains", help="comma-separated domain columns, e.g. size")
    sp.add_argument("--draws", type=int, default=1000)
    sp.add_argument("--quantiles", default="0.025,0.975")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int, help="population size N for naive/PS (default: table total)")
    sp.add_argument("--among-selected", action="store_true", help="naive estimate over selected units")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_estimate)

    for name, func, helptext in (("simulate", cmd_simulate, "simulate a population"),
                                 ("evaluate", cmd_evaluate, "Monte Carlo comparison of estimators")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--scenario", choices=["simple", "inspection"], default="simple")
        sp.add_argument("--copula", help="family[:theta], e.g. gumbel:1.93")
        sp.add_argument("--population-size", type=int)
        sp.add_argument("--districts", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)
        if name == "evaluate":
            sp.add_argument("--replicates", type=int, default=10)
            sp.add_argument("--draws", type=int, default=0)
            sp.add_argument("--quantiles", default="0.025,0.975")
        sp.set_defaults(func=func)

    sp = sub.add_parser("sensitivity", help="refit alternative term sets")
    data_opts(sp)
    model_opts(sp)
    sp.add_argument("--variants", help="YAML list of {name, selection, outcome} term sets")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sensitivity)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ghselect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"ghselect: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"ghselect: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
