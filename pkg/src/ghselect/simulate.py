"""Synthetic populations with copula-dependent (non-ignorable) selection, and
Monte Carlo evaluation of the prevalence estimators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import optimize, stats

from .copulas import CopulaFamily, CopulaSpec, copula_partial_u
from .data import SIZE_LEVELS, CountTable, make_count_table
from .design import Factor, Intercept, Linear, Predictor, RandomEffect, Smooth, TermKind, build_design
from .estimators import (
    fit_propensity,
    gh_prevalence,
    naive_prevalence,
    posterior_interval,
    ps_weighted_prevalence,
)
from .links import LinkFunction, response_prob
from .model import FitOptions, ModelSpec, fit

# Population shares (per cent) of size classes and NACE sections used by the
# inspection scenario.
SIZE_SHARES = (80.45, 15.56, 3.40, 0.59)
INDUSTRY_SHARES = {
    "A": 1.31, "C": 11.76, "E": 0.63, "F": 11.74, "G": 27.88, "H": 6.78, "I": 3.72, "J": 2.24,
    "K": 1.98, "L": 3.33, "M": 8.88, "N": 3.00, "P": 4.53, "Q": 4.62, "R": 1.72, "S": 5.88,
}


# -- copula sampling ---------------------------------------------------------------------

def sample_copula_pair(spec: CopulaSpec, rng: np.random.Generator, size: int = 1, tol: float = 1e-10):
    """Draw ``size`` pairs (U, V) with copula ``spec`` by conditional inversion.

    V solves ``dC/du(U, v) = W`` for independent uniform W; the conditional
    distribution function is monotone in v so bisection always brackets the root.
    """
    u = rng.random(size)
    w = rng.random(size)
    lo = np.zeros(size)
    hi = np.ones(size)
    n_iter = int(np.ceil(np.log2(1.0 / tol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = copula_partial_u(spec, u, mid) < w
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return u, 0.5 * (lo + hi)


def sample_normal_direct(rho: float, rng: np.random.Generator, size: int = 1):
    """Gaussian copula pairs through correlated normals (cross-check for the inversion sampler)."""
    z1 = rng.standard_normal(size)
    z2 = rho * z1 + np.sqrt(max(0.0, 1.0 - rho * rho)) * rng.standard_normal(size)
    return stats.norm.cdf(z1), stats.norm.cdf(z2)


# -- scenario ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CovariateScenario:
    """Strata definition: districts x industries x sizes.

    District covariates are Beta draws made once from ``covariate_seed``, so
    every replicate of a scenario shares the same strata.
    """

    n_districts: int = 40
    industries: tuple[str, ...] = ("C", "F", "G", "I")
    industry_shares: tuple[float, ...] | None = None
    sizes: tuple[str, ...] = tuple(SIZE_LEVELS)
    size_shares: tuple[float, ...] | None = None
    complaints_beta: tuple[float, float] = (2.0, 60.0)
    unemployment_beta: tuple[float, float] = (4.0, 40.0)
    covariate_seed: int = 2016

    def grid(self) -> pd.DataFrame:
        if self.n_districts < 1:
            raise ValueError("need at least one district")
        rng = np.random.default_rng(self.covariate_seed)
        complaints = rng.beta(*self.complaints_beta, size=self.n_districts)
        unemployment = rng.beta(*self.unemployment_beta, size=self.n_districts)
        ind_w = _normalise(self.industry_shares, len(self.industries))
        size_w = _normalise(self.size_shares, len(self.sizes))
        d, i, s = np.meshgrid(np.arange(self.n_districts), np.arange(len(self.industries)),
                              np.arange(len(self.sizes)), indexing="ij")
        d, i, s = d.ravel(), i.ravel(), s.ravel()
        return pd.DataFrame({
            "district": [str(k + 1) for k in d],
            "industry": np.asarray(self.industries)[i],
            "size": pd.Categorical(np.asarray(self.sizes)[s], categories=SIZE_LEVELS, ordered=True),
            "complaints": complaints[d],
            "unemployment": unemployment[d],
            "weight": ind_w[i] * size_w[s] / self.n_districts,
        })


def _normalise(shares, k: int) -> np.ndarray:
    w = np.ones(k) if shares is None else np.asarray(shares, dtype=float)
    if w.shape != (k,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("shares must be non-negative, one per level")
    return w / w.sum()


@dataclass
class DgpConfig:
    copula: CopulaSpec
    selection_terms: tuple
    outcome_terms: tuple
    true_beta1: np.ndarray
    true_beta2: np.ndarray
    selection_link: LinkFunction = LinkFunction.PROBIT
    outcome_link: LinkFunction = LinkFunction.LOGIT
    covariates: CovariateScenario = field(default_factory=CovariateScenario)
    population_size: int = 50_000
    seed: int = 0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.selection_terms = tuple(self.selection_terms)
        self.outcome_terms = tuple(self.outcome_terms)
        self.selection_link = LinkFunction.parse(self.selection_link)
        self.outcome_link = LinkFunction.parse(self.outcome_link)
        self.true_beta1 = np.asarray(self.true_beta1, dtype=float)
        self.true_beta2 = np.asarray(self.true_beta2, dtype=float)
        if int(self.population_size) < 1:
            raise ValueError("population_size must be at least 1")
        sel, out = self.predictors()
        if self.true_beta1.shape != (sel.n_coef,):
            raise ValueError(f"true_beta1 needs {sel.n_coef} entries ({sel.column_names})")
        if self.true_beta2.shape != (out.n_coef,):
            raise ValueError(f"true_beta2 needs {out.n_coef} entries ({out.column_names})")

    def grid(self) -> pd.DataFrame:
        if "grid" not in self._cache:
            self._cache["grid"] = self.covariates.grid()
        return self._cache["grid"]

    def predictors(self) -> tuple[Predictor, Predictor]:
        if "pred" not in self._cache:
            g = self.grid()
            self._cache["pred"] = (build_design(self.selection_terms, g), build_design(self.outcome_terms, g))
        return self._cache["pred"]

    def stratum_probabilities(self) -> tuple[np.ndarray, np.ndarray]:
        """Selection and outcome probabilities on the strata grid."""
        sel, out = self.predictors()
        return (response_prob(self.selection_link, sel.matrix @ self.true_beta1),
                response_prob(self.outcome_link, out.matrix @ self.true_beta2))

    def expected_rates(self) -> tuple[float, float]:
        """Population-weighted selection rate and prevalence."""
        w = self.grid()["weight"].to_numpy()
        p1, p2 = self.stratum_probabilities()
        return float(w @ p1), float(w @ p2)

    def model_spec(self) -> ModelSpec:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return ModelSpec(self.selection_terms, self.outcome_terms, self.selection_link,
                             self.outcome_link, self.copula.family)

    def true_prevalence(self, table: CountTable) -> float:
        """Expected prevalence over the units of a simulated table."""
        _, out = self.predictors()
        p2 = response_prob(self.outcome_link, out.encode(table.frame) @ self.true_beta2)
        n = table.frame["n"].to_numpy(dtype=float)
        return float(n @ p2 / n.sum())


def coefficient_vector(predictor: Predictor, values: dict, default: float = 0.0) -> np.ndarray:
    """Coefficient vector from a {column name: value} mapping."""
    names = predictor.column_names
    unknown = set(values) - set(names)
    if unknown:
        raise KeyError(f"unknown coefficient names: {sorted(unknown)}")
    return np.array([values.get(n, default) for n in names], dtype=float)


def smooth_coefficients(predictor: Predictor, data: pd.DataFrame, covariate: str, f) -> dict:
    """Least-squares coefficients reproducing ``f`` (centred over ``data``) with a smooth term."""
    idx = next(i for i, t in enumerate(predictor.terms) if t.kind is TermKind.SMOOTH and t.covariate == covariate)
    st = predictor._states[idx]
    x = np.asarray(data[covariate], dtype=float)
    B = st.encode(data)
    y = f(x)
    coef, *_ = np.linalg.lstsq(B, y - y.mean(), rcond=None)
    return dict(zip(st.column_names(), coef))


def simulate_population(config: DgpConfig, seed=None) -> CountTable:
    """Draw a population and aggregate it to a count table.

    Each unit gets copula-coupled uniforms (U, V); it is selected when
    ``U <= pi1`` and informal when ``V <= pi2``, so the pair has joint success
    probability ``C(pi1, pi2)`` as in the likelihood.  The outcome is recorded
    only for selected units.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    grid = config.grid()
    w = grid["weight"].to_numpy()
    counts = rng.multinomial(int(config.population_size), w / w.sum())
    cell = np.repeat(np.arange(len(grid)), counts)
    p1, p2 = config.stratum_probabilities()
    u, v = sample_copula_pair(config.copula, rng, len(cell))
    y1 = u <= p1[cell]
    y2 = v <= p2[cell]
    status = np.where(y1, np.where(y2, 2, 1), 0)
    key = cell * 3 + status
    tally = np.bincount(key, minlength=3 * len(grid))
    nz = np.flatnonzero(tally)
    rows = grid.iloc[nz // 3].drop(columns="weight").reset_index(drop=True)
    st = nz % 3
    rows["selected"] = (st > 0).astype(int)
    rows["informal"] = pd.array(np.where(st == 0, pd.NA, (st == 2).astype(int)), dtype="Int64")
    rows["n"] = tally[nz]
    return make_count_table(rows)


# -- scenarios ---------------------------------------------------------------------------

def _solve_intercept(target: float, weights, eta_rest, link) -> float:
    def gap(b0):
        return weights @ response_prob(link, eta_rest + b0) - target
    return float(optimize.brentq(gap, -20.0, 20.0, xtol=1e-12))


def inspection_config(n_districts: int = 380, population_size: int = 871_327, *,
                      copula: CopulaSpec | None = None, selection_rate: float = 0.03,
                      prevalence: float = 0.057, district_sd: float = 0.3, seed: int = 0,
                      covariate_seed: int = 2016) -> DgpConfig:
    """Scenario shaped like the inspection data: 16 NACE sections, four size
    classes, district effects in selection and a smooth unemployment effect in
    the outcome.  Slopes are fixed realistic values; intercepts are solved so the
    expected selection rate and prevalence hit the requested values."""
    copula = copula or CopulaSpec(CopulaFamily.GUMBEL, 1.93)
    scen = CovariateScenario(n_districts=n_districts, industries=tuple(INDUSTRY_SHARES),
                             industry_shares=tuple(INDUSTRY_SHARES.values()), size_shares=SIZE_SHARES,
                             covariate_seed=covariate_seed)
    grid = scen.grid()
    sel_terms = (Intercept(), Factor("industry"), Factor("size"), Linear("complaints"), RandomEffect("district"))
    out_terms = (Intercept(), Factor("industry"), Factor("size"), Smooth("unemployment"))
    sel = build_design(sel_terms, grid)
    out = build_design(out_terms, grid)

    sel_ind = dict(C=0.11, E=0.0, F=0.07, G=0.07, H=-0.22, I=0.29, J=-0.23, K=-0.43, L=-0.41, M=-0.36,
                   N=0.06, P=-0.55, Q=-0.44, R=-0.33, S=-0.15)
    out_ind = dict(C=0.06, E=0.01, F=0.14, G=0.15, H=0.33, I=0.44, J=0.28, K=0.26, L=0.21, M=0.15,
                   N=0.53, P=0.02, Q=0.39, R=0.0, S=0.07)
    sel_size = {"10-49": 0.30, "50-249": 0.16, "250+": 0.39}
    out_size = {"10-49": 0.33, "50-249": -0.04, "250+": 0.26}
    rng = np.random.default_rng(covariate_seed + 1)
    re = rng.normal(0.0, district_sd, n_districts)
    re -= re.mean()

    v1 = {f"industry{k}": b for k, b in sel_ind.items()}
    v1.update({f"size{k}": b for k, b in sel_size.items()})
    v1["complaints"] = 5.54
    v1.update({f"re(district){k + 1}": b for k, b in enumerate(re)})
    v2 = {f"industry{k}": b for k, b in out_ind.items()}
    v2.update({f"size{k}": b for k, b in out_size.items()})
    ubar = float(grid["unemployment"].mean())
    v2.update(smooth_coefficients(out, grid, "unemployment", lambda x: 6.0 * (x - ubar)))

    w = grid["weight"].to_numpy()
    links = (LinkFunction.PROBIT, LinkFunction.LOGIT)
    b1 = coefficient_vector(sel, v1)
    b2 = coefficient_vector(out, v2)
    b1[0] = _solve_intercept(selection_rate, w, sel.matrix @ b1, links[0])
    b2[0] = _solve_intercept(prevalence, w, out.matrix @ b2, links[1])
    return DgpConfig(copula, sel_terms, out_terms, b1, b2, links[0], links[1], scen, population_size, seed)


def simple_config(copula: CopulaSpec | None = None, population_size: int = 50_000, *,
                  n_districts: int = 20, selection_rate: float = 0.4, prevalence: float = 0.3,
                  selection_link="probit", outcome_link="logit", seed: int = 0) -> DgpConfig:
    """Small unpenalised scenario: industry and size in both equations, complaints
    as the selection-only instrument."""
    copula = copula or CopulaSpec(CopulaFamily.GUMBEL, 1.93)
    scen = CovariateScenario(n_districts=n_districts, complaints_beta=(2.0, 8.0))
    grid = scen.grid()
    sel_terms = (Intercept(), Factor("industry"), Factor("size"), Linear("complaints"))
    out_terms = (Intercept(), Factor("industry"), Factor("size"))
    sel = build_design(sel_terms, grid)
    out = build_design(out_terms, grid)
    l1, l2 = LinkFunction.parse(selection_link), LinkFunction.parse(outcome_link)
    b1 = coefficient_vector(sel, {"industryF": 0.3, "industryG": -0.2, "industryI": 0.5, "size10-49": 0.4,
                                  "size50-249": -0.3, "size250+": 0.6, "complaints": 3.0})
    b2 = coefficient_vector(out, {"industryF": 0.5, "industryG": -0.4, "industryI": 0.8, "size10-49": -0.5,
                                  "size50-249": 0.3, "size250+": 0.7})
    w = grid["weight"].to_numpy()
    b1[0] = _solve_intercept(selection_rate, w, sel.matrix @ b1, l1)
    b2[0] = _solve_intercept(prevalence, w, out.matrix @ b2, l2)
    return DgpConfig(copula, sel_terms, out_terms, b1, b2, l1, l2, scen, population_size, seed)


# -- Monte Carlo evaluation -------------------------------------------------------------

@dataclass
class SimulationReport:
    summary: pd.DataFrame      # one row per estimator
    replicates: pd.DataFrame   # one row per replicate
    n_replicates: int
    n_failed: int
    true_prevalence: float     # mean over successful replicates

    def render(self) -> str:
        lines = [f"replicates: {self.n_replicates} (failed: {self.n_failed})",
                 f"true prevalence (mean): {self.true_prevalence:.6f}",
                 self.summary.to_string(index=False, float_format=lambda x: f"{x:.6f}")]
        return "\n".join(lines)


def replicate_rng_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(index)])


def _one_replicate(config: DgpConfig, index: int, options, n_draws, quantiles, propensity_terms):
    ss = replicate_rng_seed(config.seed, index)
    pop_seed, draw_seed = ss.spawn(2)
    table = simulate_population(config, seed=np.random.default_rng(pop_seed))
    row = {"replicate": index, "truth": config.true_prevalence(table),
           "naive": naive_prevalence(table).value,
           "naive_selected": naive_prevalence(table, among_selected=True).value}
    try:
        ps = fit_propensity(table, propensity_terms)
        row["ps"] = ps_weighted_prevalence(table, ps).value
    except Exception as exc:  # counted, not fatal
        row["ps"] = np.nan
        row["error"] = f"propensity: {exc}"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = fit(config.model_spec(), table, options)
        row["gh"] = gh_prevalence(res, table).value
        row["converged"] = res.converged
        row["theta"] = res.theta
        if n_draws:
            lo, hi = posterior_interval(res, table, n_draws, quantiles, seed=np.random.default_rng(draw_seed))
            row["gh_lower"], row["gh_upper"] = lo, hi
        row["_beta1"], row["_beta2"] = res.params.beta1, res.params.beta2
    except Exception as exc:
        row.update(gh=np.nan, converged=False, error=f"{type(exc).__name__}: {exc}")
    return row


def evaluate_estimators(config: DgpConfig, replicates: int, *, options: FitOptions | None = None,
                        n_draws: int = 0, quantiles=(0.025, 0.975), propensity_terms=None,
                        keep_coefficients: bool = False, start: int = 0) -> SimulationReport:
    """Simulate, fit the correctly specified model and compare GH, naive and PS
    estimates against the expected prevalence of each replicate."""
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    pterms = tuple(propensity_terms) if propensity_terms is not None else config.selection_terms
    rows = [_one_replicate(config, i, options, n_draws, quantiles, pterms)
            for i in range(start, start + replicates)]
    reps = pd.DataFrame(rows)
    if "error" not in reps:
        reps["error"] = ""
    reps["error"] = reps["error"].fillna("")
    if not keep_coefficients:
        reps = reps.drop(columns=[c for c in ("_beta1", "_beta2") if c in reps])
    ok = reps["gh"].notna() & reps["ps"].notna()
    good = reps[ok]
    truth = good["truth"].to_numpy()
    summary = []
    for name in ("gh", "naive", "naive_selected", "ps"):
        err = good[name].to_numpy() - truth
        rec = {"estimator": name, "mean": float(good[name].mean()) if len(good) else np.nan,
               "bias": float(err.mean()) if len(err) else np.nan,
               "rmse": float(np.sqrt(np.mean(err ** 2))) if len(err) else np.nan, "coverage": np.nan}
        if name == "gh" and "gh_lower" in good:
            rec["coverage"] = float(np.mean((good["gh_lower"] <= truth) & (truth <= good["gh_upper"])))
        summary.append(rec)
    return SimulationReport(pd.DataFrame(summary), reps.reset_index(drop=True), int(replicates),
                            int((~ok).sum()), float(truth.mean()) if len(truth) else np.nan)


def with_population_size(config: DgpConfig, n: int) -> DgpConfig:
    return replace(config, population_size=n)
