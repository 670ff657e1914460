"""Prevalence estimators: generalised Heckman (model based), naive and
propensity-score weighted, plus posterior-simulation intervals."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import CountTable
from .design import Predictor, TermSpec, build_design, factor_levels
from .errors import DataError, FitError
from .glm import fit_binary_auto
from .links import LinkFunction, response_prob, response_prob_parts
from .optim import nearest_psd

PS_FLOOR = 1e-6


class Estimator(str, enum.Enum):
    GH = "GH"
    NAIVE = "Naive"
    PS = "PSWeighted"


@dataclass(frozen=True)
class PrevalenceEstimate:
    value: float
    lower: float | None = None
    upper: float | None = None
    domain: str | None = None
    estimator: Estimator = Estimator.GH
    n_units: int | None = None
    clamped: bool = False

    def __post_init__(self):
        for name in ("value", "lower", "upper"):
            x = getattr(self, name)
            if x is not None and not (0.0 <= x <= 1.0):
                raise ValueError(f"{name} = {x} is not a proportion")
        if self.lower is not None and self.upper is not None:
            if not (self.lower <= self.value <= self.upper):
                raise ValueError("interval must contain the point estimate")

    def as_row(self) -> dict:
        return {"estimator": Estimator(self.estimator).value, "domain": self.domain or "Total",
                "estimate": self.value, "lower": self.lower, "upper": self.upper, "n": self.n_units}


# -- generalised Heckman estimator ----------------------------------------------------

def _outcome_probabilities(fit, frame: pd.DataFrame, beta2=None) -> np.ndarray:
    Z2 = fit.outcome_predictor.encode(frame)
    b = fit.params.beta2 if beta2 is None else beta2
    return response_prob(fit.spec.outcome_link, Z2 @ np.asarray(b, dtype=float).T)


def gh_prevalence(fit, population: CountTable) -> PrevalenceEstimate:
    """Population mean of fitted outcome probabilities ``1 - F2(-eta2)``.

    Every population unit counts, selected or not.
    """
    n = population.frame["n"].to_numpy(dtype=float)
    N = n.sum()
    if N <= 0:
        raise DataError("population table is empty")
    p = _outcome_probabilities(fit, population.frame)
    value = float(np.clip(n @ p / N, 0.0, 1.0))
    return PrevalenceEstimate(value, estimator=Estimator.GH, n_units=int(N))


def _domain_levels(column: pd.Series) -> list[str]:
    if isinstance(column.dtype, pd.CategoricalDtype):
        return [str(c) for c in column.cat.categories if (column == c).any()]
    return factor_levels(column)


def gh_prevalence_by_domain(fit, population: CountTable, domain_column: str,
                            levels=None) -> list[PrevalenceEstimate]:
    frame = population.frame
    if domain_column not in frame.columns:
        raise DataError(f"unknown domain column {domain_column!r}")
    keys = frame[domain_column].astype(str)
    levels = _domain_levels(frame[domain_column]) if levels is None else [str(x) for x in levels]
    p = _outcome_probabilities(fit, frame)
    n = frame["n"].to_numpy(dtype=float)
    out = []
    for lev in levels:
        mask = (keys == lev).to_numpy()
        Nd = n[mask].sum()
        if Nd <= 0:
            raise DataError(f"domain {domain_column}={lev} has no units")
        value = float(np.clip(n[mask] @ p[mask] / Nd, 0.0, 1.0))
        out.append(PrevalenceEstimate(value, domain=f"{domain_column}={lev}", estimator=Estimator.GH,
                                      n_units=int(Nd)))
    return out


# -- naive and propensity-score estimators ----------------------------------------------

def _selected_informal(frame: pd.DataFrame) -> np.ndarray:
    return ((frame["selected"] == 1) & (frame["informal"].fillna(0) == 1)).to_numpy()


def naive_prevalence(data: CountTable, N: int | None = None, among_selected: bool = False) -> PrevalenceEstimate:
    """Count of selected informal units over ``N`` (default: the table total).

    With ``among_selected`` the denominator is the number of selected units.
    """
    frame = data.frame
    n = frame["n"].to_numpy(dtype=float)
    hits = float(n[_selected_informal(frame)].sum())
    if among_selected:
        denom = float(n[(frame["selected"] == 1).to_numpy()].sum())
    else:
        denom = float(data.N if N is None else N)
    if denom <= 0:
        raise ValueError("denominator must be positive")
    value = hits / denom
    clamped = value > 1.0
    if clamped:
        warnings.warn("naive prevalence above 1 clamped")
    return PrevalenceEstimate(min(value, 1.0), estimator=Estimator.NAIVE, n_units=int(denom), clamped=clamped)


@dataclass
class PropensityModel:
    terms: tuple[TermSpec, ...]
    predictor: Predictor
    coefficients: np.ndarray
    link: LinkFunction = LinkFunction.LOGIT
    lambdas: list[float] = field(default_factory=list)
    converged: bool = True

    def predict(self, frame: pd.DataFrame) -> np.ndarray:
        """Selection probabilities, clamped to [PS_FLOOR, 1]."""
        p, _, _ = response_prob_parts(self.link, self.predictor.encode(frame) @ self.coefficients)
        return np.clip(p, PS_FLOOR, 1.0)


def fit_propensity(data: CountTable, terms, lambdas=None) -> PropensityModel:
    """Logistic model for ``selected`` on all rows; penalised terms act as ridge/smooth effects."""
    terms = tuple(terms)
    covs = [t.covariate for t in terms if t.covariate is not None]
    covs = list(dict.fromkeys(covs))
    frame = data.frame
    sel = (frame["selected"] == 1).to_numpy()
    n = frame["n"].to_numpy(dtype=float)
    cells = pd.DataFrame({"s": np.where(sel, n, 0.0), "m": n})
    if covs:
        g = pd.concat([frame[covs].reset_index(drop=True), cells], axis=1)
        sums = g.groupby(covs, sort=True, observed=True)[["s", "m"]].sum()
        strata = sums.index.to_frame(index=False)
        for c in covs:
            if isinstance(frame[c].dtype, pd.CategoricalDtype):
                strata[c] = pd.Categorical(strata[c], categories=frame[c].dtype.categories,
                                           ordered=frame[c].dtype.ordered)
        sums = sums.reset_index(drop=True)
    else:
        strata = pd.DataFrame(index=[0])
        sums = cells.sum().to_frame().T
    pred = build_design(terms, strata)
    Z = pred.encode(strata)
    res = fit_binary_auto(pred, Z, sums["s"].to_numpy(), sums["m"].to_numpy(), LinkFunction.LOGIT,
                          lambdas=lambdas)
    return PropensityModel(terms, pred, res.coef, LinkFunction.LOGIT, list(res.lambdas), res.converged)


def ps_weighted_prevalence(data: CountTable, propensity: PropensityModel, N: int | None = None) -> PrevalenceEstimate:
    """Inverse-propensity weighted count of selected informal units over ``N``."""
    if not propensity.converged:
        raise FitError("propensity model did not converge")
    frame = data.frame
    mask = _selected_informal(frame)
    N = data.N if N is None else N
    if N <= 0:
        raise ValueError("N must be positive")
    if mask.any():
        pi = propensity.predict(frame[mask])
        total = float(np.sum(frame["n"].to_numpy(dtype=float)[mask] / pi))
    else:
        total = 0.0
    value = total / N
    clamped = value > 1.0
    if clamped:
        warnings.warn(f"propensity-weighted prevalence {value:.4f} exceeds 1; clamped")
    return PrevalenceEstimate(min(value, 1.0), estimator=Estimator.PS, n_units=int(N), clamped=clamped)


# -- posterior simulation ------------------------------------------------------------------

def _outcome_draws(fit, n_draws: int, seed, scale: float = 1.0):
    p1 = len(fit.params.beta1)
    p2 = len(fit.params.beta2)
    V = np.asarray(fit.covariance, dtype=float)[p1:p1 + p2, p1:p1 + p2] * scale
    V, projected = nearest_psd(V)
    if projected:
        warnings.warn("outcome covariance block was not PSD; projected")
    w, Q = np.linalg.eigh(V)
    L = Q * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, p2))
    return fit.params.beta2[None, :] + z @ L.T


def posterior_prevalence_draws(fit, population: CountTable, n_draws: int = 1000, seed=None,
                               scale: float = 1.0) -> np.ndarray:
    """GH prevalence under ``n_draws`` outcome-coefficient draws from N(beta2_hat, V22)."""
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    frame = population.frame
    covs = list(dict.fromkeys(t.covariate for t in fit.outcome_predictor.terms if t.covariate is not None))
    n = frame["n"].to_numpy(dtype=float)
    if covs:
        g = frame[covs].copy()
        g["n"] = n
        g = g.groupby(covs, sort=True, observed=True)["n"].sum().reset_index()
        g = g[g["n"] > 0]
        Z = fit.outcome_predictor.encode(g)
        w = g["n"].to_numpy(dtype=float)
    else:
        Z = fit.outcome_predictor.encode(frame.iloc[:1])
        w = np.array([n.sum()])
    B = _outcome_draws(fit, n_draws, seed, scale)
    P = response_prob(fit.spec.outcome_link, Z @ B.T)
    return (w @ P) / w.sum()


def posterior_interval(fit, population: CountTable, n_draws: int = 1000,
                       quantiles=(0.025, 0.975), seed=None, scale: float = 1.0) -> tuple[float, float]:
    """Empirical quantiles of posterior-simulated GH prevalence."""
    lo, hi = quantiles
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError("quantiles must satisfy 0 <= lower < upper <= 1")
    draws = posterior_prevalence_draws(fit, population, n_draws, seed, scale)
    q = np.quantile(draws, [lo, hi])
    return float(q[0]), float(q[1])


def gh_with_interval(fit, population: CountTable, n_draws: int = 1000, quantiles=(0.025, 0.975),
                     seed=None) -> PrevalenceEstimate:
    """GH point estimate with its posterior interval; the interval is widened to
    contain the point estimate when skewness puts it outside."""
    est = gh_prevalence(fit, population)
    lo, hi = posterior_interval(fit, population, n_draws, quantiles, seed)
    lo, hi = min(lo, est.value), max(hi, est.value)
    return PrevalenceEstimate(est.value, lo, hi, None, Estimator.GH, est.n_units)
