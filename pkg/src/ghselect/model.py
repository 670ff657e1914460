"""Copula sample-selection model for a binary outcome observed only on
selected units.

For stratum covariates with additive predictors ``eta1`` (selection) and
``eta2`` (outcome), ``pi_j = 1 - F_j(-eta_j)`` and the three observable cells
have probabilities::

    p11 = C(pi1, pi2; theta)     selected, outcome 1
    p10 = pi1 - p11              selected, outcome 0
    p0  = 1 - pi1                not selected (outcome unobserved)

The parameter vector is ``delta = (beta1, beta2, theta*)`` with ``theta*`` the
unconstrained copula coordinate.  Penalised terms carry one smoothing
parameter each; they are chosen by minimising AIC unless given.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats
from scipy.linalg import block_diag

from .copulas import (
    CopulaFamily,
    CopulaSpec,
    copula_cdf,
    copula_partial_theta,
    copula_partial_u,
    dtheta_dstar,
    kendall_tau,
    theta_from_star,
)
from .data import CountTable
from .design import Predictor, TermKind, TermSpec, build_design
from .errors import DataError, FitError
from .glm import fit_binary
from .links import PROB_EPS, LinkFunction, response_prob_parts
from .optim import nearest_psd, penalized_newton, select_smoothing, trace_edf


@dataclass(frozen=True)
class ModelSpec:
    selection_terms: tuple[TermSpec, ...]
    outcome_terms: tuple[TermSpec, ...]
    selection_link: LinkFunction = LinkFunction.PROBIT
    outcome_link: LinkFunction = LinkFunction.LOGIT
    copula: CopulaFamily = CopulaFamily.GUMBEL

    def __post_init__(self):
        object.__setattr__(self, "selection_terms", tuple(self.selection_terms))
        object.__setattr__(self, "outcome_terms", tuple(self.outcome_terms))
        object.__setattr__(self, "selection_link", LinkFunction.parse(self.selection_link))
        object.__setattr__(self, "outcome_link", LinkFunction.parse(self.outcome_link))
        object.__setattr__(self, "copula", CopulaFamily.parse(self.copula))
        if not self.selection_terms or not self.outcome_terms:
            raise ValueError("both equations need at least one term")
        if set(self.selection_terms) <= set(self.outcome_terms):
            warnings.warn("every selection term also enters the outcome equation; "
                          "identification then rests on functional form alone")

    @property
    def covariates(self) -> list[str]:
        seen: list[str] = []
        for t in self.selection_terms + self.outcome_terms:
            if t.covariate is not None and t.covariate not in seen:
                seen.append(t.covariate)
        return seen

    def to_dict(self) -> dict:
        return {
            "selection": {"link": self.selection_link.value, "terms": [t.to_dict() for t in self.selection_terms]},
            "outcome": {"link": self.outcome_link.value, "terms": [t.to_dict() for t in self.outcome_terms]},
            "copula": self.copula.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(
                tuple(TermSpec.from_dict(t) for t in d["selection"]["terms"]),
                tuple(TermSpec.from_dict(t) for t in d["outcome"]["terms"]),
                d["selection"]["link"], d["outcome"]["link"], d["copula"],
            )


@dataclass
class ParamVector:
    beta1: np.ndarray
    beta2: np.ndarray
    theta_star: float

    def to_array(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.beta1, float), np.asarray(self.beta2, float), [float(self.theta_star)]])

    @classmethod
    def from_array(cls, delta, p1: int, p2: int) -> "ParamVector":
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (p1 + p2 + 1,):
            raise ValueError(f"parameter vector must have length {p1 + p2 + 1}")
        return cls(delta[:p1].copy(), delta[p1:p1 + p2].copy(), float(delta[-1]))


@dataclass
class FitOptions:
    lambdas: list[float] | None = None  # None: AIC search
    lambda_bounds: tuple[float, float] = (-8.0, 8.0)
    lambda_sweeps: int = 2
    lambda_tol: float = 0.1
    initial_log_lambda: float = 0.0
    max_iter: int = 200
    gtol: float = 1e-6
    ftol: float = 1e-9
    start: ParamVector | None = None
    n_override: int | None = None


# -- cell probabilities and per-stratum scores -----------------------------------------

def cell_probabilities(eta1, eta2, copula: CopulaSpec, selection_link, outcome_link):
    """Return (p0, p10, p11) for additive predictors ``eta1`` and ``eta2``."""
    pi1, p0, _ = response_prob_parts(LinkFunction.parse(selection_link), eta1)
    pi2, _, _ = response_prob_parts(LinkFunction.parse(outcome_link), eta2)
    p11 = copula_cdf(copula, pi1, pi2)
    p10 = pi1 - p11
    return p0, p10, p11


def _strata_scores(eta1, eta2, theta_star, spec: ModelSpec, n0, n10, n11, derivs=True):
    cop = theta_from_star(spec.copula, theta_star)
    pi1, p0, d1 = response_prob_parts(spec.selection_link, eta1)
    pi2, _, d2 = response_prob_parts(spec.outcome_link, eta2)
    C = np.asarray(copula_cdf(cop, pi1, pi2))
    p0c = np.clip(p0, PROB_EPS, 1.0)
    p10c = np.clip(pi1 - C, PROB_EPS, 1.0)
    p11c = np.clip(C, PROB_EPS, 1.0)
    ll_rows = n0 * np.log(p0c) + n10 * np.log(p10c) + n11 * np.log(p11c)
    if not derivs:
        return ll_rows
    Cu = np.asarray(copula_partial_u(cop, pi1, pi2))
    Cv = np.asarray(copula_partial_u(cop, pi2, pi1))
    Ct = np.asarray(copula_partial_theta(cop, pi1, pi2)) * dtheta_dstar(cop)
    # clamped cells are constant in the objective, so they contribute no slope
    c0 = np.where(p0 > PROB_EPS, n0 / p0c, 0.0)
    a = np.where(pi1 - C > PROB_EPS, n10 / p10c, 0.0)
    b = np.where(C > PROB_EPS, n11 / p11c, 0.0)
    g1 = (-c0 + a * (1.0 - Cu) + b * Cu) * d1
    g2 = (b - a) * Cv * d2
    gt = (b - a) * Ct
    return ll_rows, g1, g2, gt


def _collapse(frame: pd.DataFrame, covariates: list[str]) -> tuple[pd.DataFrame, np.ndarray, np.ndarray, np.ndarray]:
    sel = frame["selected"].to_numpy() == 1
    inf = frame["informal"].fillna(0).to_numpy(dtype=np.int64) == 1
    n = frame["n"].to_numpy(dtype=float)
    cells = pd.DataFrame({"n0": np.where(~sel, n, 0.0), "n10": np.where(sel & ~inf, n, 0.0),
                          "n11": np.where(sel & inf, n, 0.0)})
    if not covariates:
        strata = pd.DataFrame(index=[0])
        sums = cells.sum().to_frame().T
    else:
        keys = frame[covariates].reset_index(drop=True)
        grouped = pd.concat([keys, cells], axis=1).groupby(covariates, sort=True, observed=True, dropna=False)
        sums = grouped[["n0", "n10", "n11"]].sum()
        strata = sums.index.to_frame(index=False)
        for c in covariates:
            if isinstance(frame[c].dtype, pd.CategoricalDtype):
                strata[c] = pd.Categorical(strata[c], categories=frame[c].dtype.categories,
                                           ordered=frame[c].dtype.ordered)
        sums = sums.reset_index(drop=True)
    return strata, sums["n0"].to_numpy(float), sums["n10"].to_numpy(float), sums["n11"].to_numpy(float)


class SelectionProblem:
    """Data-bound likelihood: design matrices over covariate strata plus cell counts."""

    def __init__(self, spec: ModelSpec, data: CountTable, predictors: tuple[Predictor, Predictor] | None = None):
        frame = data.frame
        missing = [c for c in spec.covariates if c not in frame.columns]
        if missing:
            raise DataError(f"model refers to unknown column(s): {missing}")
        self.spec = spec
        self.N = data.N
        self.strata, self.n0, self.n10, self.n11 = _collapse(frame, spec.covariates)
        if predictors is None:
            self.selection = build_design(spec.selection_terms, self.strata)
            self.outcome = build_design(spec.outcome_terms, self.strata)
        else:
            self.selection, self.outcome = predictors
        self.Z1 = self.selection.encode(self.strata)
        self.Z2 = self.outcome.encode(self.strata)
        self.p1 = self.Z1.shape[1]
        self.p2 = self.Z2.shape[1]
        self.n_params = self.p1 + self.p2 + 1

    @property
    def n_penalized(self) -> int:
        return len(self.selection.penalized_terms) + len(self.outcome.penalized_terms)

    def split(self, delta):
        delta = np.asarray(delta, dtype=float)
        return delta[:self.p1], delta[self.p1:self.p1 + self.p2], float(delta[-1])

    def penalty(self, lambdas) -> np.ndarray:
        lambdas = list(lambdas)
        k1 = len(self.selection.penalized_terms)
        if len(lambdas) != self.n_penalized:
            raise ValueError(f"expected {self.n_penalized} smoothing parameters, got {len(lambdas)}")
        return block_diag(self.selection.penalty_matrix(lambdas[:k1]),
                          self.outcome.penalty_matrix(lambdas[k1:]), np.zeros((1, 1)))

    def loglik(self, delta) -> float:
        b1, b2, ts = self.split(delta)
        rows = _strata_scores(self.Z1 @ b1, self.Z2 @ b2, ts, self.spec, self.n0, self.n10, self.n11, derivs=False)
        return float(np.sum(rows))

    def score(self, delta):
        b1, b2, ts = self.split(delta)
        ll, g1, g2, gt = _strata_scores(self.Z1 @ b1, self.Z2 @ b2, ts, self.spec, self.n0, self.n10, self.n11)
        return float(np.sum(ll)), np.concatenate([self.Z1.T @ g1, self.Z2.T @ g2, [np.sum(gt)]])

    def derivatives(self, delta):
        """(loglik, gradient, negative Hessian).

        The Hessian is the Jacobian of the analytic score, taken by central
        differences in each stratum's (eta1, eta2, theta*) and mapped back
        through the design matrices.
        """
        b1, b2, ts = self.split(delta)
        e1 = self.Z1 @ b1
        e2 = self.Z2 @ b2
        counts = (self.n0, self.n10, self.n11)
        ll, g1, g2, gt = _strata_scores(e1, e2, ts, self.spec, *counts)
        grad = np.concatenate([self.Z1.T @ g1, self.Z2.T @ g2, [np.sum(gt)]])

        h1 = 1e-5 * (1.0 + np.abs(e1))
        h2 = 1e-5 * (1.0 + np.abs(e2))
        ht = 1e-5 * (1.0 + abs(ts))
        _, a1p, a2p, atp = _strata_scores(e1 + h1, e2, ts, self.spec, *counts)
        _, a1m, a2m, atm = _strata_scores(e1 - h1, e2, ts, self.spec, *counts)
        _, b1p, b2p, btp = _strata_scores(e1, e2 + h2, ts, self.spec, *counts)
        _, b1m, b2m, btm = _strata_scores(e1, e2 - h2, ts, self.spec, *counts)
        _, c1p, c2p, ctp = _strata_scores(e1, e2, ts + ht, self.spec, *counts)
        _, c1m, c2m, ctm = _strata_scores(e1, e2, ts - ht, self.spec, *counts)
        w11 = (a1p - a1m) / (2 * h1)
        w22 = (b2p - b2m) / (2 * h2)
        wtt = (ctp - ctm) / (2 * ht)
        w12 = 0.5 * ((a2p - a2m) / (2 * h1) + (b1p - b1m) / (2 * h2))
        w1t = 0.5 * ((atp - atm) / (2 * h1) + (c1p - c1m) / (2 * ht))
        w2t = 0.5 * ((btp - btm) / (2 * h2) + (c2p - c2m) / (2 * ht))

        Z1, Z2 = self.Z1, self.Z2
        H11 = Z1.T @ (Z1 * w11[:, None])
        H12 = Z1.T @ (Z2 * w12[:, None])
        H22 = Z2.T @ (Z2 * w22[:, None])
        H1t = Z1.T @ w1t
        H2t = Z2.T @ w2t
        Htt = np.sum(wtt)
        hess = np.block([
            [H11, H12, H1t[:, None]],
            [H12.T, H22, H2t[:, None]],
            [H1t[None, :], H2t[None, :], np.array([[Htt]])],
        ])
        return float(np.sum(ll)), grad, -hess

    def check_fittable(self) -> None:
        if self.n0.sum() <= 0 or (self.n10.sum() + self.n11.sum()) <= 0:
            raise FitError("data need both selected and non-selected units")
        if self.n10.sum() <= 0 or self.n11.sum() <= 0:
            raise FitError("selected units must include both outcome values")
        for t in self.spec.outcome_terms:
            if t.kind is not TermKind.FACTOR:
                continue
            by = pd.DataFrame({"lev": self.strata[t.covariate].astype(str), "a": self.n10, "b": self.n11})
            g = by.groupby("lev")[["a", "b"]].sum()
            flat = g[((g["a"] == 0) | (g["b"] == 0)) & ((g["a"] + g["b"]) > 0)]
            if len(flat):
                warnings.warn(f"outcome shows no variation among selected units for "
                              f"{t.covariate} level(s) {list(flat.index)}")

    def start_values(self, lambdas) -> np.ndarray:
        """Separate binary fits of the two margins; theta* = 0."""
        k1 = len(self.selection.penalized_terms)
        lam = list(lambdas)
        sel = fit_binary(self.Z1, self.n10 + self.n11, self.n0 + self.n10 + self.n11, self.spec.selection_link,
                         self.selection.penalty_matrix(lam[:k1]))
        m = self.n10 + self.n11
        keep = m > 0
        out = fit_binary(self.Z2[keep], self.n11[keep], m[keep], self.spec.outcome_link,
                         self.outcome.penalty_matrix(lam[k1:]))
        return np.concatenate([sel.coef, out.coef, [0.0]])


# -- public likelihood functions -----------------------------------------------------------

def _as_delta(params) -> np.ndarray:
    return params.to_array() if isinstance(params, ParamVector) else np.asarray(params, dtype=float)


def loglik(params, spec: ModelSpec, data: CountTable) -> float:
    """Log-likelihood summed over count-table rows."""
    return SelectionProblem(spec, data).loglik(_as_delta(params))


def penalized_loglik(params, spec: ModelSpec, data: CountTable, lambdas=None) -> float:
    prob = SelectionProblem(spec, data)
    delta = _as_delta(params)
    lam = [0.0] * prob.n_penalized if lambdas is None else lambdas
    return prob.loglik(delta) - 0.5 * delta @ prob.penalty(lam) @ delta


def loglik_gradient(params, spec: ModelSpec, data: CountTable, lambdas=None) -> np.ndarray:
    """Gradient of the penalised log-likelihood ``l - sum_k lambda_k b_k'S_k b_k / 2``."""
    prob = SelectionProblem(spec, data)
    delta = _as_delta(params)
    lam = [0.0] * prob.n_penalized if lambdas is None else lambdas
    _, g = prob.score(delta)
    return g - prob.penalty(lam) @ delta


# -- fitting --------------------------------------------------------------------------------

@dataclass
class FitResult:
    spec: ModelSpec
    params: ParamVector
    covariance: np.ndarray
    edf: float
    loglik: float
    aic: float
    bic: float
    lambdas: list[float]
    converged: bool
    n_total: int
    selection_predictor: Predictor
    outcome_predictor: Predictor
    penalized_loglik: float = float("nan")
    term_edf: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def delta(self) -> np.ndarray:
        return self.params.to_array()

    @property
    def copula_spec(self) -> CopulaSpec:
        return theta_from_star(self.spec.copula, self.params.theta_star)

    @property
    def theta(self) -> float:
        return self.copula_spec.theta

    @property
    def kendall_tau(self) -> float:
        return kendall_tau(self.copula_spec)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def information_criteria(self, N: int | None = None) -> tuple[float, float]:
        return information_criteria(self, self.n_total if N is None else N)

    def coefficient_table(self) -> pd.DataFrame:
        """Fixed effects with standard errors; one summary row per penalised term."""
        se = self.standard_errors
        rows = []
        offset = 0
        for eq, pred in (("selection", self.selection_predictor), ("outcome", self.outcome_predictor)):
            for st, sl in zip(pred._states, pred.coefficient_slices):
                idx = np.arange(sl.start, sl.stop) + offset
                if st.term.penalized:
                    rows.append({"equation": eq, "kind": "smooth", "term": st.term.label, "column": "",
                                 "estimate": self.term_edf.get(f"{eq}:{st.term.label}", float("nan")),
                                 "std_error": float(len(idx)), "z": float("nan"), "p_value": float("nan")})
                    continue
                for name, i in zip(st.column_names(), idx):
                    est, s = float(self.delta[i]), float(se[i])
                    z = est / s if s > 0 else float("nan")
                    p = float(2 * stats.norm.sf(abs(z))) if np.isfinite(z) else float("nan")
                    rows.append({"equation": eq, "kind": "fixed", "term": st.term.label, "column": name,
                                 "estimate": est, "std_error": s, "z": z, "p_value": p})
            offset += pred.n_coef
        ts = len(self.delta) - 1
        rows.append({"equation": "copula", "kind": "fixed", "term": "theta*", "column": self.spec.copula.value,
                     "estimate": float(self.delta[ts]), "std_error": float(se[ts]),
                     "z": float("nan"), "p_value": float("nan")})
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "selection_predictor": self.selection_predictor.to_dict(),
            "outcome_predictor": self.outcome_predictor.to_dict(),
            "beta1": [float(x) for x in self.params.beta1],
            "beta2": [float(x) for x in self.params.beta2],
            "theta_star": float(self.params.theta_star),
            "covariance": [[float(x) for x in row] for row in self.covariance],
            "edf": float(self.edf),
            "loglik": float(self.loglik),
            "penalized_loglik": float(self.penalized_loglik),
            "aic": float(self.aic),
            "bic": float(self.bic),
            "lambdas": [float(x) for x in self.lambdas],
            "converged": bool(self.converged),
            "n_total": int(self.n_total),
            "term_edf": {k: float(v) for k, v in self.term_edf.items()},
            "diagnostics": {k: v for k, v in self.diagnostics.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            spec=ModelSpec.from_dict(d["spec"]),
            params=ParamVector(np.asarray(d["beta1"], float), np.asarray(d["beta2"], float), float(d["theta_star"])),
            covariance=np.asarray(d["covariance"], dtype=float),
            edf=float(d["edf"]), loglik=float(d["loglik"]), aic=float(d["aic"]), bic=float(d["bic"]),
            lambdas=[float(x) for x in d["lambdas"]], converged=bool(d["converged"]), n_total=int(d["n_total"]),
            selection_predictor=Predictor.from_dict(d["selection_predictor"]),
            outcome_predictor=Predictor.from_dict(d["outcome_predictor"]),
            penalized_loglik=float(d.get("penalized_loglik", float("nan"))),
            term_edf=dict(d.get("term_edf", {})), diagnostics=dict(d.get("diagnostics", {})),
        )


def information_criteria(fit, N: int) -> tuple[float, float]:
    """AIC = -2 l + 2 edf and BIC = -2 l + log(N) edf."""
    aic = -2.0 * fit.loglik + 2.0 * fit.edf
    bic = -2.0 * fit.loglik + math.log(N) * fit.edf
    return aic, bic


def _optimise(prob: SelectionProblem, lambdas, start, opts: FitOptions):
    S = prob.penalty(lambdas)
    res = penalized_newton(prob.loglik, prob.derivatives, start, S,
                           max_iter=opts.max_iter, gtol=opts.gtol, ftol=opts.ftol)
    edf, diag = trace_edf(res.neg_hessian, S)
    return res, S, edf, diag


def fit(spec: ModelSpec, data: CountTable, options: FitOptions | None = None) -> FitResult:
    """Penalised maximum likelihood fit of the copula selection model."""
    opts = options or FitOptions()
    if data.N <= 0:
        raise FitError("cannot fit an empty table")
    prob = SelectionProblem(spec, data)
    prob.check_fittable()
    k = prob.n_penalized
    N = opts.n_override if opts.n_override is not None else prob.N

    if opts.lambdas is not None:
        lambdas = [float(x) for x in opts.lambdas]
        if len(lambdas) != k:
            raise ValueError(f"expected {k} smoothing parameters, got {len(lambdas)}")
    else:
        lambdas = [math.exp(opts.initial_log_lambda)] * k
    start = opts.start.to_array() if opts.start is not None else prob.start_values(lambdas)
    if len(start) != prob.n_params:
        raise ValueError(f"start vector must have length {prob.n_params}")

    n_evals = 0
    if k and opts.lambdas is None:
        cache: dict = {}
        warm = [start]

        def criterion(rho):
            nonlocal n_evals
            key = tuple(np.round(rho, 12))
            if key not in cache:
                n_evals += 1
                res, _, edf, _ = _optimise(prob, np.exp(rho), warm[0], opts)
                if np.all(np.isfinite(res.x)):
                    warm[0] = res.x
                aic = -2.0 * res.loglik + 2.0 * edf
                cache[key] = (aic if np.isfinite(aic) else np.inf, res.x)
            return cache[key][0]

        rho, _ = select_smoothing(criterion, k, start=[opts.initial_log_lambda] * k,
                                  bounds=opts.lambda_bounds, sweeps=opts.lambda_sweeps, tol=opts.lambda_tol)
        lambdas = [float(x) for x in np.exp(rho)]
        start = cache[tuple(np.round(rho, 12))][1]

    res, S, edf, diag = _optimise(prob, lambdas, start, opts)
    A = res.neg_hessian + S
    try:
        cov = np.linalg.inv(0.5 * (A + A.T))
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(0.5 * (A + A.T))
    cov, projected = nearest_psd(cov)

    term_edf = {}
    offset = 0
    for eq, pred in (("selection", prob.selection), ("outcome", prob.outcome)):
        for st, sl in zip(pred._states, pred.coefficient_slices):
            if st.term.penalized:
                term_edf[f"{eq}:{st.term.label}"] = float(diag[offset + sl.start: offset + sl.stop].sum())
        offset += pred.n_coef

    b1, b2, ts = prob.split(res.x)
    eta_max = float(max(np.max(np.abs(prob.Z1 @ b1)), np.max(np.abs(prob.Z2 @ b2))))
    diagnostics = {
        "message": res.message,
        "iterations": int(res.n_iter),
        "max_abs_gradient": float(np.max(np.abs(res.grad))),
        "covariance_projected": bool(projected),
        "separation_suspected": bool(eta_max > 20.0),
        "lambda_evaluations": int(n_evals),
        "n_strata": int(len(prob.n0)),
    }
    if not res.converged:
        warnings.warn(f"fit did not converge: {res.message}")
    aic = -2.0 * res.loglik + 2.0 * edf
    bic = -2.0 * res.loglik + math.log(N) * edf
    return FitResult(
        spec=spec, params=ParamVector(b1.copy(), b2.copy(), ts), covariance=cov, edf=edf,
        loglik=res.loglik, aic=aic, bic=bic, lambdas=lambdas, converged=res.converged, n_total=int(N),
        selection_predictor=prob.selection, outcome_predictor=prob.outcome,
        penalized_loglik=res.value, term_edf=term_edf, diagnostics=diagnostics,
    )


# -- model grid -------------------------------------------------------------------------------

def _grid_cell(args):
    from .estimators import gh_prevalence

    data, spec, options = args
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = fit(spec, data, options)
        prev = gh_prevalence(res, data).value
        return {"aic": res.aic, "bic": res.bic, "loglik": res.loglik, "edf": res.edf, "theta": res.theta,
                "tau": res.kendall_tau, "prevalence": prev, "converged": res.converged, "error": ""}
    except Exception as exc:  # a failed cell must not abort the grid
        return {"aic": np.nan, "bic": np.nan, "loglik": np.nan, "edf": np.nan, "theta": np.nan,
                "tau": np.nan, "prevalence": np.nan, "converged": False, "error": f"{type(exc).__name__}: {exc}"}


def model_grid(data: CountTable, copulas, link_pairs, selection_terms, outcome_terms,
               options: FitOptions | None = None, n_jobs: int = 1) -> pd.DataFrame:
    """Fit every copula x (selection link, outcome link) combination; rank by AIC."""
    cells = []
    for l1, l2 in link_pairs:
        for fam in copulas:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                spec = ModelSpec(tuple(selection_terms), tuple(outcome_terms), l1, l2, fam)
            cells.append(spec)
    jobs = [(data, spec, options) for spec in cells]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_grid_cell, jobs))
    else:
        results = [_grid_cell(j) for j in jobs]
    rows = []
    for spec, r in zip(cells, results):
        rows.append({"selection_link": spec.selection_link.value, "outcome_link": spec.outcome_link.value,
                     "copula": spec.copula.value, **r})
    table = pd.DataFrame(rows)
    table["_failed"] = table["aic"].isna()
    table = table.sort_values(["_failed", "aic", "selection_link", "outcome_link", "copula"], kind="mergesort")
    return table.drop(columns="_failed").reset_index(drop=True)


def with_copula(spec: ModelSpec, family) -> ModelSpec:
    return replace(spec, copula=CopulaFamily.parse(family))
