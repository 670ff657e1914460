"""Penalised binary regression on aggregated counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .links import LinkFunction, PROB_EPS, response_prob_parts
from .optim import penalized_newton, select_smoothing, trace_edf


@dataclass
class BinaryFit:
    coef: np.ndarray
    loglik: float
    neg_hessian: np.ndarray
    edf: float
    lambdas: list[float]
    converged: bool
    n_iter: int

    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.edf


def _binary_loglik(Z, successes, trials, link, beta, derivs):
    eta = Z @ beta
    p1, p0, dens = response_prob_parts(link, eta)
    p1c = np.clip(p1, PROB_EPS, 1.0)
    p0c = np.clip(p0, PROB_EPS, 1.0)
    failures = trials - successes
    ll = float(np.sum(successes * np.log(p1c) + failures * np.log(p0c)))
    if not derivs:
        return ll
    score = (successes / p1c - failures / p0c) * dens
    # expected information
    w = trials * dens * dens / (p1c * p0c)
    return ll, Z.T @ score, Z.T @ (Z * w[:, None])


def fit_binary(Z, successes, trials, link, S=None, start=None, *, max_iter=100, gtol=1e-6) -> BinaryFit:
    """Maximise the penalised binomial log-likelihood by Fisher scoring."""
    link = LinkFunction.parse(link)
    successes = np.asarray(successes, dtype=float)
    trials = np.asarray(trials, dtype=float)
    p = Z.shape[1]
    S = np.zeros((p, p)) if S is None else S
    x0 = np.zeros(p) if start is None else np.asarray(start, dtype=float)
    res = penalized_newton(
        lambda b: _binary_loglik(Z, successes, trials, link, b, False),
        lambda b: _binary_loglik(Z, successes, trials, link, b, True),
        x0, S, max_iter=max_iter, gtol=gtol,
    )
    edf, _ = trace_edf(res.neg_hessian, S)
    return BinaryFit(res.x, res.loglik, res.neg_hessian, edf, [], res.converged, res.n_iter)


def fit_binary_auto(predictor, Z, successes, trials, link, *, lambdas=None, bounds=(-8.0, 8.0),
                    sweeps: int = 2, tol: float = 0.1) -> BinaryFit:
    """Fit with AIC-selected smoothing parameters for the predictor's penalised terms."""
    k = len(predictor.penalized_terms)
    if lambdas is not None or k == 0:
        lam = [] if k == 0 else list(lambdas)
        fit = fit_binary(Z, successes, trials, link, predictor.penalty_matrix(lam))
        fit.lambdas = lam
        return fit
    cache: dict = {}
    warm = [None]

    def crit(rho):
        key = tuple(np.round(rho, 12))
        if key not in cache:
            lam = np.exp(rho)
            f = fit_binary(Z, successes, trials, link, predictor.penalty_matrix(lam), start=warm[0])
            warm[0] = f.coef
            cache[key] = f
        return cache[key].aic()

    rho, _ = select_smoothing(crit, k, bounds=bounds, sweeps=sweeps, tol=tol)
    best = cache[tuple(np.round(rho, 12))]
    best.lambdas = [float(x) for x in np.exp(rho)]
    return best
