"""Damped Newton maximisation of penalised log-likelihoods and smoothing
parameter search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float            # penalised objective at x
    loglik: float           # unpenalised part
    grad: np.ndarray        # penalised gradient
    neg_hessian: np.ndarray  # unpenalised, i.e. H in (H + S)
    n_iter: int
    converged: bool
    message: str = ""
    history: list = field(default_factory=list)


def _solve_damped(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A d = b, adding a ridge until A is positive definite."""
    A = 0.5 * (A + A.T)
    scale = max(1.0, float(np.max(np.abs(np.diag(A))))) if A.size else 1.0
    mu = 0.0
    for _ in range(30):
        try:
            L = np.linalg.cholesky(A + mu * np.eye(len(b)))
        except np.linalg.LinAlgError:
            mu = 1e-10 * scale if mu == 0.0 else mu * 10.0
            continue
        y = np.linalg.solve(L, b)
        return np.linalg.solve(L.T, y)
    return b / scale


def penalized_newton(
    value: Callable[[np.ndarray], float],
    derivatives: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    x0,
    S: np.ndarray,
    *,
    max_iter: int = 200,
    gtol: float = 1e-6,
    ftol: float = 1e-9,
    max_step: float = 5.0,
) -> NewtonResult:
    """Maximise ``f(x) - x'Sx/2``.

    ``value(x)`` returns f; ``derivatives(x)`` returns (f, grad f, -Hessian f).
    Stops when the penalised gradient's sup-norm drops below ``gtol`` or when a
    full Newton step changes the objective by less than ``ftol`` relatively.
    """
    x = np.array(x0, dtype=float)
    f, g, H = derivatives(x)
    fp = f - 0.5 * x @ S @ x
    gp = g - S @ x
    history = [fp]
    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(gp)):
            return NewtonResult(x, fp, f, gp, H, it - 1, False, "non-finite gradient", history)
        if np.max(np.abs(gp), initial=0.0) < gtol:
            return NewtonResult(x, fp, f, gp, H, it - 1, True, "gradient tolerance", history)
        d = _solve_damped(H + S, gp)
        big = np.max(np.abs(d), initial=0.0)
        if big > max_step:
            d *= max_step / big
        slope = gp @ d
        if slope <= 0:
            d = gp / max(1.0, float(np.max(np.abs(gp))))
            slope = gp @ d
        if slope < 64.0 * np.finfo(float).eps * (abs(fp) + 1.0):
            # the objective cannot resolve the predicted gain; judge the step by the gradient
            fn, gn, Hn = derivatives(x + d)
            gpn = gn - S @ (x + d)
            if not np.max(np.abs(gpn)) < np.max(np.abs(gp)):
                return NewtonResult(x, fp, f, gp, H, it, True, "objective resolution limit", history)
            x = x + d
            f, g, H, gp = fn, gn, Hn, gpn
            fp = f - 0.5 * x @ S @ x
            history.append(fp)
            continue
        t = 1.0
        accepted = False
        for _ in range(50):
            xn = x + t * d
            fn = value(xn)
            fpn = fn - 0.5 * xn @ S @ xn
            if np.isfinite(fpn) and fpn >= fp + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return NewtonResult(x, fp, f, gp, H, it, False, "line search failed", history)
        full_step = t == 1.0 and big <= max_step
        change = abs(fpn - fp) / (abs(fp) + 1.0)
        x = xn
        f, g, H = derivatives(x)
        fp = f - 0.5 * x @ S @ x
        gp = g - S @ x
        history.append(fp)
        if full_step and change < ftol:
            return NewtonResult(x, fp, f, gp, H, it, True, "relative change tolerance", history)
    ok = np.max(np.abs(gp), initial=0.0) < gtol
    return NewtonResult(x, fp, f, gp, H, max_iter, ok, "maximum iterations", history)


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = 0.1):
    """Minimise a unimodal function on [a, b]; returns (x, f(x))."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def select_smoothing(criterion: Callable[[np.ndarray], float], n_blocks: int, *,
                     start=None, bounds=(-8.0, 8.0), sweeps: int = 2, tol: float = 0.1):
    """Coordinate-wise golden-section search over log smoothing parameters.

    ``criterion(log_lambdas)`` is minimised; returns (log_lambdas, value).
    """
    rho = np.zeros(n_blocks) if start is None else np.array(start, dtype=float)
    best = criterion(rho)
    for _ in range(sweeps):
        for k in range(n_blocks):
            def along(r, k=k):
                trial = rho.copy()
                trial[k] = r
                return criterion(trial)
            r, val = golden_section(along, bounds[0], bounds[1], tol)
            if val < best:
                rho[k] = r
                best = val
    return rho, best


def trace_edf(H: np.ndarray, S: np.ndarray) -> tuple[float, np.ndarray]:
    """Effective degrees of freedom tr[(H+S)^-1 H] and the per-coefficient diagonal."""
    A = H + S
    try:
        F = np.linalg.solve(A, H)
    except np.linalg.LinAlgError:
        F = np.linalg.pinv(A) @ H
    diag = np.diag(F).copy()
    return float(diag.sum()), diag


def nearest_psd(A: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetrise and clip negative eigenvalues; flag whether clipping occurred."""
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    if np.all(w >= 0):
        return A, False
    w = np.clip(w, 0.0, None)
    return (V * w) @ V.T, True
