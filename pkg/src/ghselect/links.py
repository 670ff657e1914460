"""Marginal link functions for the binary selection and outcome equations.

A link is identified by the CDF ``F`` of the latent error.  The probability of
a positive response is ``1 - F(-eta)``; for the symmetric links this equals
``F(eta)`` but for the complementary log-log it does not, so callers should use
:func:`response_prob` rather than :func:`link_cdf` directly.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy import special

from .errors import DomainError

PROB_EPS = 1e-12


class LinkFunction(str, enum.Enum):
    PROBIT = "probit"
    LOGIT = "logit"
    CLOGLOG = "cloglog"

    @classmethod
    def parse(cls, value: "LinkFunction | str") -> "LinkFunction":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown link function {value!r}; expected one of "
                             f"{[m.value for m in cls]}") from None

    @property
    def symmetric(self) -> bool:
        return self is not LinkFunction.CLOGLOG


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def link_cdf(link, eta):
    """F(eta), clamped to [1e-12, 1 - 1e-12]."""
    return clamp_prob(_cdf(LinkFunction.parse(link), np.asarray(eta, dtype=float)))


def _cdf(link: LinkFunction, eta):
    if link is LinkFunction.PROBIT:
        return special.ndtr(eta)
    if link is LinkFunction.LOGIT:
        return special.expit(eta)
    return -np.expm1(-np.exp(eta))


def _sf(link: LinkFunction, eta):
    # 1 - F(eta) without cancellation
    if link is LinkFunction.PROBIT:
        return special.ndtr(-eta)
    if link is LinkFunction.LOGIT:
        return special.expit(-eta)
    return np.exp(-np.exp(eta))


def link_density(link, eta):
    """F'(eta)."""
    link = LinkFunction.parse(link)
    eta = np.asarray(eta, dtype=float)
    if link is LinkFunction.PROBIT:
        return np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
    if link is LinkFunction.LOGIT:
        p = special.expit(eta)
        return p * (1.0 - p)
    with np.errstate(over="ignore"):
        return np.exp(eta - np.exp(eta))


def link_quantile(link, p):
    """Inverse of :func:`link_cdf` on (0, 1)."""
    link = LinkFunction.parse(link)
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
        raise DomainError("link_quantile requires p strictly inside (0, 1)")
    if link is LinkFunction.PROBIT:
        return special.ndtri(p)
    if link is LinkFunction.LOGIT:
        return special.logit(p)
    return np.log(-np.log1p(-p))


def response_prob(link, eta):
    """P(Y = 1) = 1 - F(-eta), clamped."""
    return clamp_prob(_sf(LinkFunction.parse(link), -np.asarray(eta, dtype=float)))


def response_prob_parts(link, eta):
    """Return (P(Y=1), P(Y=0), dP(Y=1)/deta) unclamped, each computed directly."""
    link = LinkFunction.parse(link)
    eta = np.asarray(eta, dtype=float)
    return _sf(link, -eta), _cdf(link, -eta), link_density(link, -eta)
