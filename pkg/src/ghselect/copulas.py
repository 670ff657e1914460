"""Bivariate copulas used to link the selection and outcome equations.

Five exchangeable one-parameter families are supported: Normal, Clayton, Joe,
Gumbel and Ali-Mikhail-Haq.  All functions are vectorised over ``u`` and ``v``
and take a scalar association parameter.  ``theta`` is always held in its
natural space; optimisers work on an unconstrained coordinate through
:func:`theta_from_star` / :func:`theta_to_star`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from ._bvn import bvn_cdf, bvn_pdf
from .errors import DomainError

UV_EPS = 1e-12


class CopulaFamily(str, enum.Enum):
    NORMAL = "normal"
    CLAYTON = "clayton"
    JOE = "joe"
    GUMBEL = "gumbel"
    AMH = "amh"

    @classmethod
    def parse(cls, value: "CopulaFamily | str") -> "CopulaFamily":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown copula family {value!r}; expected one of "
                             f"{[m.value for m in cls]}") from None

    @property
    def independence_theta(self) -> float:
        """Parameter value (possibly a boundary or limit) giving C(u, v) = uv."""
        return {"normal": 0.0, "clayton": 0.0, "joe": 1.0, "gumbel": 1.0, "amh": 0.0}[self.value]


# codes used by the R packages for the unrotated families
_ALIASES = {
    "n": "normal", "gaussian": "normal",
    "c0": "clayton", "j0": "joe", "g0": "gumbel",
    "ali-mikhail-haq": "amh",
}


def _in_space(family: CopulaFamily, theta: float) -> bool:
    if not math.isfinite(theta):
        return False
    if family in (CopulaFamily.NORMAL, CopulaFamily.AMH):
        return -1.0 <= theta <= 1.0
    if family is CopulaFamily.CLAYTON:
        return theta > 0.0
    if family is CopulaFamily.JOE:
        return theta > 1.0
    return theta >= 1.0


@dataclass(frozen=True)
class CopulaSpec:
    family: CopulaFamily
    theta: float

    def __post_init__(self):
        family = CopulaFamily.parse(self.family)
        object.__setattr__(self, "family", family)
        theta = float(self.theta)
        object.__setattr__(self, "theta", theta)
        if not _in_space(family, theta):
            raise DomainError(f"theta={theta!r} outside the parameter space of the "
                              f"{family.value} copula")


# -- parameter transforms -------------------------------------------------------

def theta_from_star(family, theta_star: float) -> CopulaSpec:
    """Map an unconstrained value onto the interior of the family's space."""
    family = CopulaFamily.parse(family)
    ts = float(theta_star)
    if family in (CopulaFamily.NORMAL, CopulaFamily.AMH):
        theta = math.tanh(ts)
        # keep strictly interior so the inverse is defined
        theta = min(max(theta, -1.0 + 1e-15), 1.0 - 1e-15)
    elif family is CopulaFamily.CLAYTON:
        theta = max(math.exp(min(ts, 700.0)), 1e-300)
    else:
        theta = 1.0 + max(math.exp(min(ts, 700.0)), 1e-300)
        if family is CopulaFamily.JOE:
            theta = max(theta, math.nextafter(1.0, 2.0))
    return CopulaSpec(family, theta)


def theta_to_star(spec: CopulaSpec) -> float:
    fam, theta = spec.family, spec.theta
    if fam in (CopulaFamily.NORMAL, CopulaFamily.AMH):
        if abs(theta) >= 1.0:
            raise DomainError("boundary theta has no unconstrained preimage")
        return math.atanh(theta)
    if fam is CopulaFamily.CLAYTON:
        return math.log(theta)
    if theta <= 1.0:
        raise DomainError("boundary theta has no unconstrained preimage")
    return math.log(theta - 1.0)


def dtheta_dstar(spec: CopulaSpec) -> float:
    fam, theta = spec.family, spec.theta
    if fam in (CopulaFamily.NORMAL, CopulaFamily.AMH):
        return 1.0 - theta * theta
    if fam is CopulaFamily.CLAYTON:
        return theta
    return theta - 1.0


# -- helpers ----------------------------------------------------------------------

def _check_unit(name: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~((x >= 0.0) & (x <= 1.0))):
        raise DomainError(f"{name} must lie in [0, 1]")
    return x


def _clayton_logA(theta, lu, lv):
    # log(u^-theta + v^-theta - 1) with lu = log u, lv = log v
    a = -theta * lu
    b = -theta * lv
    m = np.maximum(a, b)
    s = np.minimum(a, b)
    return m + np.log1p(np.exp(-m) * np.expm1(s)), a, b


def _gumbel_logA(theta, x, y):
    return np.logaddexp(theta * np.log(x), theta * np.log(y))


def _joe_parts(theta, u, v):
    lub = np.log1p(-u)
    lvb = np.log1p(-v)
    a = np.exp(theta * lub)
    b = np.exp(theta * lvb)
    oma = -np.expm1(theta * lub)
    omb = -np.expm1(theta * lvb)
    prod = oma * omb
    with np.errstate(divide="ignore"):
        logS = np.where(prod < 0.5, np.log1p(-prod), np.log(a + b - a * b))
    return logS, a, b, lub, lvb


# -- CDF ---------------------------------------------------------------------------

def copula_cdf(spec: CopulaSpec, u, v):
    """C(u, v; theta)."""
    u = _check_unit("u", u)
    v = _check_unit("v", v)
    u, v = np.broadcast_arrays(u, v)
    uc = np.clip(u, UV_EPS, 1.0 - UV_EPS)
    vc = np.clip(v, UV_EPS, 1.0 - UV_EPS)
    with np.errstate(over="ignore", under="ignore"):
        out = _cdf_interior(spec, uc, vc)
    # exact values on the boundary of the unit square
    out = np.where(u >= 1.0, v, out)
    out = np.where(v >= 1.0, u, out)
    out = np.where((u <= 0.0) | (v <= 0.0), 0.0, out)
    # guard the Frechet-Hoeffding bounds against rounding
    out = np.clip(out, np.maximum(u + v - 1.0, 0.0), np.minimum(u, v))
    return out if out.ndim else float(out)


def _cdf_interior(spec: CopulaSpec, u, v):
    fam, theta = spec.family, spec.theta
    if fam is CopulaFamily.NORMAL:
        if theta >= 1.0:
            return np.minimum(u, v)
        if theta <= -1.0:
            return np.maximum(u + v - 1.0, 0.0)
        return bvn_cdf(special.ndtri(u), special.ndtri(v), theta)
    if fam is CopulaFamily.CLAYTON:
        logA, _, _ = _clayton_logA(theta, np.log(u), np.log(v))
        return np.exp(-logA / theta)
    if fam is CopulaFamily.JOE:
        logS = _joe_parts(theta, u, v)[0]
        return -np.expm1(logS / theta)
    if fam is CopulaFamily.GUMBEL:
        logA = _gumbel_logA(theta, -np.log(u), -np.log(v))
        return np.exp(-np.exp(logA / theta))
    return u * v / (1.0 - theta * (1.0 - u) * (1.0 - v))


# -- derivatives ---------------------------------------------------------------------

def copula_partial_u(spec: CopulaSpec, u, v):
    """dC/du = P(V <= v | U = u).  Arguments are clamped to [1e-12, 1 - 1e-12]."""
    u = np.clip(_check_unit("u", u), UV_EPS, 1.0 - UV_EPS)
    v = np.clip(_check_unit("v", v), UV_EPS, 1.0 - UV_EPS)
    u, v = np.broadcast_arrays(u, v)
    with np.errstate(over="ignore", under="ignore"):
        out = np.clip(_partial_u(spec, u, v), 0.0, 1.0)
    return out if out.ndim else float(out)


def copula_partial_v(spec: CopulaSpec, u, v):
    """dC/dv; every supported family is exchangeable."""
    return copula_partial_u(spec, v, u)


def _partial_u(spec: CopulaSpec, u, v):
    fam, theta = spec.family, spec.theta
    if fam is CopulaFamily.NORMAL:
        x = special.ndtri(u)
        y = special.ndtri(v)
        if abs(theta) >= 1.0:
            return np.where(theta * x <= y, 1.0, 0.0) if theta > 0 else np.where(-x <= y, 1.0, 0.0)
        return special.ndtr((y - theta * x) / math.sqrt(1.0 - theta * theta))
    if fam is CopulaFamily.CLAYTON:
        lu = np.log(u)
        logA, _, _ = _clayton_logA(theta, lu, np.log(v))
        return np.exp(-(theta + 1.0) * lu - (1.0 / theta + 1.0) * logA)
    if fam is CopulaFamily.JOE:
        logS, _, b, lub, _ = _joe_parts(theta, u, v)
        return np.exp((1.0 / theta - 1.0) * logS + (theta - 1.0) * lub) * (1.0 - b)
    if fam is CopulaFamily.GUMBEL:
        x = -np.log(u)
        logA = _gumbel_logA(theta, x, -np.log(v))
        logC = -np.exp(logA / theta)
        return np.exp(logC + (1.0 / theta - 1.0) * logA + (theta - 1.0) * np.log(x) + x)
    d = 1.0 - theta * (1.0 - u) * (1.0 - v)
    return v * (1.0 - theta * (1.0 - v)) / (d * d)


def copula_partial_theta(spec: CopulaSpec, u, v):
    """dC/dtheta at interior points (arguments clamped like the other partials)."""
    u = np.clip(_check_unit("u", u), UV_EPS, 1.0 - UV_EPS)
    v = np.clip(_check_unit("v", v), UV_EPS, 1.0 - UV_EPS)
    u, v = np.broadcast_arrays(u, v)
    fam, theta = spec.family, spec.theta
    with np.errstate(over="ignore", under="ignore"):
        if fam is CopulaFamily.NORMAL:
            out = bvn_pdf(special.ndtri(u), special.ndtri(v), theta)
        elif fam is CopulaFamily.CLAYTON:
            lu, lv = np.log(u), np.log(v)
            logA, a, b = _clayton_logA(theta, lu, lv)
            C = np.exp(-logA / theta)
            ratio = np.exp(a - logA) * (-lu) + np.exp(b - logA) * (-lv)
            out = C * (logA / theta**2 - ratio / theta)
        elif fam is CopulaFamily.JOE:
            logS, a, b, lub, lvb = _joe_parts(theta, u, v)
            S_theta = a * lub * (1.0 - b) + b * lvb * (1.0 - a)
            out = -np.exp(logS / theta) * (-logS / theta**2 + S_theta * np.exp(-logS) / theta)
        elif fam is CopulaFamily.GUMBEL:
            x, y = -np.log(u), -np.log(v)
            lx, ly = np.log(x), np.log(y)
            logA = _gumbel_logA(theta, x, y)
            Ath = np.exp(logA / theta)
            inner = -logA / theta**2 + (np.exp(theta * lx - logA) * lx + np.exp(theta * ly - logA) * ly) / theta
            out = -np.exp(-Ath) * Ath * inner
        else:
            ub, vb = 1.0 - u, 1.0 - v
            d = 1.0 - theta * ub * vb
            out = u * v * ub * vb / (d * d)
    return out if out.ndim else float(out)


# -- Kendall's tau --------------------------------------------------------------------

def joe_debye_integral(theta: float) -> float:
    """Integral over (0, 1) of t log(t) (1 - t)^(2(1 - theta)/theta)."""
    expo = 2.0 * (1.0 - theta) / theta

    def integrand(t):
        if t <= 0.0 or t >= 1.0:
            return 0.0
        return t * math.log(t) * (1.0 - t) ** expo

    def smooth_part(t):
        # t log(t) / (1 - t), finite at t = 1
        if t >= 1.0:
            return -1.0
        return t * math.log(t) / (1.0 - t)

    lo, _ = integrate.quad(integrand, 0.0, 0.5, epsabs=1e-11, epsrel=1e-11, limit=200)
    # algebraic weight (1 - t)^(expo + 1) absorbs the endpoint singularity at t = 1
    hi, _ = integrate.quad(smooth_part, 0.5, 1.0, weight="alg", wvar=(0.0, expo + 1.0),
                           epsabs=1e-11, epsrel=1e-11, limit=200)
    return lo + hi


def kendall_tau(spec: CopulaSpec) -> float:
    fam, theta = spec.family, spec.theta
    if fam is CopulaFamily.NORMAL:
        return 2.0 / math.pi * math.asin(theta)
    if fam is CopulaFamily.CLAYTON:
        return theta / (theta + 2.0)
    if fam is CopulaFamily.GUMBEL:
        return 1.0 - 1.0 / theta
    if fam is CopulaFamily.JOE:
        return 1.0 + 4.0 / theta**2 * joe_debye_integral(theta)
    if abs(theta) < 1e-4:
        return 2.0 * theta / 9.0 + theta**2 / 18.0 + theta**3 / 45.0
    if theta == 1.0:
        return 1.0 / 3.0
    return 1.0 - 2.0 / (3.0 * theta**2) * (theta + (1.0 - theta) ** 2 * math.log1p(-theta))
