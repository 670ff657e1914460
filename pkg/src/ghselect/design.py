"""Design matrices and quadratic penalties for additive predictors.

An additive predictor is a stack of term blocks ``eta = Z_1 b_1 + ... + Z_K b_K``.
Each block carries a penalty matrix ``S_k`` (zero for unpenalised terms) that is
multiplied by a smoothing parameter when the model is fitted.

Column conventions
------------------
* terms appear in the order given;
* ``factor`` terms use treatment coding with the first level as reference;
* ``random`` terms keep every level and carry an identity penalty;
* ``smooth`` terms are cubic B-splines with a second-order difference penalty,
  reparametrised to satisfy a sum-to-zero constraint over the rows used to
  build the design (so they are not confounded with the intercept).

Level order is the categorical order when the column is an ordered pandas
Categorical and natural sort order otherwise.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline
from scipy.linalg import block_diag

from .errors import DataError


class TermKind(str, enum.Enum):
    INTERCEPT = "intercept"
    LINEAR = "linear"
    FACTOR = "factor"
    SMOOTH = "smooth"
    RANDOM = "random"


@dataclass(frozen=True)
class TermSpec:
    kind: TermKind
    covariate: str | None = None
    n_basis: int = 10

    def __post_init__(self):
        kind = TermKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is TermKind.INTERCEPT:
            object.__setattr__(self, "covariate", None)
        elif not self.covariate:
            raise ValueError(f"{kind.value} term needs a covariate")
        if kind is TermKind.SMOOTH and self.n_basis < 4:
            raise ValueError("smooth terms need n_basis >= 4")

    @property
    def label(self) -> str:
        if self.kind is TermKind.INTERCEPT:
            return "(Intercept)"
        if self.kind is TermKind.SMOOTH:
            return f"s({self.covariate})"
        if self.kind is TermKind.RANDOM:
            return f"re({self.covariate})"
        return self.covariate

    @property
    def penalized(self) -> bool:
        return self.kind in (TermKind.SMOOTH, TermKind.RANDOM)

    def to_dict(self) -> dict:
        if self.kind is TermKind.INTERCEPT:
            return {"kind": "intercept"}
        d = {"kind": self.kind.value, "covariate": self.covariate}
        if self.kind is TermKind.SMOOTH:
            d["n_basis"] = self.n_basis
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TermSpec":
        return cls(TermKind(d["kind"]), d.get("covariate"), int(d.get("n_basis", 10)))


def Intercept() -> TermSpec:
    return TermSpec(TermKind.INTERCEPT)


def Linear(covariate: str) -> TermSpec:
    return TermSpec(TermKind.LINEAR, covariate)


def Factor(covariate: str) -> TermSpec:
    return TermSpec(TermKind.FACTOR, covariate)


def Smooth(covariate: str, n_basis: int = 10) -> TermSpec:
    return TermSpec(TermKind.SMOOTH, covariate, n_basis)


def RandomEffect(covariate: str) -> TermSpec:
    return TermSpec(TermKind.RANDOM, covariate)


@dataclass
class DesignBlock:
    matrix: np.ndarray
    penalty: np.ndarray
    term: TermSpec
    column_names: list[str] = field(default_factory=list)

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]


# -- levels -----------------------------------------------------------------------

def _natural_key(s: str):
    return [(0, int(t), "") if t.isdigit() else (1, 0, t) for t in re.split(r"(\d+)", s) if t]


def factor_levels(column: pd.Series) -> list[str]:
    if isinstance(column.dtype, pd.CategoricalDtype) and column.dtype.ordered:
        present = set(column.dropna().astype(str))
        return [str(c) for c in column.dtype.categories if str(c) in present]
    return sorted({str(x) for x in column.dropna()}, key=_natural_key)


def _indicators(column: pd.Series, levels: list[str], name: str) -> np.ndarray:
    values = column.astype(str).to_numpy()
    index = {lev: i for i, lev in enumerate(levels)}
    codes = np.fromiter((index.get(v, -1) for v in values), dtype=np.int64, count=len(values))
    if np.any(codes < 0):
        unseen = sorted(set(values[codes < 0]), key=_natural_key)
        raise DataError(f"column {name!r} has levels unseen when the design was built: {unseen}")
    out = np.zeros((len(values), len(levels)))
    out[np.arange(len(values)), codes] = 1.0
    return out


# -- B-splines ----------------------------------------------------------------------

def _bspline_knots(lo: float, hi: float, n_basis: int) -> np.ndarray:
    nseg = n_basis - 3
    dx = (hi - lo) / nseg
    return lo + dx * np.arange(-3, nseg + 4)


def _bspline_eval(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    # values outside the fitted range are held at the boundary
    xc = np.clip(x, knots[3], knots[-4])
    return BSpline.design_matrix(xc, knots, 3).toarray()


def difference_penalty(n: int, order: int = 2) -> np.ndarray:
    D = np.diff(np.eye(n), n=order, axis=0)
    return D.T @ D


def spline_basis(x, n_basis: int = 10) -> DesignBlock:
    """Cubic B-spline basis on equally spaced knots over [min(x), max(x)].

    The returned penalty is ``D2' D2`` with ``D2`` the second-order difference
    operator on the coefficients; its null space holds constant and linear
    functions of ``x``.
    """
    x = np.asarray(x, dtype=float)
    if np.unique(x).size < n_basis:
        raise DataError(f"spline basis with {n_basis} functions needs at least "
                        f"{n_basis} distinct covariate values")
    knots = _bspline_knots(float(x.min()), float(x.max()), n_basis)
    B = _bspline_eval(x, knots)
    return DesignBlock(B, difference_penalty(n_basis), Smooth("x", n_basis),
                       [f"bs{j + 1}" for j in range(n_basis)])


def random_effect_block(factor: pd.Series, name: str | None = None) -> DesignBlock:
    """Full indicator matrix of a factor with an identity (ridge) penalty."""
    factor = pd.Series(factor)
    name = name or (factor.name if factor.name is not None else "group")
    levels = factor_levels(factor)
    if len(levels) < 2:
        raise DataError(f"random effect {name!r} needs at least two levels")
    Z = _indicators(factor, levels, name)
    return DesignBlock(Z, np.eye(len(levels)), RandomEffect(name), [f"{name}{lev}" for lev in levels])


# -- predictor -----------------------------------------------------------------------

@dataclass
class _TermState:
    term: TermSpec
    levels: list[str] | None = None
    knots: np.ndarray | None = None
    constraint: np.ndarray | None = None  # K x (K-1) basis of the centred subspace

    def encode(self, data: pd.DataFrame) -> np.ndarray:
        t = self.term
        if t.kind is TermKind.INTERCEPT:
            return np.ones((len(data), 1))
        col = data[t.covariate]
        if t.kind is TermKind.LINEAR:
            return np.asarray(col, dtype=float).reshape(-1, 1)
        if t.kind is TermKind.FACTOR:
            return _indicators(col, self.levels, t.covariate)[:, 1:]
        if t.kind is TermKind.RANDOM:
            return _indicators(col, self.levels, t.covariate)
        return _bspline_eval(np.asarray(col, dtype=float), self.knots) @ self.constraint

    def penalty(self) -> np.ndarray:
        t = self.term
        if t.kind is TermKind.SMOOTH:
            Q = self.constraint
            return Q.T @ difference_penalty(t.n_basis) @ Q
        if t.kind is TermKind.RANDOM:
            return np.eye(len(self.levels))
        n = 1 if t.kind in (TermKind.INTERCEPT, TermKind.LINEAR) else len(self.levels) - 1
        return np.zeros((n, n))

    def column_names(self) -> list[str]:
        t = self.term
        if t.kind in (TermKind.INTERCEPT, TermKind.LINEAR):
            return [t.label]
        if t.kind is TermKind.FACTOR:
            return [f"{t.covariate}{lev}" for lev in self.levels[1:]]
        if t.kind is TermKind.RANDOM:
            return [f"{t.label}{lev}" for lev in self.levels]
        return [f"{t.label}.{j + 1}" for j in range(self.constraint.shape[1])]

    def to_dict(self) -> dict:
        d = {"term": self.term.to_dict()}
        if self.levels is not None:
            d["levels"] = list(self.levels)
        if self.knots is not None:
            d["knots"] = [float(k) for k in self.knots]
            d["constraint"] = [[float(x) for x in row] for row in self.constraint]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "_TermState":
        return cls(
            TermSpec.from_dict(d["term"]),
            levels=d.get("levels"),
            knots=np.asarray(d["knots"], dtype=float) if "knots" in d else None,
            constraint=np.asarray(d["constraint"], dtype=float) if "constraint" in d else None,
        )


def _fit_state(term: TermSpec, data: pd.DataFrame) -> _TermState:
    if term.kind is TermKind.INTERCEPT:
        return _TermState(term)
    if term.covariate not in data.columns:
        raise DataError(f"unknown covariate {term.covariate!r}")
    col = data[term.covariate]
    if term.kind is TermKind.LINEAR:
        if not pd.api.types.is_numeric_dtype(col):
            raise DataError(f"linear term {term.covariate!r} must be numeric")
        return _TermState(term)
    if term.kind in (TermKind.FACTOR, TermKind.RANDOM):
        levels = factor_levels(col)
        if len(levels) < 2:
            raise DataError(f"{term.kind.value} term {term.covariate!r} needs at least two levels")
        return _TermState(term, levels=levels)
    if not pd.api.types.is_numeric_dtype(col) or pd.api.types.is_bool_dtype(col):
        raise DataError(f"smooth term {term.covariate!r} must be numeric")
    x = np.asarray(col, dtype=float)
    if np.unique(x).size < term.n_basis:
        raise DataError(f"smooth term {term.covariate!r} needs at least {term.n_basis} distinct values")
    knots = _bspline_knots(float(x.min()), float(x.max()), term.n_basis)
    B = _bspline_eval(x, knots)
    c = B.sum(axis=0)
    Qfull, _ = np.linalg.qr(c.reshape(-1, 1), mode="complete")
    return _TermState(term, knots=knots, constraint=Qfull[:, 1:])


class Predictor:
    """Stacked design for one additive predictor.

    Build with :func:`build_design`; :meth:`encode` re-applies the stored level
    sets, knots and constraints to new data.
    """

    def __init__(self, states: list[_TermState], data: pd.DataFrame | None = None):
        self._states = list(states)
        self.penalties = [s.penalty() for s in self._states]
        sizes = [p.shape[0] for p in self.penalties]
        edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.coefficient_slices = [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
        self.n_coef = int(edges[-1])
        self.blocks: list[DesignBlock] = []
        if data is not None:
            for st, pen in zip(self._states, self.penalties):
                self.blocks.append(DesignBlock(st.encode(data), pen, st.term, st.column_names()))

    @property
    def terms(self) -> list[TermSpec]:
        return [s.term for s in self._states]

    @property
    def column_names(self) -> list[str]:
        return [name for s in self._states for name in s.column_names()]

    @property
    def penalized_terms(self) -> list[int]:
        return [i for i, s in enumerate(self._states) if s.term.penalized]

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([b.matrix for b in self.blocks]) if self.blocks else np.zeros((0, self.n_coef))

    def encode(self, data: pd.DataFrame) -> np.ndarray:
        for s in self._states:
            if s.term.covariate is not None and s.term.covariate not in data.columns:
                raise DataError(f"unknown covariate {s.term.covariate!r}")
        return np.hstack([s.encode(data) for s in self._states])

    def eta(self, beta, data: pd.DataFrame | None = None) -> np.ndarray:
        Z = self.matrix if data is None else self.encode(data)
        return Z @ np.asarray(beta, dtype=float)

    def penalty_matrix(self, lambdas) -> np.ndarray:
        """Block-diagonal sum of lambda_k * S_k over the penalised terms."""
        lambdas = list(lambdas)
        if len(lambdas) != len(self.penalized_terms):
            raise ValueError(f"expected {len(self.penalized_terms)} smoothing parameters, got {len(lambdas)}")
        scale = dict(zip(self.penalized_terms, lambdas))
        mats = [pen * scale.get(i, 0.0) for i, pen in enumerate(self.penalties)]
        return block_diag(*mats) if mats else np.zeros((0, 0))

    def penalty_components(self) -> list[np.ndarray]:
        """Full-size (p x p) embedding of each penalised term's S_k."""
        out = []
        for i in self.penalized_terms:
            S = np.zeros((self.n_coef, self.n_coef))
            sl = self.coefficient_slices[i]
            S[sl, sl] = self.penalties[i]
            out.append(S)
        return out

    def to_dict(self) -> dict:
        return {"terms": [s.to_dict() for s in self._states]}

    @classmethod
    def from_dict(cls, d: dict) -> "Predictor":
        return cls([_TermState.from_dict(x) for x in d["terms"]])


def build_design(terms, data) -> Predictor:
    """Build the design for ``terms`` on ``data`` (a DataFrame or CountTable)."""
    frame = getattr(data, "frame", data)
    terms = list(terms)
    if not terms:
        raise ValueError("a predictor needs at least one term")
    states = [_fit_state(t, frame) for t in terms]
    return Predictor(states, frame)


def penalized_lstsq(Z: np.ndarray, y, S: np.ndarray | None = None, weights=None) -> np.ndarray:
    """Minimise sum w (y - Z b)^2 + b' S b."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    A = Z.T @ (Z * w[:, None])
    if S is not None:
        A = A + S
    return np.linalg.lstsq(A, Z.T @ (w * y), rcond=None)[0]
