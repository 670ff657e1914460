"""Aggregated count tables: loading, validation and canonical serialisation.

A count table has one row per covariate combination x selection status x
outcome status.  Canonical CSV layout::

    district,industry,size,selected,informal,n[,other covariates...]

``selected`` and ``informal`` are written as 0/1; ``informal`` is empty on
rows with ``selected = 0`` (the outcome is never observed there).  Inputs may
also use No/Yes.  Extra columns (e.g. ``complaints``, ``unemployment``) follow
in alphabetical order and are written with ``repr`` so floats round-trip
exactly.  Rows are sorted by every key column; duplicate keys are merged.
"""

from __future__ import annotations

import csv
import io
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .design import _natural_key
from .errors import DataError

SIZE_LEVELS = ["to 9", "10-49", "50-249", "250+"]
_SIZE_ALIASES = {"over 250": "250+", "250 +": "250+", "50-250": "50-249", "0-9": "to 9", "<10": "to 9"}
NACE_SECTIONS = list("ABCDEFGHIJKLMNOPQRSTU")
KEY_COLUMNS = ["district", "industry", "size", "selected", "informal"]
STATUS_COLUMNS = ["selected", "informal", "n"]
DISTRICT_COVARIATES = ["complaints", "unemployment"]

_TRUE = {"1", "yes", "y", "true", "t"}
_FALSE = {"0", "no", "n", "false", "f"}


@dataclass(frozen=True)
class CountTable:
    """Canonical aggregated data.  Build through :func:`make_count_table`."""

    frame: pd.DataFrame
    flags: tuple[str, ...] = ()

    @property
    def N(self) -> int:
        return int(self.frame["n"].sum())

    @property
    def covariates(self) -> list[str]:
        return [c for c in self.frame.columns if c not in STATUS_COLUMNS]

    def __len__(self) -> int:
        return len(self.frame)

    def selected_rows(self) -> pd.DataFrame:
        return self.frame[self.frame["selected"] == 1]

    def to_csv(self) -> str:
        return serialize_count_table(self)

    def expand_units(self) -> pd.DataFrame:
        """One record per unit (n = 1 rows); for checking aggregation invariance."""
        f = self.frame
        idx = np.repeat(np.arange(len(f)), f["n"].to_numpy())
        out = f.iloc[idx].reset_index(drop=True).copy()
        out["n"] = 1
        return out


# -- parsing helpers ------------------------------------------------------------------

def _parse_bool(value, column: str, allow_empty: bool):
    if value is None or value is pd.NA or (isinstance(value, float) and np.isnan(value)):
        if allow_empty:
            return pd.NA
        raise DataError(f"missing value in {column!r}")
    s = str(value).strip().lower()
    if s == "":
        if allow_empty:
            return pd.NA
        raise DataError(f"missing value in {column!r}")
    if s in _TRUE or s == "1.0":
        return 1
    if s in _FALSE or s == "0.0":
        return 0
    raise DataError(f"cannot read {value!r} in column {column!r} as a boolean")


def _to_float(column: pd.Series) -> pd.Series:
    """Numeric parse via ``float`` (correctly rounded, unlike pandas' fast path);
    unparseable or empty cells become NaN."""
    if pd.api.types.is_numeric_dtype(column):
        return column.astype(float)

    def conv(v):
        try:
            return float(v)
        except (TypeError, ValueError):
            return np.nan
    return pd.Series([conv(v) for v in column], index=column.index, dtype=float)


def _canon_size(value) -> str:
    s = re.sub(r"\s+", " ", str(value).strip())
    s = _SIZE_ALIASES.get(s.lower(), s)
    if s not in SIZE_LEVELS:
        raise DataError(f"unknown size code {value!r}; expected one of {SIZE_LEVELS}")
    return s


def _canon_industry(value) -> str:
    s = str(value).strip().upper()
    if s not in NACE_SECTIONS:
        raise DataError(f"unknown industry (NACE section) code {value!r}")
    return s


def _canon_district(value) -> str:
    s = str(value).strip()
    if s.endswith(".0") and s[:-2].isdigit():
        s = s[:-2]
    if not s:
        raise DataError("empty district identifier")
    return s


def make_count_table(frame: pd.DataFrame, *, unselected_informal: str = "reject") -> CountTable:
    """Validate and canonicalise a raw frame.

    ``unselected_informal`` decides what happens to an outcome value given on a
    row with ``selected = 0``: ``"reject"`` raises :class:`DataError`,
    ``"blank"`` clears it with a warning and records a flag on the table.
    """
    if unselected_informal not in ("reject", "blank"):
        raise ValueError("unselected_informal must be 'reject' or 'blank'")
    df = frame.copy()
    df.columns = [str(c).strip().lower() for c in df.columns]
    for col in STATUS_COLUMNS:
        if col not in df.columns:
            raise DataError(f"missing required column {col!r}")
    flags: list[str] = []

    n = pd.to_numeric(df["n"], errors="coerce")
    if n.isna().any():
        raise DataError("column 'n' must be numeric")
    if (n < 0).any():
        raise DataError("negative counts in column 'n'")
    if not np.all(np.mod(n.to_numpy(dtype=float), 1.0) == 0.0):
        raise DataError("counts in column 'n' must be whole numbers")
    df["n"] = n.astype(np.int64)

    df["selected"] = pd.array([_parse_bool(v, "selected", False) for v in df["selected"]], dtype="Int64")
    df["informal"] = pd.array([_parse_bool(v, "informal", True) for v in df["informal"]], dtype="Int64")
    bad = (df["selected"] == 0) & df["informal"].notna()
    if bad.any():
        if unselected_informal == "reject":
            raise DataError(f"{int(bad.sum())} row(s) with selected=0 carry an informal value; "
                            "the outcome is unobservable for unselected units")
        warnings.warn(f"blanked the informal field on {int(bad.sum())} unselected row(s)")
        df.loc[bad, "informal"] = pd.NA
        flags.append("unselected-informal-blanked")
    if ((df["selected"] == 1) & df["informal"].isna()).any():
        raise DataError("selected rows must carry an informal value")
    df["selected"] = df["selected"].astype(np.int64)

    if "district" in df.columns:
        df["district"] = [_canon_district(v) for v in df["district"]]
    if "industry" in df.columns:
        df["industry"] = [_canon_industry(v) for v in df["industry"]]
    if "size" in df.columns:
        df["size"] = pd.Categorical([_canon_size(v) for v in df["size"]], categories=SIZE_LEVELS, ordered=True)

    for col in df.columns:
        if col in KEY_COLUMNS or col == "n":
            continue
        values = _to_float(df[col]) if df[col].dtype == object else df[col]
        if col in DISTRICT_COVARIATES:
            values = _to_float(df[col])
            if values.isna().any():
                raise DataError(f"missing district covariate values in {col!r}")
            if (values < 0).any():
                raise DataError(f"{col!r} must be non-negative")
            if col == "unemployment" and (values > 1).any():
                raise DataError("'unemployment' is a rate and must lie in [0, 1]")
        if pd.api.types.is_numeric_dtype(values) and not values.isna().any():
            df[col] = values.astype(float)
        else:
            df[col] = df[col].astype(str)

    df = df[df["n"] > 0]
    df = _merge_duplicates(df)
    return CountTable(_canonical_order(df), tuple(flags))


def _ordered_columns(df: pd.DataFrame) -> list[str]:
    head = [c for c in ["district", "industry", "size", "selected", "informal", "n"] if c in df.columns]
    rest = sorted(c for c in df.columns if c not in head)
    return head + rest


def _merge_duplicates(df: pd.DataFrame) -> pd.DataFrame:
    keys = [c for c in _ordered_columns(df) if c != "n"]
    if df.empty:
        return df[_ordered_columns(df)]
    keyframe = df[keys].astype(object).where(df[keys].notna(), None)
    tuples = list(map(tuple, keyframe.itertuples(index=False)))
    if len(set(tuples)) == len(tuples):
        return df[_ordered_columns(df)]
    warnings.warn("duplicate key rows merged by summing their counts")
    groups: dict = {}
    order = []
    for i, key in enumerate(tuples):
        if key not in groups:
            groups[key] = i
            order.append(i)
    first = df.iloc[order].copy()
    sums = pd.Series(df["n"].to_numpy()).groupby([groups[t] for t in tuples]).sum()
    first["n"] = sums.loc[order].to_numpy()
    return first[_ordered_columns(df)]


def _sort_key(df: pd.DataFrame, col: str):
    s = df[col]
    if isinstance(s.dtype, pd.CategoricalDtype):
        return list(s.cat.codes)
    if col == "informal":
        return [-1 if pd.isna(v) else int(v) for v in s]
    if pd.api.types.is_numeric_dtype(s):
        return list(s.astype(float))
    return [_natural_key(str(v)) for v in s]


def _canonical_order(df: pd.DataFrame) -> pd.DataFrame:
    cols = _ordered_columns(df)
    df = df[cols].reset_index(drop=True)
    if df.empty:
        return df
    keys = [c for c in cols if c != "n"]
    columns = [_sort_key(df, c) for c in keys]
    order = sorted(range(len(df)), key=lambda i: tuple(col[i] for col in columns))
    return df.iloc[order].reset_index(drop=True)


# -- IO --------------------------------------------------------------------------------

def _format_cell(col: str, value) -> str:
    if value is None or value is pd.NA or (isinstance(value, float) and np.isnan(value)):
        return ""
    if col in ("selected", "informal", "n"):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def serialize_count_table(table: CountTable) -> str:
    df = table.frame
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(df.columns))
    for row in df.itertuples(index=False):
        w.writerow([_format_cell(c, v) for c, v in zip(df.columns, row)])
    return buf.getvalue()


def write_count_table(table: CountTable, path) -> None:
    Path(path).write_text(serialize_count_table(table), encoding="utf-8")


def read_count_table_text(text: str, **schema_options) -> CountTable:
    frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    return make_count_table(frame, **schema_options)


def load_count_table(path, district_path=None, **schema_options) -> CountTable:
    """Load a count table CSV, optionally joining district-level covariates.

    ``district_path`` points to a CSV with a ``district`` column plus covariate
    columns; every district of the main table must appear there.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty (a header row is required)") from None
    frame.columns = [str(c).strip().lower() for c in frame.columns]
    if district_path is not None:
        frame = _join_districts(frame, Path(district_path))
    return make_count_table(frame, **schema_options)


def _join_districts(frame: pd.DataFrame, district_path: Path) -> pd.DataFrame:
    if "district" not in frame.columns:
        raise DataError("a district file was given but the table has no 'district' column")
    dist = pd.read_csv(district_path, dtype=str, keep_default_na=False, skipinitialspace=True)
    dist.columns = [str(c).strip().lower() for c in dist.columns]
    if "district" not in dist.columns:
        raise DataError(f"{district_path} has no 'district' column")
    dist["district"] = [_canon_district(v) for v in dist["district"]]
    if dist["district"].duplicated().any():
        raise DataError(f"{district_path} lists a district more than once")
    frame = frame.copy()
    frame["district"] = [_canon_district(v) for v in frame["district"]]
    missing = sorted(set(frame["district"]) - set(dist["district"]), key=_natural_key)
    if missing:
        raise DataError(f"missing district covariates for districts {missing[:10]}")
    overlap = [c for c in dist.columns if c != "district" and c in frame.columns]
    if overlap:
        raise DataError(f"district covariates {overlap} given in both files")
    return frame.merge(dist, on="district", how="left")


# -- population checks ------------------------------------------------------------------

def filter_sections(table: CountTable, sections) -> tuple[CountTable, pd.DataFrame]:
    """Drop rows whose industry is in ``sections``; return (kept, excluded rows)."""
    sections = {str(s).strip().upper() for s in sections or [] if str(s).strip()}
    if not sections or "industry" not in table.frame.columns:
        return table, table.frame.iloc[0:0]
    mask = table.frame["industry"].isin(sections)
    kept = table.frame[~mask].reset_index(drop=True)
    return CountTable(kept, table.flags), table.frame[mask].reset_index(drop=True)


@dataclass
class PopulationReport:
    total: int
    declared: int | None
    passed: bool
    difference: int | None
    coverage: dict[str, pd.DataFrame] = field(default_factory=dict)
    excluded: pd.DataFrame | None = None
    filtered: CountTable | None = None

    def render(self) -> str:
        lines = [f"rows sum to N = {self.total}"]
        if self.declared is not None:
            status = "PASS" if self.passed else f"FAIL (difference {self.difference:+d})"
            lines.append(f"declared population N = {self.declared}: {status}")
        if self.excluded is not None and len(self.excluded):
            secs = sorted(set(self.excluded["industry"]))
            lines.append(f"excluded {len(self.excluded)} row(s), {int(self.excluded['n'].sum())} units, "
                         f"sections {','.join(secs)}")
        for name, cov in self.coverage.items():
            lines.append(f"coverage by {name}:")
            lines.append(cov.to_string())
        return "\n".join(lines)


def coverage_table(table: CountTable, column: str) -> pd.DataFrame:
    """Population / selected / informal counts and column percentages by ``column``."""
    f = table.frame
    g = f.groupby(column, observed=True, sort=False)
    out = pd.DataFrame({
        "population": g["n"].sum(),
        "selected": f[f["selected"] == 1].groupby(column, observed=True, sort=False)["n"].sum(),
        "informal": f[(f["selected"] == 1) & (f["informal"] == 1)].groupby(column, observed=True, sort=False)["n"].sum(),
    }).fillna(0).astype(np.int64)
    if column == "size":
        out = out.loc[[s for s in SIZE_LEVELS if s in out.index]]
    else:
        out = out.loc[sorted(out.index, key=lambda x: _natural_key(str(x)))]
    for c in ["population", "selected", "informal"]:
        tot = out[c].sum()
        out[c + "_pct"] = 100.0 * out[c] / tot if tot else 0.0
    return out


def validate_against_population(table: CountTable, declared_N: int | None = None,
                                exclude_sections=None) -> PopulationReport:
    kept, excluded = filter_sections(table, exclude_sections)
    total = kept.N
    passed = declared_N is None or total == int(declared_N)
    diff = None if declared_N is None else total - int(declared_N)
    coverage = {}
    for col in ("size", "industry"):
        if col in kept.frame.columns and len(kept):
            coverage[col] = coverage_table(kept, col)
    return PopulationReport(total, declared_N, passed, diff, coverage, excluded, kept)
