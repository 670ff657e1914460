import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_array_equal

from ghselect.data import (
    filter_sections,
    load_count_table,
    make_count_table,
    read_count_table_text,
    serialize_count_table,
    validate_against_population,
)
from ghselect.errors import DataError, FitError
from ghselect.design import Intercept
from ghselect.model import ModelSpec, fit

from conftest import random_table

FRAGMENT = "data/fragment.csv"
FRAGMENT_RAW = "data/fragment_raw.csv"


@pytest.fixture
def root(request):
    return request.config.rootpath


def test_fragment_ingests(root):
    t = load_count_table(root / FRAGMENT)
    assert len(t) == 6
    assert t.N == 222
    assert list(t.frame["n"]) == [20, 5, 5, 188, 1, 3]


def test_raw_fragment_is_rejected_by_default(root):
    with pytest.raises(DataError, match="selected=0"):
        load_count_table(root / FRAGMENT_RAW)


def test_raw_fragment_blank_policy(root):
    with pytest.warns(UserWarning, match="blanked"):
        t = load_count_table(root / FRAGMENT_RAW, unselected_informal="blank")
    assert t.flags == ("unselected-informal-blanked",)
    assert serialize_count_table(t) == serialize_count_table(load_count_table(root / FRAGMENT))


def test_canonical_text(root):
    t = load_count_table(root / FRAGMENT)
    assert serialize_count_table(t) == (root / FRAGMENT).read_text()


def test_header_only_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("district,industry,size,selected,informal,n\n")
    t = load_count_table(p)
    assert len(t) == 0 and t.N == 0
    with pytest.warns(UserWarning, match="identification"):
        spec = ModelSpec((Intercept(),), (Intercept(),))
    with pytest.raises(FitError, match="empty"):
        fit(spec, t)


def test_blank_file(tmp_path):
    p = tmp_path / "blank.csv"
    p.write_text("")
    with pytest.raises(DataError, match="empty"):
        load_count_table(p)


def test_duplicates_merged():
    df = pd.DataFrame({"district": ["1", "1"], "industry": ["C", "C"], "size": ["to 9", "to 9"],
                       "selected": [1, 1], "informal": [0, 0], "n": [2, 3]})
    with pytest.warns(UserWarning, match="merged"):
        t = make_count_table(df)
    assert len(t) == 1 and t.N == 5


def test_zero_rows_dropped():
    df = pd.DataFrame({"selected": [0, 1], "informal": ["", 1], "n": [0, 4]})
    t = make_count_table(df)
    assert len(t) == 1 and t.N == 4


@pytest.mark.parametrize("column, value, msg", [
    ("size", "huge", "size"),
    ("industry", "Z", "industry"),
    ("n", "-1", "negative"),
    ("n", "2.5", "whole"),
    ("selected", "maybe", "boolean"),
    ("complaints", "", "district covariate"),
    ("unemployment", "1.5", "unemployment"),
])
def test_validation_errors(column, value, msg):
    row = {"district": "1", "industry": "C", "size": "to 9", "selected": "1", "informal": "0", "n": "3",
           "complaints": "0.1", "unemployment": "0.05"}
    row[column] = value
    with pytest.raises(DataError, match=msg):
        make_count_table(pd.DataFrame([row]))


def test_selected_row_needs_outcome():
    with pytest.raises(DataError, match="informal"):
        make_count_table(pd.DataFrame({"selected": ["Yes"], "informal": [""], "n": [1]}))


def test_size_aliases():
    df = pd.DataFrame({"size": ["over 250", "50-250"], "selected": [0, 0], "informal": ["", ""], "n": [1, 1]})
    assert list(make_count_table(df).frame["size"].astype(str)) == ["50-249", "250+"]


def test_district_file_join(tmp_path):
    (tmp_path / "t.csv").write_text("district,industry,size,selected,informal,n\n2,C,to 9,0,,4\n1,C,to 9,1,1,2\n")
    (tmp_path / "d.csv").write_text("district,complaints,unemployment\n1,0.01,0.05\n2,0.03,0.11\n")
    t = load_count_table(tmp_path / "t.csv", tmp_path / "d.csv")
    assert list(t.frame["district"]) == ["1", "2"]
    assert list(t.frame["unemployment"]) == [0.05, 0.11]
    (tmp_path / "d2.csv").write_text("district,complaints,unemployment\n1,0.01,0.05\n")
    with pytest.raises(DataError, match="missing district covariates"):
        load_count_table(tmp_path / "t.csv", tmp_path / "d2.csv")


@given(st.integers(0, 2 ** 32 - 1))
def test_round_trip_fixpoint(seed):
    t = random_table(np.random.default_rng(seed))
    text = serialize_count_table(t)
    again = read_count_table_text(text)
    assert serialize_count_table(again) == text
    pd.testing.assert_frame_equal(again.frame, t.frame)


@given(st.integers(0, 2 ** 32 - 1))
def test_canonicalisation_ignores_row_order(seed):
    rng = np.random.default_rng(seed)
    t = random_table(rng)
    shuffled = t.frame.sample(frac=1.0, random_state=int(rng.integers(1 << 30))).astype(object)
    shuffled["informal"] = shuffled["informal"].where(shuffled["informal"].notna(), "")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = make_count_table(shuffled)
    assert serialize_count_table(again) == serialize_count_table(t)


def test_expand_units_preserves_counts(rng):
    t = random_table(rng, n_rows=10)
    units = t.expand_units()
    assert len(units) == t.N
    assert_array_equal(units["n"], 1)


# -- population checks --------------------------------------------------------------------

def _pop():
    return make_count_table(pd.DataFrame({
        "district": ["1"] * 4, "industry": ["B", "C", "C", "O"], "size": ["to 9"] * 4,
        "selected": [0, 0, 1, 0], "informal": ["", "", "1", ""], "n": [7, 50, 3, 2]}))


def test_population_pass_and_fail():
    t = _pop()
    assert validate_against_population(t, 62).passed
    rep = validate_against_population(t, 70)
    assert not rep.passed and rep.difference == -8
    assert "FAIL" in rep.render()


def test_section_exclusion_reported():
    rep = validate_against_population(_pop(), 53, exclude_sections=["B", "D", "O"])
    assert rep.passed
    assert sorted(rep.excluded["industry"]) == ["B", "O"]
    assert "sections B,O" in rep.render()
    kept, dropped = filter_sections(_pop(), "B,D,O".split(","))
    assert kept.N == 53 and dropped["n"].sum() == 9


def test_coverage_shares():
    rep = validate_against_population(_pop())
    cov = rep.coverage["industry"]
    assert cov["population_pct"].sum() == pytest.approx(100.0)
