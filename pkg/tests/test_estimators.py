import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose
from scipy import special

from conftest import random_table
from ghselect.data import load_count_table, make_count_table
from ghselect.design import Factor, Intercept, RandomEffect, build_design
from ghselect.errors import DataError, FitError
from ghselect.estimators import (
    Estimator,
    PrevalenceEstimate,
    PropensityModel,
    fit_propensity,
    gh_prevalence,
    gh_prevalence_by_domain,
    gh_with_interval,
    naive_prevalence,
    posterior_interval,
    posterior_prevalence_draws,
    ps_weighted_prevalence,
)
from ghselect.model import fit
from ghselect.simulate import simple_config, simulate_population

FRAGMENT = "data/fragment.csv"


@pytest.fixture(scope="module")
def fitted():
    table = simulate_population(simple_config(population_size=20_000, seed=8))
    return fit(simple_config().model_spec(), table), table


def _table(rows, cols=("g", "selected", "informal", "n")):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_count_table(pd.DataFrame(rows, columns=list(cols)))


# -- naive ---------------------------------------------------------------------------------

def test_naive_on_fragment():
    table = load_count_table(FRAGMENT)
    est = naive_prevalence(table)
    assert table.N == 222
    assert est.value == pytest.approx(3 / 222, abs=1e-15)
    assert est.estimator is Estimator.NAIVE


def test_naive_trivial_cases():
    assert naive_prevalence(_table([["a", 1, 0, 4], ["b", 0, "", 6]])).value == 0.0
    assert naive_prevalence(_table([["a", 1, 1, 4], ["b", 1, 1, 6]])).value == 1.0


def test_naive_among_selected():
    table = load_count_table(FRAGMENT)
    assert naive_prevalence(table, among_selected=True).value == pytest.approx(3 / 9)


def test_naive_with_external_n():
    table = load_count_table(FRAGMENT)
    assert naive_prevalence(table, N=300).value == pytest.approx(3 / 300)


# -- propensity weighting -------------------------------------------------------------------

def _certain_propensity(table):
    pred = build_design((Intercept(),), table.frame)
    return PropensityModel((Intercept(),), pred, np.array([50.0]))


def test_ps_with_unit_propensity_is_naive():
    table = load_count_table(FRAGMENT)
    assert ps_weighted_prevalence(table, _certain_propensity(table)).value == naive_prevalence(table).value


@pytest.mark.parametrize("seed", range(10))
def test_naive_never_exceeds_ps(seed):
    table = random_table(np.random.default_rng(seed), n_rows=60)
    ps = fit_propensity(table, (Intercept(), Factor("industry"), RandomEffect("district")), lambdas=[1.0])
    assert naive_prevalence(table).value <= ps_weighted_prevalence(table, ps).value + 1e-15


def test_ps_unconverged_model_rejected():
    table = load_count_table(FRAGMENT)
    model = _certain_propensity(table)
    model.converged = False
    with pytest.raises(FitError):
        ps_weighted_prevalence(table, model)


def test_ps_clamps_above_one():
    table = _table([["a", 1, 1, 10], ["b", 0, "", 1]])
    pred = build_design((Intercept(),), table.frame)
    model = PropensityModel((Intercept(),), pred, np.array([-5.0]))
    with pytest.warns(UserWarning, match="clamped"):
        est = ps_weighted_prevalence(table, model)
    assert est.value == 1.0 and est.clamped


def _two_strata_population(rng, propensities, prevalences, size=4000, dependence=0.0):
    rows = []
    for g, (ps, prev) in enumerate(zip(propensities, prevalences)):
        y = rng.random(size) < prev
        p_sel = np.where(y, min(ps + dependence, 1.0), ps)
        s = rng.random(size) < p_sel
        rows += [[g, 1, 1, int(np.sum(s & y))], [g, 1, 0, int(np.sum(s & ~y))], [g, 0, "", int(np.sum(~s))]]
    return _table(rows)


def test_ps_unbiased_when_selection_ignorable():
    rng = np.random.default_rng(123)
    truth = 0.5 * 0.2 + 0.5 * 0.4
    est = []
    for _ in range(1000):
        table = _two_strata_population(rng, (0.5, 0.1), (0.2, 0.4))
        ps = fit_propensity(table, (Intercept(), Factor("g")))
        est.append(ps_weighted_prevalence(table, ps).value)
    est = np.array(est)
    assert abs(est.mean() - truth) < 3 * est.std(ddof=1) / np.sqrt(len(est))


def test_ps_biased_when_selection_depends_on_outcome():
    rng = np.random.default_rng(7)
    table = _two_strata_population(rng, (0.05, 0.05), (0.1, 0.1), size=50_000, dependence=0.25)
    ps = fit_propensity(table, (Intercept(), Factor("g")))
    assert ps_weighted_prevalence(table, ps).value > naive_prevalence(table).value
    assert ps_weighted_prevalence(table, ps).value > 0.2


# -- generalised Heckman -------------------------------------------------------------------

def test_gh_in_unit_interval(fitted):
    res, table = fitted
    est = gh_prevalence(res, table)
    assert 0 < est.value < 1
    assert est.n_units == table.N


def test_gh_single_stratum_population(fitted):
    res, table = fitted
    row = table.frame.iloc[[0]]
    sub = type(table)(row.reset_index(drop=True))
    eta = res.outcome_predictor.eta(res.params.beta2, row)
    assert gh_prevalence(res, sub).value == pytest.approx(float(special.expit(eta[0])), abs=1e-15)


@pytest.mark.parametrize("column", ["size", "industry", "district"])
def test_domains_aggregate_to_total(fitted, column):
    res, table = fitted
    parts = gh_prevalence_by_domain(res, table, column)
    total = sum(p.value * p.n_units for p in parts) / table.N
    assert total == pytest.approx(gh_prevalence(res, table).value, abs=1e-12)


def test_size_domains_in_class_order(fitted):
    res, table = fitted
    labels = [p.domain for p in gh_prevalence_by_domain(res, table, "size")]
    assert labels == ["size=to 9", "size=10-49", "size=50-249", "size=250+"]


def test_single_domain_equals_total(fitted):
    res, table = fitted
    whole = type(table)(table.frame.assign(all="x"))
    (only,) = gh_prevalence_by_domain(res, whole, "all")
    assert only.value == pytest.approx(gh_prevalence(res, table).value, abs=1e-15)


def test_two_equal_domains_average(fitted):
    res, table = fitted
    rows = table.frame.iloc[[0, 1]].assign(n=[10, 10], half=["a", "b"]).reset_index(drop=True)
    sub = type(table)(rows)
    a, b = gh_prevalence_by_domain(res, sub, "half")
    assert gh_prevalence(res, sub).value == pytest.approx((a.value + b.value) / 2, abs=1e-15)


def test_domain_errors(fitted):
    res, table = fitted
    with pytest.raises(DataError):
        gh_prevalence_by_domain(res, table, "nope")
    with pytest.raises(DataError):
        gh_prevalence_by_domain(res, table, "size", levels=["huge"])


# -- posterior simulation --------------------------------------------------------------------

def test_zero_covariance_collapses_interval(fitted):
    res, table = fitted
    res0 = type(res)(**{**res.__dict__, "covariance": np.zeros_like(res.covariance)})
    lo, hi = posterior_interval(res0, table, n_draws=50, seed=1)
    point = gh_prevalence(res0, table).value
    assert lo == pytest.approx(point, abs=1e-14) and hi == pytest.approx(point, abs=1e-14)


def test_posterior_draws_reproducible(fitted):
    res, table = fitted
    a = posterior_interval(res, table, n_draws=1000, seed=42)
    b = posterior_interval(res, table, n_draws=1000, seed=42)
    assert a == b


def test_draws_match_full_table_evaluation(fitted):
    res, table = fitted
    draws = posterior_prevalence_draws(res, table, n_draws=5, seed=3)
    from ghselect.estimators import _outcome_draws

    B = _outcome_draws(res, 5, 3)
    for b, d in zip(B, draws):
        pv = type(res.params)(res.params.beta1, b, res.params.theta_star)
        alt = type(res)(**{**res.__dict__, "params": pv})
        assert d == pytest.approx(gh_prevalence(alt, table).value, abs=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_interval_widens_with_covariance_scale(fitted, seed):
    res, table = fitted
    lo1, hi1 = posterior_interval(res, table, n_draws=200, seed=seed)
    lo4, hi4 = posterior_interval(res, table, n_draws=200, seed=seed, scale=4.0)
    assert hi4 - lo4 >= hi1 - lo1


def test_quantiles_nest(fitted):
    res, table = fitted
    lo90, hi90 = posterior_interval(res, table, 400, (0.05, 0.95), seed=5)
    lo95, hi95 = posterior_interval(res, table, 400, (0.025, 0.975), seed=5)
    assert lo95 <= lo90 < hi90 <= hi95


def test_bad_quantiles(fitted):
    res, table = fitted
    with pytest.raises(ValueError):
        posterior_interval(res, table, 10, (0.9, 0.1))


def test_gh_with_interval_contains_point(fitted):
    res, table = fitted
    est = gh_with_interval(res, table, n_draws=200, seed=0)
    assert est.lower <= est.value <= est.upper


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_estimate_record_validation(a, b, c):
    lo, mid, hi = sorted([a, b, c])
    assert PrevalenceEstimate(mid, lo, hi).as_row()["estimate"] == mid
    if lo < mid:
        with pytest.raises(ValueError):
            PrevalenceEstimate(lo, mid, hi)


def test_estimate_rejects_non_proportion():
    with pytest.raises(ValueError):
        PrevalenceEstimate(1.5)
