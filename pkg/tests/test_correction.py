from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import oracle_values as ov
from equitriage.correction import (CalibrationConfig, PropensityEstimate, ProxyModel, bootstrap_equity_interval,
                                   correct_counts, corrected_count, estimate_propensity_duplicates, fit_proxy,
                                   predict_propensity, read_tract_table, sigmoid)
from equitriage.errors import DataIntegrityError, InsufficientDataError
from equitriage.reward import equity_corrected


def test_duplicate_estimator_point_value():
    est = estimate_propensity_duplicates(100, 30)
    assert est.rho_hat == pytest.approx(ov.RHO_HAT_100_30, abs=1e-15)
    assert est.source == "duplicates"


def test_duplicate_estimator_variance():
    assert estimate_propensity_duplicates(100, 30).variance == pytest.approx(ov.VARIANCE_100_30, abs=1e-15)


def test_no_duplicates_means_full_reporting():
    est = estimate_propensity_duplicates(50, 0)
    assert est.rho_hat == 1.0 and est.variance == 0.0


def test_zero_complaints_fall_back():
    with pytest.raises(InsufficientDataError):
        estimate_propensity_duplicates(0, 0)


def test_all_duplicates_is_data_integrity_error():
    with pytest.raises(DataIntegrityError):
        estimate_propensity_duplicates(10, 10)


@given(st.integers(1, 500), st.integers(0, 499), st.integers(2, 20))
def test_duplicate_estimator_scale_consistent(C, D, k):
    assume(D < C)
    a = estimate_propensity_duplicates(C, D).rho_hat
    b = estimate_propensity_duplicates(k * C, k * D).rho_hat
    assert a == pytest.approx(b, abs=1e-15)


def test_proxy_recovers_logit_linear_targets():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, size=(30, 4))
    beta0, beta = -0.5, np.array([2.0, 0.0, 0.0, 0.0])
    y = sigmoid(beta0 + X @ beta)
    model = fit_proxy(list(zip(map(tuple, X), y)))
    pred = sigmoid(model.beta0 + X @ np.array(model.beta))
    assert float(np.mean((pred - y) ** 2)) < 1e-6


def test_proxy_on_constant_half_targets_is_flat():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, size=(12, 4))
    model = fit_proxy([(tuple(x), 0.5) for x in X])
    assert abs(model.beta0) < 1e-6 and np.max(np.abs(model.beta)) < 1e-6


def test_proxy_needs_five_tracts():
    with pytest.raises(InsufficientDataError):
        fit_proxy([((0, 0, 0, 0), 0.5)] * 4)


def test_proxy_prediction_at_zero_is_half():
    assert predict_propensity(ProxyModel(0.0, (0, 0, 0, 0)), (0.3, 0.1, 0.9, 0.2)).rho_hat == 0.5


def test_proxy_prediction_clamped_to_minimum():
    est = predict_propensity(ProxyModel(-10.0, (0, 0, 0, 0)), (0, 0, 0, 0), rho_min=0.05)
    assert ov.LOGISTIC_MINUS_10 < 0.05
    assert est.rho_hat == 0.05 and est.source == "proxy"


def test_proxy_prediction_hand_logistic():
    est = predict_propensity(ProxyModel(2.0, (1, 0, 0, 0)), (1, 0.4, 0.7, 0.1))
    assert est.rho_hat == pytest.approx(ov.LOGISTIC_3, abs=1e-12)


def test_corrected_count_divides_by_propensity():
    assert corrected_count(80, 0.8) == pytest.approx(ov.I_HAT_80_08, abs=1e-12)


def test_corrected_count_clamps_low_propensity():
    assert corrected_count(10, 0.01, rho_min=0.05) == pytest.approx(ov.I_HAT_CLAMPED, abs=1e-12)


def test_corrected_count_of_nothing_is_zero():
    assert corrected_count(0, 0.3) == 0.0


@given(st.integers(0, 1000), st.floats(0.001, 1.0))
def test_corrected_count_never_below_observed(C, rho):
    I = corrected_count(C, rho)
    assert I >= C
    if rho >= 1.0:
        assert I == C


def test_correct_counts_sums_by_stratum_and_skips_unassigned():
    counts = correct_counts({"a": 10, "b": 20, "c": 5}, {"a": 0.5, "b": 1.0, "c": 0.25},
                            {"a": "low", "b": "high", "c": None}, stratum_order=["low", "high"])
    assert counts.N_hat == {"low": 20.0, "high": 20.0}
    assert counts.raw_N == {"low": 10.0, "high": 20.0}
    assert counts.I_hat["c"] == 20.0
    assert counts.empty_strata == ()


def test_correct_counts_flags_empty_stratum():
    counts = correct_counts({"a": 10}, {"a": 0.5}, {"a": "low"}, stratum_order=["low", "high"])
    assert counts.empty_strata == ("high",)


@given(st.lists(st.tuples(st.integers(1, 200), st.floats(0.05, 1.0)), min_size=1, max_size=8))
def test_correction_weakly_lowers_per_incident_rate(tracts):
    C = {f"t{i}": c for i, (c, _) in enumerate(tracts)}
    rho = {f"t{i}": r for i, (_, r) in enumerate(tracts)}
    counts = correct_counts(C, rho, {t: "low" for t in C}, stratum_order=["low"])
    assert counts.N_hat["low"] >= counts.raw_N["low"]
    n = 7.0
    assert n / counts.N_hat["low"] <= n / counts.raw_N["low"] + 1e-15


def _estimates(variances):
    return {f"t{i}": PropensityEstimate(f"t{i}", 0.6, v, "duplicates") for i, v in enumerate(variances)}


def test_bootstrap_degenerate_without_variance():
    est = _estimates([0.0, 0.0])
    C = {"t0": 30, "t1": 40}
    strata = {"t0": "low", "t1": "high"}
    lo, hi = bootstrap_equity_interval(C, est, strata, {"low": 3, "high": 5}, equity_corrected,
                                       stratum_order=["low", "high"])
    point = equity_corrected({"low": 3, "high": 5}, {"low": 50.0, "high": 40 / 0.6})
    assert lo == hi == pytest.approx(point)


def test_bootstrap_symmetric_setup_contains_zero():
    est = _estimates([0.004, 0.004])
    C = {"t0": 50, "t1": 50}
    strata = {"t0": "low", "t1": "high"}
    def signed_gap(n, N):
        return n["low"] / N["low"] - n["high"] / N["high"]

    lo, hi = bootstrap_equity_interval(C, est, strata, {"low": 5, "high": 5}, signed_gap,
                                       CalibrationConfig(bootstrap_B=2000), np.random.default_rng(3),
                                       ["low", "high"])
    assert lo <= 0.0 <= hi
    assert abs(lo + hi) < 0.1 * (hi - lo)


def test_bootstrap_reproducible_with_seed():
    est = _estimates([0.002, 0.01, 0.005])
    C = {"t0": 20, "t1": 35, "t2": 12}
    strata = {"t0": "low", "t1": "high", "t2": "low"}
    n = {"low": 4, "high": 6}
    args = (C, est, strata, n, equity_corrected, CalibrationConfig(bootstrap_B=200))
    a = bootstrap_equity_interval(*args, rng=np.random.default_rng(11), stratum_order=["low", "high"])
    b = bootstrap_equity_interval(*args, rng=np.random.default_rng(11), stratum_order=["low", "high"])
    assert a == b
    assert a[0] <= a[1]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 0.02), min_size=2, max_size=5), st.integers(0, 1000))
def test_bootstrap_quantiles_ordered(variances, seed):
    est = _estimates(variances)
    C = {t: 10 + i for i, t in enumerate(est)}
    strata = {t: ("low" if i % 2 == 0 else "high") for i, t in enumerate(est)}
    lo, hi = bootstrap_equity_interval(C, est, strata, {"low": 2, "high": 3}, equity_corrected,
                                       CalibrationConfig(bootstrap_B=50), np.random.default_rng(seed),
                                       ["low", "high"])
    assert lo <= hi


def test_read_tract_table_parses_rows():
    text = "tract_id,C,D,income,college,english,renter\nA,12,3,0.1,0.2,0.3,0.4\n"
    rows = read_tract_table(text)
    assert rows[0]["tract_id"] == "A" and rows[0]["C"] == 12 and rows[0]["D"] == 3
