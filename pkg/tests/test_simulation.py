"""Tests for the Monte Carlo harness: data generation, replicates, summaries, tables."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np
import pytest
from scipy.special import expit

from mweight._config import reset
from mweight.balance import balance_test, mirror_histogram, standardized_difference
from mweight.data import INTERCEPT, ObservationalDataset, dataset_summary
from mweight.estimators import estimate_mw, plug_in_variance_prop2
from mweight.exceptions import ModelError, SimulationError
from mweight.serialization import dumps
from mweight.simulation import (
    METHODS,
    Method,
    MonteCarloSummary,
    ScenarioSpec,
    TABLE3_METHODS,
    format_table1,
    format_table2,
    format_table3,
    generate_dataset,
    run_replicate,
    run_table1,
    run_table2,
    run_table3,
    select_methods,
    summarize,
)
from mweight.trace import all_records, clear
from mweight.types import Failure, Success
from mweight.weights import (
    SmoothWeightConfig,
    effective_sample_sizes,
    fit_logistic,
    matching_weights,
)


@pytest.fixture(autouse=True)
def _reset_config():
    reset()
    yield
    reset()


def _always_fails(d: ObservationalDataset):
    raise ModelError("deliberate failure")


# ---------------------------------------------------------------------------
# ScenarioSpec
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    {"scenario_id": 4},
    {"scenario_id": 1, "n": 1},
    {"scenario_id": 1, "replicates": 0},
    {"scenario_id": 1, "seed": -1},
])
def test_invalid_scenario(kwargs):
    with pytest.raises(ValueError):
        ScenarioSpec(**kwargs)


def test_truth():
    assert ScenarioSpec(1).truth == 2.0
    assert ScenarioSpec(2, theta=0.25).truth == 0.5
    assert ScenarioSpec(2, theta=0.0).truth == 0.0
    assert ScenarioSpec(2, theta=0.0).heterogeneous


# ---------------------------------------------------------------------------
# generate_dataset
# ---------------------------------------------------------------------------

def test_same_seed_and_index_give_identical_data():
    spec = ScenarioSpec(2, n=200, seed=11)
    a = generate_dataset(spec, 3)
    b = generate_dataset(spec, 3)
    assert np.array_equal(a.outcomes, b.outcomes)
    assert np.array_equal(a.treatments, b.treatments)
    assert np.array_equal(a.covariates, b.covariates)
    c = generate_dataset(spec, 4)
    assert not np.array_equal(a.outcomes, c.outcomes)


def test_covariate_layout():
    d = generate_dataset(ScenarioSpec(1, n=500), 0)
    assert tuple(d.covariate_names) == (INTERCEPT, "x1", "x2", "x3", "x4")
    assert np.all(d.covariates[:, 0] == 1.0)
    assert set(np.unique(d.covariates[:, 3])) <= {0.0, 2.0}
    assert set(np.unique(d.covariates[:, 4])) <= {0.0, 2.0}


def test_null_effect_has_no_treatment_term():
    null = generate_dataset(ScenarioSpec(2, n=300, seed=5, theta=0.0), 0)
    half = generate_dataset(ScenarioSpec(2, n=300, seed=5, theta=0.5), 0)
    constant = generate_dataset(ScenarioSpec(2, n=300, seed=5), 0)
    z = null.treatments
    x1 = null.covariates[:, 1]
    x3 = null.covariates[:, 3]
    assert np.array_equal(z, half.treatments)
    np.testing.assert_allclose(half.outcomes - null.outcomes, 0.5 * (2.5 + 0.5 * x1 - 0.5 * x3) * z, atol=1e-12)
    np.testing.assert_allclose(constant.outcomes - null.outcomes, 2.0 * z, atol=1e-12)


def test_scenario2_treated_fraction():
    d = generate_dataset(ScenarioSpec(2, n=10000, seed=1), 0)
    assert 0.33 <= d.treatments.mean() <= 0.42


def test_scenario1_outcome_variance_ratio():
    d = generate_dataset(ScenarioSpec(1, n=10000, seed=1), 0)
    assert 3.2 <= np.var(d.outcomes) / 4.0 <= 4.1


def test_propensity_fit_recovers_true_coefficients():
    spec = ScenarioSpec(1, n=1000, seed=2)
    d = generate_dataset(spec, 0)
    fit = fit_logistic(d)
    sw_se = np.sqrt(np.diag(np.linalg.inv(
        (d.covariates * (fit.fitted * (1 - fit.fitted))[:, None]).T @ d.covariates
    )))
    assert np.all(np.abs(fit.beta - spec.beta_true) <= 4 * sw_se)


# ---------------------------------------------------------------------------
# Replicates and summaries
# ---------------------------------------------------------------------------

def test_run_replicate_runs_every_method():
    results = run_replicate(ScenarioSpec(1, n=500, seed=0), 0)
    assert len(results) == len(METHODS) == 13
    assert all(isinstance(r, Success) for r in results)
    assert abs(results[0].value.delta_hat - 2.0) < 1.0


def test_select_methods():
    assert [m.method_id for m in select_methods(TABLE3_METHODS)] == [8, 10, 7]
    with pytest.raises(ValueError):
        select_methods([14])


def test_summary_normalization_and_mse_identity():
    spec = ScenarioSpec(1, n=300, replicates=20, seed=3)
    summary = summarize(spec, select_methods((1, 8, 10)), n_jobs=1)
    reference = summary.method(1)
    assert reference.var_rel == pytest.approx(100.0)
    assert reference.mse_rel == pytest.approx(100.0)
    for row in summary.methods:
        assert row.replicates_used == 20
        assert row.failures == 0
        assert row.mse == pytest.approx(row.variance + row.bias ** 2, abs=1e-10)
        assert 0.0 <= row.coverage_pct <= 100.0
    assert summary.method(8).ess_mean is not None
    assert reference.ess_mean is None


def test_summary_independent_of_worker_count():
    spec = ScenarioSpec(2, n=200, replicates=8, seed=9)
    methods = select_methods((1, 8))
    assert dumps(summarize(spec, methods, n_jobs=1)) == dumps(summarize(spec, methods, n_jobs=2))


def test_failures_counted_and_budget_enforced():
    spec = ScenarioSpec(1, n=200, replicates=5, seed=0)
    broken = Method(99, "broken", _always_fails)
    results = run_replicate(spec, 0, (broken,))
    assert isinstance(results[0], Failure)
    assert isinstance(results[0].exception, ModelError)
    with pytest.raises(SimulationError):
        summarize(spec, (broken,), n_jobs=1)


def test_failure_survives_worker_round_trip():
    spec = ScenarioSpec(1, n=200, replicates=4, seed=0)
    broken = Method(99, "broken", _always_fails)
    with pytest.raises(SimulationError) as info:
        summarize(spec, (broken,), n_jobs=2)
    assert info.value.failures == 4


def test_tables_require_enough_replicates():
    with pytest.raises(ValueError):
        run_table1([1], n=200, replicates=50)
    with pytest.raises(ValueError):
        run_table2([1], n=200, replicates=99)
    with pytest.raises(ValueError):
        run_table3([0.0], [200], replicates=10)


@pytest.mark.parametrize("n_jobs", [1, 2])
def test_replicates_leave_trace_store_empty(n_jobs):
    clear()
    summarize(ScenarioSpec(1, n=200, replicates=4, seed=2), select_methods((8, 10)), n_jobs=n_jobs)
    assert all_records() == []


# ---------------------------------------------------------------------------
# Weighted-sample properties of generated data
# ---------------------------------------------------------------------------

def test_scenario1_treated_proportion():
    s = dataset_summary(generate_dataset(ScenarioSpec(1, n=1000, seed=0), 0))
    assert 0.30 <= s.treated_fraction <= 0.45


def test_matching_weights_balance_arm_totals():
    d = generate_dataset(ScenarioSpec(1, n=10000, seed=4), 0)
    w = matching_weights(fit_logistic(d).fitted, d.treatments, SmoothWeightConfig.from_delta())
    ess = effective_sample_sizes(d, w)
    assert ess.ess_treated / ess.ess_control == pytest.approx(1.0, rel=0.10)


def test_weighted_mirror_histogram_is_symmetric():
    spec = ScenarioSpec(2, n=1000, seed=6)
    cfg = SmoothWeightConfig.from_delta()
    treated = control = 0.0
    ess_total = 0.0
    for i in range(100):
        d = generate_dataset(spec, i)
        e = fit_logistic(d).fitted
        w = matching_weights(e, d.treatments, cfg)
        h = mirror_histogram(d, e, w)
        treated = treated + h.weighted_counts_treated
        control = control + h.weighted_counts_control
        ess_total += effective_sample_sizes(d, w).ess_total
    assert np.max(np.abs(treated - control)) / ess_total <= 0.05


def test_plug_in_variance_agrees_with_sandwich_for_known_scores():
    spec = ScenarioSpec(1, n=1000, seed=8)
    ratios = []
    for i in range(50):
        d = generate_dataset(spec, i)
        e = expit(d.covariates @ spec.beta_true)
        est = estimate_mw(d, known_scores=e)
        plug_in = plug_in_variance_prop2(d, e, est.components["mu1"], est.components["mu0"])
        ratios.append(plug_in / est.se ** 2)
    assert 0.8 <= np.mean(ratios) <= 1.3


# ---------------------------------------------------------------------------
# Text tables
# ---------------------------------------------------------------------------

def test_format_table1_and_table2():
    methods = select_methods((1, 8))
    scenarios = [
        summarize(ScenarioSpec(k, n=200, replicates=5, seed=1), methods, n_jobs=1)
        for k in (1, 2)
    ]
    text1 = format_table1(MonteCarloSummary(table=1, scenarios=scenarios))
    lines = text1.splitlines()
    # scenarios sit side by side: one header row, one row per method
    assert "Scenario 1" in lines[1] and "Scenario 2" in lines[1]
    assert lines[2].count("bias%") == 2
    assert len(lines) == 3 + len(methods)
    assert lines[-1].startswith("8:MW")
    text2 = format_table2(MonteCarloSummary(table=2, scenarios=scenarios[:1]))
    assert text2.startswith("Coverage")
    assert "S1" in text2


def test_format_table3():
    methods = select_methods(TABLE3_METHODS)
    scenarios = [
        summarize(ScenarioSpec(2, n=n, replicates=5, seed=1, theta=t), methods, n_jobs=1)
        for n in (200, 400)
        for t in (0.0, 0.5)
    ]
    text = format_table3(MonteCarloSummary(table=3, scenarios=scenarios))
    header, *rows = text.splitlines()[1:]
    assert header.startswith("theta")
    assert "7:DR IPW n=200" in header and "7:DR IPW n=400" in header
    assert header.index("8:MW n=200") < header.index("8:MW n=400") < header.index("10:DR MW n=200")
    assert [r.split()[0] for r in rows] == ["0", "0.5"]
    assert all(len(r.split()) == 1 + 2 * len(methods) for r in rows)
    # theta=0 has zero truth, so bias percentages are undefined
    assert scenarios[0].method(8).bias_pct is None


# ---------------------------------------------------------------------------
# Full-scale reproductions (pytest -m monte_carlo)
# ---------------------------------------------------------------------------

@pytest.mark.monte_carlo
def test_table1_scenario1():
    sc = run_table1([1], n=1000, replicates=1000, seed=0, n_jobs=-1).scenarios[0]
    assert 95 <= sc.method(8).var_rel <= 120
    assert abs(sc.method(8).bias_pct) <= 2.1
    assert sc.method(8).ess_mean == pytest.approx(714, rel=0.05)
    assert sc.method(4).ess_mean == pytest.approx(758, rel=0.06)
    assert sc.method(9).bias_pct == pytest.approx(-29.8, abs=4)
    assert abs(sc.method(11).bias_pct) <= 1.5
    assert sc.method(13).bias_pct == pytest.approx(9.4, abs=3)
    assert sc.method(2).bias_pct == pytest.approx(2.6, abs=1.5)
    # MW and IPW target the same estimand under a constant effect
    assert abs(sc.method(8).mean_estimate - sc.method(6).mean_estimate) < 0.01 * 2.0
    assert sc.method(10).variance <= 1.02 * sc.method(8).variance


@pytest.mark.monte_carlo
def test_table1_scenario2():
    sc = run_table1([2], n=1000, replicates=1000, seed=0, n_jobs=-1).scenarios[0]
    assert abs(sc.method(10).mean_estimate - sc.method(8).mean_estimate) < 0.01 * 2.0
    assert sc.method(10).variance <= 1.02 * sc.method(8).variance


@pytest.mark.monte_carlo
def test_table1_scenario3():
    sc = run_table1([3], n=1000, replicates=1000, seed=0, n_jobs=-1).scenarios[0]
    assert sc.method(9).bias_pct == pytest.approx(-87.0, abs=4)
    assert sc.method(10).variance <= sc.method(8).variance <= sc.method(6).variance
    assert sc.method(6).variance / sc.method(8).variance == pytest.approx(512 / 130, rel=0.35)
    assert sc.method(7).variance / sc.method(10).variance == pytest.approx(494 / 113, rel=0.35)


@pytest.mark.monte_carlo
def test_table2_coverage():
    summary = run_table2([1, 2], n=1000, replicates=1000, seed=0, n_jobs=-1)
    s1, s2 = summary.scenarios
    assert s2.method(8).coverage_pct == pytest.approx(93.9, abs=2)
    assert s1.method(13).coverage_pct == pytest.approx(74.3, abs=5)
    assert s1.method(9).coverage_pct <= 20


@pytest.mark.monte_carlo
def test_table3_type_one_error_and_power():
    thetas = (0.0, 0.25, 0.5)
    summary = run_table3(list(thetas), [200, 600], replicates=1000, seed=0, n_jobs=-1)
    cells = {(sc.n, sc.theta): sc for sc in summary.scenarios}
    for n in (200, 600):
        mw = cells[(n, 0.0)].method(8).rejection_pct
        assert 3.0 <= mw <= 7.0
        assert cells[(n, 0.0)].method(7).rejection_pct > mw
        for method_id in TABLE3_METHODS:
            rates = [cells[(n, t)].method(method_id).rejection_pct for t in thetas]
            assert all(b >= a - 1.0 for a, b in zip(rates, rates[1:]))
    assert cells[(600, 0.5)].method(8).rejection_pct >= 98.0


@pytest.mark.monte_carlo
def test_balance_null_rejection_rate():
    spec = ScenarioSpec(2, n=1000, seed=0)
    rejected = sum(
        balance_test(generate_dataset(spec, i), None, "x1").p_value < 0.05
        for i in range(1000)
    )
    assert 35 <= rejected <= 65


@pytest.mark.monte_carlo
def test_balance_detects_omitted_confounder():
    spec = ScenarioSpec(2, n=1000, seed=0)
    ps_columns = (INTERCEPT, "x1", "x2", "x4")
    rejected = sum(
        balance_test(generate_dataset(spec, i), ps_columns, "x3").p_value < 0.05
        for i in range(200)
    )
    assert rejected > 100


@pytest.mark.monte_carlo
def test_matching_weights_shrink_standardized_difference():
    spec = ScenarioSpec(2, n=1000, seed=0)
    cfg = SmoothWeightConfig.from_delta()
    improved = 0
    for i in range(200):
        d = generate_dataset(spec, i)
        w = matching_weights(fit_logistic(d).fitted, d.treatments, cfg)
        improved += standardized_difference(d, w, "x1") < standardized_difference(d, None, "x1")
    assert improved > 190


@pytest.mark.monte_carlo
def test_sandwich_se_matches_bootstrap():
    d = generate_dataset(ScenarioSpec(1, n=500, seed=0), 0)
    rng = np.random.default_rng(0)
    boot = []
    for _ in range(500):
        idx = rng.integers(0, d.n, size=d.n)
        resample = ObservationalDataset(
            d.outcomes[idx], d.treatments[idx], d.covariates[idx], d.covariate_names,
        )
        boot.append(estimate_mw(resample).delta_hat)
    assert estimate_mw(d).se == pytest.approx(np.std(boot, ddof=1), rel=0.15)
