"""Tests for the logistic propensity model, weight functions and effective sample sizes."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from mweight._config import configure, reset
from mweight.data import ObservationalDataset
from mweight.exceptions import (
    DomainError,
    NegativeWeight,
    NonBinaryTreatment,
    RankDeficient,
    Separation,
)
from mweight.weights import (
    SmoothWeightConfig,
    att_weight,
    att_weights,
    effective_sample_sizes,
    fit_logistic,
    ipw_weight,
    ipw_weights,
    logistic_score_contributions,
    matching_weight,
    matching_weights,
    smooth_coefficients,
)

DELTA = 0.002


@pytest.fixture(autouse=True)
def _reset_config():
    reset()
    yield
    reset()


# ---------------------------------------------------------------------------
# fit_logistic
# ---------------------------------------------------------------------------

def test_intercept_only_fit_is_log_three():
    d = ObservationalDataset.from_arrays([1, 2, 3, 4], [1, 1, 1, 0])
    fit = fit_logistic(d)
    assert fit.beta[0] == pytest.approx(np.log(3.0), abs=1e-9)
    assert fit.fitted == pytest.approx(np.full(4, 0.75))
    assert fit.model_columns == (0,)


def test_score_equations_hold_at_fit():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(200, 2))
    z = (rng.random(200) < 1.0 / (1.0 + np.exp(-(0.3 + x[:, 0])))).astype(float)
    d = ObservationalDataset.from_arrays(np.zeros(200), z, x)
    fit = fit_logistic(d)
    score = logistic_score_contributions(d.covariates, z, fit.beta).sum(axis=0)
    assert np.max(np.abs(score)) <= 1e-6
    assert np.all((fit.fitted > 0) & (fit.fitted < 1))


def test_perfect_separation_raises():
    d = ObservationalDataset.from_arrays([0, 0, 0, 0], [0, 0, 1, 1], [[-2], [-1], [1], [2]])
    with pytest.raises(Separation):
        fit_logistic(d)


def test_rank_deficient_design_raises():
    d = ObservationalDataset.from_arrays(
        [0, 0, 0, 0], [0, 1, 1, 0], [[1, 2], [2, 4], [3, 6], [4, 8]], ["a", "b"]
    )
    with pytest.raises(RankDeficient):
        fit_logistic(d)


def test_fit_on_column_subset():
    d = ObservationalDataset.from_arrays(
        [0] * 6, [0, 1, 0, 1, 1, 0], [[1, 5], [2, 1], [3, 3], [4, 2], [0, 4], [1, 1]], ["a", "b"]
    )
    fit = fit_logistic(d, ["(intercept)", "a"])
    assert fit.model_columns == (0, 1)
    assert fit.beta.shape == (2,)


# ---------------------------------------------------------------------------
# smooth_coefficients
# ---------------------------------------------------------------------------

def _eta1_conditions(cfg: SmoothWeightConfig):
    d1 = P.polyder(cfg.a)
    return (
        P.polyval(cfg.lower, cfg.a),
        P.polyval(cfg.lower, d1),
        P.polyval(cfg.upper, cfg.a),
        P.polyval(cfg.upper, d1),
    )


def test_eta1_boundary_conditions():
    cfg = smooth_coefficients(DELTA)
    ratio = (1 - 2 * DELTA) / (1 + 2 * DELTA)
    slope = 4 / (1 + 2 * DELTA) ** 2
    v_lo, d_lo, v_hi, d_hi = _eta1_conditions(cfg)
    assert v_lo == pytest.approx(1.0, abs=1e-10)
    assert d_lo == pytest.approx(0.0, abs=1e-10)
    assert v_hi == pytest.approx(ratio, abs=1e-10)
    assert d_hi == pytest.approx(-slope, abs=1e-10)


def test_eta0_boundary_conditions():
    cfg = smooth_coefficients(DELTA)
    d0 = P.polyder(cfg.b)
    ratio = (1 - 2 * DELTA) / (1 + 2 * DELTA)
    slope = 4 / (1 + 2 * DELTA) ** 2
    assert P.polyval(cfg.lower, cfg.b) == pytest.approx(ratio, abs=1e-10)
    assert P.polyval(cfg.lower, d0) == pytest.approx(slope, abs=1e-10)
    assert P.polyval(cfg.upper, cfg.b) == pytest.approx(1.0, abs=1e-10)
    assert P.polyval(cfg.upper, d0) == pytest.approx(0.0, abs=1e-10)


def test_eta0_at_lower_knot_for_delta_one_tenth():
    cfg = smooth_coefficients(0.1)
    assert P.polyval(0.4, cfg.b) == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_eta0_mirrors_eta1():
    cfg = smooth_coefficients(DELTA)
    grid = np.linspace(cfg.lower, cfg.upper, 11)
    assert P.polyval(grid, cfg.b) == pytest.approx(P.polyval(1.0 - grid, cfg.a), abs=1e-8)


def _hermite(e, delta, v_lo, slope_lo, v_hi, slope_hi):
    t = (np.asarray(e) - (0.5 - delta)) / (2 * delta)
    width = 2 * delta
    return (
        (2 * t**3 - 3 * t**2 + 1) * v_lo
        + (t**3 - 2 * t**2 + t) * width * slope_lo
        + (-2 * t**3 + 3 * t**2) * v_hi
        + (t**3 - t**2) * width * slope_hi
    )


def test_patches_match_closed_form_hermite_cubics():
    cfg = smooth_coefficients(DELTA)
    ratio = (1 - 2 * DELTA) / (1 + 2 * DELTA)
    slope = 4 / (1 + 2 * DELTA) ** 2
    grid = np.linspace(cfg.lower, cfg.upper, 9)
    assert P.polyval(grid, cfg.a) == pytest.approx(
        _hermite(grid, DELTA, 1.0, 0.0, ratio, -slope), abs=1e-9)
    assert P.polyval(grid, cfg.b) == pytest.approx(
        _hermite(grid, DELTA, ratio, slope, 1.0, 0.0), abs=1e-9)
    assert P.polyval(0.5, cfg.a) == pytest.approx(1 / 1.004 + 0.002 / 1.004**2, abs=1e-10)


@pytest.mark.parametrize("delta", [0.0, 0.5, -0.1])
def test_delta_out_of_range(delta):
    with pytest.raises(ValueError):
        smooth_coefficients(delta)


def test_from_delta_uses_configured_default():
    configure(delta=0.01)
    assert SmoothWeightConfig.from_delta().delta == 0.01
    assert SmoothWeightConfig.from_delta(0.05).delta == 0.05


# ---------------------------------------------------------------------------
# Weight functions
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("e, z, expected", [
    (0.5, 1, 1.0),
    (0.8, 1, 0.25),
    (0.8, 0, 1.0),
    (0.3, 0, 3.0 / 7.0),
])
def test_matching_weight_values(e, z, expected):
    assert matching_weight(e, z) == pytest.approx(expected)


def test_att_weight_values():
    assert att_weight(0.9, 1) == 1.0
    assert att_weight(0.5, 0) == pytest.approx(1.0)
    assert att_weight(0.75, 0) == pytest.approx(3.0)


def test_ipw_weight_values():
    assert ipw_weight(0.5, 1) == pytest.approx(2.0)
    assert ipw_weight(0.1, 1) == pytest.approx(10.0)
    assert ipw_weight(0.1, 0) == pytest.approx(10.0 / 9.0)


def test_scalar_inputs_return_float():
    assert isinstance(matching_weight(0.3, 1), float)
    assert isinstance(ipw_weight(0.3, 1), float)


@pytest.mark.parametrize("e", [0.0, 1.0, -0.2, 1.5, np.nan])
def test_domain_error(e):
    with pytest.raises(DomainError):
        matching_weight(e, 1)
    with pytest.raises(DomainError):
        att_weight(e, 0)
    with pytest.raises(DomainError):
        ipw_weight(e, 0)


@pytest.mark.parametrize("fn", [matching_weights, att_weights, ipw_weights])
def test_non_binary_treatment_rejected(fn):
    with pytest.raises(NonBinaryTreatment) as exc:
        fn(np.array([0.3, 0.6, 0.4]), np.array([1.0, 0.5, 0.0]))
    assert exc.value.row == 1


def test_scalar_treatment_must_be_binary():
    with pytest.raises(NonBinaryTreatment):
        att_weight(0.3, 2)
    with pytest.raises(NonBinaryTreatment):
        matching_weight(0.3, -1.0)


def test_weights_bounded_by_one():
    e = np.linspace(0.001, 0.999, 2001)
    cfg = smooth_coefficients(DELTA)
    for z in (0.0, 1.0):
        zz = np.full_like(e, z)
        for w in (matching_weights(e, zz), matching_weights(e, zz, cfg)):
            assert np.all(w > 0)
            assert np.all(w <= 1.0 + 1e-12)


def test_matching_weight_is_ipw_times_min():
    e = np.linspace(0.01, 0.99, 99)
    for z in (0.0, 1.0):
        zz = np.full_like(e, z)
        assert np.allclose(matching_weights(e, zz), ipw_weights(e, zz) * np.minimum(1 - e, e), rtol=1e-15)


def test_smoothed_identical_to_raw_outside_patch():
    cfg = smooth_coefficients(DELTA)
    e = np.concatenate([np.linspace(0.01, 0.4979, 500), np.linspace(0.5021, 0.99, 500)])
    for z in (0.0, 1.0):
        zz = np.full_like(e, z)
        assert np.array_equal(matching_weights(e, zz, cfg), matching_weights(e, zz))


def test_smoothed_close_to_raw_inside_patch():
    cfg = smooth_coefficients(DELTA)
    e = np.linspace(cfg.lower, cfg.upper, 401)
    for z in (0.0, 1.0):
        zz = np.full_like(e, z)
        gap = np.abs(matching_weights(e, zz, cfg) - matching_weights(e, zz))
        assert gap.max() <= 2 * DELTA


def test_weight_is_one_on_the_flat_side():
    cfg = smooth_coefficients(DELTA)
    low = np.linspace(0.01, cfg.lower - 1e-6, 50)
    high = np.linspace(cfg.upper + 1e-6, 0.99, 50)
    assert np.all(matching_weights(low, np.ones(50), cfg) == 1.0)
    assert np.all(matching_weights(high, np.zeros(50), cfg) == 1.0)


@pytest.mark.parametrize("z", [0.0, 1.0])
@pytest.mark.parametrize("knot", [0.5 - DELTA, 0.5 + DELTA])
def test_smoothed_weight_is_continuously_differentiable_at_knots(z, knot):
    cfg = smooth_coefficients(DELTA)
    h = 1e-6

    def w(e):
        return matching_weight(e, z, cfg)

    # second-order one-sided differences, each staying on its own side of the knot
    left = (3 * w(knot) - 4 * w(knot - h) + w(knot - 2 * h)) / (2 * h)
    right = (-3 * w(knot) + 4 * w(knot + h) - w(knot + 2 * h)) / (2 * h)
    assert w(knot) == pytest.approx(matching_weight(knot, z), abs=1e-10)
    assert left == pytest.approx(right, abs=1e-5)


# ---------------------------------------------------------------------------
# effective_sample_sizes
# ---------------------------------------------------------------------------

def test_effective_sample_sizes_fixture():
    d = ObservationalDataset.from_arrays([3, 1, 5, 2], [1, 0, 1, 0])
    e = np.array([0.2, 0.2, 0.8, 0.8])
    w = matching_weights(e, d.treatments)
    assert list(w) == pytest.approx([1.0, 0.25, 0.25, 1.0])
    ess = effective_sample_sizes(d, w)
    assert ess == pytest.approx((1.25, 1.25, 2.5))


def test_unit_weights_give_arm_counts():
    d = ObservationalDataset.from_arrays([3, 1, 5, 2, 7], [1, 0, 1, 0, 1])
    assert effective_sample_sizes(d, np.ones(5)) == (3.0, 2.0, 5.0)


def test_negative_weight_rejected():
    d = ObservationalDataset.from_arrays([3, 1, 5, 2], [1, 0, 1, 0])
    with pytest.raises(NegativeWeight) as exc:
        effective_sample_sizes(d, [1.0, -0.5, 1.0, 1.0])
    assert exc.value.index == 1


def test_weight_length_checked():
    d = ObservationalDataset.from_arrays([3, 1, 5, 2], [1, 0, 1, 0])
    with pytest.raises(ValueError):
        effective_sample_sizes(d, [1.0, 1.0])
