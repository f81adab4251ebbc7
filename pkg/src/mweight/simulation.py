"""
Monte Carlo comparison of propensity-score estimators.

Three logistic treatment-assignment scenarios of increasing strength share a
linear outcome model with constant effect 2 (or a heterogeneous effect scaled
by theta). Each replicate draws one dataset from a substream keyed by
(seed, replicate_index) and runs every method on it; summaries are an ordered
reduction over replicate indices, so results do not depend on worker count.
"""

from __future__ import annotations

import dataclasses
import functools
import math
import warnings
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel
from scipy.special import expit

from .concurrency import failures, run_replicates, successes
from .data import INTERCEPT, ObservationalDataset
from .estimators import (
    EffectEstimate,
    estimate_dr_ipw,
    estimate_dr_mw,
    estimate_ipw,
    estimate_matched,
    estimate_mw,
    estimate_ols,
    estimate_stratified,
)
from .exceptions import MWeightError, MWeightWarning, SimulationError
from .trace import suspended
from .types import Failure, Success

SCENARIO_BETAS: dict[int, tuple[float, float, float, float, float]] = {
    1: (-1.0, 0.4, 0.2, 0.4, 0.2),
    2: (-2.0, 0.8, 0.4, 0.8, 0.4),
    3: (-3.0, 1.5, 0.75, 1.5, 0.75),
}
ALPHA_TRUE = (1.0, 2.0, -1.0, -2.0, 1.0)
DELTA_TRUE = 2.0
NOISE_SD = 2.0
COVARIATE_NAMES = (INTERCEPT, "x1", "x2", "x3", "x4")

MIN_REPLICATES = 100
MAX_FAILURE_RATE = 0.02

TABLE3_THETAS = (0.0, 0.25, 0.5)
TABLE3_SIZES = (200, 600)


# ---------------------------------------------------------------------------
# Scenario and data generation
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ScenarioSpec:
    """
    One simulation setting.

    theta=None gives the constant effect delta_true; a number switches to the
    heterogeneous effect theta * (2.5 + 0.5 x1 - 0.5 x3).
    """

    scenario_id: int
    n:           int = 1000
    replicates:  int = 1000
    seed:        int = 0
    theta:       float | None = None
    delta_true:  float = DELTA_TRUE

    def __post_init__(self) -> None:
        if self.scenario_id not in SCENARIO_BETAS:
            raise ValueError(
                f"scenario_id must be one of {sorted(SCENARIO_BETAS)}, got {self.scenario_id!r}"
            )
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n!r}")
        if self.replicates < 1:
            raise ValueError(f"replicates must be at least 1, got {self.replicates!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    @property
    def beta_true(self) -> np.ndarray:
        return np.array(SCENARIO_BETAS[self.scenario_id])

    @property
    def alpha_true(self) -> np.ndarray:
        return np.array(ALPHA_TRUE)

    @property
    def heterogeneous(self) -> bool:
        return self.theta is not None

    @property
    def truth(self) -> float:
        """Population average effect: delta_true, or 2 theta under heterogeneity (E[x3] = 1)."""
        return self.delta_true if self.theta is None else 2.0 * self.theta


def replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    """Independent generator for one replicate, a function of (seed, index) only."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate_index,)))


def generate_dataset(spec: ScenarioSpec, replicate_index: int) -> ObservationalDataset:
    rng = replicate_rng(spec.seed, replicate_index)
    n = spec.n
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    x3 = 2.0 * rng.binomial(1, 0.5, size=n)
    x4 = 2.0 * rng.binomial(1, 0.5, size=n)
    x = np.column_stack([np.ones(n), x1, x2, x3, x4])

    z = (rng.random(n) < expit(x @ spec.beta_true)).astype(float)
    noise = rng.normal(0.0, NOISE_SD, size=n)
    if spec.theta is None:
        effect = np.full(n, spec.delta_true)
    else:
        effect = spec.theta * (2.5 + 0.5 * x1 - 0.5 * x3)
    y = effect * z + x @ spec.alpha_true + noise
    return ObservationalDataset(y, z, x, COVARIATE_NAMES)


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------

PS_REDUCED = (INTERCEPT, "x1", "x2")
OUTCOME_REDUCED = (INTERCEPT, "x1", "x3")


@dataclasses.dataclass(frozen=True)
class Method:
    method_id: int
    label:     str
    estimate:  Callable[[ObservationalDataset], EffectEstimate]


METHODS: tuple[Method, ...] = (
    Method(1, "best", estimate_ols),
    Method(2, "strat", functools.partial(estimate_stratified, n_strata=5)),
    Method(3, "match 0.1", functools.partial(estimate_matched, caliper_multiplier=0.1)),
    Method(4, "match 0.2", functools.partial(estimate_matched, caliper_multiplier=0.2)),
    Method(5, "match 0.3", functools.partial(estimate_matched, caliper_multiplier=0.3)),
    Method(6, "IPW", estimate_ipw),
    Method(7, "DR IPW", estimate_dr_ipw),
    Method(8, "MW", estimate_mw),
    Method(9, "MW p", functools.partial(estimate_mw, ps_columns=PS_REDUCED)),
    Method(10, "DR MW", estimate_dr_mw),
    Method(11, "DR MW p", functools.partial(estimate_dr_mw, ps_columns=PS_REDUCED)),
    Method(12, "DR MW y", functools.partial(estimate_dr_mw, outcome_columns=OUTCOME_REDUCED)),
    Method(13, "DR MW py", functools.partial(
        estimate_dr_mw, ps_columns=PS_REDUCED, outcome_columns=OUTCOME_REDUCED,
    )),
)

REFERENCE_METHOD = 1
TABLE2_METHODS = (8, 9, 10, 11, 12, 13)
TABLE3_METHODS = (8, 10, 7)


def select_methods(ids: Sequence[int]) -> tuple[Method, ...]:
    by_id = {m.method_id: m for m in METHODS}
    unknown = [i for i in ids if i not in by_id]
    if unknown:
        raise ValueError(f"Unknown method id(s) {unknown}; valid: 1..{len(METHODS)}")
    return tuple(by_id[i] for i in ids)


ReplicateResult = list[Success[EffectEstimate] | Failure]


def run_replicate(
    spec: ScenarioSpec,
    replicate_index: int,
    methods: Sequence[Method] = METHODS,
) -> ReplicateResult:
    """
    Draw one dataset and run every method on it.

    Estimation errors are captured per method as Failure. Estimator warnings
    and trace records are suppressed inside the replicate.
    """
    d = generate_dataset(spec, replicate_index)
    results: ReplicateResult = []
    with warnings.catch_warnings(), suspended():
        warnings.simplefilter("ignore", MWeightWarning)
        for method in methods:
            try:
                results.append(Success(method.estimate(d)))
            except MWeightError as exc:
                results.append(Failure(exc, replicate_index))
    return results


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

class MethodSummary(BaseModel):
    method_id:       int
    label:           str
    replicates_used: int
    failures:        int
    mean_estimate:   float | None
    bias:            float | None
    variance:        float | None
    mse:             float | None
    bias_pct:        float | None      # percent of the true effect
    var_rel:         float | None      # percent of the reference method's variance
    mse_rel:         float | None
    ess_mean:        float | None
    coverage_pct:    float | None
    rejection_pct:   float | None


class ScenarioSummary(BaseModel):
    scenario_id: int
    n:           int
    replicates:  int
    seed:        int
    theta:       float | None
    truth:       float
    methods:     list[MethodSummary]

    def method(self, method_id: int) -> MethodSummary:
        for row in self.methods:
            if row.method_id == method_id:
                return row
        raise KeyError(method_id)


class MonteCarloSummary(BaseModel):
    table:     int
    scenarios: list[ScenarioSummary]


def _summarize_method(
    method: Method,
    spec: ScenarioSpec,
    rows: list[Success[EffectEstimate] | Failure],
) -> MethodSummary:
    estimates = successes(rows)
    failed = len(failures(rows))
    if rows and failed / len(rows) > MAX_FAILURE_RATE:
        raise SimulationError(method.label, failed, len(rows))
    if not estimates:
        return MethodSummary(
            method_id=method.method_id, label=method.label, replicates_used=0,
            failures=failed, mean_estimate=None, bias=None, variance=None, mse=None,
            bias_pct=None, var_rel=None, mse_rel=None, ess_mean=None,
            coverage_pct=None, rejection_pct=None,
        )

    truth = spec.truth
    values = np.array([e.delta_hat for e in estimates])
    mean = float(values.mean())
    bias = mean - truth
    variance = float(np.var(values))             # ddof=0 so mse == variance + bias**2
    mse = float(np.mean((values - truth) ** 2))
    ess = [e.ess_total for e in estimates if e.ess_total is not None]
    return MethodSummary(
        method_id=method.method_id,
        label=method.label,
        replicates_used=len(estimates),
        failures=failed,
        mean_estimate=mean,
        bias=bias,
        variance=variance,
        mse=mse,
        bias_pct=100.0 * bias / truth if truth != 0 else None,
        var_rel=None,
        mse_rel=None,
        ess_mean=float(np.mean(ess)) if ess else None,
        coverage_pct=100.0 * float(np.mean([e.covers(truth) for e in estimates])),
        rejection_pct=100.0 * float(np.mean([e.rejects_zero() for e in estimates])),
    )


def _relative(rows: list[MethodSummary]) -> list[MethodSummary]:
    reference = next((r for r in rows if r.method_id == REFERENCE_METHOD), None)
    if reference is None or not reference.variance or not reference.mse:
        return rows
    out = []
    for row in rows:
        if row.variance is None or row.mse is None:
            out.append(row)
            continue
        out.append(row.model_copy(update={
            "var_rel": 100.0 * row.variance / reference.variance,
            "mse_rel": 100.0 * row.mse / reference.mse,
        }))
    return out


def summarize(
    spec: ScenarioSpec,
    methods: Sequence[Method] = METHODS,
    n_jobs: int | None = None,
) -> ScenarioSummary:
    """
    Run spec.replicates replicates and aggregate each method.

    A replicate whose dataset cannot be formed counts as a failure for every
    method. Raises SimulationError when a method fails on more than 2% of
    replicates.
    """
    methods = tuple(methods)
    outcomes = run_replicates(
        functools.partial(run_replicate, spec, methods=methods),
        range(spec.replicates),
        n_jobs,
    )
    per_method: list[list[Success[EffectEstimate] | Failure]] = [[] for _ in methods]
    for outcome in outcomes:
        if isinstance(outcome, Failure):
            for bucket in per_method:
                bucket.append(outcome)
            continue
        for bucket, result in zip(per_method, outcome.value):
            bucket.append(result)

    rows = [_summarize_method(m, spec, rows) for m, rows in zip(methods, per_method)]
    return ScenarioSummary(
        scenario_id=spec.scenario_id,
        n=spec.n,
        replicates=spec.replicates,
        seed=spec.seed,
        theta=spec.theta,
        truth=spec.truth,
        methods=_relative(rows),
    )


def _check_replicates(replicates: int) -> None:
    if replicates < MIN_REPLICATES:
        raise ValueError(f"replicates must be at least {MIN_REPLICATES}, got {replicates!r}")


def run_table1(
    scenarios: Sequence[int] = (1, 2, 3),
    n: int = 1000,
    replicates: int = 1000,
    seed: int = 0,
    *,
    n_jobs: int | None = None,
) -> MonteCarloSummary:
    """Bias, variance, MSE and ESS of all 13 methods per scenario."""
    _check_replicates(replicates)
    return MonteCarloSummary(table=1, scenarios=[
        summarize(ScenarioSpec(s, n, replicates, seed), METHODS, n_jobs)
        for s in scenarios
    ])


def run_table2(
    scenarios: Sequence[int] = (1, 2, 3),
    n: int = 1000,
    replicates: int = 1000,
    seed: int = 0,
    *,
    n_jobs: int | None = None,
) -> MonteCarloSummary:
    """Coverage of the 95% Wald interval for the matching weight methods 8-13."""
    _check_replicates(replicates)
    methods = select_methods(TABLE2_METHODS)
    return MonteCarloSummary(table=2, scenarios=[
        summarize(ScenarioSpec(s, n, replicates, seed), methods, n_jobs)
        for s in scenarios
    ])


def run_table3(
    theta_values: Sequence[float] = TABLE3_THETAS,
    n_values: Sequence[int] = TABLE3_SIZES,
    replicates: int = 1000,
    seed: int = 0,
    *,
    n_jobs: int | None = None,
) -> MonteCarloSummary:
    """Wald-test rejection rates of MW, DR MW and DR IPW under heterogeneous effects (scenario 2)."""
    _check_replicates(replicates)
    methods = select_methods(TABLE3_METHODS)
    return MonteCarloSummary(table=3, scenarios=[
        summarize(ScenarioSpec(2, n, replicates, seed, theta=float(theta)), methods, n_jobs)
        for n in n_values
        for theta in theta_values
    ])


# ---------------------------------------------------------------------------
# Text tables
# ---------------------------------------------------------------------------

def _cell(value: float | None, width: int = 8, digits: int = 1) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-".rjust(width)
    return f"{value:{width}.{digits}f}"


def format_table1(summary: MonteCarloSummary) -> str:
    """Method rows; one bias/var/MSE/ESS column group per scenario, side by side."""
    group = 32
    head = "".join(
        f"{f'Scenario {sc.scenario_id} (n={sc.n})':>{group}}" for sc in summary.scenarios
    )
    sub = "".join(
        f"{'bias%':>8}{'var%':>8}{'MSE%':>8}{'ESS':>8}" for _ in summary.scenarios
    )
    reps = summary.scenarios[0].replicates if summary.scenarios else 0
    lines = [
        f"Bias, variance and MSE relative to MW (replicates={reps})",
        f"{'':<14}{head}{'':>6}",
        f"{'method':<14}{sub}{'fail':>6}",
    ]
    if summary.scenarios:
        for i, row in enumerate(summary.scenarios[0].methods):
            cells = "".join(
                f"{_cell(r.bias_pct)}{_cell(r.var_rel, digits=0)}"
                f"{_cell(r.mse_rel, digits=0)}{_cell(r.ess_mean, digits=0)}"
                for r in (sc.methods[i] for sc in summary.scenarios)
            )
            failed = sum(sc.methods[i].failures for sc in summary.scenarios)
            lines.append(f"{f'{row.method_id}:{row.label}':<14}{cells}{failed:>6d}")
    return "\n".join(lines) + "\n"


def format_table2(summary: MonteCarloSummary) -> str:
    header = f"{'method':<14}" + "".join(f"{f'S{sc.scenario_id}':>8}" for sc in summary.scenarios)
    lines = ["Coverage (%) of 95% intervals", header]
    if summary.scenarios:
        for i, row in enumerate(summary.scenarios[0].methods):
            lines.append(
                f"{f'{row.method_id}:{row.label}':<14}"
                + "".join(_cell(sc.methods[i].coverage_pct) for sc in summary.scenarios)
            )
    return "\n".join(lines) + "\n"


def format_table3(summary: MonteCarloSummary) -> str:
    """Theta rows; one rejection-rate column per (method, n)."""
    thetas = sorted({sc.theta for sc in summary.scenarios if sc.theta is not None})
    sizes = sorted({sc.n for sc in summary.scenarios})
    cells = {(sc.n, sc.theta): sc for sc in summary.scenarios}
    methods = summary.scenarios[0].methods if summary.scenarios else []
    width = 18
    lines = ["Rejection (%) at level 0.05, scenario 2, heterogeneous effect"]
    lines.append(
        f"{'theta':<8}"
        + "".join(f"{f'{row.method_id}:{row.label} n={n}':>{width}}" for row in methods for n in sizes)
    )
    for t in thetas:
        lines.append(
            f"{t:<8g}"
            + "".join(
                _cell(cells[(n, t)].methods[i].rejection_pct, width=width)
                for i in range(len(methods))
                for n in sizes
            )
        )
    return "\n".join(lines) + "\n"


FORMATTERS: dict[int, Callable[[MonteCarloSummary], str]] = {
    1: format_table1,
    2: format_table2,
    3: format_table3,
}
