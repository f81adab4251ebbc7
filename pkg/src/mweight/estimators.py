"""
Treatment-effect estimators.

Weighting estimators (MW, augmented MW, IPW, augmented IPW) are written as
stacked estimating equations (head parameters, then the logistic score
block). Point estimates are solved block by block (propensity model first,
then closed-form head parameters); standard errors come from the sandwich
of the full stack so propensity-model uncertainty is propagated.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel, Field

from ._config import get_config
from .data import ObservationalDataset
from .exceptions import (
    AllStrataDropped,
    ExtremeWeightWarning,
    NoMatches,
    StratumDroppedWarning,
    TooFewObservations,
)
from .mestimation import EstimatingSystem, sandwich
from .trace import EstimationRecord, record, timed
from .weights import (
    PropensityFit,
    SmoothWeightConfig,
    check_full_rank,
    check_scores,
    effective_sample_sizes,
    fit_logistic,
    ipw_weights,
    logistic_score_contributions,
    matching_weights,
    propensity_scores,
)

Z_975 = 1.959964
EXTREME_IPW = 100.0

ColumnSelection = Sequence[int] | Sequence[str] | None


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

class EffectEstimate(BaseModel):
    """Point estimate, sandwich (or stated approximate) SE and 95% Wald interval."""

    estimator:   str
    delta_hat:   float
    se:          float = Field(ge=0.0)
    ci95:        tuple[float, float]
    ess_treated: float | None = None
    ess_control: float | None = None
    ess_total:   float | None = None
    n:           int
    converged:   bool = True
    components:  dict[str, float] = Field(default_factory=dict)

    @classmethod
    def build(
        cls,
        estimator: str,
        delta_hat: float,
        se: float,
        n: int,
        *,
        ess: tuple[float, float] | None = None,
        components: dict[str, float] | None = None,
        converged: bool = True,
    ) -> EffectEstimate:
        half = Z_975 * se
        return cls(
            estimator=estimator,
            delta_hat=float(delta_hat),
            se=float(se),
            ci95=(float(delta_hat - half), float(delta_hat + half)),
            ess_treated=None if ess is None else float(ess[0]),
            ess_control=None if ess is None else float(ess[1]),
            ess_total=None if ess is None else float(ess[0] + ess[1]),
            n=n,
            converged=converged,
            components=components or {},
        )

    def covers(self, value: float) -> bool:
        return self.ci95[0] <= value <= self.ci95[1]

    def rejects_zero(self) -> bool:
        """Two-sided 0.05-level Wald test of delta = 0."""
        return self.se > 0 and abs(self.delta_hat / self.se) > Z_975


@dataclasses.dataclass(frozen=True)
class OutcomeModelFit:
    """Per-arm linear outcome models m_z(X) = X alpha_z."""

    alpha1:  np.ndarray
    alpha0:  np.ndarray
    columns: tuple[int, ...]

    def m1(self, x: np.ndarray) -> np.ndarray:
        return x @ self.alpha1

    def m0(self, x: np.ndarray) -> np.ndarray:
        return x @ self.alpha0


# ---------------------------------------------------------------------------
# Propensity handling shared by the weighting estimators
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class PropensityInput:
    """Either a fitted logistic model (beta joins the stack) or known scores."""

    x:      np.ndarray | None     # PS design; None when scores are known
    scores: np.ndarray
    fit:    PropensityFit | None

    @property
    def q(self) -> int:
        return 0 if self.x is None else self.x.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.empty(0) if self.fit is None else np.asarray(self.fit.beta)

    @property
    def iterations(self) -> int:
        return 0 if self.fit is None else self.fit.iterations


def resolve_propensity(
    d: ObservationalDataset,
    ps_columns: ColumnSelection,
    known_scores: Sequence[float] | np.ndarray | None,
) -> PropensityInput:
    if known_scores is not None:
        e = check_scores(np.asarray(known_scores, dtype=float))
        if e.shape != (d.n,):
            raise ValueError(f"known_scores has shape {e.shape}, expected ({d.n},)")
        return PropensityInput(x=None, scores=e, fit=None)
    fit = fit_logistic(d, ps_columns)
    return PropensityInput(x=d.design(fit.model_columns), scores=fit.fitted, fit=fit)


HeadPhi = Callable[[np.ndarray, np.ndarray], np.ndarray]


def stacked_system(
    d: ObservationalDataset,
    head_dim: int,
    head_phi: HeadPhi,
    ps: PropensityInput,
) -> EstimatingSystem:
    """
    Stack head contributions head_phi(head, e) (n, head_dim) on top of the
    logistic score block. The propensity block is solved first.
    """
    z = d.treatments
    if ps.x is None:
        return EstimatingSystem(
            dim=head_dim,
            phi=lambda theta: head_phi(theta, ps.scores),
            n=d.n,
        )
    x = ps.x
    q = ps.q

    def phi(theta: np.ndarray) -> np.ndarray:
        beta = theta[head_dim:]
        e = propensity_scores(x, beta)
        return np.hstack([
            head_phi(theta[:head_dim], e),
            logistic_score_contributions(x, z, beta),
        ])

    return EstimatingSystem(
        dim=head_dim + q,
        phi=phi,
        n=d.n,
        solve_order=(
            tuple(range(head_dim, head_dim + q)),
            tuple(range(head_dim)),
        ),
    )


def resolve_cfg(cfg: SmoothWeightConfig | None, raw: bool) -> SmoothWeightConfig | None:
    if raw:
        return None
    return cfg if cfg is not None else SmoothWeightConfig.from_delta()


def _record(
    estimator: str,
    d: ObservationalDataset,
    q: int,
    iterations: int,
    box: dict,
    notes: list[str],
) -> None:
    record(EstimationRecord(
        estimator=estimator,
        n=d.n,
        q=q,
        converged=True,
        iterations=iterations,
        duration_ms=box["duration_ms"],
        warnings=tuple(notes),
    ))


def _weighted_mean(w: np.ndarray, v: np.ndarray) -> float:
    return float(np.sum(w * v) / np.sum(w))


# ---------------------------------------------------------------------------
# Matching weight estimator
# ---------------------------------------------------------------------------

def mw_system(
    d: ObservationalDataset,
    ps: PropensityInput,
    cfg: SmoothWeightConfig | None,
) -> EstimatingSystem:
    """Stacked (mu1, mu0, beta) system of the matching weight estimator."""
    y = d.outcomes
    z = d.treatments

    def head(theta: np.ndarray, e: np.ndarray) -> np.ndarray:
        w = matching_weights(e, z, cfg)
        return np.column_stack([
            w * z * (y - theta[0]),
            w * (1.0 - z) * (y - theta[1]),
        ])

    return stacked_system(d, 2, head, ps)


def estimate_mw(
    d: ObservationalDataset,
    ps_columns: ColumnSelection = None,
    cfg: SmoothWeightConfig | None = None,
    *,
    known_scores: Sequence[float] | np.ndarray | None = None,
    raw: bool = False,
) -> EffectEstimate:
    """
    Matching weight estimator mu1 - mu0 with weighted arm means.

    Smoothed weights (cfg, default delta from configure()) are used unless
    raw=True. SE from the sandwich of the (mu1, mu0, beta) stack.
    """
    cfg = resolve_cfg(cfg, raw)
    with timed() as box:
        ps = resolve_propensity(d, ps_columns, known_scores)
        z = d.treatments
        w = matching_weights(ps.scores, z, cfg)
        mu1 = _weighted_mean(w * z, d.outcomes)
        mu0 = _weighted_mean(w * (1.0 - z), d.outcomes)
        system = mw_system(d, ps, cfg)
        sw = sandwich(system, np.concatenate([[mu1, mu0], ps.theta]),
                      iterations=ps.iterations)
        se = sw.contrast_se(_contrast(system.dim, {0: 1.0, 1: -1.0}))
        ess = effective_sample_sizes(d, w)
    _record("mw", d, system.dim, ps.iterations, box, [])
    return EffectEstimate.build(
        "mw", mu1 - mu0, se, d.n,
        ess=(ess.ess_treated, ess.ess_control),
        components={"mu1": mu1, "mu0": mu0},
    )


def _contrast(dim: int, entries: dict[int, float]) -> np.ndarray:
    c = np.zeros(dim)
    for index, value in entries.items():
        c[index] = value
    return c


# ---------------------------------------------------------------------------
# Outcome models
# ---------------------------------------------------------------------------

def fit_outcome_models(
    d: ObservationalDataset,
    columns: ColumnSelection = None,
) -> OutcomeModelFit:
    """Ordinary least squares of Y on the selected columns within each arm."""
    cols = d.columns(columns)
    x = d.design(cols)
    alphas: dict[int, np.ndarray] = {}
    for arm, mask in ((1, d.treated), (0, ~d.treated)):
        xa = x[mask]
        ya = d.outcomes[mask]
        if xa.shape[0] <= xa.shape[1]:
            raise TooFewObservations(arm, int(xa.shape[0]), int(xa.shape[1]))
        check_full_rank(xa, f"Outcome model design (Z={arm})")
        alphas[arm], *_ = np.linalg.lstsq(xa, ya, rcond=None)
    return OutcomeModelFit(alpha1=alphas[1], alpha0=alphas[0], columns=tuple(cols))


def _outcome_scores(
    x: np.ndarray, y: np.ndarray, mask: np.ndarray, alpha: np.ndarray
) -> np.ndarray:
    """Least-squares score rows mask_i X_i (Y_i - X_i alpha)."""
    return (mask * (y - x @ alpha))[:, None] * x


# ---------------------------------------------------------------------------
# Augmented (doubly robust) matching weight estimator
# ---------------------------------------------------------------------------

def estimate_dr_mw(
    d: ObservationalDataset,
    ps_columns: ColumnSelection = None,
    outcome_columns: ColumnSelection = None,
    cfg: SmoothWeightConfig | None = None,
    *,
    known_scores: Sequence[float] | np.ndarray | None = None,
    raw: bool = False,
) -> EffectEstimate:
    """
    Augmented matching weight estimator mu1 + mu2 - mu3 where
    mu1 = sum W (m1 - m0) / sum W, mu2 = sum W Z (Y - m1) / sum W Z and
    mu3 = sum W (1-Z)(Y - m0) / sum W (1-Z). SE from the sandwich of the
    (mu1, mu2, mu3, alpha1, alpha0, beta) stack.
    """
    cfg = resolve_cfg(cfg, raw)
    with timed() as box:
        outcome = fit_outcome_models(d, outcome_columns)
        xo = d.design(outcome.columns)
        k = xo.shape[1]
        ps = resolve_propensity(d, ps_columns, known_scores)
        y = d.outcomes
        z = d.treatments

        w = matching_weights(ps.scores, z, cfg)
        m1 = outcome.m1(xo)
        m0 = outcome.m0(xo)
        mu1 = _weighted_mean(w, m1 - m0)
        mu2 = _weighted_mean(w * z, y - m1)
        mu3 = _weighted_mean(w * (1.0 - z), y - m0)

        def head(theta: np.ndarray, e: np.ndarray) -> np.ndarray:
            a1 = theta[3:3 + k]
            a0 = theta[3 + k:3 + 2 * k]
            wt = matching_weights(e, z, cfg)
            f1 = xo @ a1
            f0 = xo @ a0
            return np.hstack([
                np.column_stack([
                    wt * (f1 - f0 - theta[0]),
                    wt * z * (y - f1 - theta[1]),
                    wt * (1.0 - z) * (y - f0 - theta[2]),
                ]),
                _outcome_scores(xo, y, z, a1),
                _outcome_scores(xo, y, 1.0 - z, a0),
            ])

        head_dim = 3 + 2 * k
        system = stacked_system(d, head_dim, head, ps)
        theta_hat = np.concatenate([[mu1, mu2, mu3], outcome.alpha1, outcome.alpha0, ps.theta])
        sw = sandwich(system, theta_hat, iterations=ps.iterations)
        se = sw.contrast_se(_contrast(system.dim, {0: 1.0, 1: 1.0, 2: -1.0}))
        ess = effective_sample_sizes(d, w)
    _record("dr_mw", d, system.dim, ps.iterations, box, [])
    return EffectEstimate.build(
        "dr_mw", mu1 + mu2 - mu3, se, d.n,
        ess=(ess.ess_treated, ess.ess_control),
        components={"mu1": mu1, "mu2": mu2, "mu3": mu3},
    )


# ---------------------------------------------------------------------------
# Inverse probability weighting
# ---------------------------------------------------------------------------

def _warn_extreme(w: np.ndarray, notes: list[str]) -> None:
    top = float(np.max(w))
    if top > EXTREME_IPW:
        message = f"Largest inverse probability weight is {top:.1f} (> {EXTREME_IPW:g})"
        notes.append(message)
        warnings.warn(message, ExtremeWeightWarning, stacklevel=3)


def estimate_ipw(
    d: ObservationalDataset,
    ps_columns: ColumnSelection = None,
    normalized: bool = True,
    *,
    known_scores: Sequence[float] | np.ndarray | None = None,
) -> EffectEstimate:
    """
    Inverse probability weighting.

    normalized=True (default) is the Hajek form with weights renormalised
    within each arm; normalized=False is the Horvitz-Thompson form
    n^-1 sum Z Y / e - n^-1 sum (1-Z) Y / (1-e).
    """
    notes: list[str] = []
    estimator = "ipw" if normalized else "ipw_ht"
    with timed() as box:
        ps = resolve_propensity(d, ps_columns, known_scores)
        y = d.outcomes
        z = d.treatments
        w = ipw_weights(ps.scores, z)
        _warn_extreme(w, notes)

        if normalized:
            mu1 = _weighted_mean(w * z, y)
            mu0 = _weighted_mean(w * (1.0 - z), y)

            def head(theta: np.ndarray, e: np.ndarray) -> np.ndarray:
                wt = ipw_weights(e, z)
                return np.column_stack([
                    wt * z * (y - theta[0]),
                    wt * (1.0 - z) * (y - theta[1]),
                ])
        else:
            mu1 = float(np.mean(z * y / ps.scores))
            mu0 = float(np.mean((1.0 - z) * y / (1.0 - ps.scores)))

            def head(theta: np.ndarray, e: np.ndarray) -> np.ndarray:
                e = check_scores(e)
                return np.column_stack([
                    z * y / e - theta[0],
                    (1.0 - z) * y / (1.0 - e) - theta[1],
                ])

        system = stacked_system(d, 2, head, ps)
        sw = sandwich(system, np.concatenate([[mu1, mu0], ps.theta]),
                      iterations=ps.iterations)
        se = sw.contrast_se(_contrast(system.dim, {0: 1.0, 1: -1.0}))
    _record(estimator, d, system.dim, ps.iterations, box, notes)
    return EffectEstimate.build(
        estimator, mu1 - mu0, se, d.n, components={"mu1": mu1, "mu0": mu0}
    )


def estimate_dr_ipw(
    d: ObservationalDataset,
    ps_columns: ColumnSelection = None,
    outcome_columns: ColumnSelection = None,
    *,
    known_scores: Sequence[float] | np.ndarray | None = None,
) -> EffectEstimate:
    """
    Augmented IPW:
    n^-1 sum [Z Y / e - (Z - e) m1 / e] - n^-1 sum [(1-Z) Y / (1-e) + (Z - e) m0 / (1-e)].
    """
    notes: list[str] = []
    with timed() as box:
        outcome = fit_outcome_models(d, outcome_columns)
        xo = d.design(outcome.columns)
        k = xo.shape[1]
        ps = resolve_propensity(d, ps_columns, known_scores)
        y = d.outcomes
        z = d.treatments
        _warn_extreme(ipw_weights(ps.scores, z), notes)

        def terms(e: np.ndarray, f1: np.ndarray, f0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            e = check_scores(e)
            t1 = z * y / e - (z - e) * f1 / e
            t0 = (1.0 - z) * y / (1.0 - e) + (z - e) * f0 / (1.0 - e)
            return t1, t0

        t1, t0 = terms(ps.scores, outcome.m1(xo), outcome.m0(xo))
        mu1 = float(np.mean(t1))
        mu0 = float(np.mean(t0))

        def head(theta: np.ndarray, e: np.ndarray) -> np.ndarray:
            a1 = theta[2:2 + k]
            a0 = theta[2 + k:2 + 2 * k]
            h1, h0 = terms(e, xo @ a1, xo @ a0)
            return np.hstack([
                np.column_stack([h1 - theta[0], h0 - theta[1]]),
                _outcome_scores(xo, y, z, a1),
                _outcome_scores(xo, y, 1.0 - z, a0),
            ])

        system = stacked_system(d, 2 + 2 * k, head, ps)
        theta_hat = np.concatenate([[mu1, mu0], outcome.alpha1, outcome.alpha0, ps.theta])
        sw = sandwich(system, theta_hat, iterations=ps.iterations)
        se = sw.contrast_se(_contrast(system.dim, {0: 1.0, 1: -1.0}))
    _record("dr_ipw", d, system.dim, ps.iterations, box, notes)
    return EffectEstimate.build(
        "dr_ipw", mu1 - mu0, se, d.n, components={"mu1": mu1, "mu0": mu0}
    )


# ---------------------------------------------------------------------------
# Regression adjustment
# ---------------------------------------------------------------------------

def estimate_ols(
    d: ObservationalDataset,
    outcome_columns: ColumnSelection = None,
) -> EffectEstimate:
    """Coefficient of Z in the OLS regression of Y on (Z, X), HC0 sandwich SE."""
    with timed() as box:
        cols = d.columns(outcome_columns)
        design = np.column_stack([d.treatments, d.design(cols)])
        check_full_rank(design, "Regression design")
        y = d.outcomes
        gamma, *_ = np.linalg.lstsq(design, y, rcond=None)
        system = EstimatingSystem(
            dim=design.shape[1],
            phi=lambda g: (y - design @ g)[:, None] * design,
            n=d.n,
        )
        sw = sandwich(system, gamma)
        se = sw.se(0)
    _record("ols", d, system.dim, 0, box, [])
    return EffectEstimate.build("ols", gamma[0], se, d.n)


# ---------------------------------------------------------------------------
# Stratification
# ---------------------------------------------------------------------------

def _arm_variance(values: np.ndarray) -> float:
    return float(np.var(values, ddof=1)) if values.size > 1 else 0.0


def estimate_stratified(
    d: ObservationalDataset,
    ps_columns: ColumnSelection = None,
    n_strata: int | None = None,
    *,
    known_scores: Sequence[float] | np.ndarray | None = None,
) -> EffectEstimate:
    """
    Stratification on empirical quantiles of the propensity score.

    Strata are right-closed; each contributes its difference of arm means
    weighted by its share of the retained subjects. Strata missing an arm are
    dropped with a warning. The SE treats the scores as fixed (two-step).
    """
    n_strata = get_config()["n_strata"] if n_strata is None else n_strata
    if n_strata < 1:
        raise ValueError(f"n_strata must be at least 1, got {n_strata!r}")
    notes: list[str] = []
    with timed() as box:
        ps = resolve_propensity(d, ps_columns, known_scores)
        e = ps.scores
        edges = np.quantile(e, np.linspace(0.0, 1.0, n_strata + 1))
        labels = np.searchsorted(edges[1:-1], e, side="left")
        y = d.outcomes
        t = d.treated

        kept: list[tuple[int, float, float]] = []   # (size, effect, variance)
        for s in range(n_strata):
            in_s = labels == s
            y1 = y[in_s & t]
            y0 = y[in_s & ~t]
            if y1.size == 0 or y0.size == 0:
                if in_s.any():
                    message = f"Stratum {s + 1} of {n_strata} lacks an arm; dropped"
                    notes.append(message)
                    warnings.warn(message, StratumDroppedWarning, stacklevel=2)
                continue
            kept.append((
                int(in_s.sum()),
                float(y1.mean() - y0.mean()),
                _arm_variance(y1) / y1.size + _arm_variance(y0) / y0.size,
            ))
        if not kept:
            raise AllStrataDropped(f"All {n_strata} strata lack one arm")
        used = sum(size for size, _, _ in kept)
        delta = sum(size / used * eff for size, eff, _ in kept)
        var = sum((size / used) ** 2 * v for size, _, v in kept)
    _record("stratified", d, ps.q, ps.iterations, box, notes)
    return EffectEstimate.build(
        "stratified", delta, float(np.sqrt(var)), d.n,
        components={"strata_used": float(len(kept))},
    )


# ---------------------------------------------------------------------------
# Caliper matching
# ---------------------------------------------------------------------------

def estimate_matched(
    d: ObservationalDataset,
    ps_columns: ColumnSelection = None,
    caliper_multiplier: float | None = None,
    *,
    known_scores: Sequence[float] | np.ndarray | None = None,
) -> EffectEstimate:
    """
    Greedy 1:1 nearest-neighbour matching without replacement on logit(e).

    caliper = caliper_multiplier * SD(logit e). Treated subjects are matched
    in decreasing e, ties by dataset index; the nearest available control
    (lowest index on ties) is taken if within the caliper. The SE is the
    unpaired two-sample formula and is approximate.
    """
    mult = get_config()["caliper"] if caliper_multiplier is None else caliper_multiplier
    if mult <= 0:
        raise ValueError(f"caliper_multiplier must be positive, got {mult!r}")
    with timed() as box:
        ps = resolve_propensity(d, ps_columns, known_scores)
        e = ps.scores
        logit = np.log(e / (1.0 - e))
        caliper = mult * float(np.std(logit, ddof=1))

        treated_idx = np.flatnonzero(d.treated)
        control_idx = np.flatnonzero(~d.treated)
        order = treated_idx[np.lexsort((treated_idx, -e[treated_idx]))]
        control_logit = logit[control_idx]
        available = np.ones(control_idx.size, dtype=bool)

        pairs: list[tuple[int, int]] = []
        for i in order:
            if not available.any():
                break
            dist = np.where(available, np.abs(control_logit - logit[i]), np.inf)
            j = int(np.argmin(dist))
            if dist[j] <= caliper:
                available[j] = False
                pairs.append((int(i), int(control_idx[j])))

        m = len(pairs)
        if m < 2:
            raise NoMatches(f"{m} matched pair(s) within caliper {caliper:.4g}")
        matched_t = np.array([p[0] for p in pairs])
        matched_c = np.array([p[1] for p in pairs])
        y1 = d.outcomes[matched_t]
        y0 = d.outcomes[matched_c]
        delta = float(y1.mean() - y0.mean())
        se = float(np.sqrt(_arm_variance(y1) / m + _arm_variance(y0) / m))
    _record("matched", d, ps.q, ps.iterations, box, [])
    return EffectEstimate.build(
        "matched", delta, se, d.n,
        ess=(float(m), float(m)),
        components={"caliper": caliper},
    )


# ---------------------------------------------------------------------------
# Known-propensity plug-in variance
# ---------------------------------------------------------------------------

def plug_in_variance_prop2(
    d: ObservationalDataset,
    fit: PropensityFit | Sequence[float] | np.ndarray,
    mu1: float,
    mu0: float,
) -> float:
    """
    Plug-in asymptotic variance of the MW estimator when the propensity model
    is known, divided by n:

        n^-1 sum {Z [m (Y - mu1)]^2 / e^2 + (1-Z) [m (Y - mu0)]^2 / (1-e)^2}
        ----------------------------------------------------------------  / n
                            [n^-1 sum m]^2

    with m = min(1-e, e).
    """
    e = fit.fitted if isinstance(fit, PropensityFit) else np.asarray(fit, dtype=float)
    e = check_scores(e)
    z = d.treatments
    y = d.outcomes
    m = np.minimum(1.0 - e, e)
    numerator = np.mean(
        z * (m * (y - mu1)) ** 2 / e ** 2
        + (1.0 - z) * (m * (y - mu0)) ** 2 / (1.0 - e) ** 2
    )
    denominator = np.mean(m) ** 2
    return float(numerator / denominator / d.n)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

ESTIMATORS: dict[str, Callable[..., EffectEstimate]] = {
    "mw":         estimate_mw,
    "dr-mw":      estimate_dr_mw,
    "ipw":        estimate_ipw,
    "ipw-ht":     lambda d, ps_columns=None, **kw: estimate_ipw(d, ps_columns, normalized=False, **kw),
    "dr-ipw":     estimate_dr_ipw,
    "stratified": estimate_stratified,
    "matched":    estimate_matched,
    "ols":        estimate_ols,
}
