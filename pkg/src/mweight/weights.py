"""Logistic propensity model, matching / ATT / IPW weights, effective sample sizes."""

from __future__ import annotations

import dataclasses
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
from numpy.polynomial import polynomial as P
from scipy.special import expit

from ._config import get_config
from .data import ObservationalDataset
from .exceptions import (
    DomainError,
    NegativeWeight,
    NonBinaryTreatment,
    NonConvergence,
    RankDeficient,
    Separation,
    SingularJacobian,
    SingularMatrix,
)
from .mestimation import EstimatingSystem, solve

SCORE_EPS = 1e-12
MAX_COEFFICIENT = 50.0


# ---------------------------------------------------------------------------
# Propensity model
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class PropensityFit:
    """Fitted logistic propensity model e(X, beta) = expit(X beta)."""

    beta:          np.ndarray          # (len(model_columns),)
    fitted:        np.ndarray          # (n,) scores in (0, 1)
    model_columns: tuple[int, ...]
    iterations:    int = 0
    converged:     bool = True

    def __post_init__(self) -> None:
        for name in ("beta", "fitted"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "model_columns", tuple(int(c) for c in self.model_columns))


def propensity_scores(x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """expit(X beta)."""
    return expit(x @ beta)


def logistic_score_contributions(x: np.ndarray, z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """
    Logistic score rows (Z_i - e_i) X_i.

    Canonical-link form of (Z - e) / (e (1 - e)) * de/dbeta.
    """
    return (z - propensity_scores(x, beta))[:, None] * x


def check_full_rank(x: np.ndarray, what: str) -> None:
    """Raise RankDeficient unless x has full column rank."""
    if x.shape[1] == 0:
        return
    rank = int(np.linalg.matrix_rank(x))
    if rank < x.shape[1]:
        raise RankDeficient(what, rank, x.shape[1])


def fit_logistic(
    d: ObservationalDataset,
    columns: Sequence[int] | Sequence[str] | None = None,
    *,
    tol: float | None = None,
    max_iter: int | None = None,
) -> PropensityFit:
    """
    Maximum-likelihood logistic regression of Z on the selected columns.

    Solves the score equations with the shared Newton solver. Raises
    RankDeficient for a rank-deficient design and Separation when the
    coefficients diverge, the solver fails, or fitted scores leave
    (1e-12, 1 - 1e-12).
    """
    cols = d.columns(columns)
    x = d.design(cols)
    z = d.treatments
    check_full_rank(x, "Propensity model design")

    system = EstimatingSystem(
        dim=len(cols),
        phi=lambda beta: logistic_score_contributions(x, z, beta),
        n=d.n,
    )
    try:
        result = solve(system, np.zeros(len(cols)), tol=tol, max_iter=max_iter)
    except NonConvergence as exc:
        raise Separation(f"logistic fit did not converge ({exc})") from exc
    except SingularJacobian as exc:
        raise Separation(f"logistic information matrix is singular ({exc})") from exc

    beta = result.theta_hat
    if np.max(np.abs(beta), initial=0.0) > MAX_COEFFICIENT:
        raise Separation(f"|beta| reached {np.max(np.abs(beta)):.1f}")
    fitted = propensity_scores(x, beta)
    if np.any((fitted <= SCORE_EPS) | (fitted >= 1.0 - SCORE_EPS)):
        raise Separation("fitted propensity scores reached 0 or 1")

    return PropensityFit(
        beta=beta,
        fitted=fitted,
        model_columns=tuple(cols),
        iterations=result.iterations,
        converged=True,
    )


# ---------------------------------------------------------------------------
# Smoothed matching weight
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SmoothWeightConfig:
    """
    Cubic patches replacing eta_1(e) = min(1-e, e)/e and
    eta_0(e) = min(1-e, e)/(1-e) on [0.5 - delta, 0.5 + delta].

    a holds the coefficients (a0..a3) of eta_1*, b those of eta_0*, in
    increasing powers of e.
    """

    delta: float
    a:     tuple[float, float, float, float]
    b:     tuple[float, float, float, float]

    @classmethod
    def from_delta(cls, delta: float | None = None) -> SmoothWeightConfig:
        return smooth_coefficients(get_config()["delta"] if delta is None else delta)

    @property
    def lower(self) -> float:
        return 0.5 - self.delta

    @property
    def upper(self) -> float:
        return 0.5 + self.delta


def smooth_coefficients(delta: float) -> SmoothWeightConfig:
    """
    Solve D a = (1, 0, (1-2d)/(1+2d), -4/(1+2d)^2) and
    D b = ((1-2d)/(1+2d), 4/(1+2d)^2, 1, 0), where the rows of D evaluate a
    cubic and its derivative at 0.5 - d and 0.5 + d.
    """
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must be in (0, 0.5), got {delta!r}")
    lo = 0.5 - delta
    hi = 0.5 + delta
    D = np.array([
        [1.0, lo,  lo ** 2,    lo ** 3],
        [0.0, 1.0, 2.0 * lo,   3.0 * lo ** 2],
        [1.0, hi,  hi ** 2,    hi ** 3],
        [0.0, 1.0, 2.0 * hi,   3.0 * hi ** 2],
    ])
    ratio = (1.0 - 2.0 * delta) / (1.0 + 2.0 * delta)
    slope = 4.0 / (1.0 + 2.0 * delta) ** 2
    rhs = np.column_stack([
        [1.0, 0.0, ratio, -slope],
        [ratio, slope, 1.0, 0.0],
    ])
    try:
        coef = scipy.linalg.solve(D, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SingularMatrix(f"D is singular for delta={delta!r}: {exc}") from exc
    return SmoothWeightConfig(
        delta=float(delta),
        a=tuple(float(v) for v in coef[:, 0]),  # type: ignore[arg-type]
        b=tuple(float(v) for v in coef[:, 1]),  # type: ignore[arg-type]
    )


# ---------------------------------------------------------------------------
# Weight functions
# ---------------------------------------------------------------------------

def check_scores(e: np.ndarray) -> np.ndarray:
    """Return e as a float array; DomainError if any score is outside (1e-12, 1-1e-12)."""
    arr = np.asarray(e, dtype=float)
    bad = ~np.isfinite(arr) | (arr <= SCORE_EPS) | (arr >= 1.0 - SCORE_EPS)
    if np.any(bad):
        raise DomainError(float(arr[bad].flat[0]))
    return arr


def check_treatments(z: np.ndarray) -> np.ndarray:
    """Return z as a float array; NonBinaryTreatment unless every entry is 0 or 1."""
    arr = np.asarray(z, dtype=float)
    bad = np.flatnonzero((arr != 0.0) & (arr != 1.0))
    if bad.size:
        raise NonBinaryTreatment(int(bad[0]), float(arr.flat[bad[0]]))
    return arr


def _scalar_or_array(value: np.ndarray, *inputs: object) -> float | np.ndarray:
    if all(np.ndim(v) == 0 for v in inputs):
        return float(value)
    return value


def matching_weights(
    e: np.ndarray,
    z: np.ndarray,
    cfg: SmoothWeightConfig | None = None,
) -> np.ndarray:
    """
    Vectorised matching weight min(1-e, e) / (z e + (1-z)(1-e)).

    With cfg, the cubic patch replaces the weight on [0.5-delta, 0.5+delta];
    outside the patch the result is bit-identical to the raw weight.
    """
    e = check_scores(e)
    z = check_treatments(z)
    raw = np.minimum(1.0 - e, e) / (z * e + (1.0 - z) * (1.0 - e))
    if cfg is None:
        return raw
    inside = (e >= cfg.lower) & (e <= cfg.upper)
    if not np.any(inside):
        return raw
    patch = np.where(z == 1.0, P.polyval(e, cfg.a), P.polyval(e, cfg.b))
    return np.where(inside, patch, raw)


def matching_weight(
    e: float | np.ndarray,
    z: float | np.ndarray,
    cfg: SmoothWeightConfig | None = None,
) -> float | np.ndarray:
    """Matching weight of a subject with score e and treatment z."""
    return _scalar_or_array(matching_weights(e, z, cfg), e, z)


def att_weights(e: np.ndarray, z: np.ndarray) -> np.ndarray:
    """1 for treated, e/(1-e) for controls."""
    e = check_scores(e)
    z = check_treatments(z)
    return z + (1.0 - z) * e / (1.0 - e)


def att_weight(e: float | np.ndarray, z: float | np.ndarray) -> float | np.ndarray:
    return _scalar_or_array(att_weights(e, z), e, z)


def ipw_weights(e: np.ndarray, z: np.ndarray) -> np.ndarray:
    """z/e + (1-z)/(1-e)."""
    e = check_scores(e)
    z = check_treatments(z)
    return z / e + (1.0 - z) / (1.0 - e)


def ipw_weight(e: float | np.ndarray, z: float | np.ndarray) -> float | np.ndarray:
    return _scalar_or_array(ipw_weights(e, z), e, z)


# ---------------------------------------------------------------------------
# Effective sample size
# ---------------------------------------------------------------------------

class EffectiveSampleSizes(NamedTuple):
    ess_treated: float
    ess_control: float
    ess_total:   float


def effective_sample_sizes(
    d: ObservationalDataset,
    weights: Sequence[float] | np.ndarray,
) -> EffectiveSampleSizes:
    """Weight sums per arm: (sum W Z, sum W (1-Z), total)."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (d.n,):
        raise ValueError(f"weights has shape {w.shape}, expected ({d.n},)")
    neg = np.flatnonzero(w < 0)
    if neg.size:
        raise NegativeWeight(int(neg[0]), float(w[neg[0]]))
    treated = float(np.sum(w[d.treated]))
    control = float(np.sum(w[~d.treated]))
    return EffectiveSampleSizes(treated, control, treated + control)
