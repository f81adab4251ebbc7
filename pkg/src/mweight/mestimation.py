"""
Stacked estimating equations: Newton solver and sandwich covariance.

An EstimatingSystem holds a vectorised contribution function ``phi`` that
maps a parameter vector theta (q,) to the (n, q) matrix whose row i is the
i-th subject's estimating contribution phi_i(theta). The estimate solves
sum_i phi_i(theta) = 0; its covariance is n^-1 A^-1 B A^-T with
A = n^-1 sum_i d phi_i / d theta and B = n^-1 sum_i phi_i phi_i^T.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from ._config import get_config
from .exceptions import NonConvergence, SingularJacobian

PhiFunction = Callable[[np.ndarray], np.ndarray]

_MAX_HALVINGS = 20
_EPS = np.finfo(float).eps


@dataclasses.dataclass(frozen=True)
class EstimatingSystem:
    """
    A stacked system of unbiased estimating equations.

    solve_order, when given, lists index blocks that can be solved one after
    another: block k's equations depend only on blocks 0..k. Solving block by
    block is then equivalent to a joint Newton solve.
    """

    dim:         int
    phi:         PhiFunction
    n:           int
    solve_order: tuple[tuple[int, ...], ...] | None = None

    def contributions(self, theta: np.ndarray) -> np.ndarray:
        """Per-subject contributions as an (n, dim) matrix."""
        out = np.asarray(self.phi(np.asarray(theta, dtype=float)), dtype=float)
        if out.ndim == 1:
            out = out.reshape(-1, 1)
        if out.shape != (self.n, self.dim):
            raise ValueError(
                f"phi returned shape {out.shape}, expected {(self.n, self.dim)}"
            )
        return out

    def equations(self, theta: np.ndarray) -> np.ndarray:
        """Summed estimating equations sum_i phi_i(theta)."""
        return self.contributions(theta).sum(axis=0)


@dataclasses.dataclass(frozen=True)
class SandwichResult:
    theta_hat:  np.ndarray
    A_n:        np.ndarray
    B_n:        np.ndarray
    covariance: np.ndarray
    converged:  bool = True
    iterations: int = 0

    def se(self, index: int) -> float:
        """Standard error of one parameter."""
        return float(np.sqrt(max(self.covariance[index, index], 0.0)))

    def contrast_se(self, weights: Sequence[float]) -> float:
        """Standard error of a linear contrast c^T theta."""
        c = np.asarray(weights, dtype=float)
        return float(np.sqrt(max(c @ self.covariance @ c, 0.0)))


@dataclasses.dataclass(frozen=True)
class SolveResult:
    theta_hat:  np.ndarray
    iterations: int
    residual:   float


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------

def _lu_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Pivoted LU solve; SingularJacobian on exact or numerical singularity."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            lu, piv = scipy.linalg.lu_factor(matrix, check_finite=True)
        except (scipy.linalg.LinAlgWarning, np.linalg.LinAlgError, ValueError) as exc:
            raise SingularJacobian(f"Jacobian factorisation failed: {exc}") from exc
    diag = np.abs(np.diag(lu))
    if diag.size and diag.min() <= _EPS * max(diag.max(), 1.0) * matrix.shape[0]:
        raise SingularJacobian("Jacobian is numerically singular")
    return scipy.linalg.lu_solve((lu, piv), rhs)


def _step_sizes(theta: np.ndarray, jac_step: float) -> np.ndarray:
    return np.maximum(jac_step, jac_step * np.abs(theta))


def _jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    jac_step: float,
) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    h = _step_sizes(theta, jac_step)
    cols = []
    for j in range(theta.size):
        up = theta.copy()
        down = theta.copy()
        up[j] += h[j]
        down[j] -= h[j]
        cols.append((fn(up) - fn(down)) / (2.0 * h[j]))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def _rounding_floor(contrib: np.ndarray) -> np.ndarray:
    """Per-equation size of the summation rounding error."""
    return 64.0 * _EPS * np.abs(contrib).sum(axis=0)


def _newton_block(
    sys: EstimatingSystem,
    theta: np.ndarray,
    block: np.ndarray,
    tol: float,
    max_iter: int,
    jac_step: float,
) -> tuple[np.ndarray, int, float]:
    """
    Damped Newton on the equations and parameters indexed by ``block``,
    holding all other parameters fixed.
    """
    theta = theta.copy()

    def g(sub: np.ndarray) -> np.ndarray:
        full = theta.copy()
        full[block] = sub
        return sys.equations(full)[block]

    sub = theta[block].copy()
    contrib = sys.contributions(theta)
    value = contrib.sum(axis=0)[block]
    residual = float(np.max(np.abs(value)))

    for iteration in range(max_iter + 1):
        floor = float(np.max(_rounding_floor(contrib)[block]))
        if residual <= max(tol, floor):
            theta[block] = sub
            return theta, iteration, residual
        if iteration == max_iter:
            break

        jac = _jacobian(g, sub, jac_step)
        step = _lu_solve(jac, -value)

        # Halve the step until the equation norm decreases
        scale = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            trial = sub + scale * step
            theta_trial = theta.copy()
            theta_trial[block] = trial
            contrib_trial = sys.contributions(theta_trial)
            value_trial = contrib_trial.sum(axis=0)[block]
            if np.all(np.isfinite(value_trial)):
                trial_residual = float(np.max(np.abs(value_trial)))
                if trial_residual < residual:
                    break
            scale *= 0.5
        else:
            # No decrease possible: accept only if at the rounding floor of the sum
            theta[block] = sub
            if residual <= 1e3 * max(tol, floor):
                return theta, iteration, residual
            raise NonConvergence(iteration, residual)

        sub = trial
        theta[block] = sub
        contrib = contrib_trial
        value = value_trial
        residual = trial_residual

    raise NonConvergence(max_iter, residual)


def solve(
    sys: EstimatingSystem,
    theta0: Sequence[float] | np.ndarray,
    tol: float | None = None,
    max_iter: int | None = None,
    jac_step: float | None = None,
) -> SolveResult:
    """
    Solve sum_i phi_i(theta) = 0 by damped Newton with a numerical Jacobian.

    The tolerance applies to max |sum_i phi_i|, floored at the rounding error
    of the summation itself. When ``sys.solve_order`` is set, blocks are
    solved sequentially. Raises NonConvergence or SingularJacobian.
    """
    cfg = get_config()
    tol = cfg["tol"] if tol is None else tol
    max_iter = cfg["max_iter"] if max_iter is None else max_iter
    jac_step = cfg["jac_step"] if jac_step is None else jac_step

    theta = np.asarray(theta0, dtype=float).copy()
    if theta.shape != (sys.dim,):
        raise ValueError(f"theta0 has shape {theta.shape}, expected ({sys.dim},)")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol!r}")

    blocks = sys.solve_order or (tuple(range(sys.dim)),)
    iterations = 0
    residual = 0.0
    for block in blocks:
        theta, used, residual = _newton_block(
            sys, theta, np.asarray(block, dtype=int), tol, max_iter, jac_step
        )
        iterations += used
    residual = float(np.max(np.abs(sys.equations(theta))))
    return SolveResult(theta_hat=theta, iterations=iterations, residual=residual)


def solve_system(
    sys: EstimatingSystem,
    theta0: Sequence[float] | np.ndarray,
    tol: float | None = None,
    max_iter: int | None = None,
) -> np.ndarray:
    """Solve the stacked system and return theta_hat."""
    return solve(sys, theta0, tol=tol, max_iter=max_iter).theta_hat


# ---------------------------------------------------------------------------
# Sandwich
# ---------------------------------------------------------------------------

def sandwich(
    sys: EstimatingSystem,
    theta_hat: Sequence[float] | np.ndarray,
    jac_step: float | None = None,
    *,
    iterations: int = 0,
) -> SandwichResult:
    """
    Sandwich covariance n^-1 A_n^-1 B_n A_n^-T at theta_hat.

    A_n uses central differences with per-parameter step
    max(jac_step, jac_step * |theta_j|). Raises SingularJacobian.
    """
    jac_step = get_config()["jac_step"] if jac_step is None else jac_step
    if jac_step <= 0:
        raise ValueError(f"jac_step must be positive, got {jac_step!r}")
    theta = np.asarray(theta_hat, dtype=float).copy()
    n = sys.n

    a_n = _jacobian(sys.equations, theta, jac_step) / n
    contrib = sys.contributions(theta)
    b_n = contrib.T @ contrib / n

    a_inv_b = _lu_solve(a_n, b_n)                 # A^-1 B
    cov = _lu_solve(a_n, a_inv_b.T).T / n         # (A^-1 (A^-1 B)^T)^T = A^-1 B A^-T
    cov = 0.5 * (cov + cov.T)

    theta.setflags(write=False)
    return SandwichResult(
        theta_hat=theta,
        A_n=a_n,
        B_n=b_n,
        covariance=cov,
        converged=True,
        iterations=iterations,
    )
