"""Global mweight configuration."""

from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Any, Iterator

from .exceptions import ConfigError


_DEFAULTS: dict[str, Any] = {
    "delta": 0.002,       # half-width of the smoothed weight patch around e = 0.5
    "tol": 1e-10,         # max |sum phi| accepted by the Newton solver
    "max_iter": 100,
    "jac_step": 1e-6,     # finite-difference step for Jacobians
    "bins": 20,           # mirror histogram bins
    "caliper": 0.2,       # multiple of SD(logit e)
    "n_strata": 5,
    "n_jobs": 1,          # simulation workers
    "tracer": None,       # callable(dict) receiving every EstimationRecord
}

_config: dict[str, Any] = dict(_DEFAULTS)

WORKERS_ENV = "MWEIGHT_WORKERS"


def configure(
    delta: float | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
    jac_step: float | None = None,
    bins: int | None = None,
    caliper: float | None = None,
    n_strata: int | None = None,
    n_jobs: int | None = None,
    tracer: Any = None,
) -> None:
    """
    Set process-wide defaults.

    Explicit keyword arguments on an estimator call take precedence over
    these values. Raises ConfigError for out-of-range values.
    """
    if delta is not None:
        if not 0.0 < delta < 0.5:
            raise ConfigError(f"delta must be in (0, 0.5), got {delta!r}")
        _config["delta"] = float(delta)
    if tol is not None:
        if tol <= 0:
            raise ConfigError(f"tol must be positive, got {tol!r}")
        _config["tol"] = float(tol)
    if max_iter is not None:
        if max_iter < 1:
            raise ConfigError(f"max_iter must be at least 1, got {max_iter!r}")
        _config["max_iter"] = int(max_iter)
    if jac_step is not None:
        if jac_step <= 0:
            raise ConfigError(f"jac_step must be positive, got {jac_step!r}")
        _config["jac_step"] = float(jac_step)
    if bins is not None:
        if bins < 1:
            raise ConfigError(f"bins must be at least 1, got {bins!r}")
        _config["bins"] = int(bins)
    if caliper is not None:
        if caliper <= 0:
            raise ConfigError(f"caliper must be positive, got {caliper!r}")
        _config["caliper"] = float(caliper)
    if n_strata is not None:
        if n_strata < 1:
            raise ConfigError(f"n_strata must be at least 1, got {n_strata!r}")
        _config["n_strata"] = int(n_strata)
    if n_jobs is not None:
        _config["n_jobs"] = int(n_jobs)
    if tracer is not None:
        _config["tracer"] = tracer


def reset() -> None:
    """Restore built-in defaults (useful in tests)."""
    _config.clear()
    _config.update(_DEFAULTS)


def get_config() -> dict[str, Any]:
    """Return the current configuration dict (mutable reference)."""
    return _config


def resolve_workers(flag: int | None = None) -> int:
    """
    Worker count for simulation fan-out.

    Priority (highest first): explicit flag, MWEIGHT_WORKERS, configured n_jobs.
    """
    if flag is not None:
        return flag
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return int(_config["n_jobs"])


@contextmanager
def scoped() -> Iterator[None]:
    """Restore the configuration as it was on entry when the block exits."""
    saved = dict(_config)
    try:
        yield
    finally:
        _config.clear()
        _config.update(saved)
