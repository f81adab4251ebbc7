"""Replicate fan-out over joblib workers."""

from __future__ import annotations

from typing import Any, Callable, Iterable, TypeVar

from joblib import Parallel, delayed

from ._config import resolve_workers
from .exceptions import MWeightError
from .types import Failure, Success

T = TypeVar("T")


def _guarded(fn: Callable[[int], T], index: int) -> Success[T] | Failure:
    # Estimation failures are collected; anything else is a bug and propagates.
    try:
        return Success(fn(index))
    except MWeightError as exc:
        return Failure(exc, index)


def run_replicates(
    fn: Callable[[int], T],
    indices: Iterable[int],
    n_jobs: int | None = None,
) -> list[Success[T] | Failure]:
    """
    Call fn(index) for every index and collect all outcomes in input order.

    Each call must derive its randomness from its index alone, so results do
    not depend on n_jobs. n_jobs=None resolves through MWEIGHT_WORKERS and
    configure(n_jobs=...); 1 runs in-process.
    """
    workers = resolve_workers(n_jobs)
    indices = list(indices)
    if workers == 1 or len(indices) <= 1:
        return [_guarded(fn, i) for i in indices]
    runner: Any = Parallel(n_jobs=workers, backend="loky")
    return list(runner(delayed(_guarded)(fn, i) for i in indices))


def successes(results: list[Success[T] | Failure]) -> list[T]:
    return [r.value for r in results if isinstance(r, Success)]


def failures(results: list[Success[T] | Failure]) -> list[Failure]:
    return [r for r in results if isinstance(r, Failure)]
