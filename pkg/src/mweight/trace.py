"""In-memory record store for estimator invocations."""

from __future__ import annotations

import dataclasses
import time
from collections import deque
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Iterator

from ._config import get_config


@dataclass(frozen=True)
class EstimationRecord:
    """
    Immutable record produced by every estimator call.

    Written to the bounded in-memory store and handed to the configured
    tracer (if any) as a plain dict, except inside suspended() blocks such
    as simulation replicates.
    """

    estimator: str                  # estimator id, e.g. "mw", "dr_mw"
    n: int                          # subjects
    q: int                          # parameters in the stacked system (0 if none)
    converged: bool
    iterations: int                 # Newton iterations for the propensity model
    duration_ms: int
    warnings: tuple[str, ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# In-memory store
# ---------------------------------------------------------------------------

MAX_RECORDS = 10_000

# Oldest records are dropped once the store is full.
_records: deque[EstimationRecord] = deque(maxlen=MAX_RECORDS)
_recording: ContextVar[bool] = ContextVar("mweight_recording", default=True)


def record(entry: EstimationRecord) -> None:
    """Append a record to the store and forward it to the tracer."""
    if not _recording.get():
        return
    _records.append(entry)
    tracer = get_config().get("tracer")
    if tracer is None:
        return
    try:
        tracer(dataclasses.asdict(entry))
    except Exception:
        pass  # tracer failures must not affect estimation


def all_records() -> list[EstimationRecord]:
    """Return a snapshot of all records."""
    return list(_records)


def clear() -> None:
    """Clear all in-memory records (useful in tests)."""
    _records.clear()


@contextmanager
def timed() -> Iterator[dict[str, Any]]:
    """Yield a dict whose 'duration_ms' is filled in when the block exits."""
    box: dict[str, Any] = {"duration_ms": 0}
    start = time.monotonic()
    try:
        yield box
    finally:
        box["duration_ms"] = int((time.monotonic() - start) * 1000)


@contextmanager
def suspended() -> Iterator[None]:
    """Skip recording (store and tracer) for calls made inside the block."""
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)
