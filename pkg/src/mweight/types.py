"""Public result wrappers: Success[T], Failure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Generic, TypeVar

T = TypeVar("T")


@dataclass
class Success(Generic[T]):
    """Wraps a successful result from run_replicates()."""
    value: T


@dataclass
class Failure:
    """Wraps a failed replicate from run_replicates()."""
    exception: Exception
    index: int = -1
