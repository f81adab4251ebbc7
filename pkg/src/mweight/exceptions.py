"""mweight exception and warning hierarchy."""

from __future__ import annotations

from typing import Any


class MWeightError(Exception):
    """Base class for all mweight errors."""

    def __reduce__(self) -> tuple[Any, ...]:
        # Failures cross joblib workers by pickle; subclass __init__ signatures
        # differ from self.args, so rebuild from state instead.
        return (_rebuild, (type(self), self.args, dict(vars(self))))


def _rebuild(cls: type[MWeightError], args: tuple[Any, ...], state: dict[str, Any]) -> MWeightError:
    exc = cls.__new__(cls)
    exc.args = args
    vars(exc).update(state)
    return exc


class ConfigError(MWeightError):
    """Raised for invalid option values or mweight.toml content."""


# ---------------------------------------------------------------------------
# Data errors
# ---------------------------------------------------------------------------

class DataError(MWeightError):
    """Raised when input data violates the dataset contract."""


class MissingColumn(DataError):
    """A requested column is not in the CSV header."""

    def __init__(self, column: str) -> None:
        self.column = column
        super().__init__(f"Column {column!r} not found in header")


class NonBinaryTreatment(DataError):
    """A treatment cell is not the literal 0 or 1."""

    def __init__(self, row: int, value: Any) -> None:
        self.row = row
        self.value = value
        super().__init__(f"Treatment must be 0 or 1; row {row} has {value!r}")


class NonFiniteValue(DataError):
    """An empty, non-numeric or non-finite cell."""

    def __init__(self, row: int, column: str) -> None:
        self.row = row
        self.column = column
        super().__init__(f"Non-finite or missing value at row {row}, column {column!r}")


class EmptyArm(DataError):
    """One treatment arm has no subjects."""

    def __init__(self, arm: int) -> None:
        self.arm = arm
        super().__init__(f"Treatment arm Z={arm} is empty")


class UnknownCovariate(DataError):
    """A covariate name is not among the dataset's columns."""

    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"Unknown covariate {name!r}")


class NegativeWeight(DataError):
    """A weight vector contains a negative entry."""

    def __init__(self, index: int, value: float) -> None:
        self.index = index
        self.value = value
        super().__init__(f"Weight at index {index} is negative ({value!r})")


class DomainError(DataError):
    """A propensity score lies outside (1e-12, 1 - 1e-12)."""

    def __init__(self, value: float) -> None:
        self.value = value
        super().__init__(f"Propensity score {value!r} outside (1e-12, 1 - 1e-12)")


# ---------------------------------------------------------------------------
# Model errors
# ---------------------------------------------------------------------------

class ModelError(MWeightError):
    """Raised when a model cannot be fit or an estimator cannot be formed."""


class NonConvergence(ModelError):
    """Newton iterations hit max_iter without meeting the tolerance."""

    def __init__(self, iterations: int, residual: float) -> None:
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Did not converge after {iterations} iterations "
            f"(max |sum phi| = {residual:.3e})"
        )


class SingularJacobian(ModelError):
    """The Jacobian of the estimating equations cannot be inverted."""


class SingularMatrix(ModelError):
    """A small dense linear system is singular."""


class Separation(ModelError):
    """The logistic propensity model diverges (complete or quasi-separation)."""

    def __init__(self, detail: str) -> None:
        self.detail = detail
        super().__init__(f"Propensity model separation: {detail}")


class RankDeficient(ModelError):
    """A design matrix does not have full column rank."""

    def __init__(self, what: str, rank: int, columns: int) -> None:
        self.what = what
        self.rank = rank
        self.columns = columns
        super().__init__(f"{what} is rank deficient (rank {rank} < {columns} columns)")


class TooFewObservations(ModelError):
    """An arm has no more observations than outcome-model columns."""

    def __init__(self, arm: int, n: int, columns: int) -> None:
        self.arm = arm
        self.n = n
        self.columns = columns
        super().__init__(
            f"Arm Z={arm} has {n} observations for {columns} outcome-model columns"
        )


class NoMatches(ModelError):
    """Caliper matching produced no usable pairs."""


class AllStrataDropped(ModelError):
    """Every propensity stratum lacked one of the arms."""


class ZeroVariance(ModelError):
    """The pooled variance of a covariate is zero."""

    def __init__(self, covariate: str) -> None:
        self.covariate = covariate
        super().__init__(f"Covariate {covariate!r} has zero pooled variance")


class SimulationError(MWeightError):
    """A Monte Carlo run exceeded its failure budget."""

    def __init__(self, method: str, failures: int, replicates: int) -> None:
        self.method = method
        self.failures = failures
        self.replicates = replicates
        super().__init__(
            f"Method {method!r} failed on {failures} of {replicates} replicates "
            f"(more than 2%)"
        )


# ---------------------------------------------------------------------------
# Warnings
# ---------------------------------------------------------------------------

class MWeightWarning(UserWarning):
    """Emitted for results that are valid but deserve a second look."""


class ExtremeWeightWarning(MWeightWarning):
    """An inverse probability weight exceeds 100."""


class StratumDroppedWarning(MWeightWarning):
    """A propensity stratum lacked one arm and was dropped."""


class MultipleTestingWarning(MWeightWarning):
    """More than 1 balance test in 20 rejected at level 0.05."""


# ---------------------------------------------------------------------------
# Error translation
# ---------------------------------------------------------------------------

def error_record(exc: BaseException) -> dict[str, Any]:
    """
    Single translation point from an exception to a structured error dict.

    Never raises. Never exposes stack traces. Public attributes set by the
    exception's constructor are carried over as extra fields.
    """
    if isinstance(exc, MWeightError):
        record: dict[str, Any] = {
            "error_type": type(exc).__name__,
            "message": str(exc),
        }
        for key, value in vars(exc).items():
            if key.startswith("_") or key in record:
                continue
            if isinstance(value, (str, int, float, bool)) or value is None:
                record[key] = value
        return record
    return {
        "error_type": "internal_error",
        "message": "An unexpected error occurred.",
    }
