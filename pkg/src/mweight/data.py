"""Observational dataset: construction, CSV ingest, validation and summary."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .exceptions import (
    DataError,
    EmptyArm,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    UnknownCovariate,
)

INTERCEPT = "(intercept)"


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclasses.dataclass(frozen=True)
class ObservationalDataset:
    """
    Outcome, binary treatment and covariate matrix for n subjects.

    Column 0 of ``covariates`` is the constant 1 when the dataset was built
    with an intercept. Arrays are copied and marked read-only on
    construction, so a dataset can be shared across workers.
    """

    outcomes:        np.ndarray          # (n,)
    treatments:      np.ndarray          # (n,) values in {0, 1}
    covariates:      np.ndarray          # (n, p)
    covariate_names: tuple[str, ...]     # length p

    def __post_init__(self) -> None:
        y = _frozen(self.outcomes)
        z = _frozen(self.treatments)
        x = _frozen(self.covariates)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1))
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treatments", z)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        _validate(self)

    # -----------------------------------------------------------------------
    # Properties
    # -----------------------------------------------------------------------

    @property
    def n(self) -> int:
        return int(self.outcomes.shape[0])

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def treated(self) -> np.ndarray:
        """Boolean mask of Z = 1."""
        return self.treatments == 1.0

    def column_index(self, name: str) -> int:
        """Index of a covariate column; raises UnknownCovariate."""
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise UnknownCovariate(name) from None

    def columns(self, names: Sequence[str] | Sequence[int] | None) -> list[int]:
        """
        Resolve a column selection to indices.

        None selects every column. Names and integer indices may be mixed.
        """
        if names is None:
            return list(range(self.p))
        resolved: list[int] = []
        for item in names:
            if isinstance(item, (int, np.integer)):
                if not 0 <= int(item) < self.p:
                    raise UnknownCovariate(str(item))
                resolved.append(int(item))
            else:
                resolved.append(self.column_index(item))
        return resolved

    def design(self, columns: Sequence[int]) -> np.ndarray:
        """Covariate sub-matrix for the given column indices."""
        return self.covariates[:, list(columns)]

    # -----------------------------------------------------------------------
    # Construction helpers
    # -----------------------------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        outcomes: Sequence[float] | np.ndarray,
        treatments: Sequence[float] | np.ndarray,
        covariates: Sequence[Sequence[float]] | np.ndarray | None = None,
        covariate_names: Sequence[str] | None = None,
        *,
        add_intercept: bool = True,
    ) -> ObservationalDataset:
        """Build a dataset from arrays, optionally prepending an intercept."""
        y = np.asarray(outcomes, dtype=float)
        n = y.shape[0]
        if covariates is None:
            x = np.empty((n, 0))
        else:
            x = np.asarray(covariates, dtype=float)
            if x.ndim == 1:
                x = x.reshape(-1, 1)
        names = list(covariate_names) if covariate_names is not None else [
            f"x{j + 1}" for j in range(x.shape[1])
        ]
        if add_intercept:
            x = np.column_stack([np.ones(n), x])
            names = [INTERCEPT, *names]
        return cls(y, np.asarray(treatments, dtype=float), x, tuple(names))


def _validate(d: ObservationalDataset) -> None:
    n = d.outcomes.shape[0]
    if d.outcomes.ndim != 1 or d.treatments.shape != (n,) or d.covariates.shape[0] != n:
        raise DataError(
            f"Shape mismatch: outcomes {d.outcomes.shape}, treatments "
            f"{d.treatments.shape}, covariates {d.covariates.shape}"
        )
    if len(d.covariate_names) != d.covariates.shape[1]:
        raise DataError(
            f"{len(d.covariate_names)} covariate names for "
            f"{d.covariates.shape[1]} columns"
        )
    if n < 2:
        raise DataError(f"A dataset needs at least 2 subjects, got {n}")

    bad = np.flatnonzero(~np.isfinite(d.outcomes))
    if bad.size:
        raise NonFiniteValue(int(bad[0]), "outcome")
    bad = np.flatnonzero(~np.isin(d.treatments, (0.0, 1.0)))
    if bad.size:
        raise NonBinaryTreatment(int(bad[0]), float(d.treatments[bad[0]]))
    rows, cols = np.nonzero(~np.isfinite(d.covariates))
    if rows.size:
        raise NonFiniteValue(int(rows[0]), d.covariate_names[int(cols[0])])

    n_treated = int(d.treatments.sum())
    if n_treated == 0:
        raise EmptyArm(1)
    if n_treated == n:
        raise EmptyArm(0)


# ---------------------------------------------------------------------------
# CSV ingest
# ---------------------------------------------------------------------------

def _parse_numeric(raw: pd.Series, column: str) -> np.ndarray:
    """Strictly parse a string column; any empty or non-numeric cell is an error."""
    values = pd.to_numeric(raw.str.strip(), errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteValue(int(bad[0]), column)
    return values


def ingest_csv(
    path: Path | str,
    outcome_col: str,
    treatment_col: str,
    covariate_cols: Sequence[str],
    *,
    add_intercept: bool = True,
) -> ObservationalDataset:
    """
    Read a comma-separated, header-first UTF-8 file into a validated dataset.

    Cells are read as text and parsed strictly: the treatment column accepts
    only the literals "0" and "1"; every other selected cell must parse as a
    finite number (scientific notation allowed). Row numbers in errors are
    0-based data rows. Row order is preserved.
    """
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            encoding="utf-8",
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"Cannot parse CSV {str(path)!r}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    for column in (outcome_col, treatment_col, *covariate_cols):
        if column not in frame.columns:
            raise MissingColumn(column)

    raw_z = frame[treatment_col].str.strip()
    bad = np.flatnonzero(~raw_z.isin(("0", "1")).to_numpy())
    if bad.size:
        raise NonBinaryTreatment(int(bad[0]), raw_z.iloc[bad[0]])
    z = (raw_z == "1").to_numpy(dtype=float)

    y = _parse_numeric(frame[outcome_col], outcome_col)
    x = np.column_stack(
        [_parse_numeric(frame[c], c) for c in covariate_cols]
    ) if covariate_cols else np.empty((len(frame), 0))

    return ObservationalDataset.from_arrays(
        y, z, x, list(covariate_cols), add_intercept=add_intercept
    )


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------

class CovariateSummary(BaseModel):
    name: str
    mean_treated: float
    sd_treated: float
    mean_control: float
    sd_control: float


class DatasetSummary(BaseModel):
    n: int
    n_treated: int
    n_control: int
    treated_fraction: float
    covariates: list[CovariateSummary]


def dataset_summary(d: ObservationalDataset) -> DatasetSummary:
    """Per-arm counts and per-covariate means and standard deviations by arm."""
    t = d.treated
    rows: list[CovariateSummary] = []
    for j, name in enumerate(d.covariate_names):
        x1 = d.covariates[t, j]
        x0 = d.covariates[~t, j]
        rows.append(CovariateSummary(
            name=name,
            mean_treated=float(x1.mean()),
            sd_treated=float(x1.std(ddof=1)) if x1.size > 1 else 0.0,
            mean_control=float(x0.mean()),
            sd_control=float(x0.std(ddof=1)) if x0.size > 1 else 0.0,
        ))
    n_treated = int(t.sum())
    return DatasetSummary(
        n=d.n,
        n_treated=n_treated,
        n_control=d.n - n_treated,
        treated_fraction=n_treated / d.n,
        covariates=rows,
    )
