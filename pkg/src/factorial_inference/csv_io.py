"""
title: Factorial Inference - CSV formats
version: 0.1.0
license: MIT

Potential outcomes:  unit,y1,...,y{2^K}
Observed data:       unit,f1,...,fK,y     (factor levels -1/1)
Assignment:          unit,treatment
Design:              one column per effect label, 2^K rows of -1/1
"""

import io
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from factorial_inference.assignment import Assignment, ObservedData, treatment_index
from factorial_inference.design import ModelMatrix, design_frame, treatment_combinations
from factorial_inference.module_common import DomainError, InputFileError, get_logger, k_from_treatment_count
from factorial_inference.population import PotentialOutcomeTable

logger = get_logger(__name__)

PathLike = Union[str, Path]

# Header is file line 1, so data row r (0-based) sits on line r + 2
HEADER_LINES = 1


def _read_frame(path: PathLike) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True, keep_default_na=False)
    except FileNotFoundError as e:
        raise InputFileError(path, "file not found") from e
    except pd.errors.EmptyDataError as e:
        raise InputFileError(path, "file is empty; a header row is required") from e
    except pd.errors.ParserError as e:
        raise InputFileError(path, f"malformed CSV: {e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    if frame.empty:
        raise InputFileError(path, "no data rows after the header")

    logger.debug(f"Read {len(frame)} rows from {path}")
    return frame


def _numeric_column(frame: pd.DataFrame, column: str, path: PathLike) -> np.ndarray:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
    bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        raise InputFileError(
            path,
            f"column '{column}' has non-numeric value {frame[column].iloc[row]!r}",
            line=row + HEADER_LINES + 1,
        )
    return values.to_numpy(dtype=np.float64)


def read_potential_outcomes(path: PathLike) -> PotentialOutcomeTable:
    frame = _read_frame(path)
    columns = list(frame.columns)

    if not columns or columns[0] != "unit":
        raise InputFileError(path, f"header must start with 'unit', got {columns[:1]}", line=1)

    outcome_columns = columns[1:]
    try:
        k = k_from_treatment_count(len(outcome_columns))
    except DomainError as e:
        raise InputFileError(path, f"expected 2^K outcome columns: {e}", line=1) from e

    expected = [f"y{j}" for j in range(1, (1 << k) + 1)]
    if outcome_columns != expected:
        raise InputFileError(path, f"outcome columns must be {','.join(expected)}", line=1)

    values = np.column_stack([_numeric_column(frame, c, path) for c in outcome_columns])
    return PotentialOutcomeTable(values)


def read_observed_data(path: PathLike) -> ObservedData:
    frame = _read_frame(path)
    columns = list(frame.columns)

    k = len(columns) - 2
    expected = ["unit"] + [f"f{f}" for f in range(1, k + 1)] + ["y"]
    if k < 1 or columns != expected:
        raise InputFileError(path, "header must be unit,f1,...,fK,y", line=1)

    known = {combination.levels for combination in treatment_combinations(k)}
    levels = np.column_stack([_numeric_column(frame, f"f{f}", path) for f in range(1, k + 1)])
    outcomes = _numeric_column(frame, "y", path)

    treatments = np.empty(len(frame), dtype=np.int64)
    for row, row_levels in enumerate(levels):
        combination = tuple(int(v) for v in row_levels)
        if combination not in known or not np.array_equal(row_levels, combination):
            raise InputFileError(
                path,
                f"factor levels {row_levels.tolist()} are not a treatment combination (use -1/1)",
                line=row + HEADER_LINES + 1,
            )
        treatments[row] = treatment_index(combination)

    return ObservedData(
        k=k,
        unit_ids=frame["unit"].str.strip().to_numpy(),
        treatments=treatments,
        outcomes=outcomes,
    )


def write_observed_data(obs: ObservedData, path: PathLike) -> None:
    levels = np.array([c.levels for c in treatment_combinations(obs.k)])[obs.treatments - 1]
    frame = pd.DataFrame(levels, columns=[f"f{f}" for f in range(1, obs.k + 1)])
    frame.insert(0, "unit", obs.unit_ids)
    frame["y"] = obs.outcomes
    frame.to_csv(path, index=False)


def assignment_csv(a: Assignment) -> str:
    buffer = io.StringIO()
    pd.DataFrame({"unit": np.arange(1, a.n_units + 1), "treatment": a.treatment_of}).to_csv(
        buffer, index=False, lineterminator="\n"
    )
    return buffer.getvalue()


def design_csv(m: ModelMatrix) -> str:
    buffer = io.StringIO()
    design_frame(m).to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()
