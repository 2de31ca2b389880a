"""
title: Factorial Inference - 2^K model matrix
version: 0.1.0
license: MIT
"""

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from factorial_inference.module_common import DomainError, get_logger, validate_k

logger = get_logger(__name__)

NULL_LABEL = "null"


@dataclass(frozen=True)
class TreatmentCombination:
    index: int
    levels: tuple[int, ...]

    @property
    def label(self) -> str:
        return f"z{self.index}"


@dataclass(frozen=True, eq=False)
class ModelMatrix:
    """
    The 2^K x 2^K matrix H of +1/-1 entries.

    Column c encodes effect `labels[c]` (null, main effects, interactions);
    row j-1 is the row vector h~ of treatment combination z_j.
    """

    k: int
    entries: np.ndarray
    labels: tuple[str, ...]
    subsets: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def size(self) -> int:
        return 1 << self.k

    def as_float(self) -> np.ndarray:
        return self.entries.astype(np.float64)

    def row(self, index: int) -> np.ndarray:
        """h~ for treatment combination z_index (1-based)."""
        if not 1 <= index <= self.size:
            raise DomainError(f"Treatment index must be in 1..{self.size}, got {index}")
        return self.entries[index - 1]


def effect_subsets(k: int) -> list[tuple[int, ...]]:
    """
    Factor-index tuples in column order: (), main effects, then interactions
    grouped by size, lexicographic within a size.
    """
    k = validate_k(k)
    subsets: list[tuple[int, ...]] = [()]
    for size in range(1, k + 1):
        subsets.extend(combinations(range(1, k + 1), size))
    return subsets


def effect_labels(k: int, factor_names: Optional[Sequence[str]] = None) -> list[str]:
    k = validate_k(k)
    if factor_names is None:
        factor_names = [f"F{f}" for f in range(1, k + 1)]
    elif len(factor_names) != k:
        raise DomainError(f"Expected {k} factor names, got {len(factor_names)}")

    return [
        ":".join(factor_names[f - 1] for f in subset) if subset else NULL_LABEL
        for subset in effect_subsets(k)
    ]


def _main_effect_columns(k: int) -> np.ndarray:
    size = 1 << k
    columns = np.empty((size, k), dtype=np.int8)
    for factor in range(1, k + 1):
        block = 1 << (k - factor)
        columns[:, factor - 1] = np.tile(
            np.repeat(np.array([-1, 1], dtype=np.int8), block), 1 << (factor - 1)
        )
    return columns


def build_model_matrix(k: int, factor_names: Optional[Sequence[str]] = None) -> ModelMatrix:
    k = validate_k(k)
    subsets = effect_subsets(k)
    main = _main_effect_columns(k)

    entries = np.ones((1 << k, 1 << k), dtype=np.int8)
    column_of = {(): 0}
    for column, subset in enumerate(subsets):
        if subset:
            # Product of the column without the last factor and that factor
            entries[:, column] = entries[:, column_of[subset[:-1]]] * main[:, subset[-1] - 1]
            column_of[subset] = column

    entries.setflags(write=False)

    logger.debug(f"Built {1 << k}x{1 << k} model matrix for K={k}")

    return ModelMatrix(
        k=k,
        entries=entries,
        labels=tuple(effect_labels(k, factor_names)),
        subsets=tuple(subsets),
    )


@lru_cache(maxsize=8)
def cached_model_matrix(k: int) -> ModelMatrix:
    return build_model_matrix(k)


def treatment_combinations(k: int) -> list[TreatmentCombination]:
    k = validate_k(k)
    main = _main_effect_columns(k)
    return [
        TreatmentCombination(index=j + 1, levels=tuple(int(v) for v in main[j]))
        for j in range(1 << k)
    ]


def check_orthogonality(m: ModelMatrix) -> bool:
    """
    True iff H'H = HH' = 2^K I exactly. Never raises.

    The products are taken in float64: every partial sum is an integer
    below 2**53, so the comparison is exact.
    """
    try:
        entries = np.asarray(m.entries)
        size = 1 << int(m.k)
        if entries.shape != (size, size):
            return False
        if not np.all(np.abs(entries) == 1):
            return False

        h = entries.astype(np.float64)
        expected = size * np.eye(size)
        return bool(np.array_equal(h.T @ h, expected) and np.array_equal(h @ h.T, expected))
    except Exception as e:
        logger.debug(f"Orthogonality check failed on malformed input: {e}")
        return False


def design_frame(m: ModelMatrix) -> pd.DataFrame:
    return pd.DataFrame(
        np.asarray(m.entries, dtype=np.int64),
        index=[f"z{j}" for j in range(1, m.size + 1)],
        columns=list(m.labels),
    )
