"""
title: Factorial Inference - finite population of potential outcomes
version: 0.1.0
license: MIT
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from factorial_inference.design import cached_model_matrix
from factorial_inference.module_common import (
    Config,
    ConsistencyError,
    DomainError,
    get_logger,
    k_from_treatment_count,
)

logger = get_logger(__name__)

POPULATION_SCOPE = "population"


@dataclass(frozen=True, eq=False)
class PotentialOutcomeTable:
    """
    The science: entry (i, j) is Y_i(z_{j+1}), columns in canonical z order.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DomainError(f"Potential outcomes must be a 2-D table, got {values.ndim} dimension(s)")
        if values.shape[0] < 1:
            raise DomainError("Potential-outcome table has no units")
        k_from_treatment_count(values.shape[1])
        if not np.all(np.isfinite(values)):
            raise DomainError("Potential outcomes must all be finite")

        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.values.shape[1].bit_length() - 1

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def n_treatments(self) -> int:
        return self.values.shape[1]

    def affine(self, scale: float, shift: float) -> "PotentialOutcomeTable":
        return PotentialOutcomeTable(scale * self.values + shift)


@dataclass(frozen=True, eq=False)
class EffectVector:
    values: np.ndarray
    scope: str

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise DomainError(f"Effect vector ({self.scope}) has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class PopulationMoments:
    group_variances: np.ndarray
    group_covariances: np.ndarray


def _effect_scale(k: int) -> float:
    return 1.0 / 2 ** (k - 1)


def unit_effect_matrix(table: PotentialOutcomeTable) -> np.ndarray:
    """Row i is tau_i = 2^-(K-1) H' Y_i."""
    h = cached_model_matrix(table.k).as_float()
    return _effect_scale(table.k) * (table.values @ h)


def unit_effects(table: PotentialOutcomeTable, i: int) -> EffectVector:
    """Effect vector of unit i (1-based)."""
    if not 1 <= i <= table.n_units:
        raise DomainError(f"Unit index must be in 1..{table.n_units}, got {i}")

    h = cached_model_matrix(table.k).as_float()
    return EffectVector(
        values=_effect_scale(table.k) * (h.T @ table.values[i - 1]),
        scope=f"unit {i}",
    )


def population_effects(table: PotentialOutcomeTable) -> EffectVector:
    h = cached_model_matrix(table.k).as_float()

    from_units = unit_effect_matrix(table).mean(axis=0)
    from_means = _effect_scale(table.k) * (h.T @ table.values.mean(axis=0))

    # Rounding in both routes grows with the outcome magnitude and the 2^K-term sums
    atol = Config.ABS_TOL * max(1.0, float(np.max(np.abs(table.values)))) * table.n_treatments
    if not np.allclose(from_units, from_means, rtol=Config.REL_TOL, atol=atol):
        raise ConsistencyError(
            "Population effects disagree between the unit-average and mean-outcome routes: "
            f"max deviation {np.max(np.abs(from_units - from_means)):.3e}"
        )

    return EffectVector(values=from_means, scope=POPULATION_SCOPE)


def population_moments(table: PotentialOutcomeTable) -> PopulationMoments:
    if table.n_units < 2:
        raise DomainError("Population variance undefined: at least 2 units are required")

    covariances = np.atleast_2d(np.cov(table.values, rowvar=False, ddof=1))
    covariances = 0.5 * (covariances + covariances.T)

    return PopulationMoments(
        group_variances=np.diag(covariances).copy(),
        group_covariances=covariances,
    )


def validate_group_sizes(
    n: Sequence[int],
    k: int | None = None,
    n_units: int | None = None,
    min_size: int = 0,
) -> np.ndarray:
    """Checks a group-size vector and returns it as an int64 array."""
    sizes = np.asarray(n)
    if sizes.ndim != 1 or sizes.size == 0:
        raise DomainError("Group sizes must be a non-empty vector")
    if not np.all(np.equal(np.mod(sizes, 1), 0)):
        raise DomainError(f"Group sizes must be integers, got {list(n)}")
    sizes = sizes.astype(np.int64)

    expected = k_from_treatment_count(sizes.size) if k is None else k
    if sizes.size != 1 << expected:
        raise DomainError(
            f"Group-size vector has length {sizes.size}, expected {1 << expected} for K={expected}"
        )
    if np.any(sizes < min_size):
        j = int(np.argmax(sizes < min_size)) + 1
        raise DomainError(f"Group z{j} has {sizes[j - 1]} unit(s); at least {min_size} required")
    if n_units is not None and int(sizes.sum()) != n_units:
        raise DomainError(f"Group sizes sum to {int(sizes.sum())}, but the population has {n_units} units")

    return sizes


def neymanian_bias(table: PotentialOutcomeTable) -> np.ndarray:
    """(N(N-1))^-1 sum_i (tau_i - tau)(tau_i - tau)'."""
    if table.n_units < 2:
        raise DomainError("Neymanian bias undefined: at least 2 units are required")

    n_units = table.n_units
    deviations = unit_effect_matrix(table)
    deviations = deviations - deviations.mean(axis=0)
    bias = deviations.T @ deviations / (n_units * (n_units - 1))
    return 0.5 * (bias + bias.T)


def true_sampling_covariance(table: PotentialOutcomeTable, n: Sequence[int]) -> np.ndarray:
    sizes = validate_group_sizes(n, k=table.k, n_units=table.n_units, min_size=1)
    h = cached_model_matrix(table.k).as_float()

    variances = population_moments(table).group_variances
    first = (h.T * (variances / sizes)) @ h / 4 ** (table.k - 1)
    covariance = first - neymanian_bias(table)

    logger.debug(
        f"True sampling covariance for K={table.k}, N={table.n_units}, n={sizes.tolist()}"
    )

    return 0.5 * (covariance + covariance.T)


def is_additive(table: PotentialOutcomeTable) -> bool:
    effects = unit_effect_matrix(table)
    scale = max(1.0, float(np.max(np.abs(effects))))
    return bool(np.all(np.abs(effects - effects[0]) <= Config.ABS_TOL * scale))
