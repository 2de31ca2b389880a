"""
title: Factorial Inference - complete randomization, observation, enumeration
version: 0.1.0
license: MIT
"""

from dataclasses import dataclass
from math import factorial
from typing import Iterator, Sequence, Union

import numpy as np

from factorial_inference.module_common import (
    Config,
    DomainError,
    EnumerationGuardError,
    get_logger,
    k_from_treatment_count,
    validate_k,
)
from factorial_inference.population import PotentialOutcomeTable, validate_group_sizes

logger = get_logger(__name__)

SeedLike = Union[int, np.random.Generator]


@dataclass(frozen=True, eq=False)
class Assignment:
    """treatment_of[i] is the 1-based treatment index of unit i+1."""

    k: int
    treatment_of: np.ndarray
    group_sizes: tuple[int, ...]

    def __post_init__(self):
        treatment_of = np.array(self.treatment_of, dtype=np.int64)
        sizes = validate_group_sizes(self.group_sizes, k=validate_k(self.k))

        if treatment_of.ndim != 1:
            raise DomainError("treatment_of must be a vector")
        if treatment_of.size and (treatment_of.min() < 1 or treatment_of.max() > sizes.size):
            raise DomainError(f"Treatment indices must be in 1..{sizes.size}")

        counts = np.bincount(treatment_of - 1, minlength=sizes.size)
        if not np.array_equal(counts, sizes):
            raise DomainError(
                f"Assignment counts {counts.tolist()} do not match group sizes {sizes.tolist()}"
            )

        treatment_of.setflags(write=False)
        object.__setattr__(self, "treatment_of", treatment_of)
        object.__setattr__(self, "group_sizes", tuple(int(s) for s in sizes))

    @property
    def n_units(self) -> int:
        return int(self.treatment_of.size)


@dataclass(frozen=True, eq=False)
class ObservedData:
    """The experimenter's view: one (unit, treatment, Y_obs) record per unit."""

    k: int
    unit_ids: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        k = validate_k(self.k)
        unit_ids = np.array(self.unit_ids)
        treatments = np.array(self.treatments, dtype=np.int64)
        outcomes = np.array(self.outcomes, dtype=np.float64)

        if not (unit_ids.ndim == treatments.ndim == outcomes.ndim == 1):
            raise DomainError("Observed data columns must be vectors")
        if not (unit_ids.size == treatments.size == outcomes.size):
            raise DomainError(
                f"Observed data columns differ in length: {unit_ids.size}, {treatments.size}, {outcomes.size}"
            )
        if treatments.size and (treatments.min() < 1 or treatments.max() > 1 << k):
            raise DomainError(f"Treatment indices must be in 1..{1 << k}")
        if not np.all(np.isfinite(outcomes)):
            raise DomainError("Observed outcomes must all be finite")

        for name, array in (("unit_ids", unit_ids), ("treatments", treatments), ("outcomes", outcomes)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        object.__setattr__(self, "k", k)

    @property
    def n_units(self) -> int:
        return int(self.outcomes.size)

    @property
    def n_treatments(self) -> int:
        return 1 << self.k

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.treatments - 1, minlength=self.n_treatments)

    @property
    def records(self) -> list[tuple]:
        return list(zip(self.unit_ids.tolist(), self.treatments.tolist(), self.outcomes.tolist()))

    def is_balanced(self) -> bool:
        sizes = self.group_sizes
        return bool(np.all(sizes == sizes[0]))

    def affine(self, scale: float, shift: float) -> "ObservedData":
        return ObservedData(self.k, self.unit_ids, self.treatments, scale * self.outcomes + shift)


def check_planning_size(n_units: int, k: int) -> None:
    if n_units < 1 << (k + 1):
        logger.warning(
            f"N={n_units} is below the recommended 2^(K+1)={1 << (k + 1)} units for K={k}"
        )


def multinomial_count(n: Sequence[int]) -> int:
    """N!/prod n_j! for any non-negative count vector, not only 2^K-long ones."""
    sizes = np.asarray(n)
    if sizes.ndim != 1 or sizes.size == 0 or not np.all(np.equal(np.mod(sizes, 1), 0)) or np.any(sizes < 0):
        raise DomainError(f"Group sizes must be a non-empty vector of non-negative integers, got {list(n)}")
    sizes = sizes.astype(np.int64)
    count = factorial(int(sizes.sum()))
    for size in sizes.tolist():
        count //= factorial(size)
    return count


def treatment_index(levels: Sequence[int]) -> int:
    """1-based index j of z_j; level -1 is bit 0, factor 1 is the most significant bit."""
    index = 0
    for level in levels:
        if level not in (-1, 1):
            raise DomainError(f"Factor levels must be -1 or 1, got {level!r}")
        index = 2 * index + (1 if level == 1 else 0)
    return index + 1


def _assignment_from_permutation(permutation: np.ndarray, sizes: np.ndarray, k: int) -> Assignment:
    treatment_of = np.empty(permutation.size, dtype=np.int64)
    start = 0
    for j, size in enumerate(sizes.tolist(), start=1):
        treatment_of[permutation[start:start + size]] = j
        start += size
    return Assignment(k=k, treatment_of=treatment_of, group_sizes=tuple(sizes.tolist()))


def draw_assignment(n: Sequence[int], seed: SeedLike) -> Assignment:
    """
    Uniform draw over all N!/(prod n_j!) partitions: a seeded uniform
    permutation of the units cut into consecutive blocks of sizes n_1, n_2, ...
    Passing a Generator continues its stream.
    """
    sizes = validate_group_sizes(n)
    k = k_from_treatment_count(sizes.size)
    n_units = int(sizes.sum())
    if n_units < 1:
        raise DomainError("Group sizes must describe at least one unit")

    check_planning_size(n_units, k)

    rng = np.random.default_rng(seed)
    return _assignment_from_permutation(rng.permutation(n_units), sizes, k)


def draw_assignments(n: Sequence[int], seed: SeedLike, reps: int) -> Iterator[Assignment]:
    """`reps` successive draws from one seeded stream."""
    sizes = validate_group_sizes(n)
    k = k_from_treatment_count(sizes.size)
    n_units = int(sizes.sum())
    if n_units < 1:
        raise DomainError("Group sizes must describe at least one unit")

    rng = np.random.default_rng(seed)
    for _ in range(reps):
        yield _assignment_from_permutation(rng.permutation(n_units), sizes, k)


def enumerate_assignments(n: Sequence[int], guard: int = Config.ENUMERATION_GUARD) -> Iterator[Assignment]:
    """
    Every distinct assignment exactly once, lexicographically smallest
    treatment_of vector first.
    """
    sizes = validate_group_sizes(n)
    k = k_from_treatment_count(sizes.size)
    count = multinomial_count(sizes)
    if count > guard:
        raise EnumerationGuardError(count, guard)

    logger.debug(f"Enumerating {count} assignments for n={sizes.tolist()}")

    return _enumerate(sizes, k)


def _enumerate(sizes: np.ndarray, k: int) -> Iterator[Assignment]:
    group_sizes = tuple(sizes.tolist())
    # Start from the smallest vector 1..1 2..2 ... and step to the next
    # lexicographic permutation of the multiset until none is left
    current = np.repeat(np.arange(1, sizes.size + 1), sizes).tolist()
    n_units = len(current)

    while True:
        yield Assignment(k=k, treatment_of=np.array(current), group_sizes=group_sizes)

        pivot = n_units - 2
        while pivot >= 0 and current[pivot] >= current[pivot + 1]:
            pivot -= 1
        if pivot < 0:
            return

        successor = n_units - 1
        while current[successor] <= current[pivot]:
            successor -= 1
        current[pivot], current[successor] = current[successor], current[pivot]
        current[pivot + 1 :] = current[:pivot:-1]


def observe(table: PotentialOutcomeTable, a: Assignment) -> ObservedData:
    if table.k != a.k:
        raise DomainError(f"Table has K={table.k} but the assignment has K={a.k}")
    if table.n_units != a.n_units:
        raise DomainError(f"Table has N={table.n_units} units but the assignment has {a.n_units}")

    units = np.arange(a.n_units)
    return ObservedData(
        k=a.k,
        unit_ids=units + 1,
        treatments=a.treatment_of,
        outcomes=table.values[units, a.treatment_of - 1],
    )


def _require_groups(obs: ObservedData, min_size: int, message: str) -> np.ndarray:
    sizes = obs.group_sizes
    if np.any(sizes < min_size):
        j = int(np.argmax(sizes < min_size)) + 1
        raise DomainError(f"{message}: group z{j} has {sizes[j - 1]} unit(s)")
    return sizes


def group_means(obs: ObservedData) -> np.ndarray:
    sizes = _require_groups(obs, 1, "Empty treatment group")
    sums = np.bincount(obs.treatments - 1, weights=obs.outcomes, minlength=obs.n_treatments)
    return sums / sizes


def group_sample_variances(obs: ObservedData) -> np.ndarray:
    sizes = _require_groups(obs, 2, "Neymanian variance needs two replicates")
    deviations = obs.outcomes - group_means(obs)[obs.treatments - 1]
    squares = np.bincount(obs.treatments - 1, weights=deviations**2, minlength=obs.n_treatments)
    return squares / (sizes - 1)
