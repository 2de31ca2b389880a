import numpy as np
import pytest

from factorial_inference.assignment import Assignment, ObservedData, observe
from factorial_inference.population import PotentialOutcomeTable


@pytest.fixture
def k1_table() -> PotentialOutcomeTable:
    """K=1, N=4: Y(z1) = (1,2,3,4), Y(z2) = (2,4,6,8)."""
    return PotentialOutcomeTable(np.array([[1, 2], [2, 4], [3, 6], [4, 8]], dtype=float))


@pytest.fixture
def k1_assignment() -> Assignment:
    return Assignment(k=1, treatment_of=np.array([1, 1, 2, 2]), group_sizes=(2, 2))


@pytest.fixture
def k1_observed(k1_table, k1_assignment) -> ObservedData:
    """Groups (1, 2) under z1 and (6, 8) under z2."""
    return observe(k1_table, k1_assignment)


@pytest.fixture
def k2_table() -> PotentialOutcomeTable:
    rng = np.random.default_rng(2024)
    return PotentialOutcomeTable(rng.integers(-9, 10, size=(8, 4)).astype(float))


def random_observed(k: int, sizes, seed: int, uniform: bool = False) -> ObservedData:
    rng = np.random.default_rng(seed)
    treatments = np.repeat(np.arange(1, (1 << k) + 1), sizes)
    rng.shuffle(treatments)
    if uniform:
        outcomes = rng.uniform(-9, 9, size=treatments.size)
    else:
        outcomes = rng.integers(-9, 10, size=treatments.size).astype(float)
    return ObservedData(k=k, unit_ids=np.arange(1, treatments.size + 1), treatments=treatments, outcomes=outcomes)


@pytest.fixture
def make_observed():
    return random_observed
