import logging

import numpy as np
import pytest

from factorial_inference.assignment import (
    Assignment,
    ObservedData,
    check_planning_size,
    draw_assignment,
    draw_assignments,
    enumerate_assignments,
    group_means,
    group_sample_variances,
    multinomial_count,
    observe,
    treatment_index,
)
from factorial_inference.module_common import DomainError, EnumerationGuardError
from factorial_inference.population import PotentialOutcomeTable


class TestDrawAssignment:
    def test_group_sizes_respected(self):
        for seed in (1, 2):
            a = draw_assignment([2, 2], seed)
            assert np.bincount(a.treatment_of, minlength=3)[1:].tolist() == [2, 2]
            assert a.group_sizes == (2, 2)

    def test_deterministic(self):
        first = draw_assignment([3, 2, 4, 1], 42)
        second = draw_assignment([3, 2, 4, 1], 42)
        assert np.array_equal(first.treatment_of, second.treatment_of)

    def test_generator_continues_stream(self):
        rng = np.random.default_rng(5)
        first = draw_assignment([3, 3], rng)
        second = draw_assignment([3, 3], rng)
        stream = list(draw_assignments([3, 3], 5, 2))
        assert np.array_equal(first.treatment_of, stream[0].treatment_of)
        assert np.array_equal(second.treatment_of, stream[1].treatment_of)

    def test_uniform_over_partitions(self):
        # 6 partitions of 4 units into two pairs, each drawn about 1/6 of the time
        rng = np.random.default_rng(11)
        counts: dict[tuple, int] = {}
        for _ in range(6000):
            key = tuple(draw_assignment([2, 2], rng).treatment_of.tolist())
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 6
        assert all(800 < c < 1200 for c in counts.values())

    @pytest.mark.parametrize("sizes", [[2, 2, 2], [2, -1], [0, 0]])
    def test_invalid_sizes(self, sizes):
        with pytest.raises(DomainError):
            draw_assignment(sizes, 0)

    def test_assignment_counts_must_match(self):
        with pytest.raises(DomainError):
            Assignment(k=1, treatment_of=np.array([1, 1, 1, 2]), group_sizes=(2, 2))


class TestEnumeration:
    def test_k1(self):
        assignments = list(enumerate_assignments([2, 2]))
        assert len(assignments) == 6
        assert assignments[0].treatment_of.tolist() == [1, 1, 2, 2]
        assert assignments[-1].treatment_of.tolist() == [2, 2, 1, 1]
        assert len({tuple(a.treatment_of.tolist()) for a in assignments}) == 6

    def test_k2(self):
        assignments = list(enumerate_assignments([2, 2, 2, 2]))
        assert len(assignments) == 2520
        keys = [tuple(a.treatment_of.tolist()) for a in assignments]
        assert keys == sorted(keys)
        assert len(set(keys)) == 2520

    def test_single_nonempty_group(self):
        assignments = list(enumerate_assignments([4, 0]))
        assert len(assignments) == 1
        assert assignments[0].treatment_of.tolist() == [1, 1, 1, 1]

    def test_guard(self):
        with pytest.raises(EnumerationGuardError) as error:
            enumerate_assignments([5, 5, 5, 5], guard=1000)
        assert error.value.count == multinomial_count([5, 5, 5, 5])
        assert "11,732,745,024" in str(error.value)

    def test_large_population_iterates(self):
        assignments = enumerate_assignments([1098, 2])
        assert next(assignments).treatment_of.tolist() == [1] * 1098 + [2, 2]
        assert next(assignments).treatment_of.tolist() == [1] * 1097 + [2, 1, 2]
        assert next(assignments).treatment_of.tolist() == [1] * 1097 + [2, 2, 1]

    def test_long_enumeration_is_complete(self):
        assignments = list(enumerate_assignments([1500, 1]))
        assert len(assignments) == multinomial_count([1500, 1]) == 1501
        assert assignments[0].treatment_of[-1] == 2
        assert assignments[-1].treatment_of.tolist() == [2] + [1] * 1500
        positions = [int(np.argmax(a.treatment_of == 2)) for a in assignments]
        assert positions == list(range(1500, -1, -1))


def test_multinomial_count():
    assert multinomial_count([2, 2]) == 6
    assert multinomial_count([2, 2, 2, 2]) == 2520
    assert multinomial_count([4]) == 1
    assert multinomial_count([5, 5, 5, 5]) == 11_732_745_024


def test_treatment_index():
    assert treatment_index([-1, -1]) == 1
    assert treatment_index([-1, 1]) == 2
    assert treatment_index([1, -1]) == 3
    assert treatment_index([1, -1, -1]) == 5
    with pytest.raises(DomainError):
        treatment_index([0, 1])


class TestObserve:
    def test_k1(self, k1_observed):
        assert k1_observed.outcomes.tolist() == [1.0, 2.0, 6.0, 8.0]
        assert k1_observed.group_sizes.tolist() == [2, 2]

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_reads_one_outcome_per_unit(self, seed):
        sentinel = -123456.0
        a = draw_assignment([2, 3, 1, 2], seed)
        values = np.full((a.n_units, 4), sentinel)
        values[np.arange(a.n_units), a.treatment_of - 1] = np.arange(a.n_units)

        obs = observe(PotentialOutcomeTable(values), a)
        assert not np.any(obs.outcomes == sentinel)
        assert obs.outcomes.tolist() == list(range(a.n_units))

    def test_identical_rows(self):
        table = PotentialOutcomeTable([[1.0, 2.0, 3.0, 4.0]] * 4)
        obs = observe(table, draw_assignment([1, 1, 1, 1], 3))
        assert np.array_equal(obs.outcomes, obs.treatments.astype(float))

    def test_dimension_mismatch(self, k1_table):
        with pytest.raises(DomainError):
            observe(k1_table, draw_assignment([1, 1, 1, 1], 0))
        with pytest.raises(DomainError):
            observe(k1_table, draw_assignment([3, 2], 0))


class TestGroupStatistics:
    def test_means(self, k1_observed):
        assert group_means(k1_observed).tolist() == [1.5, 7.0]

    def test_single_unit_groups(self):
        obs = ObservedData(k=1, unit_ids=[1, 2], treatments=[2, 1], outcomes=[3.0, 9.0])
        assert group_means(obs).tolist() == [9.0, 3.0]

    def test_empty_group(self):
        obs = ObservedData(k=1, unit_ids=[1, 2], treatments=[1, 1], outcomes=[3.0, 9.0])
        with pytest.raises(DomainError, match="z2"):
            group_means(obs)

    def test_variances(self, k1_observed):
        assert group_sample_variances(k1_observed).tolist() == [0.5, 2.0]

    def test_constant_group(self):
        obs = ObservedData(k=1, unit_ids=[1, 2, 3, 4], treatments=[1, 1, 2, 2], outcomes=[4.0, 4.0, 1.0, 2.0])
        assert group_sample_variances(obs)[0] == 0.0

    def test_variance_needs_two_replicates(self):
        obs = ObservedData(k=1, unit_ids=[1, 2, 3], treatments=[1, 2, 2], outcomes=[4.0, 1.0, 2.0])
        with pytest.raises(DomainError, match="Neymanian variance needs two replicates"):
            group_sample_variances(obs)


def test_observed_data_validation():
    with pytest.raises(DomainError):
        ObservedData(k=1, unit_ids=[1, 2], treatments=[1, 3], outcomes=[1.0, 2.0])
    with pytest.raises(DomainError):
        ObservedData(k=1, unit_ids=[1, 2], treatments=[1, 2], outcomes=[1.0])
    with pytest.raises(DomainError):
        ObservedData(k=1, unit_ids=[1, 2], treatments=[1, 2], outcomes=[1.0, np.nan])


def test_planning_size_warning(caplog, monkeypatch):
    monkeypatch.setattr(logging.getLogger("factorial_inference"), "propagate", True)
    with caplog.at_level(logging.WARNING, logger="factorial_inference"):
        check_planning_size(7, 2)
        check_planning_size(8, 2)

    warnings = [record for record in caplog.records if record.levelno == logging.WARNING]
    assert len(warnings) == 1
    assert "N=7" in warnings[0].getMessage()
    assert "2^(K+1)=8" in warnings[0].getMessage()
