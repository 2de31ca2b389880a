import numpy as np
import pytest
from pydantic import ValidationError

from factorial_inference.assignment import ObservedData, draw_assignment, observe
from factorial_inference.estimators import estimate_ri
from factorial_inference.module_common import Config, DomainError, EnumerationGuardError
from factorial_inference.module_reporting import dump_json
from factorial_inference.population import PotentialOutcomeTable, population_effects
from factorial_inference.verify import (
    CompensatedSum,
    FuzzHarness,
    MonteCarloSimulator,
    RandomizationOracle,
    certify_observed,
    check_balanced_he,
    check_cov_equivalence,
    check_leverages,
    check_point_equivalence,
    check_projection_identity,
    check_residual_identity,
    fingerprint,
    fuzz_suite,
    homoscedastic_discrepancy,
    run_oracle,
    simulate_randomization,
)


class TestCheckers:
    def test_constant_outcomes(self):
        obs = ObservedData(k=1, unit_ids=range(5), treatments=[1, 1, 2, 2, 2], outcomes=[4.0] * 5)
        assert check_point_equivalence(obs).discrepancy == pytest.approx(0.0, abs=1e-14)
        assert check_cov_equivalence(obs).discrepancy == pytest.approx(0.0, abs=1e-14)

    def test_k1_worked_example(self, k1_observed):
        point = check_point_equivalence(k1_observed)
        covariance = check_cov_equivalence(k1_observed)
        assert point.name == "point_equivalence" and point.passed
        assert point.discrepancy < 1e-12
        assert covariance.name == "covariance_equivalence" and covariance.passed
        assert covariance.discrepancy < 1e-12

    def test_covariance_needs_two_replicates(self):
        obs = ObservedData(k=1, unit_ids=range(3), treatments=[1, 2, 2], outcomes=[1.0, 2.0, 5.0])
        with pytest.raises(DomainError):
            check_cov_equivalence(obs)

    def test_balanced_homoscedastic(self, make_observed):
        check = check_balanced_he(make_observed(2, [2, 2, 2, 2], seed=9))
        assert check.passed
        assert check.discrepancy < 1e-12

    def test_balanced_homoscedastic_rejects_unbalanced(self, make_observed):
        obs = make_observed(1, [2, 4], seed=3)
        with pytest.raises(DomainError):
            check_balanced_he(obs)

    def test_homoscedastic_witness(self):
        obs = ObservedData(
            k=1,
            unit_ids=range(6),
            treatments=[1, 1, 2, 2, 2, 2],
            outcomes=[0.0, 2.0, 0.0, 0.0, 0.0, 4.0],
        )
        assert homoscedastic_discrepancy(obs) >= 0.625 - 1e-12

    def test_identities(self, make_observed):
        obs = make_observed(3, [1, 2, 5, 3, 1, 4, 2, 6], seed=12)
        for check in (check_leverages(obs), check_residual_identity(obs), check_projection_identity(obs)):
            assert check.passed, check

    def test_certify_observed(self, k1_observed):
        report = certify_observed(k1_observed)
        assert report.passed
        assert [c.name for c in report.checks] == [
            "point_equivalence",
            "leverage_identity",
            "residual_identity",
            "projection_identity",
            "covariance_equivalence",
            "balanced_homoscedastic_diagonal",
        ]
        assert report.instance_summary.group_sizes == [2, 2]

    def test_certify_single_replicates(self):
        obs = ObservedData(k=1, unit_ids=range(3), treatments=[1, 2, 2], outcomes=[1.0, 2.0, 5.0])
        assert [c.name for c in certify_observed(obs).checks] == [
            "point_equivalence",
            "leverage_identity",
            "residual_identity",
            "projection_identity",
        ]

    def test_fingerprint_depends_on_data(self, k1_observed):
        assert fingerprint(k1_observed) == fingerprint(k1_observed.affine(1.0, 0.0))
        assert fingerprint(k1_observed) != fingerprint(k1_observed.affine(1.0, 1.0))


def test_compensated_sum():
    total = CompensatedSum((1,))
    for value in (1e16, 1.0, -1e16, 1.0):
        total.add(np.array([value]))
    assert total.total[0] == 2.0


class TestOracle:
    def test_k1(self, k1_table):
        report = run_oracle(k1_table, [2, 2])
        assert report.passed
        assert report.assignment_count == 6
        assert report.population_effects == [7.5, 2.5]
        assert np.allclose(report.mean_estimate, [7.5, 2.5], rtol=0, atol=1e-10)
        assert np.allclose(report.true_covariance, [[5 / 12, 1.25], [1.25, 3.75]])
        assert np.allclose(report.empirical_covariance, report.true_covariance, rtol=0, atol=1e-9)
        assert not report.additive
        assert [c.name for c in report.discrepancies] == [
            "unbiasedness",
            "sampling_covariance",
            "neymanian_bias",
            "conservative_diagonal",
        ]

    def test_k2_full_enumeration(self, k2_table):
        report = run_oracle(k2_table, [2, 2, 2, 2])
        assert report.assignment_count == 2520
        assert report.passed, report.discrepancies

        truth = population_effects(k2_table).values
        assert np.max(np.abs(np.array(report.mean_estimate) - truth)) <= 1e-10
        excess = np.array(report.mean_neymanian_covariance) - np.array(report.true_covariance)
        assert np.max(np.abs(excess - np.array(report.bias_matrix))) <= 1e-9
        assert np.all(np.diag(excess) >= -1e-10)
        assert np.all(np.diag(excess) > 0.0)

    def test_additive_table(self):
        table = PotentialOutcomeTable([[1.0, 3.0, 2.0, 6.0]] * 8)
        report = run_oracle(table, [2, 2, 2, 2])
        assert report.additive
        assert np.allclose(report.bias_matrix, 0.0)
        assert np.allclose(report.mean_neymanian_covariance, report.true_covariance, atol=1e-12)

    def test_guard(self, k2_table):
        oracle = RandomizationOracle(RandomizationOracle.Valves(GUARD=100))
        with pytest.raises(EnumerationGuardError) as error:
            oracle.run(k2_table, [2, 2, 2, 2])
        assert error.value.count == 2520

    def test_chunking_does_not_change_result(self, k1_table):
        small = RandomizationOracle(RandomizationOracle.Valves(CHUNK_SIZE=1)).run(k1_table, [2, 2])
        default = run_oracle(k1_table, [2, 2])
        assert small.assignment_count == default.assignment_count
        assert np.allclose(small.mean_estimate, default.mean_estimate, rtol=0, atol=1e-12)
        assert np.allclose(small.empirical_covariance, default.empirical_covariance, rtol=0, atol=1e-12)

    def test_large_outcomes(self):
        rng = np.random.default_rng(11)
        table = PotentialOutcomeTable(1e8 + rng.uniform(0, 1, size=(6, 2)))
        report = run_oracle(table, [3, 3])
        assert report.passed, report.discrepancies
        assert report.assignment_count == 20

    def test_requires_two_replicates(self, k1_table):
        with pytest.raises(DomainError):
            run_oracle(k1_table, [1, 3])


class TestSimulation:
    def test_single_rep_equals_single_estimate(self, k1_table):
        report = simulate_randomization(k1_table, [2, 2], reps=1, seed=9)
        single = estimate_ri(observe(k1_table, draw_assignment([2, 2], 9)))
        assert report.mean_estimate == single.effects.tolist()
        assert np.allclose(report.mean_neymanian_covariance, single.covariance)
        assert report.monte_carlo_standard_errors is None
        assert report.rng_algorithm == Config.RNG_ALGORITHM

    def test_mean_within_three_standard_errors(self, k1_table):
        report = simulate_randomization(k1_table, [2, 2], reps=20_000, seed=2024)
        errors = np.array(report.monte_carlo_standard_errors)
        deviation = np.abs(np.array(report.mean_estimate) - np.array([7.5, 2.5]))
        assert np.all(errors > 0.0)
        assert np.all(deviation <= 3 * errors)

    def test_deterministic(self, k1_table):
        first = simulate_randomization(k1_table, [2, 2], reps=500, seed=3)
        second = simulate_randomization(k1_table, [2, 2], reps=500, seed=3)
        assert dump_json(first) == dump_json(second)

    def test_valves(self):
        with pytest.raises(ValidationError):
            MonteCarloSimulator.Valves(REPS=0)


class TestFuzz:
    def test_thousand_instances(self):
        report = fuzz_suite(k_max=3, instances=1000, seed=42)
        assert report.passed, report.failures[:3]
        assert report.instances == 1000
        assert [c.name for c in report.checks] == [
            "balanced_homoscedastic_diagonal",
            "covariance_equivalence",
            "leverage_identity",
            "point_equivalence",
            "projection_identity",
            "residual_identity",
        ]
        worst = {c.name: c.discrepancy for c in report.checks}
        assert worst["point_equivalence"] <= 1e-10
        assert worst["covariance_equivalence"] <= 1e-10
        assert worst["leverage_identity"] <= 1e-12
        assert worst["balanced_homoscedastic_diagonal"] <= 1e-12

    def test_uniform_outcomes(self):
        assert fuzz_suite(k_max=4, instances=50, seed=7, outcomes="uniform").passed

    def test_deterministic(self):
        first = dump_json(fuzz_suite(k_max=3, instances=40, seed=42))
        second = dump_json(fuzz_suite(k_max=3, instances=40, seed=42))
        assert first == second
        assert first != dump_json(fuzz_suite(k_max=3, instances=40, seed=43))

    def test_failures_are_recorded(self):
        valves = FuzzHarness.Valves(K_MAX=2, INSTANCES=5, SEED=1, COVARIANCE_TOLERANCE=-1.0)
        report = FuzzHarness(valves).run()
        assert not report.passed
        assert {f.check.name for f in report.failures} == {"covariance_equivalence"}
        assert len(report.failures) == 5
        assert len(report.failures[0].summary.fingerprint) == 64

    def test_limits(self):
        with pytest.raises(DomainError):
            fuzz_suite(k_max=5, instances=10, seed=0)
        with pytest.raises(DomainError):
            fuzz_suite(k_max=0, instances=10, seed=0)
        with pytest.raises(DomainError):
            FuzzHarness(FuzzHarness.Valves(MIN_GROUP_SIZE=5, MAX_GROUP_SIZE=3))

    def test_unbalanced_witness_exists(self):
        rng = np.random.default_rng(0)
        harness = FuzzHarness(FuzzHarness.Valves(K_MAX=2))
        discrepancies = [homoscedastic_discrepancy(harness._instance(rng)[0]) for _ in range(20)]
        assert max(discrepancies) > 1e-6
