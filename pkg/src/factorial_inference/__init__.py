"""
title: Factorial Inference
version: 0.1.0
license: MIT

Randomization-based and regression-based inference for 2^K factorial
experiments under the finite-population potential-outcomes model.
"""

from factorial_inference.assignment import (
    Assignment,
    ObservedData,
    draw_assignment,
    enumerate_assignments,
    group_means,
    group_sample_variances,
    multinomial_count,
    observe,
)
from factorial_inference.design import (
    ModelMatrix,
    TreatmentCombination,
    build_model_matrix,
    check_orthogonality,
    effect_labels,
    treatment_combinations,
)
from factorial_inference.estimators import (
    CovarianceKind,
    EffectEstimate,
    balanced_covariance,
    confidence_intervals,
    cov_he,
    cov_hw,
    estimate_ols,
    estimate_ri,
    fit_ols,
)
from factorial_inference.module_common import (
    CheckFailure,
    ConsistencyError,
    DomainError,
    EnumerationGuardError,
    FactorialError,
    InputFileError,
    UsageError,
)
from factorial_inference.population import (
    PotentialOutcomeTable,
    neymanian_bias,
    population_effects,
    population_moments,
    true_sampling_covariance,
    unit_effects,
)
from factorial_inference.verify import (
    certify_observed,
    check_balanced_he,
    check_cov_equivalence,
    check_point_equivalence,
    fuzz_suite,
    run_oracle,
    simulate_randomization,
)

__version__ = "0.1.0"
