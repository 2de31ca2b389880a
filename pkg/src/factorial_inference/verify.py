"""
title: Factorial Inference - equivalence checkers, exact oracle, fuzz harness, Monte Carlo
version: 0.1.0
license: MIT
"""

import hashlib
from itertools import islice
from typing import Any, Iterable, Iterator, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError, computed_field

from factorial_inference.assignment import (
    Assignment,
    ObservedData,
    draw_assignment,
    draw_assignments,
    enumerate_assignments,
    multinomial_count,
    observe,
)
from factorial_inference.design import cached_model_matrix
from factorial_inference.estimators import (
    build_regression_matrix,
    cov_he,
    cov_hw,
    estimate_ri,
    estimate_ri_batch,
    fit_ols,
    ri_point_effects,
    xtx_inverse,
)
from factorial_inference.module_common import Config, DomainError, configure_logging, get_logger
from factorial_inference.population import (
    PotentialOutcomeTable,
    is_additive,
    neymanian_bias,
    population_effects,
    true_sampling_covariance,
    validate_group_sizes,
)

logger = get_logger(__name__)

POINT_TOLERANCE = 1e-10
COVARIANCE_TOLERANCE = 1e-10
IDENTITY_TOLERANCE = 1e-12


class EquivalenceCheck(BaseModel):
    name: str
    discrepancy: float
    tolerance: float
    passed: bool

    @classmethod
    def evaluate(cls, name: str, discrepancy: float, tolerance: float) -> "EquivalenceCheck":
        discrepancy = float(discrepancy)
        return cls(
            name=name,
            discrepancy=discrepancy,
            tolerance=float(tolerance),
            passed=bool(discrepancy <= tolerance),
        )


class InstanceSummary(BaseModel):
    k: int
    n_units: int
    group_sizes: list[int]
    fingerprint: str


class FailureRecord(BaseModel):
    instance: int
    check: EquivalenceCheck
    summary: InstanceSummary


class EquivalenceReport(BaseModel):
    instance_summary: Optional[InstanceSummary] = None
    checks: list[EquivalenceCheck] = Field(default_factory=list)
    instances: int = 0
    failures: list[FailureRecord] = Field(default_factory=list)
    seed: Optional[int] = None
    rng_algorithm: Optional[str] = None
    configuration: dict[str, Any] = Field(default_factory=dict)

    @computed_field
    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks) and not self.failures


class OracleReport(BaseModel):
    assignment_count: int
    group_sizes: list[int]
    labels: list[str]
    additive: bool
    population_effects: list[float]
    mean_estimate: list[float]
    empirical_covariance: list[list[float]]
    true_covariance: list[list[float]]
    mean_neymanian_covariance: list[list[float]]
    bias_matrix: list[list[float]]
    discrepancies: list[EquivalenceCheck]

    @computed_field
    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.discrepancies)


class SimulationReport(BaseModel):
    reps: int
    seed: int
    rng_algorithm: str
    group_sizes: list[int]
    labels: list[str]
    population_effects: list[float]
    mean_estimate: list[float]
    monte_carlo_standard_errors: Optional[list[float]]
    empirical_covariance: list[list[float]]
    true_covariance: list[list[float]]
    mean_neymanian_covariance: list[list[float]]


class CompensatedSum:
    """Elementwise Neumaier summation over equally shaped arrays."""

    def __init__(self, shape: tuple[int, ...]):
        self._sum = np.zeros(shape)
        self._compensation = np.zeros(shape)

    def add(self, value: np.ndarray) -> None:
        total = self._sum + value
        larger = np.abs(self._sum) >= np.abs(value)
        self._compensation += np.where(larger, (self._sum - total) + value, (value - total) + self._sum)
        self._sum = total

    @property
    def total(self) -> np.ndarray:
        return self._sum + self._compensation


def fingerprint(obs: ObservedData) -> str:
    digest = hashlib.sha256()
    digest.update(f"k={obs.k};".encode())
    digest.update(obs.treatments.astype("<i8").tobytes())
    digest.update(obs.outcomes.astype("<f8").tobytes())
    return digest.hexdigest()


def summarize(obs: ObservedData) -> InstanceSummary:
    return InstanceSummary(
        k=obs.k,
        n_units=obs.n_units,
        group_sizes=obs.group_sizes.tolist(),
        fingerprint=fingerprint(obs),
    )


def max_abs(values: np.ndarray) -> float:
    return float(np.max(np.abs(values), initial=0.0))


def check_point_equivalence(obs: ObservedData, tol: float = POINT_TOLERANCE) -> EquivalenceCheck:
    ri = ri_point_effects(obs)
    ols = fit_ols(obs).effects
    return EquivalenceCheck.evaluate("point_equivalence", max_abs(ri - ols), tol)


def check_cov_equivalence(obs: ObservedData, tol: float = COVARIANCE_TOLERANCE) -> EquivalenceCheck:
    neymanian = estimate_ri(obs).covariance
    huber_white = cov_hw(fit_ols(obs), obs)
    return EquivalenceCheck.evaluate("covariance_equivalence", max_abs(neymanian - huber_white), tol)


def check_balanced_he(obs: ObservedData, tol: float = IDENTITY_TOLERANCE) -> EquivalenceCheck:
    """Diagonal-only comparison of the homoscedastic and HC2 covariances."""
    sizes = obs.group_sizes
    if not obs.is_balanced():
        raise DomainError(f"Balanced design required, got group sizes {sizes.tolist()}")
    if sizes[0] < 2:
        raise DomainError(f"Balanced design needs r >= 2 replicates, got r={int(sizes[0])}")

    fit = fit_ols(obs)
    discrepancy = max_abs(np.diag(cov_he(fit, obs)) - np.diag(cov_hw(fit, obs)))
    return EquivalenceCheck.evaluate("balanced_homoscedastic_diagonal", discrepancy, tol)


def homoscedastic_discrepancy(obs: ObservedData) -> float:
    """Full-matrix max |Cov_HE - Cov_HW|, no balance restriction."""
    fit = fit_ols(obs)
    return max_abs(cov_he(fit, obs) - cov_hw(fit, obs))


def check_leverages(obs: ObservedData, tol: float = IDENTITY_TOLERANCE) -> EquivalenceCheck:
    sizes = obs.group_sizes
    m = cached_model_matrix(obs.k)
    x = build_regression_matrix(obs).rows.astype(np.float64)

    leverages = np.einsum("ij,jk,ik->i", x, xtx_inverse(sizes, m), x)
    discrepancy = max(
        max_abs(leverages - 1.0 / sizes[obs.treatments - 1]),
        abs(float(leverages.sum()) - m.size),
    )
    return EquivalenceCheck.evaluate("leverage_identity", discrepancy, tol)


def check_residual_identity(obs: ObservedData, tol: float = IDENTITY_TOLERANCE) -> EquivalenceCheck:
    fit = fit_ols(obs)
    x = fit.regression.rows.astype(np.float64)
    direct = obs.outcomes - x @ fit.coefficients
    return EquivalenceCheck.evaluate("residual_identity", max_abs(direct - fit.residuals), tol)


def check_projection_identity(obs: ObservedData, tol: float = IDENTITY_TOLERANCE) -> EquivalenceCheck:
    """
    (X'X) (X'X)^-1 = I and (X'X)^-1 h~_j' h~_j (X'X)^-1 = h~_j' h~_j / (2^2K n_j^2)
    with X'X multiplied out from the regression rows.
    """
    sizes = obs.group_sizes
    m = cached_model_matrix(obs.k)
    h = m.as_float()
    regression = build_regression_matrix(obs)
    inverse = xtx_inverse(sizes, m)

    discrepancy = max_abs(regression.xtx() @ inverse - np.eye(m.size))
    for j in range(m.size):
        outer = np.outer(h[j], h[j])
        discrepancy = max(
            discrepancy,
            max_abs(inverse @ outer @ inverse - outer / (4**m.k * float(sizes[j]) ** 2)),
        )
    return EquivalenceCheck.evaluate("projection_identity", discrepancy, tol)


def certify_observed(
    obs: ObservedData,
    point_tol: float = POINT_TOLERANCE,
    covariance_tol: float = COVARIANCE_TOLERANCE,
    identity_tol: float = IDENTITY_TOLERANCE,
) -> EquivalenceReport:
    """
    Every check that applies to this dataset's group sizes. Tolerances are
    absolute for outcomes of unit magnitude and scale with max |y| (squared
    for covariances).
    """
    sizes = obs.group_sizes
    scale = max(1.0, max_abs(obs.outcomes))
    point_tol *= scale
    covariance_tol *= scale**2
    checks = [check_point_equivalence(obs, point_tol)]

    if np.all(sizes >= 1):
        checks.append(check_leverages(obs, identity_tol))
        checks.append(check_residual_identity(obs, identity_tol * scale))
        checks.append(check_projection_identity(obs, identity_tol))
    if np.all(sizes >= 2):
        checks.append(check_cov_equivalence(obs, covariance_tol))
        if obs.is_balanced():
            checks.append(check_balanced_he(obs, identity_tol * scale**2))

    return EquivalenceReport(instance_summary=summarize(obs), checks=checks, instances=1)


def _batched(stream: Iterable[Assignment], size: int) -> Iterator[list[Assignment]]:
    iterator = iter(stream)
    while chunk := list(islice(iterator, size)):
        yield chunk


def _chunk_size(requested: int, n_units: int, n_treatments: int) -> int:
    # Keep the (chunk x N x 2^K) membership array and covariances near 32 MiB
    per_assignment = 8 * (n_units * n_treatments + n_treatments**2 + 2 * n_units)
    return max(1, min(requested, (32 << 20) // per_assignment))


class _RandomizationMoments:
    """Ordered, compensated fold of RI estimates over a stream of assignments."""

    def __init__(self, table: PotentialOutcomeTable, sizes: np.ndarray, chunk_size: int):
        self.table = table
        self.sizes = sizes
        self.m = cached_model_matrix(table.k)
        self.chunk_size = _chunk_size(chunk_size, table.n_units, self.m.size)

        shape = (self.m.size,)
        self.count = 0
        self.shift: Optional[np.ndarray] = None
        self.effect_sum = CompensatedSum(shape)
        self.outer_sum = CompensatedSum(shape * 2)
        self.neymanian_sum = CompensatedSum(shape * 2)

    def consume(self, stream: Iterable[Assignment]) -> None:
        for chunk in _batched(stream, self.chunk_size):
            treatments = np.stack([a.treatment_of for a in chunk])
            effects, covariances = estimate_ri_batch(self.table.values, treatments, self.sizes, self.m)

            if self.shift is None:
                self.shift = effects[0].copy()

            # Sequential in assignment order so reported numbers are byte-stable
            for effect, covariance in zip(effects, covariances):
                deviation = effect - self.shift
                self.effect_sum.add(deviation)
                self.outer_sum.add(np.outer(deviation, deviation))
                self.neymanian_sum.add(covariance)
                self.count += 1

    def mean_estimate(self) -> np.ndarray:
        return self.shift + self.effect_sum.total / self.count

    def empirical_covariance(self) -> np.ndarray:
        mean_deviation = self.effect_sum.total / self.count
        covariance = self.outer_sum.total / self.count - np.outer(mean_deviation, mean_deviation)
        return 0.5 * (covariance + covariance.T)

    def mean_neymanian_covariance(self) -> np.ndarray:
        return self.neymanian_sum.total / self.count

    def standard_errors(self) -> Optional[np.ndarray]:
        if self.count < 2:
            return None
        mean_deviation = self.effect_sum.total / self.count
        variances = (np.diag(self.outer_sum.total) - self.count * mean_deviation**2) / (self.count - 1)
        return np.sqrt(np.clip(variances, 0.0, None) / self.count)


def _matrix(values: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in values]


def _vector(values: np.ndarray) -> list[float]:
    return [float(v) for v in values]


class RandomizationOracle:
    """
    Exact randomization distribution of the RI estimator by full enumeration.

    Tolerances apply to outcomes of magnitude at most 1. Mean tolerances scale
    with max |Y| and covariance tolerances with max |Y|^2.
    """

    class Valves(BaseModel):
        GUARD: int = Field(
            default=Config.ENUMERATION_GUARD,
            description="Refuse enumerations with more assignments than this",
        )
        CHUNK_SIZE: int = Field(default=4096, ge=1, description="Assignments estimated per vectorised batch")
        MEAN_TOLERANCE: float = Field(default=1e-10, description="Unbiasedness tolerance")
        COVARIANCE_TOLERANCE: float = Field(
            default=1e-9, description="Tolerance for the sampling covariance and bias identities"
        )
        CONSERVATIVE_TOLERANCE: float = Field(
            default=1e-10, description="Allowed negative slack on the Neymanian bias diagonal"
        )
        DEBUG: bool = Field(default=False, description="Display debugging messages")

    def __init__(self, valves: Optional["RandomizationOracle.Valves"] = None):
        self.valves = valves or self.Valves()

    def run(self, table: PotentialOutcomeTable, n: Sequence[int]) -> OracleReport:
        sizes = validate_group_sizes(n, k=table.k, n_units=table.n_units, min_size=2)
        count = multinomial_count(sizes)
        stream = enumerate_assignments(sizes, guard=self.valves.GUARD)

        if self.valves.DEBUG:
            logger.debug(f"Oracle over {count} assignments, K={table.k}, n={sizes.tolist()}")

        moments = _RandomizationMoments(table, sizes, self.valves.CHUNK_SIZE)
        moments.consume(stream)

        truth = population_effects(table).values
        true_covariance = true_sampling_covariance(table, sizes)
        bias = neymanian_bias(table)

        mean_estimate = moments.mean_estimate()
        empirical = moments.empirical_covariance()
        mean_neymanian = moments.mean_neymanian_covariance()
        excess = mean_neymanian - true_covariance
        scale = max(1.0, max_abs(table.values))
        mean_tol = self.valves.MEAN_TOLERANCE * scale
        covariance_tol = self.valves.COVARIANCE_TOLERANCE * scale**2

        discrepancies = [
            EquivalenceCheck.evaluate("unbiasedness", max_abs(mean_estimate - truth), mean_tol),
            EquivalenceCheck.evaluate(
                "sampling_covariance", max_abs(empirical - true_covariance), covariance_tol
            ),
            EquivalenceCheck.evaluate("neymanian_bias", max_abs(excess - bias), covariance_tol),
            EquivalenceCheck.evaluate(
                "conservative_diagonal",
                max(0.0, -float(np.min(np.diag(excess)))),
                self.valves.CONSERVATIVE_TOLERANCE * scale**2,
            ),
        ]

        if self.valves.DEBUG:
            for check in discrepancies:
                logger.debug(f"{check.name}: {check.discrepancy:.3e} (tolerance {check.tolerance:.0e})")

        return OracleReport(
            assignment_count=moments.count,
            group_sizes=sizes.tolist(),
            labels=list(moments.m.labels),
            additive=is_additive(table),
            population_effects=_vector(truth),
            mean_estimate=_vector(mean_estimate),
            empirical_covariance=_matrix(empirical),
            true_covariance=_matrix(true_covariance),
            mean_neymanian_covariance=_matrix(mean_neymanian),
            bias_matrix=_matrix(bias),
            discrepancies=discrepancies,
        )


def run_oracle(table: PotentialOutcomeTable, n: Sequence[int]) -> OracleReport:
    return RandomizationOracle().run(table, n)


class MonteCarloSimulator:
    """Seeded Monte Carlo approximation of the randomization distribution."""

    class Valves(BaseModel):
        REPS: int = Field(default=10_000, ge=1, description="Number of seeded assignments to draw")
        SEED: int = Field(default=0, ge=0, description="64-bit seed of the assignment stream")
        CHUNK_SIZE: int = Field(default=4096, ge=1, description="Assignments estimated per vectorised batch")
        DEBUG: bool = Field(default=False, description="Display debugging messages")

    def __init__(self, valves: Optional["MonteCarloSimulator.Valves"] = None):
        self.valves = valves or self.Valves()

    def run(self, table: PotentialOutcomeTable, n: Sequence[int]) -> SimulationReport:
        sizes = validate_group_sizes(n, k=table.k, n_units=table.n_units, min_size=2)

        if self.valves.DEBUG:
            logger.debug(f"Simulating {self.valves.REPS} assignments with seed {self.valves.SEED}")

        moments = _RandomizationMoments(table, sizes, self.valves.CHUNK_SIZE)
        moments.consume(draw_assignments(sizes, self.valves.SEED, self.valves.REPS))

        errors = moments.standard_errors()
        return SimulationReport(
            reps=moments.count,
            seed=self.valves.SEED,
            rng_algorithm=Config.RNG_ALGORITHM,
            group_sizes=sizes.tolist(),
            labels=list(moments.m.labels),
            population_effects=_vector(population_effects(table).values),
            mean_estimate=_vector(moments.mean_estimate()),
            monte_carlo_standard_errors=None if errors is None else _vector(errors),
            empirical_covariance=_matrix(moments.empirical_covariance()),
            true_covariance=_matrix(true_sampling_covariance(table, sizes)),
            mean_neymanian_covariance=_matrix(moments.mean_neymanian_covariance()),
        )


def simulate_randomization(table: PotentialOutcomeTable, n: Sequence[int], reps: int, seed: int) -> SimulationReport:
    return MonteCarloSimulator(MonteCarloSimulator.Valves(REPS=reps, SEED=seed)).run(table, n)


class FuzzHarness:
    """
    Random unbalanced instances run through every checker.

    Outcomes are integers drawn uniformly from [-OUTCOME_RANGE, OUTCOME_RANGE]
    ("integer" mode) or floats uniform on the same interval ("uniform" mode);
    group sizes are uniform on [MIN_GROUP_SIZE, MAX_GROUP_SIZE]. Each instance
    also gets a balanced companion with r uniform on {2, 3} for the
    homoscedastic diagonal check.
    """

    class Valves(BaseModel):
        K_MAX: int = Field(default=3, ge=1, le=4, description="Largest number of factors to fuzz")
        INSTANCES: int = Field(default=1000, ge=0, description="Number of random populations")
        SEED: int = Field(default=0, ge=0, description="64-bit seed of the fuzz stream")
        OUTCOMES: Literal["integer", "uniform"] = Field(
            default="integer", description="Outcome distribution"
        )
        OUTCOME_RANGE: int = Field(default=9, ge=1, description="Outcomes lie in [-range, range]")
        MIN_GROUP_SIZE: int = Field(default=2, ge=2, description="Smallest group size")
        MAX_GROUP_SIZE: int = Field(default=6, ge=2, description="Largest group size")
        POINT_TOLERANCE: float = Field(default=POINT_TOLERANCE, description="Point equivalence tolerance")
        COVARIANCE_TOLERANCE: float = Field(
            default=COVARIANCE_TOLERANCE, description="Covariance equivalence tolerance"
        )
        IDENTITY_TOLERANCE: float = Field(
            default=IDENTITY_TOLERANCE, description="Leverage, residual, projection and balanced tolerance"
        )
        DEBUG: bool = Field(default=False, description="Display debugging messages")

    def __init__(self, valves: Optional["FuzzHarness.Valves"] = None):
        self.valves = valves or self.Valves()
        if self.valves.MAX_GROUP_SIZE < self.valves.MIN_GROUP_SIZE:
            raise DomainError("MAX_GROUP_SIZE must not be below MIN_GROUP_SIZE")

    def _outcomes(self, rng: np.random.Generator, n_units: int, n_treatments: int) -> PotentialOutcomeTable:
        bound = self.valves.OUTCOME_RANGE
        if self.valves.OUTCOMES == "integer":
            values = rng.integers(-bound, bound + 1, size=(n_units, n_treatments)).astype(np.float64)
        else:
            values = rng.uniform(-bound, bound, size=(n_units, n_treatments))
        return PotentialOutcomeTable(values)

    def _instance(self, rng: np.random.Generator) -> tuple[ObservedData, ObservedData]:
        k = int(rng.integers(1, self.valves.K_MAX + 1))
        n_treatments = 1 << k

        sizes = rng.integers(self.valves.MIN_GROUP_SIZE, self.valves.MAX_GROUP_SIZE + 1, size=n_treatments)
        table = self._outcomes(rng, int(sizes.sum()), n_treatments)
        unbalanced = observe(table, draw_assignment(sizes, rng))

        r = int(rng.integers(2, 4))
        table = self._outcomes(rng, r * n_treatments, n_treatments)
        balanced = observe(table, draw_assignment([r] * n_treatments, rng))

        return unbalanced, balanced

    def run(self) -> EquivalenceReport:
        valves = self.valves
        rng = np.random.default_rng(valves.SEED)
        worst: dict[str, EquivalenceCheck] = {}
        failures: list[FailureRecord] = []

        for instance in range(valves.INSTANCES):
            unbalanced, balanced = self._instance(rng)

            checks = [
                (unbalanced, check_point_equivalence(unbalanced, valves.POINT_TOLERANCE)),
                (unbalanced, check_cov_equivalence(unbalanced, valves.COVARIANCE_TOLERANCE)),
                (unbalanced, check_leverages(unbalanced, valves.IDENTITY_TOLERANCE)),
                (unbalanced, check_residual_identity(unbalanced, valves.IDENTITY_TOLERANCE)),
                (unbalanced, check_projection_identity(unbalanced, valves.IDENTITY_TOLERANCE)),
                (balanced, check_balanced_he(balanced, valves.IDENTITY_TOLERANCE)),
            ]

            for obs, check in checks:
                if check.name not in worst or check.discrepancy > worst[check.name].discrepancy:
                    worst[check.name] = check
                if not check.passed:
                    failures.append(FailureRecord(instance=instance, check=check, summary=summarize(obs)))
                    logger.info(
                        f"Instance {instance} failed {check.name}: "
                        f"{check.discrepancy:.3e} > {check.tolerance:.0e}"
                    )

            if valves.DEBUG and (instance + 1) % 100 == 0:
                logger.debug(f"Fuzzed {instance + 1}/{valves.INSTANCES} instances")

        return EquivalenceReport(
            checks=[worst[name] for name in sorted(worst)],
            instances=valves.INSTANCES,
            failures=failures,
            seed=valves.SEED,
            rng_algorithm=Config.RNG_ALGORITHM,
            configuration=valves.model_dump(exclude={"DEBUG", "SEED"}),
        )


def fuzz_suite(k_max: int, instances: int, seed: int, outcomes: str = "integer", debug: bool = False) -> EquivalenceReport:
    if k_max > 4:
        raise DomainError(f"Fuzzing is limited to K <= 4, got k_max={k_max}")
    if debug:
        configure_logging(debug=True)
    try:
        valves = FuzzHarness.Valves(K_MAX=k_max, INSTANCES=instances, SEED=seed, OUTCOMES=outcomes, DEBUG=debug)
    except ValidationError as e:
        raise DomainError(f"Invalid fuzz configuration: {e}") from e
    return FuzzHarness(valves).run()
