"""
title: Factorial Inference - randomization-based and regression-based estimators
version: 0.1.0
license: MIT
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from factorial_inference.assignment import ObservedData, group_means, group_sample_variances
from factorial_inference.design import ModelMatrix, cached_model_matrix
from factorial_inference.module_common import Config, ConsistencyError, DomainError, get_logger
from factorial_inference.population import validate_group_sizes

logger = get_logger(__name__)


class CovarianceKind(str, Enum):
    NEYMANIAN = "neymanian"
    HUBER_WHITE = "huber_white"
    HOMOSCEDASTIC = "homoscedastic"
    TRUE = "true"


CONSERVATIVE_KINDS = (CovarianceKind.NEYMANIAN, CovarianceKind.HUBER_WHITE)


@dataclass(frozen=True, eq=False)
class RegressionMatrix:
    k: int
    rows: np.ndarray
    group_sizes: np.ndarray

    def xtx(self) -> np.ndarray:
        x = self.rows.astype(np.float64)
        return x.T @ x


@dataclass(frozen=True, eq=False)
class EffectEstimate:
    effects: np.ndarray
    covariance: np.ndarray
    covariance_kind: CovarianceKind
    group_sizes: tuple[int, ...]

    def __post_init__(self):
        effects = np.array(self.effects, dtype=np.float64)
        covariance = np.array(self.covariance, dtype=np.float64)
        scale = max(1.0, float(np.max(np.abs(covariance), initial=0.0)))

        if not np.allclose(covariance, covariance.T, rtol=Config.REL_TOL, atol=Config.ABS_TOL * scale):
            raise ConsistencyError(f"{self.covariance_kind.value} covariance is not symmetric")
        # The true covariance may carry rounding-level negatives; estimators may not
        if self.covariance_kind != CovarianceKind.TRUE and np.any(np.diag(covariance) < -Config.ABS_TOL * scale):
            raise ConsistencyError(f"{self.covariance_kind.value} covariance has a negative diagonal entry")

        effects.setflags(write=False)
        covariance.setflags(write=False)
        object.__setattr__(self, "effects", effects)
        object.__setattr__(self, "covariance", covariance)

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.covariance).copy()


@dataclass(frozen=True, eq=False)
class OlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    leverages: np.ndarray
    xtx_inverse: np.ndarray
    regression: RegressionMatrix

    @property
    def effects(self) -> np.ndarray:
        return 2.0 * self.coefficients


@dataclass(frozen=True)
class ConfidenceInterval:
    label: str
    point: float
    lower: float
    upper: float
    conservative: bool


def _scale(k: int) -> float:
    return 1.0 / 2 ** (k - 1)


def neymanian_covariance(variances: np.ndarray, n: Sequence[int], m: ModelMatrix) -> np.ndarray:
    """2^-2(K-1) sum_j n_j^-1 h~_j' h~_j s^2(z_j)."""
    h = m.as_float()
    weights = np.asarray(variances, dtype=np.float64) / np.asarray(n, dtype=np.float64)
    covariance = (h.T * weights) @ h / 4 ** (m.k - 1)
    return 0.5 * (covariance + covariance.T)


def ri_point_effects(obs: ObservedData) -> np.ndarray:
    """2^-(K-1) H' Ybar_obs; defined whenever every group is nonempty."""
    h = cached_model_matrix(obs.k).as_float()
    return _scale(obs.k) * (h.T @ group_means(obs))


def estimate_ri(obs: ObservedData) -> EffectEstimate:
    variances = group_sample_variances(obs)
    sizes = obs.group_sizes
    m = cached_model_matrix(obs.k)

    return EffectEstimate(
        effects=ri_point_effects(obs),
        covariance=neymanian_covariance(variances, sizes, m),
        covariance_kind=CovarianceKind.NEYMANIAN,
        group_sizes=tuple(int(s) for s in sizes),
    )


def estimate_ri_batch(
    values: np.ndarray,
    treatments: np.ndarray,
    n: Sequence[int],
    m: ModelMatrix,
) -> tuple[np.ndarray, np.ndarray]:
    """
    RI effects and Neymanian covariances for many assignments of one table.

    `treatments` is (assignments x N) of 1-based indices; returns arrays of
    shape (assignments, 2^K) and (assignments, 2^K, 2^K).
    """
    sizes = validate_group_sizes(n, k=m.k, n_units=values.shape[0], min_size=2).astype(np.float64)
    h = m.as_float()

    treatments = np.asarray(treatments, dtype=np.int64) - 1
    units = np.arange(values.shape[0])
    outcomes = values[units, treatments]

    membership = (treatments[..., None] == np.arange(m.size)).astype(np.float64)
    means = np.einsum("an,anj->aj", outcomes, membership) / sizes
    deviations = outcomes - np.take_along_axis(means, treatments, axis=1)
    variances = np.einsum("an,anj->aj", deviations**2, membership) / (sizes - 1)

    effects = _scale(m.k) * (means @ h)
    covariances = np.einsum("aj,jp,jq->apq", variances / sizes, h, h, optimize=True) / 4 ** (m.k - 1)
    return effects, covariances


def build_regression_matrix(obs: ObservedData) -> RegressionMatrix:
    m = cached_model_matrix(obs.k)
    return RegressionMatrix(
        k=obs.k,
        rows=np.asarray(m.entries)[obs.treatments - 1],
        group_sizes=obs.group_sizes,
    )


def xtx_inverse(n: Sequence[int], m: ModelMatrix) -> np.ndarray:
    """
    (X'X)^-1 = 2^-2K sum_j n_j^-1 h~_j' h~_j, from the eigenstructure of X'X
    (rows of H are eigenvectors with eigenvalues 2^K n_j).
    """
    sizes = np.asarray(n)
    if sizes.shape != (m.size,):
        raise DomainError(f"Group-size vector has length {sizes.size}, expected {m.size}")
    if np.any(sizes < 1):
        j = int(np.argmax(sizes < 1)) + 1
        raise DomainError(f"X'X is singular: group z{j} is empty")

    h = m.as_float()
    inverse = (h.T / sizes.astype(np.float64)) @ h / 4**m.k
    return 0.5 * (inverse + inverse.T)


def fit_ols(obs: ObservedData, cross_check: bool = False) -> OlsFit:
    """
    OLS of Y_obs on the regression matrix. Residuals and leverages use the
    group-mean and 1/n_j identities; `cross_check` recomputes both from the
    matrix definitions and raises ConsistencyError on disagreement.
    """
    sizes = obs.group_sizes
    if np.any(sizes < 1):
        j = int(np.argmax(sizes < 1)) + 1
        raise DomainError(f"Empty treatment group: group z{j} has 0 unit(s)")

    m = cached_model_matrix(obs.k)
    regression = build_regression_matrix(obs)
    x = regression.rows.astype(np.float64)

    inverse = xtx_inverse(sizes, m)
    coefficients = inverse @ (x.T @ obs.outcomes)

    residuals = obs.outcomes - group_means(obs)[obs.treatments - 1]
    leverages = 1.0 / sizes[obs.treatments - 1]

    if cross_check:
        logger.debug(f"Cross-checking OLS identities for K={obs.k}, n={sizes.tolist()}")
        direct_residuals = obs.outcomes - x @ coefficients
        direct_leverages = np.einsum("ij,jk,ik->i", x, inverse, x)
        scale = max(1.0, float(np.max(np.abs(obs.outcomes), initial=0.0)))

        if not np.allclose(residuals, direct_residuals, rtol=0.0, atol=Config.ABS_TOL * scale * 10):
            raise ConsistencyError(
                "OLS residuals disagree with the group-mean identity: "
                f"max deviation {np.max(np.abs(residuals - direct_residuals)):.3e}"
            )
        if not np.allclose(leverages, direct_leverages, rtol=0.0, atol=Config.ABS_TOL):
            raise ConsistencyError(
                "Leverages disagree with 1/n_j: "
                f"max deviation {np.max(np.abs(leverages - direct_leverages)):.3e}"
            )

    return OlsFit(
        coefficients=coefficients,
        residuals=residuals,
        leverages=leverages,
        xtx_inverse=inverse,
        regression=regression,
    )


def cov_hw(fit: OlsFit, obs: ObservedData) -> np.ndarray:
    """Amended Huber-White (HC2) covariance of 2 * beta_OLS."""
    if np.any(fit.leverages >= 1.0 - Config.ABS_TOL):
        j = int(obs.treatments[np.argmax(fit.leverages >= 1.0 - Config.ABS_TOL)])
        raise DomainError(f"HC2 undefined with one replicate: group z{j} has leverage 1")

    n_units = obs.n_units
    x = fit.regression.rows.astype(np.float64)
    weights = fit.residuals**2 / (1.0 - fit.leverages)

    # 4N (X'X)^-1 [N^-1 sum_i x_i' x_i e_i^2 / (1 - h_i)] (X'X)^-1, written as displayed
    meat = (x.T * weights) @ x / n_units
    covariance = 4.0 * n_units * fit.xtx_inverse @ meat @ fit.xtx_inverse
    return 0.5 * (covariance + covariance.T)


def cov_he(fit: OlsFit, obs: ObservedData) -> np.ndarray:
    """Homoscedastic covariance 4 sigma^2 (X'X)^-1."""
    dof = obs.n_units - obs.n_treatments
    if dof <= 0:
        raise DomainError(
            f"No residual degrees of freedom: N={obs.n_units} must exceed 2^K={obs.n_treatments}"
        )
    sizes = obs.group_sizes
    if np.any(sizes < 2):
        j = int(np.argmax(sizes < 2)) + 1
        raise DomainError(f"Homoscedastic covariance undefined with one replicate: group z{j} has {sizes[j - 1]} unit(s)")

    sigma2 = float(np.sum(fit.residuals**2)) / dof
    return 4.0 * sigma2 * fit.xtx_inverse


def estimate_ols(obs: ObservedData, kind: CovarianceKind = CovarianceKind.HUBER_WHITE) -> EffectEstimate:
    fit = fit_ols(obs)
    if kind == CovarianceKind.HUBER_WHITE:
        covariance = cov_hw(fit, obs)
    elif kind == CovarianceKind.HOMOSCEDASTIC:
        covariance = cov_he(fit, obs)
    else:
        raise DomainError(f"OLS estimates carry huber_white or homoscedastic covariance, not {kind.value}")

    return EffectEstimate(
        effects=fit.effects,
        covariance=covariance,
        covariance_kind=kind,
        group_sizes=tuple(int(s) for s in obs.group_sizes),
    )


def balanced_covariance(obs: ObservedData) -> np.ndarray:
    sizes = obs.group_sizes
    if not obs.is_balanced():
        raise DomainError(
            f"Design is unbalanced (group sizes {sizes.tolist()}); use estimate_ri or cov_hw instead"
        )
    r = int(sizes[0])
    if r < 2:
        raise DomainError(f"Balanced covariance needs r >= 2 replicates, got r={r}")

    m = cached_model_matrix(obs.k)
    h = m.as_float()
    covariance = (h.T * group_sample_variances(obs)) @ h / (4 ** (obs.k - 1) * r)
    return 0.5 * (covariance + covariance.T)


def confidence_intervals(
    est: EffectEstimate,
    alpha: float,
    labels: Optional[Sequence[str]] = None,
) -> list[ConfidenceInterval]:
    """
    Normal-approximation intervals effect_j +/- z_{1-alpha/2} sqrt(cov_jj).
    Neymanian and Huber-White intervals are flagged conservative.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie strictly between 0 and 1, got {alpha}")

    variances = est.variances
    if np.any(variances < -Config.ABS_TOL * max(1.0, float(np.max(np.abs(variances))))):
        raise DomainError("Covariance estimate has a negative diagonal entry")
    variances = np.clip(variances, 0.0, None)

    if labels is None:
        labels = cached_model_matrix(len(est.effects).bit_length() - 1).labels
    if len(labels) != len(est.effects):
        raise DomainError(f"Expected {len(est.effects)} labels, got {len(labels)}")

    quantile = float(stats.norm.ppf(1.0 - alpha / 2.0))
    conservative = est.covariance_kind in CONSERVATIVE_KINDS

    return [
        ConfidenceInterval(
            label=label,
            point=float(point),
            lower=float(point - quantile * np.sqrt(variance)),
            upper=float(point + quantile * np.sqrt(variance)),
            conservative=conservative,
        )
        for label, point, variance in zip(labels, est.effects, variances)
    ]
