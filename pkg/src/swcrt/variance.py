"""Model-based and cluster-robust variances, and confidence intervals."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import stats

from . import _kernels
from .correlation import cluster_correlation_matrix
from .errors import DimensionMismatch, LeverageSingular, SingularDesign, TooFewClusters, ValidationError
from .gls import FitResult


class VarianceMethod(str, enum.Enum):
    MODEL = "model"
    CR0 = "CR0"
    CR2 = "CR2"
    CR3 = "CR3"

    @classmethod
    def parse(cls, value) -> "VarianceMethod":
        if isinstance(value, VarianceMethod):
            return value
        key = str(value).strip()
        for member in cls:
            if key.lower() == member.value.lower():
                return member
        if key.lower() in ("model-based", "modelbased", "model_based"):
            return cls.MODEL
        raise ValidationError(f"unknown variance method {value!r}")

    @property
    def default_dof_rule(self) -> "DofRule":
        return DofRule.NORMAL if self is VarianceMethod.MODEL else DofRule.T_CLUSTERS_MINUS_ONE


class DofRule(str, enum.Enum):
    NORMAL = "normal"
    T_CLUSTERS_MINUS_ONE = "t"


_KERNEL_KIND = {VarianceMethod.CR0: _kernels.CR0, VarianceMethod.CR2: _kernels.CR2, VarianceMethod.CR3: _kernels.CR3}


def unscaled_covariance(fit: FitResult) -> np.ndarray:
    """``(Z'V^-1 Z)^-1`` with ``V`` the scale-free working covariance."""
    try:
        factor = scipy.linalg.cho_factor(fit.information, lower=True)
    except np.linalg.LinAlgError:
        raise SingularDesign("information matrix is not positive definite") from None
    M = scipy.linalg.cho_solve(factor, np.eye(fit.information.shape[0]))
    return 0.5 * (M + M.T)


def model_vcov(fit: FitResult) -> np.ndarray:
    """Model-based covariance of the coefficients: ``scale * (Z'V^-1 Z)^-1``."""
    return fit.scale * unscaled_covariance(fit)


def cluster_robust_vcov(fit: FitResult, means=None, type="CR2", backend: str | None = None) -> np.ndarray:
    """Cluster-robust sandwich covariance of the coefficients.

    Residuals are taken from ``fit`` unless ``means`` is given, in which
    case they are recomputed from those cell means. CR2 uses the
    bias-reduced adjustment ``A_i = L (L'(R - Z_i M Z_i')L)^(-1/2) L'`` with
    ``R = LL'``; it reduces to ``(I - H_ii)^(-1/2)`` for a working
    independence model and makes the meat unbiased when the working model
    is correct. CR3 uses ``(I - H_ii)^-1`` and equals the sum of squared
    delete-one-cluster coefficient changes.

    Raises:
        TooFewClusters: fewer than two clusters.
        LeverageSingular: a cluster block ``I - H_ii`` is numerically
            singular (smallest eigenvalue below 1e-10).
    """
    method = VarianceMethod.parse(type)
    if method is VarianceMethod.MODEL:
        return model_vcov(fit)
    if fit.n_clusters < 2:
        raise TooFewClusters(f"robust variance needs at least 2 clusters, got {fit.n_clusters}")
    dm = fit.design
    if means is None:
        E = fit.residuals
    else:
        E = dm.cluster_values(np.asarray(means, dtype=float)) - np.einsum("iap,p->ia", dm.Z3, fit.coefficients)
    M = unscaled_covariance(fit)
    R = cluster_correlation_matrix(fit.gamma, dm.periods_per_cluster)
    kern = _kernels.get_backend(backend)
    meat, worst = kern.robust_meat(dm.Z3, np.ascontiguousarray(E), R, M, _KERNEL_KIND[method])
    if worst >= 0:
        raise LeverageSingular(f"cluster {worst} has a singular leverage block")
    V = M @ meat @ M
    return 0.5 * (V + V.T)


def coefficient_vcov(fit: FitResult, method, means=None, backend: str | None = None) -> np.ndarray:
    method = VarianceMethod.parse(method)
    if method is VarianceMethod.MODEL:
        return model_vcov(fit)
    return cluster_robust_vcov(fit, means, method, backend)


def contrast_variance(vcov, contrast) -> float:
    """Variance ``c' V c`` of a linear combination of coefficients."""
    vcov = np.asarray(vcov, dtype=float)
    c = np.asarray(contrast, dtype=float)
    if vcov.ndim != 2 or vcov.shape[0] != vcov.shape[1] or c.shape != (vcov.shape[0],):
        raise DimensionMismatch(f"contrast of length {c.size} does not match covariance {vcov.shape}")
    return max(float(c @ vcov @ c), 0.0)


def confidence_interval(point: float, se: float, dof_rule="normal", dof: int | None = None,
                        level: float = 0.95) -> tuple[float, float]:
    """Two-sided interval ``point -/+ q * se``.

    Args:
        point: estimate.
        se: standard error, nonnegative.
        dof_rule: ``"normal"`` or ``"t"``; the latter needs ``dof``.
        dof: Student-t degrees of freedom (clusters minus one by convention).
        level: coverage level.
    """
    if not se >= 0:
        raise ValidationError(f"standard error must be nonnegative, got {se}")
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    rule = DofRule(dof_rule)
    p = 0.5 + level / 2.0
    if rule is DofRule.NORMAL:
        q = stats.norm.ppf(p)
    else:
        if dof is None or dof < 1:
            raise ValidationError("a t interval needs at least one degree of freedom")
        q = stats.t.ppf(p, dof)
    half = float(q) * se
    return float(point - half), float(point + half)


@dataclass(frozen=True)
class VarianceReport:
    estimator: str
    point: float
    se: float
    method: VarianceMethod
    ci_low: float
    ci_high: float
    dof_rule: DofRule
    dof: int | None = None

    @property
    def variance(self) -> float:
        return self.se * self.se

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def variance_report(fit: FitResult, method="model", means=None, dof_rule=None,
                    level: float = 0.95, backend: str | None = None) -> VarianceReport:
    """Point estimate, standard error and interval for the fit's estimator.

    Model-based intervals use Normal quantiles and robust ones Student-t
    with ``I - 1`` degrees of freedom unless ``dof_rule`` overrides.
    """
    method = VarianceMethod.parse(method)
    rule = method.default_dof_rule if dof_rule is None else DofRule(dof_rule)
    vcov = coefficient_vcov(fit, method, means, backend)
    point = fit.estimate
    se = math.sqrt(contrast_variance(vcov, fit.contrast()))
    dof = fit.n_clusters - 1 if rule is DofRule.T_CLUSTERS_MINUS_ONE else None
    lo, hi = confidence_interval(point, se, rule, dof, level)
    return VarianceReport(fit.estimator, point, se, method, lo, hi, rule, dof)
