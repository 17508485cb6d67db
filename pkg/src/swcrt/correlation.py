"""Within-cluster correlation of cluster-period means.

Every supported structure reduces, for balanced cells of size ``K``, to an
exchangeable block ``(1 - gamma) I + gamma J`` scaled by the variance of a
single cell mean. Point estimation only needs ``gamma``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGamma, InvalidVariance, ValidationError

GAMMA_CEILING = 1.0 - 1e-9


class CorrelationKind(str, enum.Enum):
    EXCHANGEABLE = "exchangeable"
    NESTED_EXCHANGEABLE = "nested-exchangeable"
    INDEPENDENCE = "independence"

    @classmethod
    def parse(cls, value) -> "CorrelationKind":
        if isinstance(value, CorrelationKind):
            return value
        key = str(value).strip().lower().replace("_", "-")
        if key in ("nested", "nested-exchangeable"):
            return cls.NESTED_EXCHANGEABLE
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown correlation structure {value!r}") from None


@dataclass(frozen=True)
class CorrelationSpec:
    kind: CorrelationKind
    tau_alpha_sq: float = 0.0
    sigma_e_sq: float = 1.0
    tau_omega_sq: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CorrelationKind.parse(self.kind))
        for name in ("tau_alpha_sq", "sigma_e_sq", "tau_omega_sq"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise InvalidVariance(f"{name} must be finite and nonnegative, got {value}")
            object.__setattr__(self, name, value)
        if self.sigma_e_sq <= 0:
            raise InvalidVariance("sigma_e_sq must be positive")
        if self.kind is not CorrelationKind.NESTED_EXCHANGEABLE and self.tau_omega_sq:
            raise InvalidVariance("tau_omega_sq is only meaningful for nested-exchangeable")

    @property
    def icc(self) -> float:
        """Individual-level intracluster correlation (read-only summary)."""
        if self.kind is CorrelationKind.INDEPENDENCE:
            return 0.0
        total = self.tau_alpha_sq + self.tau_omega_sq + self.sigma_e_sq
        return self.tau_alpha_sq / total

    def scaled(self, factor: float) -> "CorrelationSpec":
        """Same structure with every variance component multiplied by ``factor``."""
        return CorrelationSpec(
            self.kind,
            self.tau_alpha_sq * factor,
            self.sigma_e_sq * factor,
            self.tau_omega_sq * factor,
        )


def gamma(spec: CorrelationSpec, K: int) -> float:
    """Correlation between two cell means of the same cluster, clamped below 1."""
    if spec.sigma_e_sq <= 0:
        raise InvalidVariance("sigma_e_sq must be positive")
    if K < 1:
        raise ValidationError("cell size must be positive")
    if spec.kind is CorrelationKind.INDEPENDENCE:
        return 0.0
    value = spec.tau_alpha_sq / (spec.tau_alpha_sq + spec.tau_omega_sq + spec.sigma_e_sq / K)
    return min(max(value, 0.0), GAMMA_CEILING)


def cell_mean_variance(spec: CorrelationSpec, K: int) -> float:
    """Variance of a single cluster-period mean under ``spec``."""
    if spec.kind is CorrelationKind.INDEPENDENCE:
        return spec.sigma_e_sq / K
    return spec.tau_alpha_sq + spec.tau_omega_sq + spec.sigma_e_sq / K


def check_gamma(g: float) -> float:
    g = float(g)
    if not (0.0 <= g < 1.0):
        raise InvalidGamma(f"gamma must lie in [0, 1), got {g}")
    return g


def cluster_correlation_matrix(g: float, J: int) -> np.ndarray:
    g = check_gamma(g)
    return (1.0 - g) * np.eye(J) + g * np.ones((J, J))


def cluster_precision_matrix(g: float, J: int) -> np.ndarray:
    """Closed-form inverse of :func:`cluster_correlation_matrix`."""
    g = check_gamma(g)
    c = g / (1.0 + (J - 1) * g)
    return (np.eye(J) - c * np.ones((J, J))) / (1.0 - g)


def log_det_correlation(g: float, J: int) -> float:
    return (J - 1) * math.log1p(-g) + math.log1p((J - 1) * g)
