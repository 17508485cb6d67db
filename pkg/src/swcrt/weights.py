"""Estimand weights of correctly and incorrectly specified estimators.

A misspecified treatment-effect estimator still targets a weighted average
of the true period-specific effects. This module computes those weights,
analytically where closed forms exist and otherwise from the rows of the
GLS projection ``(Z'V^-1 Z)^-1 Z'V^-1`` applied to the true effect pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from scipy.optimize import brentq

from .correlation import check_gamma, cluster_precision_matrix
from .design import (
    DesignSpec,
    Structure,
    TreatmentStructure,
    design_matrix_from_sequences,
)
from .errors import DegenerateDesign, DimensionMismatch, InvalidGamma, SingularDesign, ValidationError

ANALYTIC = "analytic"
NUMERIC = "numeric"
FAMILIES = ("w1", "w2", "w3", "w4")


@dataclass(frozen=True, eq=False)
class WeightProfile:
    """Weights an estimator places on each true period-specific effect.

    Attributes:
        analysis: structure of the fitted model.
        truth: structure of the true effect.
        gamma: within-cluster correlation of cell means (None when the
            weights do not depend on it).
        n_sequences: number of sequences ``Q``; the design has ``Q + 1``
            periods.
        indices: exposure times ``s`` (exposure truth), calendar periods
            ``j`` (calendar truth) or ``(0,)`` for an immediate truth.
        weights: one weight per index.
        method: ``"analytic"`` or ``"numeric"``.
        exclude_final_period: whether final-period cells were dropped from
            the analysis.
        sequence_weights: numeric path only, ``(Q, J)`` weights of each
            sequence-period mean in the estimator (zero where excluded).
        period_leakage: numeric path only, largest absolute weight the
            estimator puts on any period effect; zero up to rounding.
    """

    analysis: Structure
    truth: Structure
    gamma: float | None
    n_sequences: int
    indices: tuple[int, ...]
    weights: np.ndarray
    method: str
    exclude_final_period: bool = False
    sequence_weights: np.ndarray | None = None
    period_leakage: float = 0.0

    @property
    def n_periods(self) -> int:
        return self.n_sequences + 1

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def scaled_weights(self) -> np.ndarray:
        """Weights times the number of estimands; 1 everywhere means uniform."""
        return self.weights * len(self.indices)

    def as_dict(self) -> dict[int, float]:
        return {k: float(w) for k, w in zip(self.indices, self.weights)}


def _check_q(Q: int, minimum: int = 2) -> int:
    Q = int(Q)
    if Q < minimum:
        raise DegenerateDesign(f"need at least {minimum} sequences, got {Q}")
    return Q


def w1_exposure_weights(Q: int, gamma: float) -> WeightProfile:
    """Weights of the immediate-effect estimator over exposure-time effects."""
    return _w1(_check_q(Q), check_gamma(gamma))


def _w1(Q: int, g: float) -> WeightProfile:
    # the rational form stays finite at g = 1, where it gives the limit
    s = np.arange(1, Q + 1, dtype=float)
    num = 6.0 * (s - Q - 1) * ((1 + 2 * g * Q) * s - (1 + g + g * Q) * Q)
    den = Q * (Q + 1) * (g * Q * Q + 2 * Q - g * Q - 2)
    return WeightProfile(Structure.IMMEDIATE, Structure.EXPOSURE, g, Q, tuple(range(1, Q + 1)), num / den, ANALYTIC)


def w2_calendar_weights(Q: int) -> WeightProfile:
    """Weights of the immediate-effect estimator over calendar-time effects.

    They do not depend on the correlation and are never negative.
    """
    Q = _check_q(Q)
    j = np.arange(2, Q + 1, dtype=float)
    w = 6.0 * (j - 1) * (Q + 1 - j) / (Q * (Q + 1) * (Q - 1))
    return WeightProfile(Structure.IMMEDIATE, Structure.CALENDAR, None, Q, tuple(range(2, Q + 1)), w, ANALYTIC)


def _closed_form_gamma(gamma: float) -> float:
    g = float(gamma)
    if not 0.0 <= g <= 1.0:
        raise InvalidGamma(f"gamma must lie in [0, 1], got {g}")
    return g


def w3_closed_form_q3(gamma: float) -> np.ndarray:
    """ETATE-estimator weights on calendar effects ``j = 2, 3`` for three sequences.

    Valid on the closed interval ``[0, 1]``.
    """
    g = _closed_form_gamma(gamma)
    den = 2.0 * (9 * g * g + 39 * g + 13)
    return np.array([-9 * g * g + 30 * g + 12, 27 * g * g + 48 * g + 14]) / den


def w4_closed_form_q3(gamma: float) -> np.ndarray:
    """CTATE-estimator weights on exposure effects ``s = 1, 2`` for three sequences.

    The final period is excluded from the analysis. Valid on ``[0, 1]``.
    """
    g = _closed_form_gamma(gamma)
    den = 2.0 * (3 * g * g + 8 * g + 4)
    return np.array([9 * g * g + 15 * g + 6, -3 * g * g + g + 2]) / den


def _truth_indicators(truth: Structure, sequences: np.ndarray, J: int) -> tuple[list[int], np.ndarray]:
    """Cell-by-index incidence of the true effects, shape ``(I * J, n_index)``."""
    q = np.repeat(sequences, J)
    j = np.tile(np.arange(1, J + 1), sequences.size)
    treated = j > q
    if truth is Structure.IMMEDIATE:
        return [0], treated[:, None].astype(float)
    if truth is Structure.EXPOSURE:
        idx = list(range(1, J))
        return idx, np.stack([treated & (j - q == s) for s in idx], axis=1).astype(float)
    idx = list(range(2, J))
    return idx, np.stack([treated & (j == c) for c in idx], axis=1).astype(float)


def lambda_weights(
    design: DesignSpec | int,
    analysis,
    truth,
    gamma: float,
    exclude_final_period: bool | None = None,
) -> WeightProfile:
    """Numeric estimand weights from the GLS projection rows.

    The estimator's treatment rows of ``(Z'V^-1 Z)^-1 Z'V^-1`` are averaged
    (IT, ETATE or CTATE), summed over the clusters of each sequence, and
    applied to the incidence pattern of each true effect. Indices that no
    analysed cell can see are dropped.

    Args:
        design: a design, or a sequence count ``Q`` for the one cluster per
            sequence design (weights do not depend on the replication).
        analysis: fitted structure.
        truth: true structure.
        gamma: correlation of two cell means in a cluster, in ``[0, 1)``.
        exclude_final_period: drop final-period cells from the analysis;
            defaults to True exactly when the analysis is calendar-varying.
    """
    analysis = Structure.parse(analysis)
    truth = Structure.parse(truth)
    g = check_gamma(gamma)
    if not isinstance(design, DesignSpec):
        Q = _check_q(design)
        sequences = np.arange(1, Q + 1)
        J = Q + 1
    else:
        sequences = design.sequences
        Q, J = design.Q, design.J
    if exclude_final_period is None:
        exclude_final_period = analysis is Structure.CALENDAR
    dm = design_matrix_from_sequences(sequences, J, analysis, exclude_final_period=exclude_final_period)

    m = dm.periods_per_cluster
    W = cluster_precision_matrix(g, m)
    Z3 = dm.Z3
    ZtW = np.einsum("iap,ab->pib", Z3, W).reshape(Z3.shape[2], -1)
    info = ZtW @ dm.Z_active
    try:
        proj = np.linalg.solve(info, ZtW)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign(f"information matrix is singular: {exc}") from None
    cell_w = proj[: dm.n_treatment].mean(axis=0)

    idx, X = _truth_indicators(truth, sequences, J)
    X = X[dm.row_mask]
    weights = cell_w @ X
    visible = np.abs(X).sum(axis=0) > 0
    P = dm.Z_active[:, dm.n_treatment :]
    leakage = float(np.max(np.abs(cell_w @ P))) if P.size else 0.0

    full = np.zeros(dm.row_mask.size)
    full[dm.row_mask] = cell_w
    per_seq = np.zeros((Q, J))
    np.add.at(per_seq, sequences - 1, full.reshape(-1, J))

    return WeightProfile(
        analysis=analysis,
        truth=truth,
        gamma=g,
        n_sequences=Q,
        indices=tuple(k for k, v in zip(idx, visible) if v),
        weights=weights[visible],
        method=NUMERIC,
        exclude_final_period=bool(exclude_final_period),
        sequence_weights=per_seq,
        period_leakage=leakage,
    )


def w3_etate_weights(design: DesignSpec | int, gamma: float) -> WeightProfile:
    """Weights of the ETATE estimator over calendar-time effects."""
    return lambda_weights(design, Structure.EXPOSURE, Structure.CALENDAR, gamma)


def w4_ctate_weights(design: DesignSpec | int, gamma: float, exclude_final_period: bool = True) -> WeightProfile:
    """Weights of the CTATE estimator over exposure-time effects.

    Final-period cells are excluded by default; ``exclude_final_period=False``
    gives the weights of the CTI fit that keeps them.
    """
    return lambda_weights(design, Structure.CALENDAR, Structure.EXPOSURE, gamma, exclude_final_period)


def expected_misspecified_estimate(profile: WeightProfile, truth: TreatmentStructure) -> float:
    """Expected estimate ``sum_k weight_k * effect_k`` under ``truth``.

    Raises:
        DimensionMismatch: ``truth`` has the wrong kind or length for the
            profile's design.
    """
    if truth.kind is not profile.truth:
        raise DimensionMismatch(f"profile is for a {profile.truth.value} truth, got {truth.kind.value}")
    J = profile.n_periods
    if truth.kind is Structure.IMMEDIATE:
        values = {0: truth.theta}
    elif truth.kind is Structure.EXPOSURE:
        if len(truth.delta) != J - 1:
            raise DimensionMismatch(f"delta needs {J - 1} entries, got {len(truth.delta)}")
        values = dict(zip(range(1, J), truth.delta))
    else:
        if len(truth.xi) != J - 2:
            raise DimensionMismatch(f"xi needs {J - 2} entries, got {len(truth.xi)}")
        values = dict(zip(range(2, J), truth.xi))
    effects = np.array([values[k] for k in profile.indices])
    return float(profile.weights @ effects)


def family_profile(family: str, Q: int, gamma: float) -> WeightProfile:
    """Profile of one named weight family; ``w2`` ignores ``gamma``.

    ``gamma = 1`` is accepted where the weights have a closed form (w1, and
    w3/w4 with three sequences); elsewhere it must lie in ``[0, 1)``.
    """
    Q = _check_q(Q)
    if family == "w1":
        return _w1(Q, _closed_form_gamma(gamma))
    if family == "w2":
        return w2_calendar_weights(Q)
    if family in ("w3", "w4") and Q == 3:
        g = _closed_form_gamma(gamma)
        if family == "w3":
            return WeightProfile(Structure.EXPOSURE, Structure.CALENDAR, g, 3, (2, 3), w3_closed_form_q3(g), ANALYTIC)
        return WeightProfile(Structure.CALENDAR, Structure.EXPOSURE, g, 3, (1, 2), w4_closed_form_q3(g), ANALYTIC,
                             exclude_final_period=True)
    if family == "w3":
        return w3_etate_weights(Q, gamma)
    if family == "w4":
        return w4_ctate_weights(Q, gamma)
    raise ValidationError(f"unknown weight family {family!r}; choose from {', '.join(FAMILIES)}")


@dataclass(frozen=True)
class WeightRow:
    family: str
    Q: int
    gamma: float
    index: int
    weight: float
    scaled_weight: float


def weight_curve_table(family: str, Q_list: Iterable[int], gamma_list: Iterable[float]) -> list[WeightRow]:
    """One row per ``(Q, gamma, estimand index)``.

    ``scaled_weight`` multiplies each weight by the number of estimands
    (``J - 1`` for exposure truths, ``J - 2`` for calendar truths and for the
    CTATE estimator), so a uniform weighting shows as 1.
    """
    Q_list = [int(q) for q in Q_list]
    gamma_list = [float(g) for g in gamma_list]
    if not Q_list or not gamma_list:
        raise ValidationError("Q and gamma grids must be non-empty")
    return list(_iter_rows(family, Q_list, gamma_list))


def _iter_rows(family: str, Q_list: list[int], gamma_list: list[float]) -> Iterator[WeightRow]:
    for Q in Q_list:
        for g in gamma_list:
            prof = family_profile(family, Q, g)
            for k, w, sw in zip(prof.indices, prof.weights, prof.scaled_weights):
                yield WeightRow(family, Q, g, int(k), float(w), float(sw))


def sign_flip_gamma(truth: TreatmentStructure, Q: int | None = None, tol: float = 1e-10) -> float | None:
    """Smallest ``gamma`` at which the IT estimator's expectation changes sign.

    Only exposure-time truths make the IT expectation depend on ``gamma``.
    Returns None when the sign is constant on ``[0, 1)``.
    """
    if truth.kind is not Structure.EXPOSURE:
        raise ValidationError("only an exposure-time truth makes the IT expectation depend on gamma")
    Q = len(truth.delta) if Q is None else Q

    def f(g: float) -> float:
        return expected_misspecified_estimate(w1_exposure_weights(Q, g), truth)

    grid = np.linspace(0.0, 1.0 - 1e-9, 401)
    vals = [f(g) for g in grid]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            return float(a)
        if math.copysign(1.0, fa) != math.copysign(1.0, fb):
            return float(brentq(f, a, b, xtol=tol))
    return None
