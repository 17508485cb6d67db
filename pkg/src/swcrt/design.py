"""Complete stepped-wedge designs and their cluster-period design matrices.

All public indices (sequence ``q``, period ``j``, exposure time ``s``) are
1-based. Rows of every design matrix are ordered cluster-major,
period-minor, so row ``c * J + (j - 1)`` holds cluster ``c`` (0-based) in
period ``j``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DegenerateDesign,
    DimensionMismatch,
    IndexOutOfRange,
    NonDivisibleAllocation,
    ValidationError,
)


class Structure(str, enum.Enum):
    """Treatment-effect structure, used both for truths and analysis models."""

    IMMEDIATE = "IT"
    EXPOSURE = "ETI"
    CALENDAR = "CTI"

    @classmethod
    def parse(cls, value: "str | Structure") -> "Structure":
        if isinstance(value, Structure):
            return value
        key = str(value).strip().upper()
        aliases = {
            "IT": cls.IMMEDIATE,
            "IMMEDIATE": cls.IMMEDIATE,
            "ETI": cls.EXPOSURE,
            "EXPOSURE": cls.EXPOSURE,
            "EXPOSUREVARYING": cls.EXPOSURE,
            "CTI": cls.CALENDAR,
            "CALENDAR": cls.CALENDAR,
            "CALENDARVARYING": cls.CALENDAR,
        }
        try:
            return aliases[key.replace("-", "").replace("_", "")]
        except KeyError:
            raise ValidationError(f"unknown treatment structure {value!r}") from None

    @property
    def estimator(self) -> str:
        """Name of the scalar estimator this analysis model produces."""
        return {"IT": "IT", "ETI": "ETATE", "CTI": "CTATE"}[self.value]


@dataclass(frozen=True)
class TreatmentStructure:
    """A true treatment-effect structure and its values.

    Exactly one payload is set: ``theta`` for an immediate effect, ``delta``
    (exposure times ``s = 1..J-1``) or ``xi`` (calendar periods
    ``j = 2..J-1``; the final-period effect is fixed at zero).
    """

    kind: Structure
    theta: float | None = None
    delta: tuple[float, ...] | None = None
    xi: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Structure.parse(self.kind))
        payload = {"theta": self.theta, "delta": self.delta, "xi": self.xi}
        wanted = {Structure.IMMEDIATE: "theta", Structure.EXPOSURE: "delta", Structure.CALENDAR: "xi"}[
            self.kind
        ]
        for name, value in payload.items():
            if (value is None) == (name == wanted):
                raise ValidationError(f"{self.kind.value} structure needs exactly the {wanted!r} payload")
        if self.delta is not None:
            object.__setattr__(self, "delta", tuple(float(v) for v in self.delta))
        if self.xi is not None:
            object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))
        if self.theta is not None:
            object.__setattr__(self, "theta", float(self.theta))

    @classmethod
    def immediate(cls, theta: float) -> "TreatmentStructure":
        return cls(Structure.IMMEDIATE, theta=theta)

    @classmethod
    def exposure(cls, delta) -> "TreatmentStructure":
        return cls(Structure.EXPOSURE, delta=tuple(delta))

    @classmethod
    def calendar(cls, xi) -> "TreatmentStructure":
        return cls(Structure.CALENDAR, xi=tuple(xi))

    def check_periods(self, J: int) -> None:
        if self.kind is Structure.EXPOSURE and len(self.delta) != J - 1:
            raise DimensionMismatch(f"delta needs {J - 1} entries for J={J}, got {len(self.delta)}")
        if self.kind is Structure.CALENDAR and len(self.xi) != J - 2:
            raise DimensionMismatch(f"xi needs {J - 2} entries for J={J}, got {len(self.xi)}")

    def effect_matrix(self, sequences, J: int) -> np.ndarray:
        """Treatment effect of every (cluster, period) cell, shape ``(I, J)``."""
        self.check_periods(J)
        q = np.asarray(sequences, dtype=np.int64)[:, None]
        j = np.arange(1, J + 1)[None, :]
        treated = j > q
        if self.kind is Structure.IMMEDIATE:
            return np.where(treated, self.theta, 0.0)
        if self.kind is Structure.EXPOSURE:
            table = np.concatenate([[0.0], self.delta])
            return table[np.where(treated, j - q, 0)]
        table = np.concatenate([[0.0, 0.0], self.xi, [0.0]])
        return np.where(treated, table[j], 0.0)


@dataclass(frozen=True)
class DesignSpec:
    n_clusters: int
    n_periods: int
    n_sequences: int
    clusters_per_sequence: int
    cell_size: int

    def __post_init__(self):
        if self.n_periods < 3:
            raise DegenerateDesign(f"need at least 3 periods, got {self.n_periods}")
        if self.n_sequences != self.n_periods - 1:
            raise DegenerateDesign("a complete design has n_sequences = n_periods - 1")
        if self.n_clusters != self.n_sequences * self.clusters_per_sequence:
            raise NonDivisibleAllocation("clusters must be equally allocated to sequences")
        if self.cell_size < 1 or self.clusters_per_sequence < 1:
            raise DegenerateDesign("cell size and clusters per sequence must be positive")

    @property
    def I(self) -> int:  # noqa: E743
        return self.n_clusters

    @property
    def J(self) -> int:
        return self.n_periods

    @property
    def Q(self) -> int:
        return self.n_sequences

    @property
    def K(self) -> int:
        return self.cell_size

    @cached_property
    def sequences(self) -> np.ndarray:
        """Sequence (1-based) of every cluster, round-robin by cluster index."""
        return np.arange(self.n_clusters) % self.n_sequences + 1

    def sequence_of(self, cluster: int) -> int:
        if not 0 <= cluster < self.n_clusters:
            raise IndexOutOfRange(f"cluster {cluster} outside 0..{self.n_clusters - 1}")
        return int(cluster % self.n_sequences + 1)

    @property
    def n_treated_cells(self) -> int:
        return self.clusters_per_sequence * sum(self.J - q for q in range(1, self.Q + 1))


def build_design(I: int, J: int, K: int) -> DesignSpec:  # noqa: E741
    """Build a complete stepped-wedge design with ``Q = J - 1`` sequences.

    Raises:
        DegenerateDesign: if ``J < 3`` or a count is not positive.
        NonDivisibleAllocation: if ``I`` is not a multiple of ``J - 1``.
    """
    if J < 3:
        raise DegenerateDesign(f"need at least 3 periods, got {J}")
    if I < 1 or K < 1:
        raise DegenerateDesign("clusters and cell size must be positive")
    Q = J - 1
    if I % Q:
        raise NonDivisibleAllocation(f"{I} clusters cannot be split evenly over {Q} sequences")
    return DesignSpec(I, J, Q, I // Q, K)


def _check_qj(q: int, j: int, Q: int | None, J: int | None) -> None:
    if q < 1 or (Q is not None and q > Q):
        raise IndexOutOfRange(f"sequence index {q} out of range")
    if j < 1 or (J is not None and j > J):
        raise IndexOutOfRange(f"period index {j} out of range")


def treatment_indicator(q: int, j: int, Q: int | None = None, J: int | None = None) -> int:
    """1 if a cluster in sequence ``q`` is treated in period ``j``."""
    _check_qj(q, j, Q, J)
    return int(j > q)


def exposure_time(q: int, j: int, Q: int | None = None, J: int | None = None) -> int:
    """Periods since crossover, ``j - q``; 0 while still under control."""
    _check_qj(q, j, Q, J)
    return j - q if j > q else 0


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Cluster-period design matrix: treatment columns, then period indicators.

    ``Z`` carries every cell, including those excluded by ``row_mask``; fits
    only use the active rows. Columns that would be identically zero on the
    active rows (for instance the final period indicator when the last
    period is excluded) are dropped at construction.
    """

    Z: np.ndarray
    structure: Structure
    row_mask: np.ndarray
    columns: tuple[str, ...]
    n_treatment: int
    n_periods: int
    cluster: np.ndarray
    period: np.ndarray
    sequence: np.ndarray
    treatment_index: tuple[int, ...] = field(default=())

    @property
    def n_clusters(self) -> int:
        return int(self.cluster.max()) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.Z.shape

    @cached_property
    def active_periods(self) -> np.ndarray:
        """1-based periods that remain after masking (identical for every cluster)."""
        return np.unique(self.period[self.row_mask])

    @cached_property
    def Z_active(self) -> np.ndarray:
        return np.ascontiguousarray(self.Z[self.row_mask])

    def active_values(self, means: np.ndarray) -> np.ndarray:
        """Flatten an ``I x J`` matrix of cell means to the active rows."""
        means = np.asarray(means, dtype=float)
        if means.shape != (self.n_clusters, self.n_periods):
            raise DimensionMismatch(
                f"means have shape {means.shape}, expected {(self.n_clusters, self.n_periods)}"
            )
        return means.reshape(-1)[self.row_mask]

    @cached_property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.Z_active))

    @property
    def periods_per_cluster(self) -> int:
        return int(self.active_periods.size)

    @cached_property
    def Z3(self) -> np.ndarray:
        """Active rows blocked by cluster, shape ``(I, m, p)``."""
        m = self.periods_per_cluster
        return np.ascontiguousarray(self.Z_active.reshape(self.n_clusters, m, -1))

    @cached_property
    def gram(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(Z'Z, S'S, S)`` with ``S`` the per-cluster column sums."""
        S = self.Z3.sum(axis=1)
        return self.Z_active.T @ self.Z_active, S.T @ S, np.ascontiguousarray(S)

    def cluster_values(self, means: np.ndarray) -> np.ndarray:
        """Active cell means arranged ``(I, m)``."""
        return self.active_values(means).reshape(self.n_clusters, self.periods_per_cluster)


def _treatment_columns(kind: Structure, J: int) -> list[tuple[str, int]]:
    if kind is Structure.IMMEDIATE:
        return [("theta", 0)]
    if kind is Structure.EXPOSURE:
        return [(f"delta_{s}", s) for s in range(1, J)]
    return [(f"xi_{c}", c) for c in range(2, J)]


def design_matrix_from_sequences(
    sequences, n_periods: int, kind, exclude_final_period: bool = False
) -> DesignMatrix:
    """Design matrix for an explicit cluster-to-sequence assignment.

    ``sequences`` holds the 1-based sequence of each cluster; a cluster in
    sequence ``q`` is treated from period ``q + 1`` on.
    """
    kind = Structure.parse(kind)
    J = int(n_periods)
    seq = np.asarray(sequences, dtype=np.int64)
    if J < 3:
        raise DegenerateDesign(f"need at least 3 periods, got {J}")
    if seq.ndim != 1 or seq.size == 0:
        raise DegenerateDesign("need at least one cluster")
    if seq.min() < 1 or seq.max() > J - 1:
        raise IndexOutOfRange(f"sequences must lie in 1..{J - 1}")
    I = seq.size  # noqa: E741
    cluster = np.repeat(np.arange(I), J)
    period = np.tile(np.arange(1, J + 1), I)
    q = np.repeat(seq, J)
    treated = period > q
    tcols = _treatment_columns(kind, J)

    blocks = []
    if kind is Structure.IMMEDIATE:
        blocks.append(treated.astype(float)[:, None])
    elif kind is Structure.EXPOSURE:
        s = np.where(treated, period - q, 0)
        blocks.append((s[:, None] == np.arange(1, J)[None, :]).astype(float))
    else:
        cal = np.where(treated, period, 0)
        blocks.append((cal[:, None] == np.arange(2, J)[None, :]).astype(float))
    blocks.append((period[:, None] == np.arange(1, J + 1)[None, :]).astype(float))
    Z = np.hstack(blocks)
    labels = [name for name, _ in tcols] + [f"phi_{j}" for j in range(1, J + 1)]
    index = [idx for _, idx in tcols]

    mask = np.ones(I * J, dtype=bool)
    if exclude_final_period:
        mask &= period != J
    keep = np.abs(Z[mask]).sum(axis=0) > 0
    n_treat = int(keep[: len(tcols)].sum())
    Z = np.ascontiguousarray(Z[:, keep])
    labels = [lab for lab, k in zip(labels, keep) if k]
    index = [idx for idx, k in zip(index, keep[: len(tcols)]) if k]
    dm = DesignMatrix(
        Z=Z,
        structure=kind,
        row_mask=mask,
        columns=tuple(labels),
        n_treatment=n_treat,
        n_periods=J,
        cluster=cluster,
        period=period,
        sequence=q,
        treatment_index=tuple(index),
    )
    if dm.rank < Z.shape[1]:
        raise DegenerateDesign(f"{kind.value} design matrix is rank deficient")
    return dm


def design_matrix(design: DesignSpec, kind, exclude_final_period: bool = False) -> DesignMatrix:
    """Design matrix for ``design`` under the given analysis structure."""
    return design_matrix_from_sequences(design.sequences, design.J, kind, exclude_final_period)
