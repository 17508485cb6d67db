"""Simulate continuous-outcome stepped-wedge trials and their true estimands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .correlation import CorrelationKind, CorrelationSpec
from .design import DesignSpec, Structure, TreatmentStructure, build_design
from .errors import DimensionMismatch, IndexOutOfRange, UndefinedEstimand, ValidationError
from .gls import WithinCellStats

DEFAULT_SEED = 20240101


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to generate one family of trial datasets.

    Attributes:
        design: trial geometry.
        structure: the true treatment effect.
        period_effects: one calendar effect per period.
        correlation: variance components of the random-intercept model.
        seed: base seed; replicate and cluster substreams derive from it.
        name: optional label, used in reports.
    """

    design: DesignSpec
    structure: TreatmentStructure
    period_effects: tuple[float, ...]
    correlation: CorrelationSpec
    seed: int = DEFAULT_SEED
    name: str = "custom"

    def __post_init__(self):
        phi = tuple(float(v) for v in self.period_effects)
        if len(phi) != self.design.J:
            raise DimensionMismatch(f"need {self.design.J} period effects, got {len(phi)}")
        if not all(math.isfinite(v) for v in phi):
            raise ValidationError("period effects must be finite")
        object.__setattr__(self, "period_effects", phi)
        self.structure.check_periods(self.design.J)
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
        object.__setattr__(self, "seed", seed)

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return ScenarioSpec(self.design, self.structure, self.period_effects, self.correlation, seed, self.name)

    def mean_matrix(self) -> np.ndarray:
        """Expected cell means ``effect(i, j) + phi_j``, shape ``(I, J)``."""
        effects = self.structure.effect_matrix(self.design.sequences, self.design.J)
        return effects + np.asarray(self.period_effects)[None, :]


@dataclass(frozen=True, eq=False)
class TrialData:
    """Individual outcomes of one simulated trial.

    ``outcomes`` has shape ``(I, J, K)`` indexed (cluster, period, individual).
    """

    outcomes: np.ndarray
    sequences: np.ndarray

    @cached_property
    def means(self) -> np.ndarray:
        return self.outcomes.mean(axis=2)

    @cached_property
    def within(self) -> WithinCellStats:
        I, J, K = self.outcomes.shape  # noqa: E741
        dev = self.outcomes - self.means[:, :, None]
        return WithinCellStats(ss=float(np.sum(dev * dev)), df=I * J * (K - 1), cell_size=K)


def _cluster_rng(seed: int, replicate: int, cluster: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, replicate, cluster]))


def simulate_trial(scenario: ScenarioSpec, replicate: int = 0) -> TrialData:
    """Draw one trial dataset.

    Each cluster draws from its own stream keyed by ``(seed, replicate,
    cluster)``: first the cluster intercept, then cluster-period effects
    (nested structure only), then the ``J x K`` individual errors. The
    result therefore does not depend on the order in which replicates or
    clusters are generated.
    """
    if replicate < 0:
        raise ValidationError("replicate index must be nonnegative")
    d = scenario.design
    corr = scenario.correlation
    mu = scenario.mean_matrix()
    sd_alpha = math.sqrt(corr.tau_alpha_sq) if corr.kind is not CorrelationKind.INDEPENDENCE else 0.0
    sd_omega = math.sqrt(corr.tau_omega_sq)
    sd_e = math.sqrt(corr.sigma_e_sq)
    out = np.empty((d.I, d.J, d.K))
    for i in range(d.I):
        rng = _cluster_rng(scenario.seed, replicate, i)
        alpha = rng.standard_normal() * sd_alpha
        omega = rng.standard_normal(d.J) * sd_omega if sd_omega > 0 else np.zeros(d.J)
        eps = rng.standard_normal((d.J, d.K)) * sd_e
        out[i] = mu[i][:, None] + alpha + omega[:, None] + eps
    return TrialData(outcomes=out, sequences=d.sequences.copy())


def _resolve_interval(n: int, offset: int, interval) -> slice:
    if interval is None:
        return slice(0, n)
    lo, hi = (int(v) for v in interval)
    if not (offset <= lo <= hi <= offset + n - 1):
        raise IndexOutOfRange(f"interval {interval} outside {offset}..{offset + n - 1}")
    return slice(lo - offset, hi - offset + 1)


def true_estimand(structure: TreatmentStructure, interval=None, estimand: str | None = None) -> float:
    """Unweighted average effect targeted by the matching estimator.

    Args:
        structure: true treatment effect.
        interval: inclusive ``(first, last)`` exposure times (``s`` from 1) or
            calendar periods (``j`` from 2). Defaults to the full range.
        estimand: optionally ``"ETATE"``, ``"CTATE"`` or ``"IT"`` to request a
            specific summary; asking for an average the structure does not
            define raises :class:`UndefinedEstimand`.
    """
    if estimand is not None:
        wanted = estimand.upper()
        if wanted not in ("IT", "ETATE", "CTATE"):
            raise ValidationError(f"unknown estimand {estimand!r}")
        if wanted != structure.kind.estimator and structure.kind is not Structure.IMMEDIATE:
            raise UndefinedEstimand(f"{wanted} is not defined for a {structure.kind.value} structure")
    if structure.kind is Structure.IMMEDIATE:
        if interval is not None:
            raise IndexOutOfRange("an immediate effect takes no interval")
        return float(structure.theta)
    if structure.kind is Structure.EXPOSURE:
        values = np.asarray(structure.delta)
        return float(values[_resolve_interval(values.size, 1, interval)].mean())
    values = np.asarray(structure.xi)
    return float(values[_resolve_interval(values.size, 2, interval)].mean())


PRESET_NAMES = ("sim1-immediate", "sim2-exposure", "sim3-calendar")


def preset(name: str, seed: int = DEFAULT_SEED) -> ScenarioSpec:
    """One of the three benchmark scenarios on an 18-cluster, 10-period design.

    All share period effects ``5..14``, cluster-intercept variance 1/9,
    individual variance 1 and 30 individuals per cell.
    """
    structures = {
        "sim1-immediate": TreatmentStructure.immediate(6.0),
        "sim2-exposure": TreatmentStructure.exposure((0, 0, 0.5, 1, 2, 4, 6, 6, 6)),
        "sim3-calendar": TreatmentStructure.calendar((6, 3, 1, 0.5, 0.1, 0, 0, 0)),
    }
    if name not in structures:
        raise ValidationError(f"unknown scenario preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return ScenarioSpec(
        design=build_design(18, 10, 30),
        structure=structures[name],
        period_effects=tuple(float(v) for v in range(5, 15)),
        correlation=CorrelationSpec(CorrelationKind.EXCHANGEABLE, 1.0 / 9.0, 1.0),
        seed=seed,
        name=name,
    )
