"""Monte Carlo harness: bias, precision, coverage and Monte Carlo SE.

Each replicate is simulated from its own random substreams and analysed
independently, so a study is a deterministic function of its inputs no
matter how replicates are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import Structure, design_matrix
from .dgp import ScenarioSpec, simulate_trial, true_estimand
from .errors import ComputeError, UndefinedPair, ValidationError
from .gls import fit_feasible_gls, fit_gls
from .variance import VarianceMethod, confidence_interval, variance_report
from .weights import expected_misspecified_estimate, lambda_weights

DEFAULT_METHODS = (VarianceMethod.MODEL, VarianceMethod.CR2, VarianceMethod.CR3)
CORRELATIONS = ("exchangeable", "independence", "known")
CSV_COLUMNS = (
    "scenario", "estimator", "correlation", "variance_method", "n_reps", "mean", "truth",
    "pct_bias", "precision", "coverage", "mc_se", "n_failed",
)
NEAR_ZERO = 1e-8


@dataclass(frozen=True)
class AnalysisSpec:
    """One analysis applied to every replicate.

    Attributes:
        structure: fitted treatment-effect structure.
        correlation: ``"exchangeable"`` (feasible GLS), ``"independence"``
            (OLS) or ``"known"`` (GLS at ``gamma``).
        methods: variance methods reported for the estimator.
        gamma: the known correlation, only for ``correlation="known"``.
        use_within: let the likelihood see the within-cell variation of
            individual outcomes (as an individual-level fit would).
    """

    structure: Structure
    correlation: str = "exchangeable"
    methods: tuple[VarianceMethod, ...] = DEFAULT_METHODS
    gamma: float | None = None
    use_within: bool = True

    def __post_init__(self):
        object.__setattr__(self, "structure", Structure.parse(self.structure))
        corr = str(self.correlation).strip().lower()
        if corr not in CORRELATIONS:
            raise ValidationError(f"unknown analysis correlation {self.correlation!r}")
        object.__setattr__(self, "correlation", corr)
        methods = tuple(VarianceMethod.parse(m) for m in self.methods)
        if not methods:
            raise ValidationError("at least one variance method is required")
        object.__setattr__(self, "methods", methods)
        if (corr == "known") != (self.gamma is not None):
            raise ValidationError("a known-correlation analysis needs gamma, and only it takes one")

    @property
    def estimator(self) -> str:
        return self.structure.estimator

    @property
    def label(self) -> str:
        return f"{self.structure.value}/{self.correlation}"


@dataclass(frozen=True)
class SimReport:
    scenario: str
    estimator: str
    correlation: str
    variance_method: str
    n_reps: int
    mean_estimate: float
    true_estimand: float | None
    percent_bias: float | None
    absolute_bias: float | None
    precision: float
    coverage: float
    mc_se: float
    n_failed: int

    def csv_row(self) -> list[str]:
        return [
            self.scenario, self.estimator, self.correlation, self.variance_method, str(self.n_reps),
            fmt(self.mean_estimate), fmt(self.true_estimand), fmt(self.percent_bias),
            fmt(self.precision), fmt(self.coverage), fmt(self.mc_se), str(self.n_failed),
        ]


def fmt(value: float | None) -> str:
    """Fixed 12-significant-digit rendering; empty for missing values."""
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if value == 0.0:
        return "0"
    return f"{value:.12g}"


@dataclass(eq=False)
class StudyResult:
    """Per-replicate outcomes of a study.

    ``estimates[r, a]`` is NaN when analysis ``a`` failed on replicate ``r``;
    ``variances[r, a, k]`` is NaN when variance method ``k`` failed.
    """

    scenario: ScenarioSpec
    analyses: tuple[AnalysisSpec, ...]
    estimates: np.ndarray
    variances: np.ndarray
    gammas: np.ndarray
    truth: float | None = field(default=None)

    @property
    def n_reps(self) -> int:
        return self.estimates.shape[0]

    def coverage_flags(self, a: int, k: int) -> np.ndarray:
        """1.0 where the replicate's interval contains the truth, NaN if unavailable."""
        est = self.estimates[:, a]
        se = np.sqrt(self.variances[:, a, k])
        flags = np.full(self.n_reps, np.nan)
        if self.truth is None:
            return flags
        rule = self.analyses[a].methods[k].default_dof_rule
        lo, hi = confidence_interval(0.0, 1.0, rule, self.scenario.design.I - 1)
        ok = np.isfinite(est) & np.isfinite(se)
        flags[ok] = ((est[ok] + lo * se[ok] <= self.truth) & (self.truth <= est[ok] + hi * se[ok])).astype(float)
        return flags

    def reports(self) -> list[SimReport]:
        out = []
        for a, spec in enumerate(self.analyses):
            for k, method in enumerate(spec.methods):
                out.append(self._report(a, k, spec, method))
        return out

    def _report(self, a: int, k: int, spec: AnalysisSpec, method: VarianceMethod) -> SimReport:
        est = self.estimates[:, a]
        var = self.variances[:, a, k]
        ok = np.isfinite(est) & np.isfinite(var)
        n_ok = int(ok.sum())
        mean = float(est[ok].mean()) if n_ok else math.nan
        mc_se = float(est[ok].std(ddof=1)) if n_ok > 1 else math.nan
        mean_var = float(var[ok].mean()) if n_ok else math.nan
        precision = 1.0 / mean_var if n_ok and mean_var > 0 else math.inf
        cov = self.coverage_flags(a, k)
        coverage = float(np.nanmean(cov[ok])) if n_ok and self.truth is not None else math.nan
        truth = self.truth
        pct = absb = None
        if truth is not None:
            absb = mean - truth
            if abs(truth) >= NEAR_ZERO:
                pct = 100.0 * absb / truth
        return SimReport(
            scenario=self.scenario.name,
            estimator=spec.estimator,
            correlation=spec.correlation,
            variance_method=method.value,
            n_reps=self.n_reps,
            mean_estimate=mean,
            true_estimand=truth,
            percent_bias=pct,
            absolute_bias=absb,
            precision=precision,
            coverage=coverage,
            mc_se=mc_se,
            n_failed=self.n_reps - n_ok,
        )


def _fit(analysis: AnalysisSpec, dm, td):
    within = td.within if analysis.use_within else None
    if analysis.correlation == "exchangeable":
        return fit_feasible_gls(dm, td.means, within)
    g = 0.0 if analysis.correlation == "independence" else analysis.gamma
    return fit_gls(dm, td.means, g, within=within, correlation=analysis.correlation)


def _run_block(scenario: ScenarioSpec, analyses: tuple[AnalysisSpec, ...], reps: range):
    n_a = len(analyses)
    n_m = max(len(a.methods) for a in analyses)
    est = np.full((len(reps), n_a), np.nan)
    var = np.full((len(reps), n_a, n_m), np.nan)
    gam = np.full((len(reps), n_a), np.nan)
    dms = [design_matrix(scenario.design, a.structure) for a in analyses]
    for row, r in enumerate(reps):
        td = simulate_trial(scenario, r)
        for a, (spec, dm) in enumerate(zip(analyses, dms)):
            try:
                fit = _fit(spec, dm, td)
            except ComputeError:
                continue
            est[row, a] = fit.estimate
            gam[row, a] = fit.gamma
            for k, method in enumerate(spec.methods):
                try:
                    var[row, a, k] = variance_report(fit, method).variance
                except ComputeError:
                    pass
    return est, var, gam


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("SWCRT_THREADS", "1") or 1)
    if workers < 1:
        raise ValidationError("worker count must be at least 1")
    return workers


def simulate_study(
    scenario: ScenarioSpec,
    analyses,
    n_reps: int = 1000,
    base_seed: int | None = None,
    workers: int | None = None,
) -> StudyResult:
    """Simulate ``n_reps`` trials and apply every analysis to each.

    Args:
        scenario: data-generating scenario; ``base_seed`` overrides its seed.
        analyses: :class:`AnalysisSpec` entries.
        n_reps: number of replicates.
        base_seed: seed from which every replicate stream derives.
        workers: worker processes (default ``SWCRT_THREADS`` or 1). Results
            do not depend on this.
    """
    if n_reps < 1:
        raise ValidationError("n_reps must be at least 1")
    analyses = tuple(analyses)
    if not analyses:
        raise ValidationError("at least one analysis is required")
    if base_seed is not None:
        scenario = scenario.with_seed(base_seed)
    workers = min(resolve_workers(workers), n_reps)
    if workers == 1:
        est, var, gam = _run_block(scenario, analyses, range(n_reps))
    else:
        bounds = np.linspace(0, n_reps, workers + 1).astype(int)
        blocks = [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, [scenario] * workers, [analyses] * workers, blocks))
        est = np.concatenate([p[0] for p in parts])
        var = np.concatenate([p[1] for p in parts])
        gam = np.concatenate([p[2] for p in parts])
    return StudyResult(scenario, analyses, est, var, gam, true_estimand(scenario.structure))


def run_study(scenario: ScenarioSpec, analyses, n_reps: int = 1000, base_seed: int | None = None,
              workers: int | None = None) -> list[SimReport]:
    """Summary rows, one per (analysis, variance method)."""
    return simulate_study(scenario, analyses, n_reps, base_seed, workers).reports()


def expected_estimate(scenario: ScenarioSpec, structure, gamma: float) -> float:
    """Expected estimate of a GLS analysis at ``gamma`` under the scenario's truth.

    Final-period cells are kept, as in the fitted models.
    """
    try:
        structure = Structure.parse(structure)
    except ValidationError:
        raise UndefinedPair(f"no estimand weights for analysis {structure!r}") from None
    truth = scenario.structure
    prof = lambda_weights(scenario.design, structure, truth.kind, gamma, exclude_final_period=False)
    return expected_misspecified_estimate(prof, truth)


@dataclass(frozen=True)
class BiasCheck:
    expected: float
    mc_mean: float
    mc_se: float
    n_reps: int
    z_score: float


def analytic_bias_check(
    scenario: ScenarioSpec,
    analysis,
    gamma: float | None = None,
    n_reps: int = 1000,
    base_seed: int | None = None,
    workers: int | None = None,
    study: StudyResult | None = None,
) -> BiasCheck:
    """Compare the Monte Carlo mean of an estimator to its weight-engine expectation.

    With ``gamma`` given, every replicate is fitted by GLS at that known
    correlation, so the expectation is exact. With ``gamma=None`` the
    feasible-GLS fits are used and the expectation is the replicate average
    of the weight-engine value at each estimated correlation.

    Args:
        scenario: data-generating scenario.
        analysis: fitted structure, or an :class:`AnalysisSpec`.
        gamma: known correlation, or None for the feasible fit.
        n_reps: replicates when ``study`` is not supplied.
        base_seed: seed override.
        workers: worker processes.
        study: reuse an existing single-analysis study instead of simulating.
    """
    if isinstance(analysis, AnalysisSpec):
        structure = analysis.structure
    else:
        structure = Structure.parse(analysis)
    if study is None:
        if gamma is None:
            spec = AnalysisSpec(structure, "exchangeable", (VarianceMethod.MODEL,))
        elif gamma == 0.0:
            spec = AnalysisSpec(structure, "independence", (VarianceMethod.MODEL,))
        else:
            spec = AnalysisSpec(structure, "known", (VarianceMethod.MODEL,), gamma=gamma)
        study = simulate_study(scenario, [spec], n_reps, base_seed, workers)
    est = study.estimates[:, 0]
    ok = np.isfinite(est)
    if gamma is not None:
        expected = expected_estimate(study.scenario, structure, gamma)
    else:
        values = {}
        for g in study.gammas[ok, 0]:
            if g not in values:
                values[g] = expected_estimate(study.scenario, structure, g)
        expected = float(np.mean([values[g] for g in study.gammas[ok, 0]]))
    n = int(ok.sum())
    mean = float(est[ok].mean())
    sd = float(est[ok].std(ddof=1))
    z = (mean - expected) / (sd / math.sqrt(n)) if sd > 0 else (0.0 if mean == expected else math.inf)
    return BiasCheck(expected, mean, sd, n, z)


def reports_to_csv(reports: list[SimReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        writer.writerow(rep.csv_row())
    return buf.getvalue()
