"""GLS fits of the IT, ETI and CTI models on cluster-period means.

With balanced cells the GLS estimator from individual outcomes equals the
one from cell means, so estimation consumes an ``I x J`` matrix of means.
When individual outcomes are available, their within-cell sum of squares
can be passed as :class:`WithinCellStats`; it pins the residual variance in
the feasible-GLS likelihood exactly as an individual-level random-intercept
fit would, without changing any point estimate at a given ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from . import _kernels
from .correlation import check_gamma, cluster_precision_matrix
from .design import DesignMatrix, Structure
from .errors import (
    DimensionMismatch,
    MissingLikelihood,
    NonConvergence,
    SingularDesign,
    ValidationError,
    WrongStructure,
)

GAMMA_UPPER = 1.0 - 1e-6
SEARCH_XATOL = 1e-8
SEARCH_MAXITER = 200
SEARCH_GRID = 25
# residual variation below this fraction of the data's mean square is rounding noise
_DEGENERATE_RATIO = 1e-27


@dataclass(frozen=True)
class WithinCellStats:
    """Pooled within-cell variation of individual outcomes.

    Attributes:
        ss: sum over cells and individuals of squared deviations from the
            cell mean.
        df: its degrees of freedom, ``I * J * (K - 1)`` for balanced cells.
        cell_size: individuals per cell ``K``.
    """

    ss: float
    df: int
    cell_size: int


@dataclass(frozen=True, eq=False)
class FitResult:
    structure: Structure
    coefficients: np.ndarray
    information: np.ndarray
    gamma: float
    scale: float
    design: DesignMatrix
    residuals: np.ndarray
    correlation: str = "fixed"
    log_likelihood: float | None = None
    likelihood_method: str | None = None
    n_variance_params: int = 1
    n_within: int = 0
    boundary: bool = False

    @property
    def columns(self) -> tuple[str, ...]:
        return self.design.columns

    @property
    def n_treatment(self) -> int:
        return self.design.n_treatment

    @property
    def n_clusters(self) -> int:
        return self.design.n_clusters

    @property
    def n_obs(self) -> int:
        return int(self.residuals.size)

    @property
    def treatment_effects(self) -> np.ndarray:
        return self.coefficients[: self.n_treatment]

    @property
    def period_effects(self) -> np.ndarray:
        return self.coefficients[self.n_treatment :]

    @property
    def estimator(self) -> str:
        return self.structure.estimator

    def contrast(self) -> np.ndarray:
        """Coefficient contrast producing the IT, ETATE or CTATE estimate."""
        c = np.zeros(self.coefficients.size)
        c[: self.n_treatment] = 1.0 / self.n_treatment
        return c

    @property
    def estimate(self) -> float:
        return float(self.contrast() @ self.coefficients)


def _cluster_data(dm: DesignMatrix, means) -> np.ndarray:
    means = np.asarray(means, dtype=float)
    if means.shape != (dm.n_clusters, dm.n_periods):
        raise DimensionMismatch(
            f"means have shape {means.shape}, expected {(dm.n_clusters, dm.n_periods)}"
        )
    return dm.cluster_values(means)


def _within_terms(within: WithinCellStats | None) -> tuple[float, int, int]:
    if within is None:
        return 0.0, 0, 1
    if within.df < 0 or within.ss < 0 or within.cell_size < 1:
        raise ValidationError("invalid within-cell statistics")
    return float(within.ss), int(within.df), int(within.cell_size)


def _ols_residuals(dm: DesignMatrix, Y: np.ndarray) -> np.ndarray:
    ZtZ, _, _ = dm.gram
    y = Y.reshape(-1)
    beta = np.linalg.solve(ZtZ, dm.Z_active.T @ y)
    return (y - dm.Z_active @ beta).reshape(Y.shape)


def _data_stats(dm: DesignMatrix, Y: np.ndarray):
    # Centring on the OLS fit leaves both likelihoods unchanged (they are
    # invariant to y -> y - Zb) but keeps the cross products free of the
    # cancellation that would otherwise swamp small residual variation.
    _, _, S = dm.gram
    Y = _ols_residuals(dm, Y)
    y = Y.reshape(-1)
    ysum = Y.sum(axis=1)
    return dm.Z_active.T @ y, S.T @ ysum, float(y @ y), float(ysum @ ysum)


def profile_log_likelihood(
    dm: DesignMatrix,
    means,
    gamma: float,
    within: WithinCellStats | None = None,
    method: str = "reml",
) -> float:
    """Log-likelihood at ``gamma`` with the scale profiled out.

    Additive constants that depend on neither the mean model nor ``gamma``
    are dropped, so values are comparable across structures fitted to the
    same data.
    """
    gamma = check_gamma(gamma)
    Y = _cluster_data(dm, means)
    ssw, n_within, K = _within_terms(within)
    ZtZ, StS, _ = dm.gram
    Zty, Sty, yty, ysum2 = _data_stats(dm, Y)
    kern = _kernels.get_backend("numpy")
    return float(
        kern.profile_loglik(
            gamma, ZtZ, StS, Zty, Sty, yty, ysum2, Y.size, Y.shape[1], Y.shape[0],
            ssw, n_within, float(K), _reml_flag(method),
        )
    )


def _score(g, ZtZ, StS, Zty, Sty, yty, ysum2, n_clusters, m, ssw, n_within, K, reml) -> float:
    """Derivative of the profiled log-likelihood in ``gamma``.

    The scale and mean parameters are profiled out, so by the envelope
    argument only the explicit dependence of ``W(gamma)`` enters the
    residual quadratic form.
    """
    p = ZtZ.shape[0]
    D = (1.0 - g) * (1.0 + (m - 1) * g)
    a, b = 1.0 / (1.0 - g), g / D
    da, db = a * a, (1.0 + (m - 1) * g * g) / (D * D)
    B = a * ZtZ - b * StS
    beta = np.linalg.solve(B, a * Zty - b * Sty)
    ss = yty - 2.0 * beta @ Zty + beta @ ZtZ @ beta
    rs = ysum2 - 2.0 * beta @ Sty + beta @ StS @ beta
    total = a * ss - b * rs
    dtotal = da * ss - db * rs
    if n_within:
        total += ssw / (K * (1.0 - g))
        dtotal += ssw / (K * (1.0 - g) ** 2)
    d = n_clusters * m + n_within - (p if reml else 0)
    out = d * dtotal / total + n_clusters * (m - 1) * (1.0 / (1.0 + (m - 1) * g) - a) - n_within * a
    if reml:
        out += float(np.trace(np.linalg.solve(B, da * ZtZ - db * StS)))
    return -0.5 * float(out)


def profile_score(
    dm: DesignMatrix,
    means,
    gamma: float,
    within: WithinCellStats | None = None,
    method: str = "reml",
) -> float:
    """Analytic derivative of :func:`profile_log_likelihood` in ``gamma``."""
    gamma = check_gamma(gamma)
    Y = _cluster_data(dm, means)
    ssw, n_within, K = _within_terms(within)
    ZtZ, StS, _ = dm.gram
    return _score(gamma, ZtZ, StS, *_data_stats(dm, Y), Y.shape[0], Y.shape[1], ssw, n_within, K,
                  _reml_flag(method))


def _polish(g0, ll0, args, loglik) -> tuple[float, float]:
    """Refine an interior maximum to a root of the score.

    A search on function values alone cannot place the maximum much closer
    than the square root of machine precision; the score pins it down, so
    fits no longer depend on the search path.
    """
    for h in (1e-7, 1e-5):
        lo, hi = max(g0 - h, 0.0), min(g0 + h, GAMMA_UPPER)
        f_lo, f_hi = _score(lo, *args), _score(hi, *args)
        if f_lo > 0.0 > f_hi:
            g = brentq(_score, lo, hi, args=args, xtol=1e-15, rtol=8.9e-16)
            ll = loglik(g)
            if ll >= ll0 - 1e-10 * max(1.0, abs(ll0)):
                return g, ll
            break
    return g0, ll0


def _reml_flag(method: str) -> bool:
    if method not in ("reml", "ml"):
        raise ValidationError(f"likelihood method must be 'reml' or 'ml', got {method!r}")
    return method == "reml"


def fit_gls(
    dm: DesignMatrix,
    means,
    gamma: float,
    scale: float | None = None,
    within: WithinCellStats | None = None,
    correlation: str | None = None,
    likelihood: str | None = None,
) -> FitResult:
    """GLS fit at a known within-cluster correlation ``gamma``.

    Args:
        dm: analysis design matrix; rows excluded by its mask are ignored.
        means: ``I x J`` cluster-period means.
        gamma: correlation of two cell means in a cluster; 0 gives OLS.
        scale: variance of a cell mean if known. Otherwise it is estimated
            from the GLS residuals (pooled with ``within`` when supplied).
        within: optional within-cell statistics of the individual outcomes.
        correlation: label stored on the result; defaults to
            ``"independence"`` for ``gamma == 0`` and ``"fixed"`` otherwise.
        likelihood: ``"reml"`` or ``"ml"`` to also record the profiled
            log-likelihood at ``gamma``.

    Raises:
        InvalidGamma: ``gamma`` outside ``[0, 1)``.
        SingularDesign: the information matrix is not positive definite.
    """
    gamma = check_gamma(gamma)
    Y = _cluster_data(dm, means)
    n_cl, m = Y.shape
    Z3 = dm.Z3
    W = cluster_precision_matrix(gamma, m)
    WZ = np.einsum("ab,ibp->iap", W, Z3)
    info = np.einsum("iap,iaq->pq", Z3, WZ)
    rhs = np.einsum("iap,ia->p", WZ, Y)
    try:
        factor = scipy.linalg.cho_factor(info, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign(f"information matrix is not positive definite: {exc}") from None
    beta = scipy.linalg.cho_solve(factor, rhs)
    resid = Y - np.einsum("iap,p->ia", Z3, beta)

    ssw, n_within, K = _within_terms(within)
    if scale is None:
        quad = float(np.einsum("ia,ab,ib->", resid, W, resid))
        if n_within:
            quad += ssw / (K * (1.0 - gamma))
        dof = Y.size - beta.size + n_within
        if dof <= 0:
            raise SingularDesign("no residual degrees of freedom to estimate the scale")
        scale = quad / dof
    elif not (scale >= 0 and math.isfinite(scale)):
        raise ValidationError(f"scale must be finite and nonnegative, got {scale}")

    if correlation is None:
        correlation = "independence" if gamma == 0.0 else "fixed"
    loglik = None
    if likelihood is not None:
        loglik = profile_log_likelihood(dm, means, gamma, within, likelihood)
    return FitResult(
        structure=dm.structure,
        coefficients=beta,
        information=0.5 * (info + info.T),
        gamma=gamma,
        scale=float(scale),
        design=dm,
        residuals=resid,
        correlation=correlation,
        log_likelihood=loglik,
        likelihood_method=likelihood,
        n_variance_params=1,
        n_within=n_within,
    )


def estimate_gamma(
    dm: DesignMatrix,
    means,
    within: WithinCellStats | None = None,
    method: str = "reml",
    backend: str | None = None,
) -> tuple[float, float, bool]:
    """Maximise the profiled likelihood over ``gamma`` in ``[0, 1 - 1e-6]``.

    Returns:
        ``(gamma_hat, log_likelihood, on_boundary)``.

    Raises:
        NonConvergence: degenerate data (zero residual scale) or the search
            exhausted its iteration budget.
    """
    Y = _cluster_data(dm, means)
    if dm.n_clusters < 2:
        raise ValidationError("feasible GLS needs at least 2 clusters")
    ssw, n_within, K = _within_terms(within)
    rss = float(np.sum(_ols_residuals(dm, Y) ** 2))
    mean_square = float(np.mean(Y * Y))
    if rss + ssw <= _DEGENERATE_RATIO * mean_square * (Y.size + n_within):
        raise NonConvergence("likelihood is degenerate (no residual variation)")
    ZtZ, StS, _ = dm.gram
    Zty, Sty, yty, ysum2 = _data_stats(dm, Y)
    reml = _reml_flag(method)
    kern = _kernels.get_backend(backend)
    g, ll, _, status = kern.maximize_profile(
        0.0, GAMMA_UPPER, SEARCH_GRID, SEARCH_XATOL, SEARCH_MAXITER,
        ZtZ, StS, Zty, Sty, yty, ysum2, Y.size, Y.shape[1], Y.shape[0],
        ssw, n_within, float(K), reml,
    )
    if not math.isfinite(ll):
        raise NonConvergence("likelihood is degenerate (zero residual variation)")
    if status < 0:
        raise NonConvergence(f"gamma search did not reach tolerance in {SEARCH_MAXITER} iterations")
    if status == 0:
        args = (ZtZ, StS, Zty, Sty, yty, ysum2, Y.shape[0], Y.shape[1], ssw, n_within, float(K), reml)
        numpy_kern = _kernels.get_backend("numpy")

        def loglik(x):
            return numpy_kern.profile_loglik(x, ZtZ, StS, Zty, Sty, yty, ysum2, Y.size, Y.shape[1], Y.shape[0],
                                             ssw, n_within, float(K), reml)

        g, ll = _polish(float(g), float(ll), args, loglik)
    return float(g), float(ll), status == 1


def fit_feasible_gls(
    dm: DesignMatrix,
    means,
    within: WithinCellStats | None = None,
    method: str = "reml",
    backend: str | None = None,
) -> FitResult:
    """Feasible GLS with ``gamma`` estimated by a 1-D likelihood search.

    The scale is profiled out analytically, leaving a one-dimensional
    search on ``gamma``; a boundary maximum is returned as a legitimate
    estimate with ``boundary=True``.
    """
    g, ll, boundary = estimate_gamma(dm, means, within, method, backend)
    fit = fit_gls(dm, means, g, within=within)
    return replace(
        fit,
        correlation="exchangeable",
        log_likelihood=ll,
        likelihood_method=method,
        n_variance_params=2,
        boundary=boundary,
    )


def fit_independence(dm: DesignMatrix, means, within: WithinCellStats | None = None,
                     likelihood: str | None = None) -> FitResult:
    """OLS fit, i.e. GLS under a working independence structure."""
    return fit_gls(dm, means, 0.0, within=within, correlation="independence", likelihood=likelihood)


def aggregate_etate(fit: FitResult) -> float:
    if fit.structure is not Structure.EXPOSURE:
        raise WrongStructure(f"ETATE needs an ETI fit, got {fit.structure.value}")
    return float(np.mean(fit.treatment_effects))


def aggregate_ctate(fit: FitResult) -> float:
    if fit.structure is not Structure.CALENDAR:
        raise WrongStructure(f"CTATE needs a CTI fit, got {fit.structure.value}")
    return float(np.mean(fit.treatment_effects))


def information_criteria(fit: FitResult, n_obs: int | None = None) -> tuple[float, float]:
    """AIC and BIC from the fit's maximised log-likelihood.

    The parameter count is the number of mean parameters plus the variance
    parameters (two for an estimated exchangeable structure, one for a
    fixed correlation). ``n_obs`` defaults to the number of individual
    observations when within-cell statistics were used, else to the number
    of cell means.
    """
    if fit.log_likelihood is None:
        raise MissingLikelihood("fit carries no maximised log-likelihood")
    k = fit.coefficients.size + fit.n_variance_params
    if n_obs is None:
        n_obs = fit.n_obs + fit.n_within
    return aic_bic(fit.log_likelihood, k, n_obs)


def aic_bic(log_likelihood: float, n_params: int, n_obs: int) -> tuple[float, float]:
    if n_obs < 1:
        raise ValidationError("n_obs must be positive")
    return -2.0 * log_likelihood + 2.0 * n_params, -2.0 * log_likelihood + n_params * math.log(n_obs)
