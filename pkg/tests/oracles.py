"""Independent reference computations used as test oracles.

Everything here is written directly from the model definitions with dense
matrices and generic solvers, sharing no code with the package's fast
paths (closed-form precisions, cross-product likelihoods, sandwich kernels).
"""

from __future__ import annotations

import numpy as np
from scipy import linalg, optimize, stats


def dense_design(sequences, J, kind, drop_final_period=False):
    """Build the cell-level design matrix row by row from the definitions."""
    rows, keep = [], []
    for q in sequences:
        for j in range(1, J + 1):
            treated = j > q
            if kind == "IT":
                t = [1.0 if treated else 0.0]
            elif kind == "ETI":
                t = [1.0 if treated and j - q == s else 0.0 for s in range(1, J)]
            else:
                t = [1.0 if treated and j == c else 0.0 for c in range(2, J)]
            p = [1.0 if j == k else 0.0 for k in range(1, J + 1)]
            rows.append(t + p)
            keep.append(not (drop_final_period and j == J))
    Z = np.array(rows)[np.array(keep)]
    Z = Z[:, np.abs(Z).sum(axis=0) > 0]
    return Z, np.array(keep)


def dense_gls(Z, y, n_clusters, gamma):
    """GLS via an explicit block-diagonal covariance and its dense inverse."""
    m = Z.shape[0] // n_clusters
    R = (1 - gamma) * np.eye(m) + gamma * np.ones((m, m))
    V = linalg.block_diag(*([R] * n_clusters))
    Vi = np.linalg.inv(V)
    return np.linalg.solve(Z.T @ Vi @ Z, Z.T @ Vi @ y)


def individual_loglik(Y, X_cell, gamma, scale, J):
    """Exact Gaussian log-likelihood of individual outcomes.

    ``Y`` is ``(I, J, K)``; ``X_cell`` the cell-level mean model rows
    (cluster-major) with coefficients already applied, i.e. the mean of
    every cell. Random intercept variance ``gamma * scale`` and individual
    variance ``K * (1 - gamma) * scale``.
    """
    I, _, K = Y.shape  # noqa: E741
    tau2 = gamma * scale
    sig2 = K * (1 - gamma) * scale
    n = J * K
    cov = tau2 * np.ones((n, n)) + sig2 * np.eye(n)
    total = 0.0
    for i in range(I):
        mu = np.repeat(X_cell[i * J : (i + 1) * J], K)
        total += stats.multivariate_normal(mu, cov).logpdf(Y[i].reshape(-1))
    return total


def individual_ml_profile(Y, Z, gamma):
    """ML log-likelihood of individual data at ``gamma``, maximised over the mean and scale."""
    I, J, K = Y.shape  # noqa: E741
    means = Y.mean(axis=2).reshape(-1)
    beta = dense_gls(Z, means, I, gamma)
    mu = Z @ beta
    resid_means = (means - mu).reshape(I, J)
    R = (1 - gamma) * np.eye(J) + gamma * np.ones((J, J))
    quad = sum(r @ np.linalg.solve(R, r) for r in resid_means)
    ssw = float(np.sum((Y - Y.mean(axis=2, keepdims=True)) ** 2))
    scale = (quad + ssw / (K * (1 - gamma))) / (I * J * K)
    return individual_loglik(Y, mu, gamma, scale, J)


def individual_reml_gamma(Y, Z):
    """REML estimate of the cell-mean correlation from a dense individual-level likelihood."""
    I, J, K = Y.shape  # noqa: E741
    X = np.repeat(Z, K, axis=0)
    y = Y.reshape(-1)
    n = J * K

    def neg(params):
        log_tau2, log_sig2 = params
        cov = np.exp(log_tau2) * np.ones((n, n)) + np.exp(log_sig2) * np.eye(n)
        Vi = np.linalg.inv(cov)
        _, logdet = np.linalg.slogdet(cov)
        XtViX = np.zeros((X.shape[1], X.shape[1]))
        XtViy = np.zeros(X.shape[1])
        for i in range(I):
            Xi = X[i * n : (i + 1) * n]
            XtViX += Xi.T @ Vi @ Xi
            XtViy += Xi.T @ Vi @ y[i * n : (i + 1) * n]
        beta = np.linalg.solve(XtViX, XtViy)
        quad = 0.0
        for i in range(I):
            r = y[i * n : (i + 1) * n] - X[i * n : (i + 1) * n] @ beta
            quad += r @ Vi @ r
        return 0.5 * (I * logdet + np.linalg.slogdet(XtViX)[1] + quad)

    res = optimize.minimize(neg, x0=[np.log(0.1), 0.0], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
    tau2, sig2 = np.exp(res.x)
    return tau2 / (tau2 + sig2 / K)


def jackknife_cr3(Z, y, n_clusters, gamma):
    """Sum of squared delete-one-cluster coefficient changes, by refitting."""
    m = Z.shape[0] // n_clusters
    full = dense_gls(Z, y, n_clusters, gamma)
    acc = np.zeros((Z.shape[1], Z.shape[1]))
    for i in range(n_clusters):
        keep = np.ones(Z.shape[0], dtype=bool)
        keep[i * m : (i + 1) * m] = False
        d = dense_gls(Z[keep], y[keep], n_clusters - 1, gamma) - full
        acc += np.outer(d, d)
    return acc


def lambda_weights_dense(Q, analysis, truth, gamma, drop_final_period):
    """Estimand weights from a dense projection matrix on the one-cluster-per-sequence design."""
    J = Q + 1
    seqs = list(range(1, Q + 1))
    Z, keep = dense_design(seqs, J, analysis, drop_final_period)
    m = int(keep[:J].sum())
    R = (1 - gamma) * np.eye(m) + gamma * np.ones((m, m))
    Vi = np.linalg.inv(linalg.block_diag(*([R] * Q)))
    proj = np.linalg.inv(Z.T @ Vi @ Z) @ Z.T @ Vi
    n_t = {"IT": 1, "ETI": J - 1, "CTI": J - 2}[analysis]
    if drop_final_period and analysis == "ETI":
        n_t -= 1
    avg = proj[:n_t].mean(axis=0)
    idx = list(range(1, J)) if truth == "ETI" else list(range(2, J))
    out = {}
    for k in idx:
        pattern = []
        for q in seqs:
            for j in range(1, J + 1):
                if truth == "ETI":
                    pattern.append(1.0 if j > q and j - q == k else 0.0)
                else:
                    pattern.append(1.0 if j > q and j == k else 0.0)
        pattern = np.array(pattern)[keep]
        if pattern.any():
            out[k] = float(avg @ pattern)
    return out


def dense_sandwich_cr0(Z, y, n_clusters, gamma):
    """Plain cluster sandwich with block working weights, from dense matrices."""
    m = Z.shape[0] // n_clusters
    R = (1 - gamma) * np.eye(m) + gamma * np.ones((m, m))
    W = np.linalg.inv(R)
    beta = dense_gls(Z, y, n_clusters, gamma)
    bread = np.linalg.inv(sum(Z[i * m : (i + 1) * m].T @ W @ Z[i * m : (i + 1) * m] for i in range(n_clusters)))
    meat = np.zeros_like(bread)
    for i in range(n_clusters):
        Zi = Z[i * m : (i + 1) * m]
        u = Zi.T @ W @ (y[i * m : (i + 1) * m] - Zi @ beta)
        meat += np.outer(u, u)
    return bread @ meat @ bread


def residual_covariance(Z, n_clusters, gamma):
    """Covariance of GLS residuals when the working model is the true one."""
    m = Z.shape[0] // n_clusters
    R = (1 - gamma) * np.eye(m) + gamma * np.ones((m, m))
    V = linalg.block_diag(*([R] * n_clusters))
    Vi = np.linalg.inv(V)
    H = Z @ np.linalg.inv(Z.T @ Vi @ Z) @ Z.T @ Vi
    P = np.eye(Z.shape[0]) - H
    return P @ V @ P.T
