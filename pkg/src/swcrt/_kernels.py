"""Hot numeric kernels: profiled likelihood search and cluster sandwich meat.

Each kernel is written once in a numba-compatible subset of numpy and built
twice, once through ``numba.njit`` and once as plain Python. The active
backend is chosen at import from ``SWCRT_NUMBA`` (``0``/``false``/``off``
selects pure numpy); numba is also skipped when it cannot be imported.
Both backends stay reachable through :func:`get_backend` so they can be
compared directly.
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False
    njit = None

_FLAG = os.environ.get("SWCRT_NUMBA", "1").strip().lower()
USE_NUMBA = HAS_NUMBA and _FLAG not in ("0", "false", "off", "no")

# robust variance types understood by the sandwich kernel
CR0, CR2, CR3 = 0, 2, 3
EIGEN_FLOOR = 1e-10

_LOG_2PI = math.log(2.0 * math.pi)


def _build(jit):
    @jit
    def profile_loglik(g, ZtZ, StS, Zty, Sty, yty, ysum2, n, m, n_clusters, ssw, n_within, K, reml):
        """Scale-profiled (restricted) log-likelihood at correlation ``g``.

        The data enter only through per-design cross products, so one
        evaluation costs a single ``p x p`` factorisation.
        """
        p = ZtZ.shape[0]
        c = g / (1.0 + (m - 1) * g)
        inv = 1.0 / (1.0 - g)
        B = (ZtZ - c * StS) * inv
        b = (Zty - c * Sty) * inv
        yWy = (yty - c * ysum2) * inv
        sign, logdet_b = np.linalg.slogdet(B)
        if sign <= 0.0:
            return -np.inf
        beta = np.linalg.solve(B, b)
        quad = yWy - np.dot(b, beta)
        if quad < 0.0:
            quad = 0.0
        d = n + n_within
        if reml:
            d -= p
        total = quad
        if n_within > 0:
            total += ssw / (K * (1.0 - g))
        if total <= 0.0 or d <= 0:
            return -np.inf
        s2 = total / d
        logdet_r = (m - 1) * math.log1p(-g) + math.log1p((m - 1) * g)
        dev = d * _LOG_2PI + d * math.log(s2) + n_clusters * logdet_r + d
        if n_within > 0:
            dev += n_within * math.log(K * (1.0 - g))
        if reml:
            dev += logdet_b
        return -0.5 * dev

    @jit
    def maximize_profile(
        lo, hi, n_grid, xatol, maxiter,
        ZtZ, StS, Zty, Sty, yty, ysum2, n, m, n_clusters, ssw, n_within, K, reml,
    ):
        """Grid bracket then bounded Brent search for the maximising ``g``.

        Returns ``(g, loglik, n_evaluations, status)`` with status 0 for an
        interior optimum, 1 for an optimum on a boundary of ``[lo, hi]`` and
        -1 when ``maxiter`` was reached before the tolerance was met.
        """
        best_k = 0
        best_v = -np.inf
        step = (hi - lo) / (n_grid - 1)
        n_eval = 0
        for k in range(n_grid):
            gk = lo + k * step
            v = profile_loglik(gk, ZtZ, StS, Zty, Sty, yty, ysum2, n, m, n_clusters, ssw, n_within, K, reml)
            n_eval += 1
            if v > best_v:
                best_v = v
                best_k = k
        if best_v == -np.inf:
            return lo, best_v, n_eval, -1
        a = lo + max(best_k - 1, 0) * step
        b = lo + min(best_k + 1, n_grid - 1) * step

        # bounded Brent minimisation of the negative log-likelihood
        sqrt_eps = math.sqrt(2.2e-16)
        golden_mean = 0.5 * (3.0 - math.sqrt(5.0))
        fulc = a + golden_mean * (b - a)
        nfc = fulc
        xf = fulc
        rat = 0.0
        e = 0.0
        x = xf
        fx = -profile_loglik(x, ZtZ, StS, Zty, Sty, yty, ysum2, n, m, n_clusters, ssw, n_within, K, reml)
        n_eval += 1
        num = 1
        ffulc = fx
        fnfc = fx
        xm = 0.5 * (a + b)
        tol1 = sqrt_eps * abs(xf) + xatol / 3.0
        tol2 = 2.0 * tol1
        status = 0
        while abs(xf - xm) > (tol2 - 0.5 * (b - a)):
            golden = True
            if abs(e) > tol1:
                golden = False
                r = (xf - nfc) * (fx - ffulc)
                q = (xf - fulc) * (fx - fnfc)
                pp = (xf - fulc) * q - (xf - nfc) * r
                q = 2.0 * (q - r)
                if q > 0.0:
                    pp = -pp
                q = abs(q)
                r = e
                e = rat
                if abs(pp) < abs(0.5 * q * r) and pp > q * (a - xf) and pp < q * (b - xf):
                    rat = pp / q
                    x = xf + rat
                    if (x - a) < tol2 or (b - x) < tol2:
                        rat = tol1 if xm >= xf else -tol1
                else:
                    golden = True
            if golden:
                if xf >= xm:
                    e = a - xf
                else:
                    e = b - xf
                rat = golden_mean * e
            step_size = max(abs(rat), tol1)
            x = xf + step_size if rat >= 0.0 else xf - step_size
            fu = -profile_loglik(x, ZtZ, StS, Zty, Sty, yty, ysum2, n, m, n_clusters, ssw, n_within, K, reml)
            n_eval += 1
            num += 1
            if fu <= fx:
                if x >= xf:
                    a = xf
                else:
                    b = xf
                fulc = nfc
                ffulc = fnfc
                nfc = xf
                fnfc = fx
                xf = x
                fx = fu
            else:
                if x < xf:
                    a = x
                else:
                    b = x
                if fu <= fnfc or nfc == xf:
                    fulc = nfc
                    ffulc = fnfc
                    nfc = x
                    fnfc = fu
                elif fu <= ffulc or fulc == xf or fulc == nfc:
                    fulc = x
                    ffulc = fu
            xm = 0.5 * (a + b)
            tol1 = sqrt_eps * abs(xf) + xatol / 3.0
            tol2 = 2.0 * tol1
            if num >= maxiter:
                status = -1
                break

        g_best = xf
        v_best = -fx
        # boundary optima are legitimate estimates; report them exactly
        v_lo = profile_loglik(lo, ZtZ, StS, Zty, Sty, yty, ysum2, n, m, n_clusters, ssw, n_within, K, reml)
        v_hi = profile_loglik(hi, ZtZ, StS, Zty, Sty, yty, ysum2, n, m, n_clusters, ssw, n_within, K, reml)
        n_eval += 2
        if v_lo >= v_best:
            return lo, v_lo, n_eval, 1
        if v_hi >= v_best:
            return hi, v_hi, n_eval, 1
        return g_best, v_best, n_eval, status

    @jit
    def robust_meat(Z3, E, R, M, kind):
        """Sum over clusters of ``u_i u_i'`` with ``u_i = Z_i' W A_i e_i``.

        ``Z3`` is ``(I, m, p)``, ``E`` the ``(I, m)`` residuals, ``R`` the
        scale-free working correlation block and ``M`` the inverse of the
        scale-free information. Returns ``(meat, worst_cluster)`` where
        ``worst_cluster`` is -1 unless a leverage block fell below the
        eigenvalue floor.
        """
        n_cl = Z3.shape[0]
        m = Z3.shape[1]
        p = Z3.shape[2]
        W = np.linalg.inv(R)
        L = np.linalg.cholesky(R)
        meat = np.zeros((p, p))
        eye = np.eye(m)
        for i in range(n_cl):
            Zi = np.ascontiguousarray(Z3[i])
            ei = np.ascontiguousarray(E[i])
            if kind == 0:
                adj = ei
            else:
                C = R - Zi @ M @ Zi.T
                Bi = L.T @ C @ L
                Bi = 0.5 * (Bi + Bi.T)
                vals, vecs = np.linalg.eigh(Bi)
                if vals[0] < EIGEN_FLOOR:
                    return meat, i
                if kind == 2:
                    root = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
                    A = L @ root @ L.T
                    adj = A @ ei
                else:
                    H = Zi @ M @ Zi.T @ W
                    adj = np.linalg.solve(eye - H, ei)
            u = Zi.T @ (W @ adj)
            meat += np.outer(u, u)
        return meat, -1

    return SimpleNamespace(
        profile_loglik=profile_loglik,
        maximize_profile=maximize_profile,
        robust_meat=robust_meat,
    )


_BACKENDS: dict[str, SimpleNamespace] = {}


def get_backend(name: str | None = None) -> SimpleNamespace:
    """Kernel namespace for ``"numba"`` or ``"numpy"`` (default: the active one)."""
    if name is None:
        name = "numba" if USE_NUMBA else "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name not in _BACKENDS:
        if name == "numba":
            if not HAS_NUMBA:
                raise RuntimeError("numba is not importable")
            _BACKENDS[name] = _build(njit(cache=True, nogil=True))
        else:
            _BACKENDS[name] = _build(lambda fn: fn)
        _BACKENDS[name].name = name
    return _BACKENDS[name]


def active_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
