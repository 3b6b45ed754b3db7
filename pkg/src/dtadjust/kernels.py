"""Hot numeric kernels: batched logit Newton fits and bootstrap weighted sums.

Each kernel has a numba implementation (explicit loops, fixed reduction
order) and a vectorized numpy twin.  :func:`dtadjust._accel.use_numba`
decides which one the public wrappers call.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit, prange, use_numba

# linear predictors are clamped to this range inside the likelihood
ETA_CLAMP = 30.0

# info columns written by the batched logit kernels
INFO_ITERS, INFO_GRAD, INFO_CONVERGED, INFO_RIDGE = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _logit_objective_nb(X, z, beta):
    n, d = X.shape
    total = 0.0
    for i in range(n):
        eta = 0.0
        for c in range(d):
            eta += X[i, c] * beta[c]
        if eta > ETA_CLAMP:
            eta = ETA_CLAMP
        elif eta < -ETA_CLAMP:
            eta = -ETA_CLAMP
        softplus = max(eta, 0.0) + math.log1p(math.exp(-abs(eta)))
        total += z[i] * eta - softplus
    return total / n


@njit(cache=True, nogil=True)
def _logit_newton_nb(X, z, beta, tol, max_iter, max_halving, ridge, cond_max):
    n, d = X.shape
    g = np.empty(d)
    H = np.empty((d, d))
    cand = np.empty(d)
    iters = 0
    converged = False
    ridge_used = False
    gnorm = np.inf
    ll = _logit_objective_nb(X, z, beta)
    while True:
        g[:] = 0.0
        H[:, :] = 0.0
        for i in range(n):
            eta = 0.0
            for c in range(d):
                eta += X[i, c] * beta[c]
            if eta > ETA_CLAMP:
                eta = ETA_CLAMP
            elif eta < -ETA_CLAMP:
                eta = -ETA_CLAMP
            p = 1.0 / (1.0 + math.exp(-eta))
            r = z[i] - p
            v = p * (1.0 - p)
            for a in range(d):
                xa = X[i, a]
                g[a] += xa * r
                for b in range(a + 1):
                    H[a, b] += v * xa * X[i, b]
        gnorm = 0.0
        for a in range(d):
            g[a] /= n
            if abs(g[a]) > gnorm:
                gnorm = abs(g[a])
            for b in range(a + 1):
                H[a, b] /= n
                H[b, a] = H[a, b]
        if gnorm <= tol:
            converged = True
            break
        if iters >= max_iter:
            break
        ev = np.linalg.eigvalsh(H)
        if ev[0] <= ev[d - 1] / cond_max:
            for a in range(d):
                H[a, a] += ridge
            ridge_used = True
        step = np.linalg.solve(H, g)
        t = 1.0
        accepted = False
        llc = ll
        for _ in range(max_halving + 1):
            for a in range(d):
                cand[a] = beta[a] + t * step[a]
            llc = _logit_objective_nb(X, z, cand)
            if llc >= ll - 1e-12 * (1.0 + abs(ll)):
                accepted = True
                break
            t *= 0.5
        iters += 1
        if not accepted:
            break
        for a in range(d):
            beta[a] = cand[a]
        ll = llc
    return iters, gnorm, converged, ridge_used


@njit(parallel=True, cache=True, nogil=True)
def _logit_batch_nb(X, Zt, betas, info, tol, max_iter, max_halving, ridge, cond_max):
    J = Zt.shape[0]
    for j in prange(J):
        it, gn, conv, rid = _logit_newton_nb(
            X, Zt[j], betas[j], tol, max_iter, max_halving, ridge, cond_max
        )
        info[j, INFO_ITERS] = it
        info[j, INFO_GRAD] = gn
        info[j, INFO_CONVERGED] = 1.0 if conv else 0.0
        info[j, INFO_RIDGE] = 1.0 if rid else 0.0


@njit(parallel=True, cache=True, nogil=True)
def _weighted_sums_nb(S, D, out):
    B, n = S.shape
    J = D.shape[1]
    for b in prange(B):
        for j in range(J):
            out[b, j] = 0.0
        for i in range(n):
            s = S[b, i]
            if s != 0.0:
                for j in range(J):
                    out[b, j] += s * D[i, j]


# ---------------------------------------------------------------------------
# numpy twins
# ---------------------------------------------------------------------------


def _logit_objective_np(X, z, beta):
    eta = np.clip(X @ beta, -ETA_CLAMP, ETA_CLAMP)
    softplus = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
    return float(np.mean(z * eta - softplus))


def _logit_newton_np(X, z, beta, tol, max_iter, max_halving, ridge, cond_max):
    n, d = X.shape
    iters = 0
    converged = False
    ridge_used = False
    ll = _logit_objective_np(X, z, beta)
    while True:
        eta = np.clip(X @ beta, -ETA_CLAMP, ETA_CLAMP)
        p = 1.0 / (1.0 + np.exp(-eta))
        g = X.T @ (z - p) / n
        H = (X * (p * (1.0 - p))[:, None]).T @ X / n
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            converged = True
            break
        if iters >= max_iter:
            break
        ev = np.linalg.eigvalsh(H)
        if ev[0] <= ev[-1] / cond_max:
            H = H + ridge * np.eye(d)
            ridge_used = True
        step = np.linalg.solve(H, g)
        t = 1.0
        accepted = False
        for _ in range(max_halving + 1):
            cand = beta + t * step
            llc = _logit_objective_np(X, z, cand)
            if llc >= ll - 1e-12 * (1.0 + abs(ll)):
                accepted = True
                break
            t *= 0.5
        iters += 1
        if not accepted:
            break
        beta[:] = cand
        ll = llc
    return iters, gnorm, converged, ridge_used


def _logit_batch_np(X, Zt, betas, info, tol, max_iter, max_halving, ridge, cond_max):
    for j in range(Zt.shape[0]):
        it, gn, conv, rid = _logit_newton_np(
            X, Zt[j], betas[j], tol, max_iter, max_halving, ridge, cond_max
        )
        info[j] = (it, gn, float(conv), float(rid))


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------


def logit_objective(X, z, beta) -> float:
    """Average Bernoulli log-likelihood with clamped linear predictor."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    beta = np.ascontiguousarray(beta, dtype=np.float64)
    if use_numba():
        return float(_logit_objective_nb(X, z, beta))
    return _logit_objective_np(X, z, beta)


def logit_score(X, z, beta) -> np.ndarray:
    """Gradient of :func:`logit_objective` (exact inside the clamp range)."""
    X = np.asarray(X, dtype=np.float64)
    eta = np.clip(X @ beta, -ETA_CLAMP, ETA_CLAMP)
    p = 1.0 / (1.0 + np.exp(-eta))
    return X.T @ (np.asarray(z, dtype=np.float64) - p) / X.shape[0]


def logit_hessian(X, beta) -> np.ndarray:
    """Observed Hessian of :func:`logit_objective` (negative semi-definite)."""
    X = np.asarray(X, dtype=np.float64)
    eta = np.clip(X @ beta, -ETA_CLAMP, ETA_CLAMP)
    p = 1.0 / (1.0 + np.exp(-eta))
    return -(X * (p * (1.0 - p))[:, None]).T @ X / X.shape[0]


def fit_logit_batch(X, Zt, *, tol, max_iter, max_halving, ridge, cond_max, beta0=None):
    """Newton fits of every row of ``Zt`` (J x n indicators) on design ``X``.

    Returns ``(betas, info)`` with ``betas`` of shape (J, d) and ``info`` of
    shape (J, 4): iterations, gradient sup-norm, converged, ridge used.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    Zt = np.ascontiguousarray(Zt, dtype=np.float64)
    J, d = Zt.shape[0], X.shape[1]
    if beta0 is None:
        betas = np.zeros((J, d))
    else:
        betas = np.array(beta0, dtype=np.float64, order="C", copy=True).reshape(J, d)
    info = np.zeros((J, 4))
    if J == 0:
        return betas, info
    kernel = _logit_batch_nb if use_numba() else _logit_batch_np
    kernel(X, Zt, betas, info, float(tol), int(max_iter), int(max_halving),
           float(ridge), float(cond_max))
    return betas, info


def weighted_sums(S, D) -> np.ndarray:
    """``S @ D`` for weight rows ``S`` (B x n) and contributions ``D`` (n x J).

    The numba path reduces each replicate in a fixed order, so results do not
    depend on the number of worker threads.
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    D = np.ascontiguousarray(D, dtype=np.float64)
    if use_numba():
        out = np.empty((S.shape[0], D.shape[1]))
        _weighted_sums_nb(S, D, out)
        return out
    return S @ D
