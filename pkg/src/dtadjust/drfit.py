"""Per-arm, per-threshold distribution regression fits.

Each (arm, threshold) cell regresses ``1{Y <= y_j}`` on the design rows of
that arm through a canonical link, so the in-arm mean of fitted
probabilities equals the in-arm empirical CDF at the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._accel import numba_threads
from .core import Dataset, DesignMatrix, ThresholdGrid, TransformSpec
from .errors import ConfigError, DataError, SpecMismatch

CANONICAL_LINKS = ("logit", "linear")


@dataclass(frozen=True)
class LinkSpec:
    kind: str = "logit"

    def __post_init__(self):
        if self.kind not in CANONICAL_LINKS:
            raise ConfigError(
                f"link {self.kind!r} is not supported: regression adjustment needs a "
                f"canonical link so fitted probabilities average to the empirical CDF "
                f"within each arm; choose one of {CANONICAL_LINKS}")

    def inverse(self, eta: np.ndarray) -> np.ndarray:
        if self.kind == "logit":
            return 1.0 / (1.0 + np.exp(-np.clip(eta, -kernels.ETA_CLAMP, kernels.ETA_CLAMP)))
        return eta

    def derivative(self, eta: np.ndarray) -> np.ndarray:
        if self.kind == "logit":
            p = self.inverse(eta)
            return p * (1.0 - p)
        return np.ones_like(eta)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 100
    max_halving: int = 50
    ridge: float = 1e-8
    cond_max: float = 1e12


@dataclass(frozen=True)
class CellDiagnostics:
    converged: bool
    iterations: int
    grad_norm: float
    degenerate: int | None  # constant value 0 or 1 for degenerate cells
    ridge_used: bool


@dataclass(frozen=True, eq=False)
class Diagnostics:
    """Per-cell diagnostic arrays, each of shape (K, J).

    ``degenerate`` holds -1 for regular cells and the constant fit (0 or 1)
    otherwise.
    """

    converged: np.ndarray
    iterations: np.ndarray
    grad_norm: np.ndarray
    degenerate: np.ndarray
    ridge_used: np.ndarray

    def cell(self, k: int, j: int) -> CellDiagnostics:
        deg = int(self.degenerate[k, j])
        return CellDiagnostics(bool(self.converged[k, j]), int(self.iterations[k, j]),
                               float(self.grad_norm[k, j]), None if deg < 0 else deg,
                               bool(self.ridge_used[k, j]))

    @property
    def failed(self) -> np.ndarray:
        return (self.degenerate < 0) & ~self.converged

    def summary(self) -> dict:
        return {
            "cells": int(self.converged.size),
            "degenerate": int((self.degenerate >= 0).sum()),
            "not_converged": int(self.failed.sum()),
            "ridge_used": int(self.ridge_used.sum()),
            "max_grad_norm": float(np.max(self.grad_norm, initial=0.0)),
            "max_iterations": int(np.max(self.iterations, initial=0)),
        }


@dataclass(frozen=True, eq=False)
class DrFit:
    coefficients: np.ndarray  # (K, J, d), NaN rows for degenerate cells
    link: LinkSpec
    diagnostics: Diagnostics
    grid: ThresholdGrid
    transform_spec: TransformSpec
    column_names: tuple[str, ...] = field(default=())

    @property
    def n_arms(self) -> int:
        return self.coefficients.shape[0]


def indicator_matrix(y: np.ndarray, grid: ThresholdGrid | np.ndarray) -> np.ndarray:
    values = grid.values if isinstance(grid, ThresholdGrid) else np.asarray(grid)
    return (np.asarray(y)[:, None] <= values[None, :]).astype(np.float64)


def _fit_linear(X: np.ndarray, Z: np.ndarray):
    """Least squares of every column of ``Z`` on ``X``; min-norm when rank deficient."""
    coef, _, rank, _ = np.linalg.lstsq(X, Z, rcond=None)
    return coef.T, rank < X.shape[1]


def _start_values(X: np.ndarray, Zt: np.ndarray) -> np.ndarray | None:
    """Intercept at the logit of the arm proportion, other coefficients zero."""
    if not np.all(X[:, 0] == 1.0):
        return None
    zbar = Zt.mean(axis=1)
    beta0 = np.zeros((Zt.shape[0], X.shape[1]))
    beta0[:, 0] = np.log(zbar) - np.log1p(-zbar)
    return beta0


def fit_threshold(t: np.ndarray, z: np.ndarray, link: LinkSpec | str = "logit",
                  options: SolverOptions | None = None):
    """Fit one cell.  Returns ``(coefficients or None, CellDiagnostics)``.

    All-equal indicators give a degenerate constant fit with no coefficients.
    """
    link = LinkSpec(link) if isinstance(link, str) else link
    options = options or SolverOptions()
    t = np.asarray(t, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != z.shape[0]:
        raise DataError(f"design rows {t.shape} do not match indicator length {z.shape}")
    if np.any((z != 0.0) & (z != 1.0)):
        raise DataError("indicator vector must be 0/1")
    if z.min() == z.max():
        const = int(z[0])
        return None, CellDiagnostics(True, 0, 0.0, const, False)
    if link.kind == "linear":
        coef, singular = _fit_linear(t, z[:, None])
        resid = z - t @ coef[0]
        grad = float(np.max(np.abs(t.T @ resid / t.shape[0])))
        return coef[0], CellDiagnostics(True, 1, grad, None, bool(singular))
    betas, info = kernels.fit_logit_batch(
        t, z[None, :], tol=options.tol, max_iter=options.max_iter,
        max_halving=options.max_halving, ridge=options.ridge, cond_max=options.cond_max,
        beta0=_start_values(t, z[None, :]))
    row = info[0]
    return betas[0], CellDiagnostics(bool(row[kernels.INFO_CONVERGED]),
                                     int(row[kernels.INFO_ITERS]),
                                     float(row[kernels.INFO_GRAD]), None,
                                     bool(row[kernels.INFO_RIDGE]))


def fit_all(data: Dataset, design: DesignMatrix, grid: ThresholdGrid,
            link: LinkSpec | str = "logit", options: SolverOptions | None = None,
            threads: int | None = None) -> DrFit:
    """Fit every (arm, threshold) cell; cells are independent and assembled in order."""
    link = LinkSpec(link) if isinstance(link, str) else link
    options = options or SolverOptions()
    if design.t.shape[0] != data.n:
        raise DataError(f"design has {design.t.shape[0]} rows but dataset has {data.n}")
    K, J, d = data.n_arms, len(grid), design.d
    coefs = np.full((K, J, d), np.nan)
    converged = np.ones((K, J), dtype=bool)
    iterations = np.zeros((K, J), dtype=np.int64)
    grad_norm = np.zeros((K, J))
    degenerate = np.full((K, J), -1, dtype=np.int8)
    ridge_used = np.zeros((K, J), dtype=bool)

    for k in range(K):
        mask = data.arm_mask(k)
        X = np.ascontiguousarray(design.t[mask])
        Z = indicator_matrix(data.y[mask], grid)
        zsum = Z.sum(axis=0)
        low, high = zsum == 0, zsum == X.shape[0]
        degenerate[k, low] = 0
        degenerate[k, high] = 1
        live = np.flatnonzero(~(low | high))
        if live.size == 0:
            continue
        if link.kind == "linear":
            coef, singular = _fit_linear(X, Z[:, live])
            coefs[k, live] = coef
            resid = Z[:, live] - X @ coef.T
            grad_norm[k, live] = np.max(np.abs(X.T @ resid / X.shape[0]), axis=0)
            iterations[k, live] = 1
            ridge_used[k, live] = singular
        else:
            Zt = np.ascontiguousarray(Z[:, live].T)
            with numba_threads(threads):
                betas, info = kernels.fit_logit_batch(
                    X, Zt, tol=options.tol, max_iter=options.max_iter,
                    max_halving=options.max_halving, ridge=options.ridge,
                    cond_max=options.cond_max, beta0=_start_values(X, Zt))
            coefs[k, live] = betas
            iterations[k, live] = info[:, kernels.INFO_ITERS].astype(np.int64)
            grad_norm[k, live] = info[:, kernels.INFO_GRAD]
            converged[k, live] = info[:, kernels.INFO_CONVERGED] > 0
            ridge_used[k, live] = info[:, kernels.INFO_RIDGE] > 0

    for a in (coefs, converged, iterations, grad_norm, degenerate, ridge_used):
        a.setflags(write=False)
    diags = Diagnostics(converged, iterations, grad_norm, degenerate, ridge_used)
    return DrFit(coefs, link, diags, grid, design.transform_spec, design.column_names)


def _predict_rows(fit: DrFit, t: np.ndarray, k: int) -> np.ndarray:
    coef = fit.coefficients[k]
    deg = fit.diagnostics.degenerate[k]
    live = deg < 0
    out = np.empty((t.shape[0], coef.shape[0]))
    if live.any():
        out[:, live] = fit.link.inverse(t @ coef[live].T)
    out[:, ~live] = deg[~live].astype(np.float64)
    return out


def _check_design(fit: DrFit, design: DesignMatrix) -> None:
    if design.transform_spec != fit.transform_spec or (
            fit.column_names and design.column_names != fit.column_names):
        raise SpecMismatch("design was built with a different transform than the fit")


def predict_cdf(fit: DrFit, design: DesignMatrix, k: int) -> np.ndarray:
    """``n x J`` matrix of fitted conditional CDFs of arm ``k`` at every unit's covariates.

    Linear-link predictions are left unclipped.
    """
    _check_design(fit, design)
    if not 0 <= k < fit.n_arms:
        raise SpecMismatch(f"arm {k} not in fit with {fit.n_arms} arms")
    return _predict_rows(fit, design.t, k)


def balance_residual(fit: DrFit, data: Dataset, design: DesignMatrix) -> np.ndarray:
    """In-arm mean of indicator minus fitted CDF, shape (K, J); zero at a canonical optimum."""
    _check_design(fit, design)
    out = np.empty((fit.n_arms, len(fit.grid)))
    for k in range(fit.n_arms):
        mask = data.arm_mask(k)
        G = _predict_rows(fit, design.t[mask], k)
        Z = indicator_matrix(data.y[mask], fit.grid)
        out[k] = (Z - G).mean(axis=0)
    return out
