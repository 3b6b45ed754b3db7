"""Simple and regression-adjusted distribution estimates and effect functionals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset, DesignMatrix, ThresholdGrid
from .drfit import DrFit, balance_residual, indicator_matrix, predict_cdf
from .errors import (
    BalanceWarning,
    ContinuousOutcomeAdvisory,
    DataError,
    EmptyArm,
    GridMismatch,
    NonpositiveH,
    UNotInOpenInterval,
)

BALANCE_WARN_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class CurveEstimate:
    """Values of a CDF or an effect curve on a threshold grid."""

    grid: ThresholdGrid
    values: np.ndarray
    kind: str  # "cdf" or "effect"
    label: str
    adjustment: str  # "simple" or "regression-adjusted"
    monotonized: bool = False
    h: float | None = None

    def __post_init__(self):
        if self.values.shape != self.grid.values.shape:
            raise GridMismatch(
                f"{self.values.shape[0]} values for a grid of {len(self.grid)} thresholds")


def simple_cdf(data: Dataset, grid: ThresholdGrid, k: int) -> CurveEstimate:
    mask = data.arm_mask(k)
    if not mask.any():
        raise EmptyArm(k)
    values = indicator_matrix(data.y[mask], grid).mean(axis=0)
    return CurveEstimate(grid, values, "cdf", f"arm{k}", "simple")


def adjusted_cdf(fit: DrFit, data: Dataset, design: DesignMatrix, k: int) -> CurveEstimate:
    """Average of arm ``k``'s fitted conditional CDF over all ``n`` units."""
    if not data.arm_mask(k).any():
        raise EmptyArm(k)
    values = predict_cdf(fit, design, k).mean(axis=0)
    resid = balance_residual(fit, data, design)[k]
    if np.max(np.abs(resid)) > BALANCE_WARN_TOL:
        warnings.warn(
            f"arm {k}: in-arm balance residual {np.max(np.abs(resid)):.2e} exceeds "
            f"{BALANCE_WARN_TOL:g}; adjusted and augmented forms no longer coincide",
            BalanceWarning, stacklevel=2)
    return CurveEstimate(fit.grid, values, "cdf", f"arm{k}", "regression-adjusted")


def augmented_cdf(fit: DrFit, data: Dataset, design: DesignMatrix, k: int) -> np.ndarray:
    """Simple CDF plus the covariate-imbalance correction ``(P_X - P_X^(k)) G``."""
    mask = data.arm_mask(k)
    G = predict_cdf(fit, design, k)
    simple = indicator_matrix(data.y[mask], fit.grid).mean(axis=0)
    return simple + (G.mean(axis=0) - G[mask].mean(axis=0))


def _check_pair(a: CurveEstimate, b: CurveEstimate) -> None:
    if not a.grid.same_as(b.grid):
        raise GridMismatch("curves are defined on different grids")


def dte(curve_k: CurveEstimate, curve_kp: CurveEstimate) -> CurveEstimate:
    _check_pair(curve_k, curve_kp)
    return CurveEstimate(curve_k.grid, curve_k.values - curve_kp.values, "effect",
                         f"{curve_k.label}-{curve_kp.label}", curve_k.adjustment,
                         curve_k.monotonized and curve_kp.monotonized)


def pte_operator(grid: ThresholdGrid, h: float) -> tuple[ThresholdGrid, np.ndarray]:
    """Linear map from a DTE curve on ``grid`` to the PTE curve of width ``h``.

    Returns the evaluable sub-grid and a ``(J', J)`` matrix.  ``F(y + h)`` is
    read off the grid by right-continuous step interpolation; points whose
    ``y + h`` exceeds the grid are kept (with zero there) only when the grid
    is the full observed support.
    """
    if not h > 0:
        raise NonpositiveH(f"PTE width h must be positive, got {h}")
    values = grid.values
    shifted = values + h
    pos = np.searchsorted(values, shifted + 1e-9 * np.maximum(1.0, np.abs(shifted)),
                          side="right") - 1
    beyond = shifted > values[-1] + 1e-9 * max(1.0, abs(values[-1]))
    keep = ~beyond | grid.covers_support
    rows = np.flatnonzero(keep)
    if rows.size == 0:
        raise NonpositiveH(f"no grid point y has y + {h} inside the grid")
    L = np.zeros((rows.size, values.size))
    for r, j in enumerate(rows):
        L[r, j] -= 1.0
        if not beyond[j]:
            L[r, pos[j]] += 1.0
    sub = ThresholdGrid(values[rows].copy(), grid.kind)
    return sub, L


def pte(curve_k: CurveEstimate, curve_kp: CurveEstimate, h: float) -> CurveEstimate:
    """Effect on ``Pr{y < Y <= y + h}`` at each evaluable grid point ``y``."""
    _check_pair(curve_k, curve_kp)
    sub, L = pte_operator(curve_k.grid, h)
    values = L @ (curve_k.values - curve_kp.values)
    return CurveEstimate(sub, values, "effect", f"{curve_k.label}-{curve_kp.label}",
                         curve_k.adjustment, curve_k.monotonized and curve_kp.monotonized,
                         h=float(h))


def quantile_from_cdf(curve: CurveEstimate, u) -> np.ndarray:
    """Generalized inverse ``inf{y_j : F(y_j) >= u}``; NaN where the curve never reaches ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise UNotInOpenInterval(f"quantile levels must lie in (0, 1): {u}")
    F = curve.values
    if np.any(np.diff(F) < 0):
        raise DataError("quantile inversion needs a monotone CDF; call rearrange() first")
    idx = np.searchsorted(F, u, side="left")
    out = np.full(u.shape, np.nan)
    ok = idx < F.size
    out[ok] = curve.grid.values[idx[ok]]
    return out


def qte(curve_k: CurveEstimate, curve_kp: CurveEstimate, u) -> np.ndarray:
    _check_pair(curve_k, curve_kp)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise UNotInOpenInterval(f"quantile levels must lie in (0, 1): {u}")
    if curve_k.grid.kind == "discrete-support":
        warnings.warn("quantile effects assume a continuous outcome; the grid is a "
                      "discrete support, consider DTE/PTE instead",
                      ContinuousOutcomeAdvisory, stacklevel=2)
    return quantile_from_cdf(curve_k, u) - quantile_from_cdf(curve_kp, u)


def ate(data: Dataset, k: int, kp: int) -> float:
    """Difference in arm means of the outcome (unadjusted)."""
    out = []
    for arm in (k, kp):
        mask = data.arm_mask(arm)
        if not mask.any():
            raise EmptyArm(arm)
        out.append(data.y[mask].mean())
    return float(out[0] - out[1])


def rearrange(curve: CurveEstimate) -> CurveEstimate:
    """Sort CDF values into non-decreasing order, then clamp to [0, 1]."""
    if curve.kind != "cdf":
        raise DataError("rearrangement applies to CDF curves only")
    values = np.clip(np.sort(curve.values, kind="stable"), 0.0, 1.0)
    return replace(curve, values=values, monotonized=True)


def rearrange_rows(G: np.ndarray) -> np.ndarray:
    """Row-wise rearrangement of a matrix of conditional CDFs."""
    return np.clip(np.sort(G, axis=1), 0.0, 1.0)
