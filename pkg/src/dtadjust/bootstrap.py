"""Exchangeable-bootstrap inference for DTE and PTE curves.

The conditional CDF fit is held at its original-sample value; only the
averages over units are reweighted.  Replicate ``b`` draws its weights from
its own stream ``SeedSequence(seed, spawn_key=(b,))``, so results depend on
``(seed, B, scheme)`` alone and not on chunking or thread count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from . import kernels
from ._accel import numba_threads
from .core import Dataset, DesignMatrix, ThresholdGrid
from .drfit import DrFit, balance_residual, indicator_matrix, predict_cdf
from .errors import ConfigError, DTAWarning, GridMismatch, TooFewReplicates
from .estimators import CurveEstimate, adjusted_cdf, pte_operator, simple_cdf

SCHEMES = ("multinomial", "bayesian")
CI_KINDS = ("normal-se", "percentile")
FORMULAS = ("augmented", "plugin")
_ALIASES = {"normal": "normal-se", "plug-in": "plugin"}

BALANCE_FORMULA_TOL = 1e-6


class FormulaUnavailable(DTAWarning):
    pass


class DegenerateSE(DTAWarning):
    pass


@dataclass(frozen=True)
class BootstrapConfig:
    scheme: str = "multinomial"
    replicates: int = 1000
    seed: int = 0
    ci_level: float = 0.95
    ci_kind: str = "normal-se"
    replicate_formula: str = "augmented"
    # divide by weighted counts instead of the original n_k and n
    normalized: bool = False
    keep_replicates: bool = True
    chunk: int = 64

    def __post_init__(self):
        object.__setattr__(self, "ci_kind", _ALIASES.get(self.ci_kind, self.ci_kind))
        object.__setattr__(self, "replicate_formula",
                           _ALIASES.get(self.replicate_formula, self.replicate_formula))
        if self.scheme not in SCHEMES:
            raise ConfigError(f"bootstrap scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.ci_kind not in CI_KINDS:
            raise ConfigError(f"ci kind must be one of {CI_KINDS}, got {self.ci_kind!r}")
        if self.replicate_formula not in FORMULAS:
            raise ConfigError(f"replicate formula must be one of {FORMULAS}")
        if int(self.replicates) < 2:
            raise ConfigError("bootstrap needs at least 2 replicates")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if self.chunk < 1:
            raise ConfigError("chunk must be positive")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme, "replicates": self.replicates, "seed": self.seed,
            "ci_level": self.ci_level, "ci_kind": self.ci_kind,
            "replicate_formula": self.replicate_formula, "normalized": self.normalized,
        }


@dataclass(frozen=True, eq=False)
class InferenceResult:
    point: CurveEstimate
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    config: BootstrapConfig
    replicate_curves: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class UniformBand:
    lo: np.ndarray
    hi: np.ndarray
    half_width: np.ndarray
    critical_value: float
    excluded: np.ndarray
    experimental: bool = True


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(b),)))


def gen_weights(scheme: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Nonnegative unit weights: multinomial counts (sum exactly ``n``) or Exp(1) draws."""
    if n < 1:
        raise ConfigError("need n >= 1 to draw bootstrap weights")
    if scheme == "multinomial":
        return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
    if scheme == "bayesian":
        return rng.standard_exponential(n)
    raise ConfigError(f"bootstrap scheme must be one of {SCHEMES}, got {scheme!r}")


def weight_matrix(scheme: str, n: int, seed: int, start: int, stop: int) -> np.ndarray:
    S = np.empty((stop - start, n))
    for r, b in enumerate(range(start, stop)):
        S[r] = gen_weights(scheme, n, replicate_rng(seed, b))
    return S


# ---------------------------------------------------------------------------
# per-arm replicate terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArmTerms:
    """What a replicate needs for one arm.

    ``resid`` holds ``1{Y_i <= y_j} - G(y_j | X_i)`` for the arm's own rows,
    ``fitted`` the fitted conditional CDF for all ``n`` units.  The simple
    estimator stores the arm's empirical CDF in ``constant`` instead of a
    fitted matrix.
    """

    mask: np.ndarray
    resid: np.ndarray
    n: int
    n_k: int
    fitted: np.ndarray | None = None
    constant: np.ndarray | None = None


def arm_terms(data: Dataset, grid: ThresholdGrid, k: int, fit: DrFit | None = None,
              design: DesignMatrix | None = None) -> ArmTerms:
    mask = data.arm_mask(k)
    ind = indicator_matrix(data.y[mask], grid)
    if fit is None:
        fhat = ind.mean(axis=0)
        return ArmTerms(mask, ind - fhat, data.n, int(mask.sum()), constant=fhat)
    G = predict_cdf(fit, design, k)
    return ArmTerms(mask, ind - G[mask], data.n, int(mask.sum()), fitted=G)


def _arm_replicates(terms: ArmTerms, S: np.ndarray, formula: str, normalized: bool):
    total = S.sum(axis=1)
    if terms.fitted is None:
        C = total[:, None] * terms.constant[None, :]
    else:
        C = kernels.weighted_sums(S, terms.fitted)
    C = C / (total[:, None] if normalized else terms.n)
    if formula == "plugin":
        return C
    Sk = S[:, terms.mask]
    A = kernels.weighted_sums(Sk, terms.resid)
    A = A / (Sk.sum(axis=1)[:, None] if normalized else terms.n_k)
    return A + C


def bootstrap_arm_curves(terms: Sequence[ArmTerms], config: BootstrapConfig,
                         threads: int | None = None) -> list[np.ndarray]:
    """Replicate arm-level CDF curves (each ``B x J``), all sharing one weight draw per replicate."""
    if not terms:
        return []
    n = terms[0].n
    B = int(config.replicates)
    out = [np.empty((B, t.resid.shape[1])) for t in terms]
    with numba_threads(threads):
        for start in range(0, B, config.chunk):
            stop = min(B, start + config.chunk)
            S = weight_matrix(config.scheme, n, config.seed, start, stop)
            for t, dest in zip(terms, out):
                dest[start:stop] = _arm_replicates(t, S, config.replicate_formula,
                                                   config.normalized)
    return out


def _effect_matrix(grid: ThresholdGrid, effect: str, h: float | None):
    if effect == "dte":
        return grid, None
    if effect == "pte":
        return pte_operator(grid, h)
    raise ConfigError(f"effect must be 'dte' or 'pte', got {effect!r}")


def replicate_curves(fit: DrFit | None, data: Dataset, design: DesignMatrix | None,
                     arms: tuple[int, int], effect: str, h: float | None,
                     weights: np.ndarray, formula: str = "augmented",
                     normalized: bool = False, grid: ThresholdGrid | None = None) -> np.ndarray:
    """One replicate effect curve for the weight vector ``weights``.

    ``fit=None`` gives the simple (unadjusted) estimator on ``grid``.
    """
    grid = fit.grid if fit is not None else grid
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (data.n,):
        raise ConfigError(f"weights must have length n={data.n}")
    formula = _ALIASES.get(formula, formula)
    if fit is not None and formula == "augmented":
        formula = _checked_formula(fit, data, design, formula)
    S = weights[None, :]
    curves = [_arm_replicates(arm_terms(data, grid, k, fit, design), S, formula, normalized)[0]
              for k in arms]
    diff = curves[0] - curves[1]
    _, L = _effect_matrix(grid, effect, h)
    return diff if L is None else L @ diff


def _checked_formula(fit, data, design, formula):
    if formula != "augmented":
        return formula
    worst = float(np.max(np.abs(balance_residual(fit, data, design)), initial=0.0))
    if worst > BALANCE_FORMULA_TOL:
        warnings.warn(f"balance residual {worst:.2e} too large for the augmented replicate "
                      f"formula; using the plug-in formula", FormulaUnavailable, stacklevel=3)
        return "plugin"
    return formula


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def _replicate_se(replicates: np.ndarray) -> np.ndarray:
    se = replicates.std(axis=0, ddof=1)
    # constant columns get an exact zero rather than rounding noise from the mean
    se[np.ptp(replicates, axis=0) == 0.0] = 0.0
    return se


def infer(point: CurveEstimate, replicates: np.ndarray, config: BootstrapConfig,
          diagnostics: dict | None = None) -> InferenceResult:
    """Pointwise standard errors and confidence intervals from replicate curves."""
    replicates = np.asarray(replicates, dtype=np.float64)
    if replicates.ndim != 2 or replicates.shape[0] < 2:
        raise TooFewReplicates("need at least 2 replicate curves")
    if replicates.shape[1] != point.values.size:
        raise GridMismatch("replicate curves do not match the point estimate's grid")
    se = _replicate_se(replicates)
    alpha = 1.0 - config.ci_level
    if config.ci_kind == "normal-se":
        z = stats.norm.ppf(1.0 - alpha / 2.0)
        lo, hi = point.values - z * se, point.values + z * se
    else:
        lo, hi = np.quantile(replicates, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return InferenceResult(point, se, lo, hi, config,
                           replicates if config.keep_replicates else None,
                           dict(diagnostics or {}))


def uniform_band(point: CurveEstimate, replicates: np.ndarray, level: float = 0.95) -> UniformBand:
    """Sup-t band over the grid (experimental; reported intervals are pointwise)."""
    replicates = np.asarray(replicates, dtype=np.float64)
    if replicates.shape[0] < 100:
        raise TooFewReplicates("a uniform band needs at least 100 replicates")
    se = _replicate_se(replicates)
    zero = se == 0.0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} grid points have zero bootstrap SE and are "
                      f"excluded from the band", DegenerateSE, stacklevel=2)
    if zero.all():
        crit = 0.0
    else:
        t = np.abs(replicates[:, ~zero] - point.values[~zero]) / se[~zero]
        crit = float(np.quantile(t.max(axis=1), level))
    half = crit * se
    return UniformBand(point.values - half, point.values + half, half, crit, zero)


# ---------------------------------------------------------------------------
# effect-level driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EffectRequest:
    arms: tuple[int, int]
    effect: str = "dte"
    h: float | None = None

    @property
    def name(self) -> str:
        k, kp = self.arms
        if self.effect == "pte":
            return f"pte_{k}_{kp}_h{self.h:g}"
        return f"dte_{k}_{kp}"


def infer_effects(data: Dataset, grid: ThresholdGrid, requests: Sequence[EffectRequest],
                  config: BootstrapConfig, estimators: dict, threads: int | None = None):
    """Point estimates plus bootstrap inference for every (estimator, request).

    ``estimators`` maps a name to ``None`` (simple estimator) or a
    ``(DrFit, DesignMatrix)`` pair.  All estimators share the same weight
    draws.  Returns ``{(estimator, request.name): InferenceResult}``.
    """
    arms = sorted({k for r in requests for k in r.arms})
    terms, curves, keys, formulas = [], {}, [], {}
    for name, spec in estimators.items():
        fit, design = (None, None) if spec is None else spec
        formula = config.replicate_formula
        if fit is not None:
            formula = _checked_formula(fit, data, design, formula)
        formulas[name] = formula
        for k in arms:
            if fit is None:
                curves[name, k] = simple_cdf(data, grid, k)
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    curves[name, k] = adjusted_cdf(fit, data, design, k)
            terms.append(arm_terms(data, grid, k, fit, design))
            keys.append((name, k))

    groups: dict[str, list[int]] = {}
    for idx, (name, _) in enumerate(keys):
        groups.setdefault(formulas[name], []).append(idx)
    reps: dict = {}
    for formula, idxs in groups.items():
        cfg = config if formula == config.replicate_formula else _with_formula(config, formula)
        for idx, arr in zip(idxs, bootstrap_arm_curves([terms[i] for i in idxs], cfg, threads)):
            reps[keys[idx]] = arr

    results = {}
    for name in estimators:
        for req in requests:
            k, kp = req.arms
            sub, L = _effect_matrix(grid, req.effect, req.h)
            diff_point = curves[name, k].values - curves[name, kp].values
            diff_reps = reps[name, k] - reps[name, kp]
            if L is not None:
                diff_point, diff_reps = L @ diff_point, diff_reps @ L.T
            point = CurveEstimate(sub, diff_point, "effect", f"arm{k}-arm{kp}",
                                  "simple" if estimators[name] is None else "regression-adjusted",
                                  h=req.h)
            results[name, req.name] = infer(point, diff_reps, config,
                                            {"replicate_formula": formulas[name]})
    return results


def _with_formula(config: BootstrapConfig, formula: str) -> BootstrapConfig:
    return replace(config, replicate_formula=formula)
