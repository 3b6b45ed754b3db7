"""Monte Carlo designs DGP1-DGP4, oracle truths and replication studies.

All four designs share ``X1 ~ U(0.5, 1.5)``, ``X2 ~ N(0, 1)`` and
``W ~ Bernoulli(pi1)``.  DGP1/2 draw ``Y = X1 + (X1 + X2) W + |X1 + X2| U``
with ``U`` standard normal or chi-square(3); DGP3/4 draw counts with mean
``exp(W + X1 + X2 / 2)``, Poisson or negative binomial with dispersion 5.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .bootstrap import BootstrapConfig, EffectRequest, infer_effects
from .core import Dataset, ThresholdGrid, TransformSpec, build_design_matrix, empirical_quantile, validate_dataset
from .drfit import fit_all
from .errors import ConfigError, DTAError
from .estimators import CurveEstimate

DGP_IDS = ("dgp1", "dgp2", "dgp3", "dgp4")
NB_DISPERSION = 5.0
ESTIMATORS = ("simple", "ols", "logit")
DECILES = tuple(round(0.1 * q, 1) for q in range(1, 10))
COUNT_THRESHOLDS = (1.0, 2.0, 3.0, 4.0, 5.0)
STUDY_COLUMNS = ("dgp", "pi1", "n", "estimator", "y", "bias", "rmse", "ci_length",
                 "coverage", "R")


@dataclass(frozen=True)
class DgpSpec:
    id: str = "dgp1"
    pi1: float = 0.5
    n: int = 500
    seed: int = 0
    # "noise" hands the estimators covariates independent of everything else
    covariates: str = "informative"

    def __post_init__(self):
        ident = self.id
        if isinstance(ident, (int, np.integer)) or str(ident).isdigit():
            ident = f"dgp{int(ident)}"
        object.__setattr__(self, "id", str(ident).lower())
        if self.id not in DGP_IDS:
            raise ConfigError(f"unknown design {self.id!r}; expected one of {DGP_IDS}")
        if not 0.0 < self.pi1 < 1.0:
            raise ConfigError(f"pi1 must lie in (0, 1), got {self.pi1}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.covariates not in ("informative", "noise"):
            raise ConfigError("covariates must be 'informative' or 'noise'")

    @property
    def discrete(self) -> bool:
        return self.id in ("dgp3", "dgp4")


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(key)).generate_state(1, np.uint64)[0])


def _draw(spec: DgpSpec, n: int, rng: np.random.Generator):
    x1 = rng.uniform(0.5, 1.5, n)
    x2 = rng.standard_normal(n)
    w = (rng.random(n) < spec.pi1).astype(np.int64)
    if spec.id == "dgp1":
        u = rng.standard_normal(n)
    elif spec.id == "dgp2":
        u = rng.chisquare(3, n)
    else:
        # uniforms feed the count quantile functions, coupling both arms
        u = rng.random(n)
        u[u == 0.0] = np.finfo(float).tiny
    return x1, x2, w, u


def potential_outcome(spec: DgpSpec, x1, x2, u, arm: int) -> np.ndarray:
    if not spec.discrete:
        s = x1 + x2
        return x1 + s * arm + np.abs(s) * u
    mu = np.exp(arm + x1 + x2 / 2.0)
    if spec.id == "dgp3":
        return stats.poisson.ppf(u, mu)
    r = NB_DISPERSION
    return stats.nbinom.ppf(u, r, r / (r + mu))


def sample_dgp(spec: DgpSpec, rng: np.random.Generator | None = None) -> Dataset:
    rng = rng if rng is not None else _stream(spec.seed)
    x1, x2, w, u = _draw(spec, spec.n, rng)
    y0 = potential_outcome(spec, x1, x2, u, 0)
    y1 = potential_outcome(spec, x1, x2, u, 1)
    y = np.where(w == 1, y1, y0)
    if spec.covariates == "noise":
        x = np.column_stack([rng.uniform(0.5, 1.5, spec.n), rng.standard_normal(spec.n)])
    else:
        x = np.column_stack([x1, x2])
    return validate_dataset(y, w, x, n_arms=2, covariate_names=("x1", "x2"))


@dataclass(frozen=True, eq=False)
class OracleTruth:
    spec: DgpSpec
    grid: ThresholdGrid
    cdf0: CurveEstimate
    cdf1: CurveEstimate
    size: int
    # sorted potential outcomes, kept for off-grid CDF and quantile evaluation
    y0: np.ndarray = field(repr=False)
    y1: np.ndarray = field(repr=False)
    y_pooled: np.ndarray = field(repr=False)

    @property
    def dte(self) -> np.ndarray:
        return self.cdf1.values - self.cdf0.values

    def cdf(self, arm: int, y) -> np.ndarray:
        ys = self.y1 if arm == 1 else self.y0
        return np.searchsorted(ys, np.asarray(y, dtype=float), side="right") / ys.size

    def pte(self, h: float) -> np.ndarray:
        y = self.grid.values
        return ((self.cdf(1, y + h) - self.cdf(0, y + h))
                - (self.cdf(1, y) - self.cdf(0, y)))

    def quantile(self, arm: int, u) -> np.ndarray:
        return empirical_quantile(self.y1 if arm == 1 else self.y0, u)

    def qte(self, u) -> np.ndarray:
        return self.quantile(1, u) - self.quantile(0, u)

    def deciles(self) -> np.ndarray:
        return empirical_quantile(self.y_pooled, DECILES)


def oracle_truth(spec: DgpSpec, thresholds: Sequence[float] | None = None,
                 size: int = 1_000_000, seed: int | None = None) -> OracleTruth:
    """Both potential outcomes on common draws for ``size`` units.

    Default thresholds are the pooled-outcome deciles for continuous designs
    and ``{1, ..., 5}`` for count designs.
    """
    seed = _derived_seed(spec.seed, 2**31) if seed is None else seed
    rng = _stream(seed)
    x1, x2, w, u = _draw(spec, size, rng)
    y0 = np.sort(potential_outcome(spec, x1, x2, u, 0))
    y1_raw = potential_outcome(spec, x1, x2, u, 1)
    pooled = np.sort(np.where(w == 1, y1_raw, potential_outcome(spec, x1, x2, u, 0)))
    y1 = np.sort(y1_raw)
    if thresholds is None:
        thresholds = (COUNT_THRESHOLDS if spec.discrete
                      else np.unique(empirical_quantile(pooled, DECILES)))
    grid = ThresholdGrid(np.asarray(thresholds, dtype=float), "user-supplied")
    vals = grid.values
    cdf0 = np.searchsorted(y0, vals, side="right") / size
    cdf1 = np.searchsorted(y1, vals, side="right") / size
    return OracleTruth(
        spec, grid,
        CurveEstimate(grid, cdf0, "cdf", "arm0", "simple"),
        CurveEstimate(grid, cdf1, "cdf", "arm1", "simple"),
        size, y0, y1, pooled)


@dataclass(frozen=True, eq=False)
class StudyResult:
    """Replication draws and their summary metrics.

    Arrays ``estimates``, ``se``, ``ci_lo`` and ``ci_hi`` have shape
    ``(R, E, J)`` over valid replications, estimators and thresholds.
    """

    spec: DgpSpec
    estimators: tuple[str, ...]
    thresholds: np.ndarray
    truth: np.ndarray
    estimates: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    failures: int
    runtime: float
    oracle_se: np.ndarray | None = None

    @property
    def R(self) -> int:
        return self.estimates.shape[0]

    def index(self, estimator: str) -> int:
        return self.estimators.index(estimator)

    @property
    def bias(self) -> np.ndarray:
        return self.estimates.mean(axis=0) - self.truth

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(np.mean((self.estimates - self.truth) ** 2, axis=0))

    @property
    def ci_length(self) -> np.ndarray:
        return np.mean(self.ci_hi - self.ci_lo, axis=0)

    @property
    def coverage(self) -> np.ndarray:
        hit = (self.ci_lo <= self.truth) & (self.truth <= self.ci_hi)
        return hit.mean(axis=0)

    @property
    def bias_mc_se(self) -> np.ndarray:
        """Standard error of the bias estimate, including the oracle's own noise."""
        var = self.estimates.var(axis=0, ddof=1) / max(self.R, 1)
        if self.oracle_se is not None:
            var = var + self.oracle_se ** 2
        return np.sqrt(var)

    def rows(self) -> list[dict]:
        out = []
        bias, rmse, length, cov = self.bias, self.rmse, self.ci_length, self.coverage
        for e, name in enumerate(self.estimators):
            for j, y in enumerate(self.thresholds):
                out.append({
                    "dgp": self.spec.id, "pi1": self.spec.pi1, "n": self.spec.n,
                    "estimator": name, "y": float(y), "bias": float(bias[e, j]),
                    "rmse": float(rmse[e, j]), "ci_length": float(length[e, j]),
                    "coverage": float(cov[e, j]), "R": self.R,
                })
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(STUDY_COLUMNS)
            for row in self.rows():
                writer.writerow([_fmt(row[c]) for c in STUDY_COLUMNS])


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _estimator_inputs(data: Dataset, grid: ThresholdGrid, names: Sequence[str],
                      transform: TransformSpec, threads: int | None) -> tuple[dict, bool]:
    specs, failed = {}, False
    design = None
    for name in names:
        if name == "simple":
            specs[name] = None
            continue
        if name not in ("ols", "logit"):
            raise ConfigError(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")
        if design is None:
            design = build_design_matrix(data, transform)
        fit = fit_all(data, design, grid, "linear" if name == "ols" else "logit",
                      threads=threads)
        failed |= bool(fit.diagnostics.failed.any())
        specs[name] = (fit, design)
    return specs, failed


def run_study(spec: DgpSpec, reps: int, estimators: Sequence[str] = ESTIMATORS,
              config: BootstrapConfig | None = None, thresholds: Sequence[float] | None = None,
              oracle: OracleTruth | None = None, oracle_size: int = 1_000_000,
              transform: TransformSpec | None = None, threads: int | None = None,
              progress: Callable[[int], None] | None = None) -> StudyResult:
    """Replicate the design ``reps`` times and score each estimator against the oracle.

    Replication ``r`` draws its data from stream ``(spec.seed, r)`` and its
    bootstrap weights from a seed derived from the same pair, so any single
    replication can be regenerated in isolation.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    config = config or BootstrapConfig(replicates=200)
    transform = transform or TransformSpec()
    estimators = tuple(estimators)
    start = time.perf_counter()
    if oracle is None:
        oracle = oracle_truth(spec, thresholds, size=oracle_size)
    elif thresholds is not None and not np.array_equal(oracle.grid.values, np.asarray(thresholds, float)):
        raise ConfigError("thresholds differ from the supplied oracle's grid")
    grid = oracle.grid
    J, E = len(grid), len(estimators)
    request = [EffectRequest((1, 0))]
    est, se, lo, hi = (np.empty((reps, E, J)) for _ in range(4))
    ok = np.zeros(reps, dtype=bool)
    for r in range(reps):
        try:
            data = sample_dgp(spec, _stream(spec.seed, r))
            specs, failed = _estimator_inputs(data, grid, estimators, transform, threads)
        except DTAError:
            failed = True
        if failed:
            continue
        cfg = replace(config, seed=_derived_seed(spec.seed, r, 1), keep_replicates=False)
        results = infer_effects(data, grid, request, cfg, specs, threads)
        for e, name in enumerate(estimators):
            res = results[name, request[0].name]
            est[r, e], se[r, e] = res.point.values, res.se
            lo[r, e], hi[r, e] = res.ci_lo, res.ci_hi
        ok[r] = True
        if progress is not None:
            progress(r)
    p1, p0 = oracle.cdf1.values, oracle.cdf0.values
    # binomial noise of a difference of two coupled empirical CDFs, bounded above
    oracle_se = np.sqrt((p1 * (1 - p1) + p0 * (1 - p0)) / oracle.size) * math.sqrt(2.0)
    return StudyResult(spec, estimators, grid.values.copy(), oracle.dte.copy(),
                       est[ok], se[ok], lo[ok], hi[ok], int((~ok).sum()),
                       time.perf_counter() - start, oracle_se)


@dataclass(frozen=True, eq=False)
class VarianceComparison:
    thresholds: np.ndarray
    var_reference: np.ndarray
    var_candidate: np.ndarray
    difference: np.ndarray  # reference minus candidate
    mc_se: np.ndarray

    @property
    def dominated(self) -> np.ndarray:
        """Candidate variance at most reference plus two Monte Carlo SEs."""
        return self.difference >= -2.0 * self.mc_se

    @property
    def equal(self) -> np.ndarray:
        return np.abs(self.difference) <= 2.0 * self.mc_se


def compare_variance(result: StudyResult, reference: str = "simple",
                     candidate: str = "logit") -> VarianceComparison:
    """Monte Carlo ``Var(reference) - Var(candidate)`` per threshold with paired SEs."""
    if result.R < 100:
        raise ConfigError("variance comparison needs at least 100 replications")
    a = result.estimates[:, result.index(reference)]
    b = result.estimates[:, result.index(candidate)]
    R = a.shape[0]
    q = (a - a.mean(axis=0)) ** 2 - (b - b.mean(axis=0)) ** 2
    diff = q.mean(axis=0) * R / (R - 1)
    mc_se = q.std(axis=0, ddof=1) / math.sqrt(R)
    return VarianceComparison(result.thresholds, a.var(axis=0, ddof=1),
                              b.var(axis=0, ddof=1), diff, mc_se)
