"""Fast invariant checks run by ``dtadjust selftest``."""

from __future__ import annotations

import warnings

import numpy as np
from scipy import optimize

from . import kernels
from ._accel import NUMBA_AVAILABLE, backend_as
from .bootstrap import BootstrapConfig, EffectRequest, infer_effects, replicate_curves
from .core import GridSpec, TransformSpec, build_design_matrix, make_threshold_grid, validate_dataset
from .drfit import balance_residual, fit_all, fit_threshold
from .estimators import adjusted_cdf, augmented_cdf, rearrange, simple_cdf


def _toy(seed: int, n: int = 400):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    w = rng.integers(0, 2, n)
    w[:2] = (0, 1)
    y = x[:, 0] + 0.5 * w + rng.normal(size=n)
    return validate_dataset(y, w, x)


def check_score():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        X = np.column_stack([np.ones(15), rng.normal(size=(15, 2))])
        z = (rng.random(15) < 0.5).astype(float)
        beta = rng.normal(size=3)
        g = kernels.logit_score(X, z, beta)
        fd = np.array([(kernels.logit_objective(X, z, beta + 1e-6 * e)
                        - kernels.logit_objective(X, z, beta - 1e-6 * e)) / 2e-6
                       for e in np.eye(3)])
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-12)))
    return worst <= 1e-5, f"max relative score error {worst:.2e}"


def check_optimum():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    z = (X[:, 1] + rng.normal(size=30) > 0).astype(float)
    beta, diag = fit_threshold(X, z, "logit")
    ref = optimize.minimize(lambda b: -kernels.logit_objective(X, z, b), np.zeros(2),
                            jac=lambda b: -kernels.logit_score(X, z, b), method="BFGS",
                            options={"gtol": 1e-12}).x
    err = float(np.max(np.abs(beta - ref)))
    return diag.converged and err < 1e-5, f"Newton vs BFGS max diff {err:.2e}"


def check_balance():
    data = _toy(3)
    design = build_design_matrix(data)
    grid = make_threshold_grid(data, GridSpec(kind="quantile-grid", n_points=25))
    logit = np.max(np.abs(balance_residual(fit_all(data, design, grid, "logit"), data, design)))
    linear = np.max(np.abs(balance_residual(fit_all(data, design, grid, "linear"), data, design)))
    return logit <= 1e-8 and linear <= 1e-12, f"logit {logit:.1e}, linear {linear:.1e}"


def check_decomposition():
    data = _toy(4)
    design = build_design_matrix(data)
    grid = make_threshold_grid(data, GridSpec(kind="quantile-grid", n_points=25))
    fit = fit_all(data, design, grid, "logit")
    err = max(float(np.max(np.abs(adjusted_cdf(fit, data, design, k).values
                                  - augmented_cdf(fit, data, design, k))))
              for k in range(2))
    return err <= 1e-10, f"adjusted vs augmented {err:.1e}"


def check_intercept_only():
    data = _toy(5)
    design = build_design_matrix(data, TransformSpec.intercept_only())
    grid = make_threshold_grid(data, GridSpec(kind="quantile-grid", n_points=20))
    fit = fit_all(data, design, grid, "logit")
    err = max(float(np.max(np.abs(adjusted_cdf(fit, data, design, k).values
                                  - simple_cdf(data, grid, k).values))) for k in range(2))
    return err <= 1e-12, f"intercept-only adjusted vs simple {err:.1e}"


def check_bootstrap():
    data = _toy(6, n=300)
    design = build_design_matrix(data)
    grid = make_threshold_grid(data, GridSpec(kind="quantile-grid", n_points=15))
    fit = fit_all(data, design, grid, "logit")
    ones = replicate_curves(fit, data, design, (1, 0), "dte", None, np.ones(data.n))
    point = adjusted_cdf(fit, data, design, 1).values - adjusted_cdf(fit, data, design, 0).values
    err = float(np.max(np.abs(ones - point)))
    cfg = BootstrapConfig(replicates=50, seed=11)
    req = [EffectRequest((1, 0))]
    a = infer_effects(data, grid, req, cfg, {"adj": (fit, design)})["adj", "dte_1_0"]
    b = infer_effects(data, grid, req, cfg, {"adj": (fit, design)})["adj", "dte_1_0"]
    same = bool(np.array_equal(a.replicate_curves, b.replicate_curves))
    return err <= 1e-9 and same, f"unit-weight replicate error {err:.1e}, repeatable={same}"


def check_rearrange():
    data = _toy(7)
    grid = make_threshold_grid(data, GridSpec(kind="quantile-grid", n_points=10))
    c = simple_cdf(data, grid, 0)
    once = rearrange(c)
    ok = np.array_equal(once.values, rearrange(once).values) and np.all(np.diff(once.values) >= 0)
    return bool(ok), "rearrangement idempotent and monotone"


def check_backends():
    if not NUMBA_AVAILABLE:
        return True, "numba unavailable, skipped"
    rng = np.random.default_rng(8)
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
    Zt = (rng.normal(size=(5, 200)) + X[:, 1] > 0).astype(float)
    opts = dict(tol=1e-10, max_iter=100, max_halving=50, ridge=1e-8, cond_max=1e12)
    with backend_as("numba"):
        b1, _ = kernels.fit_logit_batch(X, Zt, **opts)
    with backend_as("numpy"):
        b2, _ = kernels.fit_logit_batch(X, Zt, **opts)
    err = float(np.max(np.abs(b1 - b2)))
    return err <= 1e-8, f"numba vs numpy coefficients {err:.1e}"


CHECKS = (check_score, check_optimum, check_balance, check_decomposition,
          check_intercept_only, check_bootstrap, check_rearrange, check_backends)


def run_selftest(echo=print) -> bool:
    ok_all = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for check in CHECKS:
            try:
                ok, detail = check()
            except Exception as exc:  # report, keep going
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            ok_all &= bool(ok)
            echo(f"[{'PASS' if ok else 'FAIL'}] {check.__name__[6:]}: {detail}")
    return ok_all
