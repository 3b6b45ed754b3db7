import warnings
from dataclasses import replace

import numpy as np
import pytest

from dtadjust import _accel
from dtadjust.bootstrap import (
    BootstrapConfig,
    EffectRequest,
    FormulaUnavailable,
    arm_terms,
    bootstrap_arm_curves,
    gen_weights,
    infer,
    infer_effects,
    replicate_curves,
    uniform_band,
)
from dtadjust.core import GridSpec, ThresholdGrid, TransformSpec, build_design_matrix, make_threshold_grid, validate_dataset
from dtadjust.drfit import SolverOptions, fit_all, indicator_matrix
from dtadjust.errors import ConfigError, TooFewReplicates
from dtadjust.estimators import CurveEstimate, adjusted_cdf, augmented_cdf, pte
from dtadjust.simulation import DgpSpec, oracle_truth, sample_dgp

from conftest import make_toy


@pytest.fixture
def fitted(toy):
    D = build_design_matrix(toy)
    g = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=12))
    return toy, D, g, fit_all(toy, D, g)


def test_multinomial_sums_to_n():
    rng = np.random.default_rng(0)
    for n in (1, 2, 17, 1000):
        s = gen_weights("multinomial", n, rng)
        assert s.sum() == n and np.all(s >= 0)
    assert list(gen_weights("multinomial", 1, rng)) == [1.0]


def test_bayesian_weights_concentrate():
    rng = np.random.default_rng(1)
    means = np.array([gen_weights("bayesian", 100_000, rng).mean() for _ in range(200)])
    assert np.mean((means >= 0.99) & (means <= 1.01)) >= 0.99
    s = gen_weights("bayesian", 100_000, rng)
    assert s.min() >= 0 and abs(s.var() - 1.0) < 0.02


def test_config_validation():
    with pytest.raises(ConfigError):
        BootstrapConfig(replicates=1)
    with pytest.raises(ConfigError):
        BootstrapConfig(ci_level=1.0)
    with pytest.raises(ConfigError):
        BootstrapConfig(scheme="wild")
    assert BootstrapConfig(ci_kind="normal").ci_kind == "normal-se"


def test_unit_weights_augmented_recover_point(fitted):
    data, D, g, fit = fitted
    rep = replicate_curves(fit, data, D, (1, 0), "dte", None, np.ones(data.n))
    aug = augmented_cdf(fit, data, D, 1) - augmented_cdf(fit, data, D, 0)
    assert np.max(np.abs(rep - aug)) <= 1e-14
    adj = adjusted_cdf(fit, data, D, 1).values - adjusted_cdf(fit, data, D, 0).values
    assert np.max(np.abs(rep - adj)) <= 1e-9


def test_unit_weights_plugin_is_adjusted(fitted):
    data, D, g, fit = fitted
    rep = replicate_curves(fit, data, D, (1, 0), "dte", None, np.ones(data.n), formula="plugin")
    adj = adjusted_cdf(fit, data, D, 1).values - adjusted_cdf(fit, data, D, 0).values
    assert np.max(np.abs(rep - adj)) <= 1e-15


def test_unit_weights_formulas_agree_linear(toy):
    D = build_design_matrix(toy)
    g = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=12))
    fit = fit_all(toy, D, g, "linear")
    a = replicate_curves(fit, toy, D, (1, 0), "dte", None, np.ones(toy.n))
    b = replicate_curves(fit, toy, D, (1, 0), "dte", None, np.ones(toy.n), formula="plugin")
    assert np.max(np.abs(a - b)) <= 1e-12


def _weighted_simple(data, grid, S, k):
    m = data.arm_mask(k)
    ind = indicator_matrix(data.y[m], grid)
    return S[m] @ ind / S[m].sum()


def test_intercept_only_augmented_is_weighted_simple(toy):
    D = build_design_matrix(toy, TransformSpec.intercept_only())
    g = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=10))
    fit = fit_all(toy, D, g)
    rng = np.random.default_rng(2)
    # arbitrary weights: holds for the normalized variant
    S = gen_weights("bayesian", toy.n, rng)
    rep = replicate_curves(fit, toy, D, (1, 0), "dte", None, S, normalized=True)
    ref = _weighted_simple(toy, g, S, 1) - _weighted_simple(toy, g, S, 0)
    assert np.max(np.abs(rep - ref)) <= 1e-12
    # arm-total-preserving weights: holds for the default denominators too
    S = np.zeros(toy.n)
    for k in range(2):
        idx = np.flatnonzero(toy.arm_mask(k))
        S[idx] = np.bincount(rng.integers(0, idx.size, idx.size), minlength=idx.size)
    rep = replicate_curves(fit, toy, D, (1, 0), "dte", None, S)
    ref = _weighted_simple(toy, g, S, 1) - _weighted_simple(toy, g, S, 0)
    assert np.max(np.abs(rep - ref)) <= 1e-12


def test_simple_terms_match_intercept_only_fit(toy):
    D = build_design_matrix(toy, TransformSpec.intercept_only())
    g = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=10))
    fit = fit_all(toy, D, g)
    cfg = BootstrapConfig(replicates=30, seed=5)
    a = bootstrap_arm_curves([arm_terms(toy, g, 0)], cfg)[0]
    b = bootstrap_arm_curves([arm_terms(toy, g, 0, fit, D)], cfg)[0]
    assert np.max(np.abs(a - b)) <= 1e-12


def _point(values):
    values = np.asarray(values, dtype=float)
    return CurveEstimate(ThresholdGrid(np.arange(values.size, dtype=float), "user-supplied"),
                         values, "effect", "x", "simple")


def test_infer_identical_replicates():
    p = _point([0.1, 0.2])
    res = infer(p, np.tile([0.1, 0.2], (50, 1)), BootstrapConfig())
    assert np.all(res.se == 0) and np.array_equal(res.ci_lo, p.values) and np.array_equal(res.ci_hi, p.values)


def test_infer_two_point_variance():
    B = 40
    reps = np.repeat([[0.0], [1.0]], B // 2, axis=0)
    res = infer(_point([0.5]), reps, BootstrapConfig())
    assert res.se[0] == pytest.approx(np.sqrt(0.25 * B / (B - 1)), abs=1e-15)


def test_infer_percentile_and_errors():
    reps = np.arange(101.0)[:, None]
    res = infer(_point([50.0]), reps, BootstrapConfig(ci_kind="percentile"))
    assert res.ci_lo[0] == pytest.approx(2.5) and res.ci_hi[0] == pytest.approx(97.5)
    with pytest.raises(TooFewReplicates):
        infer(_point([0.0]), np.zeros((1, 1)), BootstrapConfig())


def test_ci_level_monotone():
    rng = np.random.default_rng(3)
    reps = rng.normal(size=(200, 4))
    p = _point(np.zeros(4))
    widths = [infer(p, reps, BootstrapConfig(ci_level=lv)).ci_hi for lv in (0.5, 0.8, 0.9, 0.95, 0.99)]
    assert all(np.all(b >= a) for a, b in zip(widths, widths[1:]))


def test_normal_ci_contains_point(fitted):
    data, D, g, fit = fitted
    res = infer_effects(data, g, [EffectRequest((1, 0))], BootstrapConfig(replicates=50, seed=1),
                        {"adj": (fit, D)})["adj", "dte_1_0"]
    assert np.all(res.ci_lo <= res.point.values) and np.all(res.point.values <= res.ci_hi)
    assert np.all(res.se >= 0)


def test_replicates_deterministic_across_chunking(fitted):
    data, D, g, fit = fitted
    req = [EffectRequest((1, 0)), EffectRequest((1, 0), "pte", 0.5)]
    base = BootstrapConfig(replicates=70, seed=9)
    r1 = infer_effects(data, g, req, base, {"adj": (fit, D), "simple": None})
    r2 = infer_effects(data, g, req, replace(base, chunk=7), {"adj": (fit, D), "simple": None})
    for key in r1:
        assert r1[key].replicate_curves.tobytes() == r2[key].replicate_curves.tobytes()


@pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")
def test_backends_agree_on_replicates(fitted):
    data, D, g, fit = fitted
    cfg = BootstrapConfig(replicates=40, seed=4)
    with _accel.backend_as("numba"):
        a = infer_effects(data, g, [EffectRequest((1, 0))], cfg, {"adj": (fit, D)})["adj", "dte_1_0"]
    with _accel.backend_as("numpy"):
        b = infer_effects(data, g, [EffectRequest((1, 0))], cfg, {"adj": (fit, D)})["adj", "dte_1_0"]
    assert np.allclose(a.replicate_curves, b.replicate_curves, atol=1e-13)


def test_multinomial_replicates_consistent_with_sum(fitted):
    data, D, g, fit = fitted
    cfg = BootstrapConfig(replicates=20, seed=3)
    terms = arm_terms(data, g, 0, fit, D)
    plug = bootstrap_arm_curves([terms], replace(cfg, replicate_formula="plugin"))[0]
    # the plug-in replicate of a constant-one column would be sum(S) / n = 1
    ones = replace(terms, fitted=np.ones_like(terms.fitted))
    assert np.allclose(bootstrap_arm_curves([ones], replace(cfg, replicate_formula="plugin"))[0], 1.0,
                       atol=1e-14)
    assert plug.shape == (20, len(g))


def test_pte_replicates_follow_functional(fitted):
    data, D, g, fit = fitted
    cfg = BootstrapConfig(replicates=25, seed=8)
    req = [EffectRequest((1, 0)), EffectRequest((1, 0), "pte", 0.5)]
    res = infer_effects(data, g, req, cfg, {"adj": (fit, D)})
    d = res["adj", "dte_1_0"]
    p = res["adj", "pte_1_0_h0.5"]
    for b in range(3):
        rc = CurveEstimate(g, d.replicate_curves[b], "cdf", "r", "simple")
        zero = CurveEstimate(g, np.zeros(len(g)), "cdf", "z", "simple")
        assert np.allclose(pte(rc, zero, 0.5).values, p.replicate_curves[b], atol=1e-14)


def test_formula_fallback_when_unbalanced(toy):
    D = build_design_matrix(toy)
    g = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=5))
    fit = fit_all(toy, D, g, options=SolverOptions(max_iter=1))
    with pytest.warns(FormulaUnavailable):
        replicate_curves(fit, toy, D, (1, 0), "dte", None, np.ones(toy.n))


def test_simple_se_matches_binomial():
    rng = np.random.default_rng(11)
    n_k = 2000
    y = rng.normal(size=2 * n_k)
    w = np.repeat([0, 1], n_k)
    data = validate_dataset(y, w)
    g = ThresholdGrid(np.array([0.0]), "user-supplied")
    cfg = BootstrapConfig(replicates=1000, seed=12)
    reps = bootstrap_arm_curves([arm_terms(data, g, 0)], cfg)[0]
    assert reps.std(ddof=1) == pytest.approx(np.sqrt(0.25 / n_k), rel=0.10)


def test_uniform_band_constant_replicates():
    p = _point([0.1, 0.2, 0.3])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        band = uniform_band(p, np.tile(p.values, (120, 1)))
    assert np.all(band.half_width == 0) and band.experimental


def test_uniform_band_dominates_pointwise():
    data = sample_dgp(DgpSpec("dgp1", n=2000, seed=3))
    truth = oracle_truth(DgpSpec("dgp1"), size=200_000, seed=1)
    D = build_design_matrix(data)
    fit = fit_all(data, D, truth.grid)
    res = infer_effects(data, truth.grid, [EffectRequest((1, 0))], BootstrapConfig(replicates=300, seed=2),
                        {"adj": (fit, D)})["adj", "dte_1_0"]
    band = uniform_band(res.point, res.replicate_curves, 0.95)
    assert np.all(band.half_width >= res.ci_hi - res.point.values - 1e-15)
    with pytest.raises(TooFewReplicates):
        uniform_band(res.point, res.replicate_curves[:50])


@pytest.mark.slow
def test_uniform_band_coverage_dgp1():
    truth = oracle_truth(DgpSpec("dgp1"), size=1_000_000, seed=77)
    hits = 0
    for r in range(200):
        data = sample_dgp(DgpSpec("dgp1", n=2000), np.random.default_rng([5, r]))
        D = build_design_matrix(data)
        fit = fit_all(data, D, truth.grid)
        res = infer_effects(data, truth.grid, [EffectRequest((1, 0))],
                            BootstrapConfig(replicates=200, seed=r), {"adj": (fit, D)})["adj", "dte_1_0"]
        band = uniform_band(res.point, res.replicate_curves, 0.95)
        hits += bool(np.all((band.lo <= truth.dte) & (truth.dte <= band.hi)))
    assert hits / 200 >= 0.90
