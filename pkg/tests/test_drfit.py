import numpy as np
import pytest

from dtadjust import _accel, kernels
from dtadjust.core import GridSpec, ThresholdGrid, TransformSpec, build_design_matrix, make_threshold_grid
from dtadjust.drfit import (
    LinkSpec,
    SolverOptions,
    balance_residual,
    fit_all,
    fit_threshold,
    indicator_matrix,
    predict_cdf,
)
from dtadjust.errors import ConfigError, SpecMismatch
from dtadjust.simulation import DgpSpec, sample_dgp

from conftest import make_toy


def grid_search_logit(X, z, lo=-10.0, hi=10.0, fine=1e-3):
    """Maximize the Bernoulli likelihood over a lattice of spacing ``fine``.

    A 0.05 lattice over the whole box locates the maximizer's cell (the
    objective is concave); the 1e-3 lattice is then searched within +-0.1 of
    it, which reproduces the full fine-lattice maximum.
    """
    d = X.shape[1]

    def best(axes):
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        eta = mesh @ X.T
        ll = (z * eta - np.logaddexp(0.0, eta)).sum(axis=1)
        return mesh[np.argmax(ll)]

    coarse = best([np.arange(lo, hi + 1e-9, 0.05)] * d)
    axes = [np.round(np.arange(c - 0.1, c + 0.1 + 1e-12, fine), 3) for c in coarse]
    return best(axes)


def test_intercept_only_proportion(backend):
    z = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0.0])
    beta, diag = fit_threshold(np.ones((10, 1)), z)
    assert beta[0] == pytest.approx(np.log(0.3 / 0.7), abs=1e-12)
    assert beta[0] == pytest.approx(-0.8473, abs=1e-4)
    assert diag.converged and diag.degenerate is None


def test_two_coefficient_grid_oracle(backend):
    x = np.array([-2, -1, -0.5, 0, 0.5, 1, 2, 3.0])
    z = np.array([0, 0, 0, 1, 0, 1, 1, 1.0])
    X = np.column_stack([np.ones(8), x])
    beta, diag = fit_threshold(X, z)
    # frozen from grid_search_logit(X, z)
    assert np.allclose(beta, [-0.638, 2.360], atol=2e-3)
    assert np.allclose(beta, grid_search_logit(X, z), atol=2e-3)
    assert diag.converged


@pytest.mark.parametrize("value", [0, 1])
def test_degenerate_cell(value):
    beta, diag = fit_threshold(np.ones((5, 1)), np.full(5, float(value)))
    assert beta is None and diag.degenerate == value


def test_linear_cell_is_least_squares():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(50), rng.normal(size=50)])
    z = (rng.random(50) < 0.4).astype(float)
    beta, diag = fit_threshold(X, z, "linear")
    assert np.allclose(beta, np.linalg.lstsq(X, z, rcond=None)[0], atol=1e-13)


def test_probit_rejected():
    with pytest.raises(ConfigError, match="canonical"):
        LinkSpec("probit")


def test_score_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n, d = rng.integers(5, 40), rng.integers(1, 4)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, d - 1))])
        z = (rng.random(n) < 0.5).astype(float)
        beta = rng.normal(size=d)
        g = kernels.logit_score(X, z, beta)
        fd = np.array([(kernels.logit_objective(X, z, beta + 1e-6 * e)
                        - kernels.logit_objective(X, z, beta - 1e-6 * e)) / 2e-6 for e in np.eye(d)])
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(np.max(np.abs(g)), 1e-8)


def test_hessian_nsd_at_optimum(toy):
    D = build_design_matrix(toy)
    grid = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=9))
    fit = fit_all(toy, D, grid)
    for k in range(2):
        X = D.t[toy.arm_mask(k)]
        for j in np.flatnonzero(fit.diagnostics.degenerate[k] < 0):
            H = kernels.logit_hessian(X, fit.coefficients[k, j])
            assert np.linalg.eigvalsh(H).max() <= 1e-8


def test_fit_all_shapes():
    toy = make_toy(n=60)
    D = build_design_matrix(toy, TransformSpec(linear=("x1",)))
    grid = ThresholdGrid(np.array([-0.5, 0.0, 0.5]), "user-supplied")
    fit = fit_all(toy, D, grid)
    assert fit.coefficients.shape == (2, 3, 2)


def test_fit_all_below_support_is_degenerate(toy):
    D = build_design_matrix(toy)
    grid = ThresholdGrid(np.array([toy.y.min() - 1, 0.0]), "user-supplied")
    fit = fit_all(toy, D, grid)
    assert list(fit.diagnostics.degenerate[:, 0]) == [0, 0]
    assert np.all(predict_cdf(fit, D, 0)[:, 0] == 0.0)
    assert np.all(np.isnan(fit.coefficients[:, 0]))


def test_gradient_within_tolerance(toy):
    D = build_design_matrix(toy)
    grid = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=30))
    fit = fit_all(toy, D, grid)
    live = fit.diagnostics.degenerate < 0
    assert np.all(fit.diagnostics.grad_norm[live] <= 1e-10)
    assert np.all(fit.diagnostics.converged)


def test_predict_logit_zero_index():
    assert LinkSpec("logit").inverse(np.array([0.0]))[0] == 0.5


def test_predict_intercept_only_constant():
    toy = make_toy(n=100)
    D = build_design_matrix(toy, TransformSpec.intercept_only())
    grid = ThresholdGrid(np.array([0.0]), "user-supplied")
    fit = fit_all(toy, D, grid)
    G = predict_cdf(fit, D, 0)
    prop = np.mean(toy.y[toy.arm_mask(0)] <= 0.0)
    assert np.allclose(G, prop, atol=1e-14)


def test_linear_balance_identity(toy):
    D = build_design_matrix(toy)
    grid = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=20))
    fit = fit_all(toy, D, grid, "linear")
    for k in range(2):
        mask = toy.arm_mask(k)
        arm_mean = predict_cdf(fit, D, k)[mask].mean(axis=0)
        ecdf = indicator_matrix(toy.y[mask], grid).mean(axis=0)
        assert np.max(np.abs(arm_mean - ecdf)) <= 1e-12
    assert np.max(np.abs(balance_residual(fit, toy, D))) <= 1e-12


def test_logit_balance(toy):
    D = build_design_matrix(toy)
    grid = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=20))
    fit = fit_all(toy, D, grid, "logit")
    assert np.max(np.abs(balance_residual(fit, toy, D))) <= 1e-8


def test_nonconverged_cell_is_flagged():
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(40), rng.normal(size=40)])
    z = (X[:, 1] + rng.normal(size=40) > 0).astype(float)
    beta, diag = fit_threshold(X, z, options=SolverOptions(max_iter=1))
    assert not diag.converged and diag.iterations == 1
    resid = abs(np.mean(z - LinkSpec().inverse(X @ beta)))
    assert resid > 1e-8


def test_separation_guard():
    X = np.column_stack([np.ones(6), np.arange(6.0)])
    z = np.array([0, 0, 0, 1, 1, 1.0])
    beta, diag = fit_threshold(X, z)
    p = LinkSpec().inverse(X @ beta)
    assert np.all(np.abs(p - z) < 1e-6)


def test_spec_mismatch(toy):
    D = build_design_matrix(toy)
    grid = ThresholdGrid(np.array([0.0]), "user-supplied")
    fit = fit_all(toy, D, grid)
    with pytest.raises(SpecMismatch):
        predict_cdf(fit, build_design_matrix(toy, TransformSpec(interactions=True)), 0)


@pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")
def test_backends_agree(toy):
    D = build_design_matrix(toy, TransformSpec(interactions=True))
    grid = make_threshold_grid(toy, GridSpec(kind="quantile-grid", n_points=15))
    with _accel.backend_as("numba"):
        a = fit_all(toy, D, grid)
    with _accel.backend_as("numpy"):
        b = fit_all(toy, D, grid)
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-9, equal_nan=True)


def test_thread_count_does_not_change_coefficients():
    data = sample_dgp(DgpSpec("dgp1", n=100_000, seed=4))
    D = build_design_matrix(data)
    grid = ThresholdGrid(np.quantile(data.y, np.linspace(0.1, 0.9, 9)), "user-supplied")
    one = fit_all(data, D, grid, threads=1)
    many = fit_all(data, D, grid, threads=4)
    assert np.max(np.abs(one.coefficients - many.coefficients)) <= 1e-9
    assert one.coefficients.tobytes() == many.coefficients.tobytes()
