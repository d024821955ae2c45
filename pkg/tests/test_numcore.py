import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modelswitch.errors import ConfigError, IllConditionedError, InputDomainError
from modelswitch.numcore import (
    DEFAULT_RHO_GRID, LinearFit, RidgeConfig, aic, cap, effective_dof, predict, ridge_fit, select_ridge_aic,
)


def test_identity_design_interpolates():
    fit = ridge_fit(np.eye(3), np.array([1.0, 2.0, 3.0]), RidgeConfig(rho=0.0), has_intercept=False)
    np.testing.assert_allclose(fit.coefficients, [1, 2, 3], atol=1e-12)
    assert fit.rss == pytest.approx(0.0, abs=1e-20)


def test_scalar_ridge_uses_n_scaled_penalty():
    # (sum x^2 + n rho) b = sum x y with x = y = (1, 2), n = 2, rho = 1
    expected = Fraction(1 * 1 + 2 * 2, 1 * 1 + 2 * 2 + 2 * 1)
    assert expected == Fraction(5, 7)
    X = np.array([[1.0], [2.0]])
    fit = ridge_fit(X, np.array([1.0, 2.0]), RidgeConfig(rho=1.0, penalize_intercept=True), has_intercept=False)
    assert fit.coefficients[0] == pytest.approx(float(expected), abs=1e-14)


def test_huge_penalty_shrinks_everything(rng):
    X = np.column_stack([np.ones(40), rng.standard_normal((40, 3))])
    y = rng.standard_normal(40)
    fit = ridge_fit(X, y, RidgeConfig(rho=1e9, penalize_intercept=True))
    assert np.max(np.abs(fit.coefficients)) < 1e-6


def test_intercept_left_unpenalised_by_default(rng):
    X = np.column_stack([np.ones(50), rng.standard_normal(50)])
    y = 3.0 + 0.0 * X[:, 1]
    fit = ridge_fit(X, y, RidgeConfig(rho=1e6))
    assert fit.coefficients[0] == pytest.approx(3.0, abs=1e-6)


def test_non_finite_input_rejected():
    with pytest.raises(InputDomainError):
        ridge_fit(np.array([[1.0], [np.nan]]), np.array([1.0, 2.0]))
    with pytest.raises(InputDomainError):
        ridge_fit(np.array([[1.0], [2.0]]), np.array([1.0, np.inf]))


def test_singular_design_names_rank():
    X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(IllConditionedError) as info:
        ridge_fit(X, np.arange(10.0), RidgeConfig(rho=0.0))
    assert info.value.rank == 2
    assert "rank" in str(info.value)


def test_effective_dof_examples(rng):
    X = rng.standard_normal((30, 4))
    assert effective_dof(X, 0.0, has_intercept=False) == pytest.approx(4.0, abs=1e-10)
    assert effective_dof(X, 1e12, penalize_intercept=True) < 1e-6
    # 2x1 design of ones: sum x^2 = 2; penalty n rho = 2 rho = 2 when rho = 1
    ones = np.ones((2, 1))
    sxx, pen = 2.0, 2.0 * 1.0
    assert effective_dof(ones, 1.0, penalize_intercept=True, has_intercept=False) == pytest.approx(sxx / (sxx + pen))


def test_aic_singleton_grid(rng):
    X = rng.standard_normal((20, 2))
    rho, fit = select_ridge_aic(X, rng.standard_normal(20), RidgeConfig(rho_grid=(0.1,)), has_intercept=False)
    assert rho == 0.1 and fit.rho == 0.1


def _direct_aic(X, y, rho):
    n, K = X.shape
    b = np.linalg.solve(X.T @ X + n * rho * np.eye(K), X.T @ y)
    H = X @ np.linalg.solve(X.T @ X + n * rho * np.eye(K), X.T)
    r = y - X @ b
    return n * math.log(r @ r / n) + 2 * np.trace(H)


def test_aic_prefers_shrinkage_on_noise():
    rng = np.random.default_rng(7)
    n, K = 200, 20
    Q, _ = np.linalg.qr(rng.standard_normal((n, K)))
    X = Q * math.sqrt(n)  # orthonormal columns in the empirical norm
    y = rng.standard_normal(n)
    assert _direct_aic(X, y, 10.0) < _direct_aic(X, y, 0.0)
    rho, _ = select_ridge_aic(X, y, RidgeConfig(rho_grid=(0.0, 10.0)), has_intercept=False)
    assert rho == 10.0


def test_aic_exact_fit_wins(rng):
    X = rng.standard_normal((15, 3))
    y = X @ np.array([1.0, -2.0, 0.5])
    rho, fit = select_ridge_aic(X, y, RidgeConfig(rho_grid=(0.0, 1.0)), has_intercept=False)
    assert rho == 0.0
    assert fit.degenerate


def test_aic_grid_permutation_invariant(rng):
    X = np.column_stack([np.ones(60), rng.standard_normal((60, 4))])
    y = rng.standard_normal(60)
    grid = list(DEFAULT_RHO_GRID)
    r1, f1 = select_ridge_aic(X, y, RidgeConfig(rho_grid=tuple(grid)))
    rng.shuffle(grid)
    r2, f2 = select_ridge_aic(X, y, RidgeConfig(rho_grid=tuple(grid)))
    assert r1 == r2
    np.testing.assert_array_equal(f1.coefficients, f2.coefficients)


def test_rho_grid_sorted_and_distinct():
    assert RidgeConfig(rho_grid=(1.0, 0.5)).rho_grid == (0.5, 1.0)
    with pytest.raises(ConfigError):
        RidgeConfig(rho_grid=(0.5, 0.5))
    with pytest.raises(ConfigError):
        RidgeConfig(rho=-1.0)


def test_aic_formula():
    assert aic(10, 10.0, 3.0) == pytest.approx(6.0)


@pytest.mark.parametrize("x,B,out", [(5, 3, 3), (-5, 3, -3), (2, 3, 2), (7, math.inf, 7)])
def test_cap_examples(x, B, out):
    assert cap(x, B) == out


@given(st.floats(-1e6, 1e6), st.floats(0, 1e6))
def test_cap_idempotent(x, B):
    assert cap(cap(x, B), B) == cap(x, B)
    assert abs(cap(x, B)) <= B


def test_predict_examples():
    zero = LinearFit(np.zeros(2))
    np.testing.assert_array_equal(predict(zero, np.ones((3, 2))), np.zeros(3))
    capped = LinearFit(np.array([1.0]), cap=2.0)
    np.testing.assert_array_equal(predict(capped, np.array([[10.0]])), [2.0])
    X = np.array([[1.0, 2.0], [3.0, -4.0]])
    free = LinearFit(np.array([0.5, 1.5]))
    np.testing.assert_array_equal(predict(free, X), X @ free.coefficients)
    with pytest.raises(InputDomainError):
        predict(free, np.ones((2, 3)))


def test_linear_fit_is_read_only():
    fit = LinearFit(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        fit.coefficients[0] = 3.0


@st.composite
def designs(draw, intercept=True):
    n = draw(st.integers(8, 40))
    K = draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, K))
    if intercept:
        X[:, 0] = 1.0
    return X, rng.standard_normal(n) * draw(st.floats(0.1, 10.0))


@given(designs())
def test_ols_equivalence(data):
    X, y = data
    fit = ridge_fit(X, y, RidgeConfig(rho=0.0))
    ref, *_ = np.linalg.lstsq(X, y, rcond=None)
    np.testing.assert_allclose(fit.coefficients, ref, atol=1e-8)


@given(designs(), st.floats(0.0, 10.0))
def test_fit_invariants(data, rho):
    X, y = data
    fit = ridge_fit(X, y, RidgeConfig(rho=rho))
    assert np.all(np.isfinite(fit.coefficients))
    assert fit.rss >= 0
    assert 0.0 <= fit.effective_dof <= X.shape[1] + 1e-12


@given(designs(), st.floats(0.0, 2.0))
def test_uncapped_projection_norm_bound(data, rho):
    # |P f|^2 <= 2 P_n(f . P f) for a ridge hat matrix (eigenvalues in [0, 1])
    X, f = data
    proj = predict(ridge_fit(X, f, RidgeConfig(rho=rho)), X)
    assert np.mean(proj**2) <= 2 * np.mean(f * proj) + 1e-10


def test_capped_projection_norm_bound_counterexample():
    # truncation can move the fit away from f: fit = f/101 * (1, 10), capped to (1, 1)/101
    X, f = np.array([[1.0], [10.0]]), np.array([-1.0, 0.2])
    proj = predict(ridge_fit(X, f, RidgeConfig(rho=0.0), has_intercept=False).with_cap(1 / 101), X)
    np.testing.assert_allclose(proj, [1 / 101, 1 / 101])
    assert np.mean(proj**2) > 2 * np.mean(f * proj)


@given(designs(), st.floats(1e-3, 5.0), st.floats(0.0, 2.0), st.integers(0, 2**32 - 1))
def test_capped_projection_superadditive(data, B, rho, seed):
    X, f = data
    g = np.random.default_rng(seed).standard_normal(f.shape[0])
    cfg = RidgeConfig(rho=rho)
    pf = predict(ridge_fit(X, f, cfg).with_cap(B), X)
    pg = predict(ridge_fit(X, g, cfg).with_cap(B), X)
    pd_ = predict(ridge_fit(X, f - g, cfg).with_cap(2 * B), X)
    assert np.all(np.abs(pf - pg) <= np.abs(pd_) + 1e-10)
