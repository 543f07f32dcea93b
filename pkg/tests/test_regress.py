import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgmix.regress import (
    DesignMatrix,
    RankDeficientError,
    RegressionError,
    SeparationError,
    bootstrap_coefficients,
    expit,
    fit_linear,
    fit_logistic,
    predict,
)


def with_intercept(*cols):
    return np.column_stack([np.ones(len(cols[0]))] + [np.asarray(c, float) for c in cols])


def normal_equations(X, y):
    """Oracle: explicit Gram matrix solve."""
    G = X.T @ X
    beta = np.linalg.solve(G, X.T @ y)
    resid = y - X @ beta
    s2 = resid @ resid / (X.shape[0] - X.shape[1])
    return beta, s2 * np.linalg.inv(G)


def newton_logistic(X, y, iters=100):
    """Oracle: textbook Newton-Raphson with an explicit Hessian inverse."""
    beta = np.zeros(X.shape[1])
    for _ in range(iters):
        p = 1 / (1 + np.exp(-X @ beta))
        H = X.T @ (X * (p * (1 - p))[:, None])
        beta = beta + np.linalg.inv(H) @ (X.T @ (y - p))
    p = 1 / (1 + np.exp(-X @ beta))
    return beta, np.linalg.inv(X.T @ (X * (p * (1 - p))[:, None]))


def test_constant_outcome():
    fit = fit_linear(np.ones((3, 1)), [2.0, 2.0, 2.0])
    assert fit.beta[0] == pytest.approx(2.0)
    assert fit.residual_variance == pytest.approx(0.0, abs=1e-28)


def test_perfect_line():
    fit = fit_linear(with_intercept([0, 1, 2, 3]), [1, 3, 5, 7])
    np.testing.assert_allclose(fit.beta, [1.0, 2.0], atol=1e-12)


def test_matches_normal_equations_oracle():
    rng = np.random.default_rng(0)
    X = with_intercept(rng.normal(size=20), rng.normal(size=20))
    y = X @ [1.0, -2.0, 0.5] + rng.normal(size=20)
    fit = fit_linear(X, y)
    beta, cov = normal_equations(X, y)
    np.testing.assert_allclose(fit.beta, beta, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fit.covariance, cov, rtol=1e-8, atol=1e-12)
    assert fit.n == 20 and fit.link == "identity" and fit.converged


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 60), st.integers(1, 5))
def test_ols_properties(seed, n, k):
    rng = np.random.default_rng(seed)
    if n <= k + 1:
        n = k + 2
    X = with_intercept(*rng.integers(0, 4, (k, n)).astype(float))
    y = rng.normal(size=n)
    try:
        fit = fit_linear(X, y)
    except RankDeficientError:
        return
    resid = y - X @ fit.beta
    scale = np.abs(X).max() * max(np.abs(y).max(), 1.0) * n
    assert np.all(np.abs(X.T @ resid) <= 1e-8 * scale)
    eig = np.linalg.eigvalsh(fit.covariance)
    assert eig.min() >= -1e-10 * max(eig.max(), 1e-300)
    np.testing.assert_allclose(fit.covariance, fit.covariance.T)

    shifted = fit_linear(X, y + 3.5)
    np.testing.assert_allclose(shifted.beta[1:], fit.beta[1:], atol=1e-9)
    assert shifted.beta[0] == pytest.approx(fit.beta[0] + 3.5, abs=1e-9)

    Xs = X.copy()
    Xs[:, 1] *= 4.0
    scaled = fit_linear(Xs, y)
    assert scaled.beta[1] == pytest.approx(fit.beta[1] / 4.0, rel=1e-8, abs=1e-12)
    assert scaled.covariance[1, 1] == pytest.approx(fit.covariance[1, 1] / 16.0, rel=1e-8, abs=1e-15)


def test_rank_deficiency_names_column():
    x = np.arange(10.0)
    design = DesignMatrix(np.column_stack([np.ones(10), x, np.full(10, 2.0)]),
                          (("intercept",), ("exposure", 0), ("exposure", 1)), ("(Intercept)", "a", "flat"))
    with pytest.raises(RankDeficientError) as info:
        fit_linear(design, x)
    assert info.value.column == "flat"
    assert "flat" in str(info.value)


def test_too_few_rows():
    with pytest.raises(RegressionError):
        fit_linear(with_intercept([1.0, 2.0]), [1.0, 2.0])


def test_design_requires_one_intercept():
    with pytest.raises(ValueError):
        DesignMatrix(np.ones((3, 2)), (("intercept",), ("intercept",)), ("a", "b"))


def test_logistic_intercept_only():
    y = np.array([1, 0, 0, 0] * 10, dtype=float)
    fit = fit_logistic(np.ones((40, 1)), y)
    assert fit.beta[0] == pytest.approx(math.log(1 / 3), abs=1e-9)


def test_logistic_two_by_two_table():
    a, b, c, d = 30, 10, 15, 25  # exposed cases, exposed non-cases, unexposed cases, unexposed non-cases
    x = np.array([1] * (a + b) + [0] * (c + d), dtype=float)
    y = np.array([1] * a + [0] * b + [1] * c + [0] * d, dtype=float)
    fit = fit_logistic(with_intercept(x), y)
    assert fit.beta[1] == pytest.approx(math.log(a * d / (b * c)), abs=1e-9)
    # Woolf variance of the log odds ratio
    assert fit.covariance[1, 1] == pytest.approx(1 / a + 1 / b + 1 / c + 1 / d, rel=1e-8)


def test_logistic_matches_newton_oracle():
    rng = np.random.default_rng(8)
    X = with_intercept(rng.integers(0, 4, 300), rng.normal(size=300))
    y = (rng.random(300) < expit(X @ [-0.5, 0.4, -0.8])).astype(float)
    fit = fit_logistic(X, y)
    beta, cov = newton_logistic(X, y)
    np.testing.assert_allclose(fit.beta, beta, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fit.covariance, cov, rtol=1e-8, atol=1e-12)
    assert np.max(np.abs(X.T @ (y - expit(X @ fit.beta)))) < 1e-6


def test_separation_is_reported():
    x = np.arange(20.0)
    y = (x >= 10).astype(float)
    with pytest.raises(SeparationError):
        fit_logistic(with_intercept(x), y)


def test_logistic_rejects_non_binary():
    with pytest.raises(ValueError):
        fit_logistic(with_intercept([0.0, 1.0, 2.0]), [0.0, 0.5, 1.0])


def test_predict_zero_beta():
    X = with_intercept(np.arange(5.0))
    lin = fit_linear(X, np.arange(5.0))
    lin.beta = np.zeros(2)
    np.testing.assert_array_equal(predict(lin, X), np.zeros(5))
    lin.link = "logit"
    np.testing.assert_array_equal(predict(lin, X), np.full(5, 0.5))


def test_training_residuals_sum_to_zero():
    rng = np.random.default_rng(2)
    X = with_intercept(rng.normal(size=30))
    y = rng.normal(size=30)
    fit = fit_linear(X, y)
    assert abs(np.sum(y - predict(fit, X))) < 1e-10


def test_logit_predictions_in_unit_interval():
    X = with_intercept(np.linspace(-40, 40, 11))
    y = np.array([0, 1, 0, 1, 0, 1, 1, 0, 1, 0, 1], float)
    fit = fit_logistic(X, y)
    fit.beta = np.array([0.0, 5.0])
    p = predict(fit, X)
    assert np.all((p >= 0) & (p <= 1))
    assert np.all((expit(np.array([-30.0, 30.0])) > 0) & (expit(np.array([-30.0, 30.0])) < 1))


def test_predict_dimension_mismatch():
    fit = fit_linear(with_intercept([0.0, 1.0, 2.0, 3.0]), [1.0, 2.0, 2.0, 4.0])
    with pytest.raises(ValueError):
        predict(fit, np.ones((3, 3)))


def test_bootstrap_kernel_matches_qr_fits():
    rng = np.random.default_rng(11)
    X = with_intercept(*rng.integers(0, 4, (4, 120)).astype(float))
    y = X @ rng.normal(size=5) + rng.normal(size=120)
    counts = np.stack([np.bincount(rng.integers(0, 120, 120), minlength=120) for _ in range(15)])
    betas, ok = bootstrap_coefficients(X, y, counts)
    assert ok.all()
    for b in range(15):
        idx = np.repeat(np.arange(120), counts[b])
        np.testing.assert_allclose(betas[b], fit_linear(X[idx], y[idx]).beta, rtol=1e-8, atol=1e-10)


def test_bootstrap_kernel_flags_singular_resamples():
    X = with_intercept(np.arange(6.0))
    y = np.arange(6.0)
    counts = np.array([[1, 1, 1, 1, 1, 1], [6, 0, 0, 0, 0, 0]])
    betas, ok = bootstrap_coefficients(X, y, counts)
    assert ok.tolist() == [True, False]
    assert np.all(np.isnan(betas[1]))
