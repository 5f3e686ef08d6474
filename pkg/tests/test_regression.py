import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skelstop.errors import DomainError, RegressionError
from skelstop.regression import (Architecture, BoundPolicy, FitResult, architecture_schedule,
                                 design_matrix, evaluate, features, fit_least_squares,
                                 flatten_history, min_norm_lstsq, monomial_exponents, poly_dim,
                                 schedule_degree, truncate)
from skelstop.skeleton import Mark, SkeletonIncrement


@pytest.mark.parametrize("m, r, expected", [(2, 2, 6), (5, 0, 1), (1, 7, 8), (4, 10, 1001)])
def test_poly_dim(m, r, expected):
    assert poly_dim(m, r) == expected


@given(st.integers(1, 12), st.integers(0, 12))
def test_poly_dim_factorial_formula(m, r):
    assert poly_dim(m, r) == math.factorial(r + m) // (math.factorial(r) * math.factorial(m))


def test_poly_dim_errors():
    with pytest.raises(DomainError):
        poly_dim(0, 1)
    with pytest.raises(DomainError):
        poly_dim(60, 60)


def test_monomials_are_distinct_and_graded():
    exps = monomial_exponents(3, 4)
    assert len({tuple(e) for e in exps}) == len(exps) == poly_dim(3, 4)
    assert np.all(np.diff(exps.sum(axis=1)) >= 0)


def test_design_matches_exponents():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (20, 3))
    arch = Architecture(3, 3, 1.0)
    want = np.prod(x[:, None, :] ** monomial_exponents(3, 3)[None], axis=2)
    np.testing.assert_allclose(design_matrix(x, arch), want, rtol=1e-13)


def test_features_examples():
    hist = [SkeletonIncrement(0.25, Mark(1, -1))]
    assert np.array_equal(features(hist, Architecture(2, 0, 1.0)), [1.0])
    np.testing.assert_allclose(features(hist, Architecture(2, 1, 1.0, time_scale=0.5)), [1, 0.5, -1])
    assert len(features(hist, Architecture(2, 3, 1.0))) == poly_dim(2, 3)
    with pytest.raises(DomainError):
        features(hist + hist, Architecture(2, 1, 1.0))


def test_flatten_history_multidimensional():
    x = flatten_history([[0.5, 0.25]], [[2, 1]], [[-1, 1]], 2, 1.0)
    np.testing.assert_array_equal(x, [[0.5, 0, -1, 0.25, 1, 0]])


def test_fit_constant_is_mean_clamped():
    rng = np.random.default_rng(1)
    y = rng.normal(0.3, 1.0, 200)
    arch = Architecture(2, 0, 10.0)
    fit = fit_least_squares(rng.uniform(-1, 1, (200, 2)), y, arch)
    assert fit.coefficients[0] == pytest.approx(y.mean(), abs=1e-12)
    small = fit_least_squares(rng.uniform(-1, 1, (200, 2)), y + 5, Architecture(2, 0, 1.0))
    assert np.all(evaluate(small, np.zeros((1, 2)), Architecture(2, 0, 1.0)) == 1.0)


def test_fit_interpolates_span():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (300, 3))
    arch = Architecture(3, 2, 100.0)
    coef = rng.uniform(-1, 1, arch.basis_size)
    y = design_matrix(x, arch) @ coef
    fit = fit_least_squares(x, y, arch)
    assert fit.raw_risk <= 1e-18 and fit.empirical_risk >= 0
    np.testing.assert_allclose(evaluate(fit, x[:10], arch), y[:10], atol=1e-9)
    assert len(fit.coefficients) == arch.basis_size


def test_fit_rank_deficient_matches_numpy():
    rng = np.random.default_rng(3)
    x = np.repeat(rng.uniform(-1, 1, (40, 1)), 2, axis=1)  # identical inputs
    arch = Architecture(2, 3, 10.0)
    y = rng.normal(size=40)
    design = design_matrix(x, arch)
    coef, rank = min_norm_lstsq(design, y)
    ref = np.linalg.lstsq(design, y, rcond=1e-12)[0]
    np.testing.assert_allclose(coef, ref, atol=1e-9)
    assert rank == 4


def test_fit_underdetermined_min_norm():
    rng = np.random.default_rng(4)
    design = rng.normal(size=(5, 12))
    y = rng.normal(size=5)
    coef, rank = min_norm_lstsq(design, y)
    np.testing.assert_allclose(coef, np.linalg.pinv(design) @ y, atol=1e-10)
    assert rank == 5


def test_fit_errors():
    arch = Architecture(1, 1, 1.0)
    with pytest.raises(RegressionError):
        fit_least_squares(np.zeros((3, 1)), [np.nan] * 3, arch)
    with pytest.raises(DomainError):
        fit_least_squares(np.zeros((3, 1)), [1.0, 2.0], arch)


def test_evaluate_clamp_and_zero():
    arch = Architecture(1, 1, 2.0)
    fit = FitResult(np.array([6.0, 0.0]), 0.0, 0.0, 1, 2.0)
    assert evaluate(fit, np.zeros((1, 1)), arch)[0] == 2.0
    zero = FitResult(np.zeros(2), 0.0, 0.0, 1, 2.0)
    assert evaluate(zero, np.ones((1, 1)), arch)[0] == 0.0


@given(st.integers(0, 2**31))
def test_argmin_dominance(seed):
    rng = np.random.default_rng(seed)
    arch = Architecture(2, 2, 5.0)
    x = rng.uniform(-1, 1, (200, 2))
    y = np.sin(3 * x[:, 0]) + rng.normal(0, 0.3, 200)
    fit = fit_least_squares(x, y, arch)
    design = design_matrix(x, arch)
    for c in rng.uniform(-1, 1, (20, arch.basis_size)):
        assert fit.raw_risk <= np.mean((design @ c - y) ** 2) + 1e-10
    # targets sit inside the clamp, so clamping can only help
    assert fit.empirical_risk <= fit.raw_risk + 1e-15


def test_risk_decomposition():
    rng = np.random.default_rng(5)
    n, sigma = 20_000, 0.1
    truth = lambda x: np.sin(3 * x[:, 0]) * x[:, 1]
    x = rng.uniform(-1, 1, (n, 2))
    noise = rng.normal(0, sigma, n)
    arch = Architecture(2, 3, 10.0)
    fit = fit_least_squares(x, truth(x) + noise, arch)
    resid = fit.predict_design(design_matrix(x, arch)) - truth(x)
    lhs = fit.raw_risk - np.mean(noise**2)
    x_test = rng.uniform(-1, 1, (400_000, 2))
    gap = fit.predict_design(design_matrix(x_test, arch)) - truth(x_test)
    rhs = np.mean(gap**2)
    se = math.sqrt(np.var(2 * noise * resid) / n + np.var(gap**2) / gap.size)
    assert abs(lhs - rhs) < 3 * se


def test_gram_conditioning_moderate_degrees():
    rng = np.random.default_rng(6)
    for m, r in ((1, 10), (2, 8), (6, 3)):
        arch = Architecture(m, r, 1.0)
        x = rng.uniform(-1, 1, (max(5 * arch.basis_size, 500), m))
        d = design_matrix(x, arch)
        assert np.isfinite(np.linalg.cond(d.T @ d))
        fit = fit_least_squares(x, rng.normal(size=len(x)), arch)
        assert fit.rank == arch.basis_size


def test_vc_bookkeeping():
    arch = Architecture(4, 3, 1.0)
    assert arch.vc_bound == 1 + poly_dim(4, 3)


def test_schedule_examples():
    assert schedule_degree(10_000, 1, 1) == 10
    assert schedule_degree(2, 3, 2) == 1
    arch = architecture_schedule(10_000, 1, 1, payoff_bound=2.0)
    assert (arch.input_dim, arch.degree, arch.bound) == (2, 10, 2.0)
    with pytest.raises(DomainError):
        schedule_degree(1, 1, 1)


@given(st.integers(2, 10**7), st.integers(1, 5), st.integers(1, 3))
def test_schedule_monotone(n, j, d):
    assert schedule_degree(n, j, d) <= schedule_degree(n + 1, j, d)
    assert schedule_degree(n, j, d) <= max(1, n ** (1 / (j * (d + 1) + 2)) + 1e-9)


def test_bound_policies():
    assert BoundPolicy().resolve(3.0) == 3.0
    assert BoundPolicy("constant", 0.5).resolve(3.0) == 0.5
    assert BoundPolicy("twice_sup").resolve(3.0, 0.4) == 0.8
    with pytest.raises(DomainError):
        BoundPolicy("constant")
    with pytest.raises(DomainError):
        BoundPolicy("weird")


def test_truncate_examples():
    assert truncate(5, 2) == 2
    assert truncate(-0.3, 2) == -0.3
    with pytest.raises(DomainError):
        truncate(1.0, 0.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(1e-3, 1e3))
def test_truncate_idempotent_lipschitz(x, y, beta):
    tx = truncate(x, beta)
    assert truncate(tx, beta) == tx
    assert abs(tx - truncate(y, beta)) <= abs(x - y)
    assert abs(tx) <= beta
