import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bfda.randmat import (chol_repaired, rng_stream, sample_gamma, sample_inverse_gamma,
                          sample_iw_dawid, sample_iw_dawid_factor, sample_mvn, sample_wishart)
from conftest import random_spd

N = 100_000


def test_stream_reproducible_and_distinct():
    a = rng_stream(7, 0).standard_normal(5)
    np.testing.assert_array_equal(a, rng_stream(7, 0).standard_normal(5))
    assert not np.array_equal(a, rng_stream(7, 1).standard_normal(5))
    assert not np.array_equal(a, rng_stream(8, 0).standard_normal(5))


def test_mvn_degenerate_variance():
    x = sample_mvn([7.0], [[0.0]], rng_stream(1), pd_floor=1e-10)
    np.testing.assert_allclose(x, 7.0, atol=1e-4)


def test_mvn_moments():
    r = rng_stream(2)
    X = np.array([sample_mvn([1.0, -2.0], np.eye(2), r) for _ in range(N)])
    np.testing.assert_allclose(X.mean(axis=0), [1.0, -2.0], atol=0.02)
    np.testing.assert_allclose(np.cov(X.T), np.eye(2), atol=0.03)


def test_mvn_deterministic():
    C = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_array_equal(sample_mvn([0, 0], C, rng_stream(3)), sample_mvn([0, 0], C, rng_stream(3)))


def test_wishart_chi_square():
    r = rng_stream(4)
    w = np.array([sample_wishart(5.0, [[1.0]], r)[0, 0] for _ in range(N)])
    np.testing.assert_allclose(w.mean(), 5.0, rtol=0.02)


def test_wishart_mean():
    r = rng_stream(5)
    S = random_spd(np.random.default_rng(0), 3)
    W = np.mean([sample_wishart(7.5, S, r) for _ in range(N)], axis=0)
    np.testing.assert_allclose(W, 7.5 * S, rtol=0.03, atol=0.03 * np.abs(7.5 * S).max())


def test_wishart_always_pd():
    r = rng_stream(6)
    S = random_spd(np.random.default_rng(1), 5)
    for _ in range(1000):
        W = sample_wishart(5.0, S, r)
        np.testing.assert_array_equal(W, W.T)
        np.linalg.cholesky(W)


def test_wishart_df_check():
    with pytest.raises(ValueError):
        sample_wishart(1.0, np.eye(3), rng_stream(0))


def test_iw_first_moment():
    r = rng_stream(7)
    M = np.mean([sample_iw_dawid(6.0, np.eye(2), r) for _ in range(N)], axis=0)
    np.testing.assert_allclose(M, np.eye(2) / 4, atol=0.03 / 4)


def test_iw_scalar_is_inverse_gamma():
    r = rng_stream(8)
    x = np.array([sample_iw_dawid(6.0, [[2.0]], r)[0, 0] for _ in range(N)])
    np.testing.assert_allclose(x.mean(), 0.5, rtol=0.03)


def test_iw_marginal_consistency():
    r = rng_stream(9)
    psi = random_spd(np.random.default_rng(2), 4)
    B = np.mean([sample_iw_dawid(6.0, psi, r)[:2, :2] for _ in range(N)], axis=0)
    np.testing.assert_allclose(B, psi[:2, :2] / 4, atol=0.03 * np.abs(psi[:2, :2]).max() / 4)


def test_iw_marginal_second_moment():
    # variances of a principal block match a direct draw on the block
    r1, r2 = rng_stream(10), rng_stream(11)
    psi = random_spd(np.random.default_rng(3), 3)
    full = np.array([sample_iw_dawid(7.0, psi, r1)[0, 0] for _ in range(N)])
    sub = np.array([sample_iw_dawid(7.0, psi[:1, :1], r2)[0, 0] for _ in range(N)])
    np.testing.assert_allclose(full.var(), sub.var(), rtol=0.1)


def test_iw_factor_matches_draw():
    psi = random_spd(np.random.default_rng(4), 3)
    F = sample_iw_dawid_factor(6.0, psi, rng_stream(12))
    np.testing.assert_allclose(F @ F.T, sample_iw_dawid(6.0, psi, rng_stream(12)), rtol=1e-12)


def test_iw_delta_checks():
    with pytest.raises(ValueError):
        sample_iw_dawid(2.0, np.eye(2), rng_stream(0))
    with pytest.warns(UserWarning):
        sample_iw_dawid(4.0, np.eye(2), rng_stream(0))


def test_iw_singular_psi():
    with pytest.raises(np.linalg.LinAlgError):
        sample_iw_dawid(6.0, np.zeros((2, 2)), rng_stream(0))


@pytest.mark.parametrize("shape,rate,mean", [(1.0, 1.0, 1.0), (214.99, 20.0, 10.7495)])
def test_gamma_mean(shape, rate, mean):
    x = sample_gamma(shape, rate, rng_stream(13), size=N)
    np.testing.assert_allclose(x.mean(), mean, rtol=0.02)


def test_inverse_gamma_mean_and_reciprocal():
    x = sample_inverse_gamma(3.0, 2.0, rng_stream(14), size=N)
    np.testing.assert_allclose(x.mean(), 1.0, rtol=0.02)
    g = sample_gamma(3.0, 2.0, rng_stream(14), size=N)
    np.testing.assert_array_equal(x, 1.0 / g)


@pytest.mark.parametrize("fn", [sample_gamma, sample_inverse_gamma])
@pytest.mark.parametrize("a,b", [(0.0, 1.0), (1.0, -1.0)])
def test_nonpositive_parameters(fn, a, b):
    with pytest.raises(ValueError):
        fn(a, b, rng_stream(0))


@pytest.mark.parametrize("fn", [sample_gamma, sample_inverse_gamma])
def test_deterministic(fn):
    np.testing.assert_array_equal(fn(2.0, 3.0, rng_stream(5), size=4), fn(2.0, 3.0, rng_stream(5), size=4))


@given(st.integers(1, 8), st.floats(3.0, 30.0), st.integers(0, 2**32 - 1))
def test_iw_symmetric_pd(p, delta, seed):
    psi = random_spd(np.random.default_rng(seed), p)
    S = sample_iw_dawid(max(delta, 5.0), psi, rng_stream(seed))
    np.testing.assert_array_equal(S, S.T)
    np.linalg.cholesky(S)


@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_chol_repaired_psd(p, seed):
    v = np.random.default_rng(seed).standard_normal(p)
    L = chol_repaired(np.outer(v, v))
    assert np.all(np.isfinite(L))
