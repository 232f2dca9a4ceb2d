import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bfda.dataset import FunctionalDataset, pool_grids
from bfda.empirical_bayes import (Hyperparams, default_hyperparams, derive_hyperpriors,
                                  estimate_noise_variance, estimate_prior_mean, estimate_sigma_s2,
                                  fit_matern_params, hyperparams_from_config, trace_cov_y)
from bfda.kernels import MaternParams, matern_matrix
from bfda.simulation import SimSpec, simulate

SIM_SEEDS = range(1, 11)


@pytest.fixture(scope="module")
def stationary():
    return [simulate(SimSpec(seed=s)) for s in SIM_SEEDS]


@pytest.fixture(scope="module")
def stationary_hyper(stationary):
    return [default_hyperparams(d) for _, d in stationary]


def test_noise_constant_curves():
    data = FunctionalDataset.from_matrix([0, 1, 2], np.full((3, 4), 2.5))
    assert estimate_noise_variance(data) == 0.0


def test_noise_two_points():
    data = FunctionalDataset.from_arrays([[0.0, 1.0]], [[1.0, 3.0]])
    assert estimate_noise_variance(data) == 2.0


def test_noise_needs_two_points():
    data = FunctionalDataset.from_arrays([[0.0], [1.0]], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        estimate_noise_variance(data)


def test_noise_stationary(stationary):
    for _, data in stationary:
        assert abs(estimate_noise_variance(data) - 1.239) < 0.1


def test_noise_consistent_on_fine_grid(rng):
    t = np.linspace(0, 1, 500)
    Y = np.sin(2 * np.pi * t)[:, None] + np.sqrt(0.3) * rng.standard_normal((500, 50))
    data = FunctionalDataset.from_matrix(t, Y)
    np.testing.assert_allclose(estimate_noise_variance(data), 0.3, rtol=0.05)


@given(st.floats(-100, 100), st.integers(0, 1000))
def test_noise_shift_invariant(shift, seed):
    r = np.random.default_rng(seed)
    Y = r.standard_normal((8, 3))
    base = FunctionalDataset.from_matrix(np.arange(8.0), Y)
    moved = FunctionalDataset.from_matrix(np.arange(8.0), Y + shift)
    np.testing.assert_allclose(estimate_noise_variance(moved), estimate_noise_variance(base),
                               rtol=1e-9, atol=1e-9)


def test_matern_fit_self_consistency():
    t = np.linspace(0, math.pi / 2, 40)
    D = np.abs(t[:, None] - t[None, :])
    R = matern_matrix(t, MaternParams(0.5, 3.5))
    rho, nu = fit_matern_params(R, D)
    assert abs(rho - 0.5) < 1e-3 and abs(nu - 3.5) < 1e-3


def test_matern_fit_identity_hits_bound():
    t = np.linspace(0, 1, 10)
    with pytest.warns(UserWarning, match="lower search bound"):
        rho, nu = fit_matern_params(np.eye(10), np.abs(t[:, None] - t[None, :]))
    assert nu >= 2.5


def test_matern_fit_never_worse_than_grid(rng):
    t = np.linspace(0, 2, 25)
    D = np.abs(t[:, None] - t[None, :])
    R = matern_matrix(t, MaternParams(0.3, 4.2)) + 0.05 * rng.standard_normal((25, 25))
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    rho, nu = fit_matern_params(R, D)
    iu = np.triu_indices(25, 1)
    from bfda.kernels import matern_cor

    def obj(r, n):
        return np.mean((R[iu] - matern_cor(D[iu], r, n)) ** 2)

    grid_best = min(obj(r, n) for r in np.logspace(np.log10(0.02), np.log10(20), 60)
                    for n in np.arange(2.5, 10.01, 0.5))
    assert obj(rho, nu) <= grid_best + 1e-15


def test_matern_fit_stationary_rho(stationary_hyper):
    rhos = [h.rho_hat for h in stationary_hyper]
    assert abs(np.mean(rhos) - 0.503) < 0.1


@pytest.mark.xfail(reason="smoothness is weakly identified from n=50 curves; the fit sits on "
                          "the nu >= 2.5 bound for most seeds", strict=True)
def test_matern_fit_stationary_nu(stationary_hyper):
    nus = [h.nu_hat for h in stationary_hyper]
    assert abs(np.mean(nus) - 3.459) < 0.5


def test_sigma_s2_arithmetic():
    assert estimate_sigma_s2(4.0, 1.0, 2.0, 2, 5.0) == pytest.approx(3.0)


def test_sigma_s2_clamped():
    with pytest.warns(UserWarning, match="clamped"):
        v = estimate_sigma_s2(1.0, 1.0, 2.0, 2, 5.0)
    assert v == pytest.approx(1e-6 * 1.0 / (2.0 / 3.0))


def test_sigma_s2_moment_identity(rng):
    # noiseless data with Sigma = A; tr Cov / (tr A / (delta - 2)) = delta - 2 = 1 at delta = 3
    t = np.linspace(0, 1, 10)
    A = matern_matrix(t, MaternParams(0.3, 2.5))
    Z = np.linalg.cholesky(A) @ rng.standard_normal((10, 1000))
    data = FunctionalDataset.from_matrix(t, Z)
    est = estimate_sigma_s2(trace_cov_y(data), 0.0, np.trace(A), 10, 3.0)
    np.testing.assert_allclose(est, 1.0, rtol=0.1)


def test_sigma_s2_matches_generating_trace(stationary_hyper):
    # trace Sigma = 5 p, so the moment estimator targets 5 p (delta - 2) / p = 15
    est = [h.sigma_s2_hat for h in stationary_hyper]
    assert 11.0 < np.mean(est) < 19.0


@pytest.mark.xfail(reason="the reference value 10.75 is below the value implied by the generating "
                          "covariance (15)", strict=True)
def test_sigma_s2_stationary_reference(stationary_hyper):
    est = [h.sigma_s2_hat for h in stationary_hyper]
    assert abs(np.mean(est) - 10.75) <= 0.3 * 10.75


@pytest.mark.parametrize("noise,s2,b_eps,b_s,expected", [
    (1.239, 10.75, 1.0, 20.0, (0.807, 215.0)),
    (1.0, 1.0, 1.0, 1.0, (1.0, 1.0)),
])
def test_derive_hyperpriors(noise, s2, b_eps, b_s, expected):
    np.testing.assert_allclose(derive_hyperpriors(noise, s2, b_eps, b_s), expected, atol=5e-4)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-2, 1e2), st.floats(1e-2, 1e2))
def test_hyperprior_moment_match(noise, s2, b_eps, b_s):
    a_eps, a_s = derive_hyperpriors(noise, s2, b_eps, b_s)
    np.testing.assert_allclose(a_eps / b_eps, 1 / noise, rtol=1e-12)
    np.testing.assert_allclose(a_s / b_s, s2, rtol=1e-12)


def test_prior_mean_linear_exact():
    t = np.linspace(0, 1, 12)
    data = FunctionalDataset.from_matrix(t, np.tile(2 * t - 1, (3, 1)).T)
    np.testing.assert_allclose(estimate_prior_mean(data, pool_grids(data), 5), 2 * t - 1, atol=1e-14)


def test_prior_mean_window_one(small_common):
    mu0 = estimate_prior_mean(small_common, pool_grids(small_common), 1)
    np.testing.assert_allclose(mu0, small_common.value_matrix().mean(axis=1))


def test_prior_mean_stationary(stationary):
    spec = SimSpec()
    truth = 3 * np.sin(4 * spec.grid)
    for _, data in stationary:
        mu0 = estimate_prior_mean(data, pool_grids(data), 5)
        assert np.max(np.abs(mu0 - truth)) < 0.6 * 1.5


def test_default_hyperparams_stationary(stationary):
    h = default_hyperparams(stationary[0][1])
    assert (h.c, h.delta, h.b_eps, h.b_s) == (1.0, 5.0, 1.0, 20.0)
    np.testing.assert_allclose(h.a_eps, 1.0 / h.noise_var)
    np.testing.assert_allclose(h.a_s, 20.0 * h.sigma_s2_hat)
    assert h.nu_hat >= 2.5
    np.testing.assert_allclose(np.diag(h.A), 1.0)


@pytest.mark.filterwarnings("ignore:noise dominates")
def test_config_overrides(tmp_path, small_common):
    path = tmp_path / "h.json"
    path.write_text(json.dumps({"delta": 5, "b_s": 5, "window": 3}))
    h = hyperparams_from_config(small_common, path)
    assert h.b_s == 5.0 and h.delta == 5.0


def test_fully_specified_bypasses_estimation(small_common, monkeypatch):
    import bfda.empirical_bayes as eb

    def boom(*a, **k):
        raise AssertionError("estimation should be skipped")

    for name in ("estimate_noise_variance", "fit_matern_params", "estimate_prior_mean", "trace_cov_y"):
        monkeypatch.setattr(eb, name, boom)
    h = default_hyperparams(small_common, noise_var=1.0, rho=0.5, nu=2.5, sigma_s2_hat=2.0,
                            a_eps=1.0, a_s=2.0, mu0=np.zeros(15))
    assert h.noise_var == 1.0 and h.a_s == 2.0


def test_unknown_override(small_common):
    with pytest.raises(ValueError, match="unknown"):
        default_hyperparams(small_common, bogus=1)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(c=1, mu0=np.zeros(2), delta=2.0, a_eps=1, b_eps=1, a_s=1, b_s=1, A=np.eye(2))
    with pytest.raises(ValueError):
        Hyperparams(c=1, mu0=np.zeros(2), delta=5.0, a_eps=1, b_eps=1, a_s=1, b_s=1, A=np.eye(3))


def test_empirical_kernel_sparse_data():
    _, data = simulate(SimSpec(n=30, p=20, seed=2, retain_fraction=0.6))
    h = default_hyperparams(data, scale_kernel="empirical")
    np.testing.assert_allclose(np.diag(h.A), 1.0)
    assert h.rho_hat is None
