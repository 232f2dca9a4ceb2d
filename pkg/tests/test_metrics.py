import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bfda.metrics import (ReplicateReport, aggregate_replicates, correlation_from_cov,
                          predict_validation, rimse_curve, rimse_signals, rimse_surface,
                          sample_covariance)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_rimse_zero():
    t = np.linspace(0, 1, 11)
    assert rimse_curve(np.sin(t), np.sin(t), t) == 0.0


def test_rimse_constant_error():
    t = np.linspace(0, math.pi / 2, 80)
    np.testing.assert_allclose(rimse_curve(np.full(80, 0.3), np.zeros(80), t), 0.3 * math.sqrt(math.pi / 2))


def test_rimse_linear_error():
    t = np.linspace(0, 1, 101)
    np.testing.assert_allclose(rimse_curve(t, np.zeros(101), t), math.sqrt(1 / 3), atol=1e-4)


def test_rimse_checks():
    with pytest.raises(ValueError):
        rimse_curve([1.0], [1.0], [0.0])
    with pytest.raises(ValueError):
        rimse_curve([1.0, 2.0], [1.0, 2.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        rimse_curve([1.0, 2.0], [1.0, 2.0, 3.0], [0.0, 1.0])


def test_surface_zero_and_constant():
    t = np.linspace(0, math.pi / 2, 30)
    M = np.outer(t, t)
    assert rimse_surface(M, M, t) == 0.0
    np.testing.assert_allclose(rimse_surface(np.full((30, 30), 0.2), np.zeros((30, 30)), t), 0.2 * math.pi / 2)


def test_surface_product_error():
    t = np.linspace(0, 1, 101)
    np.testing.assert_allclose(rimse_surface(np.outer(t, t), np.zeros((101, 101)), t), 1 / 3, atol=1e-3)


def test_surface_dimension_mismatch():
    with pytest.raises(ValueError):
        rimse_surface(np.zeros((3, 3)), np.zeros((3, 3)), np.arange(4.0))
    with pytest.raises(ValueError):
        rimse_surface(np.zeros((3, 2)), np.zeros((3, 2)), np.arange(3.0))


def test_trapezoid_exact_piecewise_linear():
    t = np.array([0.0, 0.3, 1.0, 1.5])
    e = np.array([1.0, 2.0, 0.0, 1.0])
    # squared error is not linear, so integrate e^2 against its own trapezoid
    exact = sum((t[k + 1] - t[k]) * (e[k] ** 2 + e[k + 1] ** 2) / 2 for k in range(3))
    np.testing.assert_allclose(rimse_curve(e, np.zeros(4), t), math.sqrt(exact))


@given(st.integers(2, 30).flatmap(lambda p: st.tuples(arrays(float, p, elements=finite),
                                                      arrays(float, p, elements=finite))),
       st.floats(-10, 10, allow_nan=False))
def test_rimse_symmetric_and_scaling(ab, k):
    a, b = ab
    t = np.linspace(0, 2, a.size)
    r = rimse_curve(a, b, t)
    np.testing.assert_allclose(rimse_curve(b, a, t), r)
    np.testing.assert_allclose(rimse_curve(k * a, k * b, t), abs(k) * r, rtol=1e-9, atol=1e-9)


@given(st.integers(2, 25).flatmap(lambda p: arrays(float, p, elements=finite)))
def test_surface_constant_in_one_argument(e):
    t = np.linspace(0, 1.7, e.size)
    S = np.tile(e[:, None], (1, e.size))
    np.testing.assert_allclose(rimse_surface(S, np.zeros_like(S), t),
                               rimse_curve(e, np.zeros_like(e), t) * math.sqrt(1.7), rtol=1e-9, atol=1e-12)


def test_rimse_signals_average():
    t = np.linspace(0, 1, 5)
    est = np.column_stack([np.full(5, 1.0), np.full(5, 3.0)])
    np.testing.assert_allclose(rimse_signals(est, np.zeros((5, 2)), t), 2.0)


def test_correlation_from_cov_diag():
    C = np.array([[4.0, 1.0], [1.0, 9.0]])
    R = correlation_from_cov(C)
    np.testing.assert_array_equal(np.diag(R), 1.0)
    np.testing.assert_allclose(R[0, 1], 1 / 6)


def test_sample_covariance_matches_numpy(rng):
    X = rng.standard_normal((4, 30))
    np.testing.assert_allclose(sample_covariance(X), np.cov(X))


def test_predict_validation_identity():
    t = np.linspace(0, 1, 6)
    sm = np.column_stack([t ** 2, np.cos(t)])
    assert predict_validation(sm, t, t[[1, 4]], sm[[1, 4]]) == 0.0


def test_predict_validation_linear_exact():
    t = np.linspace(0, 1, 4)
    v = np.array([0.1, 0.55, 0.9])
    sm = np.column_stack([2 * t + 1, -t])
    truth = np.column_stack([2 * v + 1, -v])
    assert predict_validation(sm, t, v, truth) == pytest.approx(0.0, abs=1e-15)


def test_predict_validation_refuses_extrapolation():
    t = np.linspace(0, 1, 4)
    with pytest.raises(ValueError, match="extrapolation"):
        predict_validation(np.zeros((4, 1)), t, [1.2], np.zeros((1, 1)))


def test_report_invariants():
    with pytest.raises(ValueError):
        ReplicateReport(rimse_signals=-0.1)
    with pytest.raises(ValueError):
        ReplicateReport(coverage_z=1.2)


def test_aggregate_identical():
    r = ReplicateReport(rimse_signals=0.3, coverage_z=0.95)
    agg = aggregate_replicates([r, r, r])
    assert agg["rimse_signals"] == (pytest.approx(0.3), 0.0)
    assert "rimse_mean" not in agg


def test_aggregate_two():
    agg = aggregate_replicates([ReplicateReport(rimse_signals=0.3), ReplicateReport(rimse_signals=0.5)])
    np.testing.assert_allclose(agg["rimse_signals"], (0.4, 0.1))


def test_aggregate_needs_two():
    with pytest.raises(ValueError):
        aggregate_replicates([ReplicateReport()])
