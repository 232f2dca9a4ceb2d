"""Accuracy metrics: trapezoid-rule RIMSE, coverage aggregation, validation RMSE."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .posterior import PosteriorSummary, coverage

__all__ = [
    "ReplicateReport",
    "aggregate_replicates",
    "correlation_from_cov",
    "evaluate_replicate",
    "predict_validation",
    "rimse_curve",
    "rimse_signals",
    "rimse_surface",
    "sample_covariance",
]


def _check_grid(grid, n):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size != n:
        raise ValueError(f"grid has {grid.size} points, values have {n}")
    if n < 2:
        raise ValueError("RIMSE needs at least 2 grid points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    return grid


def rimse_curve(est, truth, grid) -> float:
    """``sqrt(integral (est - truth)^2 dt)`` by the trapezoid rule."""
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    if est.shape != truth.shape or est.ndim != 1:
        raise ValueError("estimate and truth must be vectors of equal length")
    grid = _check_grid(grid, est.size)
    return float(np.sqrt(np.trapezoid((est - truth) ** 2, grid)))


def rimse_surface(est, truth, grid) -> float:
    """Iterated trapezoid rule over both arguments of a surface."""
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    if est.shape != truth.shape or est.ndim != 2 or est.shape[0] != est.shape[1]:
        raise ValueError("surfaces must be square matrices of equal shape")
    grid = _check_grid(grid, est.shape[0])
    inner = np.trapezoid((est - truth) ** 2, grid, axis=1)
    return float(np.sqrt(np.trapezoid(inner, grid)))


def rimse_signals(est, truth, grid) -> float:
    """Average over curves (columns) of per-curve RIMSE."""
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    if est.shape != truth.shape or est.ndim != 2:
        raise ValueError("signal matrices must have equal (p, n) shape")
    return float(np.mean([rimse_curve(est[:, i], truth[:, i], grid) for i in range(est.shape[1])]))


def correlation_from_cov(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    d = np.sqrt(np.diag(C))
    R = C / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return R


def sample_covariance(curves) -> np.ndarray:
    """Cross-sectional sample covariance of the columns of a ``(p, n)`` matrix."""
    return np.atleast_2d(np.cov(np.asarray(curves, dtype=float)))


def predict_validation(smoothed, train_grid, val_grid, val_values) -> float:
    """RMSE of linearly interpolated smoothed curves at held-out points.

    Parameters
    ----------
    smoothed : ndarray, shape (p, n)
        Estimates on ``train_grid``.
    val_grid : array_like, shape (q,)
        Validation points inside the training-grid hull.
    val_values : ndarray, shape (q, n)
    """
    smoothed = np.asarray(smoothed, dtype=float)
    train_grid = np.asarray(train_grid, dtype=float)
    val_grid = np.asarray(val_grid, dtype=float)
    val_values = np.asarray(val_values, dtype=float)
    if smoothed.shape[0] != train_grid.size:
        raise ValueError("smoothed rows must match the training grid")
    if val_values.shape != (val_grid.size, smoothed.shape[1]):
        raise ValueError("validation values must have shape (len(val_grid), n)")
    if val_grid.min() < train_grid[0] or val_grid.max() > train_grid[-1]:
        raise ValueError("validation points outside the training grid; extrapolation refused")
    pred = np.column_stack([np.interp(val_grid, train_grid, smoothed[:, i])
                            for i in range(smoothed.shape[1])])
    return float(np.sqrt(np.mean((pred - val_values) ** 2)))


@dataclass
class ReplicateReport:
    """Accuracy of one fitted replicate; fields not computed are ``None``."""

    rimse_signals: float | None = None
    rimse_mean: float | None = None
    rimse_cov: float | None = None
    rimse_cor: float | None = None
    coverage_z: float | None = None
    coverage_mu: float | None = None
    coverage_sigma: float | None = None
    prediction_rmse: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if not v >= 0:
                raise ValueError(f"{f.name} must be nonnegative, got {v}")
            if f.name.startswith("coverage") and v > 1:
                raise ValueError(f"{f.name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_replicate(summary: PosteriorSummary, truth_signals, true_mu, true_Sigma,
                       mask=None) -> ReplicateReport:
    """Score a posterior summary against the generating truth.

    ``mask`` optionally restricts signal RIMSE and coverage to a subset of
    ``(grid point, curve)`` cells; by default every cell of the pooled grid
    counts.
    """
    g = summary.grid
    Zt = np.asarray(truth_signals, dtype=float)
    s = summary.signals
    if s.mean.shape != Zt.shape:
        raise ValueError(f"summary signals {s.mean.shape} do not match truth {Zt.shape}")
    cov_z = None
    if s.lower is not None:
        sel = np.ones(Zt.shape, bool) if mask is None else np.asarray(mask, bool)
        cov_z = coverage(s.lower[sel], s.upper[sel], Zt[sel])
    m = summary.mean_curve
    C = summary.covariance
    return ReplicateReport(
        rimse_signals=rimse_signals(s.mean, Zt, g),
        rimse_mean=rimse_curve(m.mean, true_mu, g),
        rimse_cov=rimse_surface(C.mean, true_Sigma, g),
        rimse_cor=rimse_surface(summary.correlation, correlation_from_cov(true_Sigma), g),
        coverage_z=cov_z,
        coverage_mu=None if m.lower is None else coverage(m.lower, m.upper, true_mu),
        coverage_sigma=None if C.lower is None else coverage(C.lower, C.upper, true_Sigma),
    )


def aggregate_replicates(reports) -> dict:
    """Per-field mean and standard error ``sd / sqrt(R)`` over replicates.

    Fields missing (``None``) in any report are skipped.
    """
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("aggregation needs at least 2 reports")
    out = {}
    for f in fields(ReplicateReport):
        vals = [getattr(r, f.name) for r in reports]
        if any(v is None for v in vals):
            continue
        v = np.asarray(vals, dtype=float)
        out[f.name] = (float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)))
    return out
