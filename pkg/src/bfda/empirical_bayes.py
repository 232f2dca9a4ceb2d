"""Data-driven hyperparameters for the hierarchical model.

Noise variance by first differences, a Matérn ``(rho, nu)`` fit to an
empirical correlation surface, a moment estimator of the IW scale variance,
moment-matched hyperpriors and a smoothed prior mean.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .dataset import FunctionalDataset, PooledGrid, pool_grids
from .kernels import (
    DEFAULT_PD_FLOOR,
    MaternParams,
    ScaleKernelSpec,
    build_scale_kernel,
    empirical_covariance,
    matern_cor,
    moving_average_matrix,
    nearest_pd,
)

__all__ = [
    "Hyperparams",
    "default_hyperparams",
    "derive_hyperpriors",
    "empirical_correlation",
    "estimate_noise_variance",
    "estimate_prior_mean",
    "estimate_sigma_s2",
    "fit_matern_params",
    "hyperparams_from_config",
    "trace_cov_y",
]

log = logging.getLogger(__name__)

NU_MIN = 2.5
NU_MAX = 10.0


@dataclass(frozen=True)
class Hyperparams:
    """Fixed prior parameters on the pooled grid.

    ``A`` is the evaluated scale kernel, so the IW scale is ``sigma_s2 * A``.
    ``noise_var`` and ``sigma_s2_hat`` are the empirical estimates the
    hyperpriors were matched to; the sampler also uses ``noise_var`` as its
    starting noise variance.
    """

    c: float
    mu0: np.ndarray
    delta: float
    a_eps: float
    b_eps: float
    a_s: float
    b_s: float
    A: np.ndarray
    scale_kernel: ScaleKernelSpec = field(default_factory=ScaleKernelSpec)
    rho_hat: float | None = None
    nu_hat: float | None = None
    noise_var: float | None = None
    sigma_s2_hat: float | None = None
    pd_floor: float = DEFAULT_PD_FLOOR

    def __post_init__(self):
        for name in ("c", "a_eps", "b_eps", "a_s", "b_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"hyperparameter {name} must be positive")
        if not self.delta >= 3:
            raise ValueError(f"inverse-Wishart shape delta must be >= 3, got {self.delta}")
        if self.delta < 5:
            warnings.warn(f"delta={self.delta} is below 5; the prior may be very diffuse", stacklevel=3)
        mu0 = np.asarray(self.mu0, dtype=float)
        A = np.asarray(self.A, dtype=float)
        if A.shape != (mu0.size, mu0.size):
            raise ValueError("scale kernel and prior mean disagree on the grid size")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "A", A)

    @property
    def p(self) -> int:
        return self.mu0.size

    def to_dict(self) -> dict:
        return {
            "c": self.c, "delta": self.delta,
            "a_eps": self.a_eps, "b_eps": self.b_eps,
            "a_s": self.a_s, "b_s": self.b_s,
            "rho_hat": self.rho_hat, "nu_hat": self.nu_hat,
            "noise_var": self.noise_var, "sigma_s2_hat": self.sigma_s2_hat,
            "scale_kernel": self.scale_kernel.kind,
            "pd_floor": self.pd_floor,
        }


def estimate_noise_variance(data: FunctionalDataset) -> float:
    """First-difference estimator of the measurement-error variance."""
    num, den = 0.0, 0
    for c in data.curves:
        if len(c) >= 2:
            num += float(np.sum(np.diff(c.y) ** 2))
            den += len(c) - 1
    if den == 0:
        raise ValueError("noise variance needs at least one curve with 2 or more points")
    return num / (2.0 * den)


def _distance_table(dist):
    """Unique upper-triangle distances with multiplicities."""
    iu = np.triu_indices(dist.shape[0], 1)
    d = np.round(dist[iu], 12)
    uniq, inv, counts = np.unique(d, return_inverse=True, return_counts=True)
    return iu, uniq, inv, counts


def fit_matern_params(emp_cor, dist, n_rho: int = 60, maxiter: int = 200, n_starts: int = 3):
    """Least-squares fit of ``Matern_cor(D; rho, nu)`` to an empirical correlation.

    A coarse grid (``n_rho`` log-spaced length-scales over
    ``[0.01, 10] * range(D)`` and ``nu`` in ``{2.5, 3.0, ..., 10}``) seeds
    bounded Nelder-Mead refinements on ``(log rho, nu)`` started from the best
    grid node of each of the ``n_starts`` best smoothness levels. The returned
    point is never worse than the best grid candidate; ties on the grid go to
    the smallest ``rho`` and then the smallest ``nu``.

    Returns
    -------
    rho_hat, nu_hat : float
    """
    emp_cor = np.asarray(emp_cor, dtype=float)
    dist = np.asarray(dist, dtype=float)
    if emp_cor.shape != dist.shape or emp_cor.ndim != 2 or emp_cor.shape[0] < 2:
        raise ValueError("emp_cor and dist must be matching square matrices with p >= 2")
    iu, uniq, inv, counts = _distance_table(dist)
    target = emp_cor[iu]
    span = float(uniq.max())
    if not span > 0:
        raise ValueError("distance matrix has no positive entries")
    n_pairs = target.size

    def objective(rho, nu):
        model = matern_cor(uniq, rho, nu)[inv]
        return float(np.sum((target - model) ** 2) / n_pairs)

    rhos = np.logspace(np.log10(0.01 * span), np.log10(10.0 * span), n_rho)
    nus = np.arange(NU_MIN, NU_MAX + 1e-9, 0.5)
    # best length-scale per smoothness; strict < keeps the smallest rho on ties
    per_nu = []
    for nu in nus:
        vals = [objective(rho, nu) for rho in rhos]
        j = int(np.argmin(vals))
        per_nu.append((vals[j], rhos[j], nu))
    best = min(per_nu, key=lambda c: c[0])
    if not np.isfinite(best[0]):
        raise ValueError("Matérn fit objective is not finite; degenerate correlation input")

    # rho and nu trade off along a ridge, so refine from the best few
    # smoothness levels rather than the single best grid node
    lo, hi = np.log(rhos[0]), np.log(rhos[-1])
    rho_hat, nu_hat, fbest = best[1], best[2], best[0]
    for _, rho0, nu0 in sorted(per_nu, key=lambda c: c[0])[:n_starts]:
        x0 = np.array([np.log(rho0), nu0])
        step = 0.25 if nu0 + 0.25 <= NU_MAX else -0.25
        res = minimize(
            lambda th: objective(np.exp(th[0]), th[1]),
            x0=x0, method="Nelder-Mead", bounds=[(lo, hi), (NU_MIN, NU_MAX)],
            options={"maxiter": maxiter, "xatol": 1e-8, "fatol": 1e-16,
                     "initial_simplex": [x0, x0 + [0.1, 0.0], x0 + [0.0, step]]},
        )
        if np.isfinite(res.fun) and res.fun < fbest:
            rho_hat, nu_hat, fbest = float(np.exp(res.x[0])), float(res.x[1]), float(res.fun)
    nu_hat = max(float(nu_hat), NU_MIN)
    if rho_hat <= rhos[0] * (1 + 1e-6):
        warnings.warn("fitted Matérn length-scale sits on the lower search bound", stacklevel=2)
    return float(rho_hat), nu_hat


def trace_cov_y(data: FunctionalDataset, grid: PooledGrid | None = None) -> float:
    """Sum over pooled grid points of cross-sectional sample variances."""
    grid = pool_grids(data) if grid is None else grid
    cols = [[] for _ in range(grid.p)]
    for c, idx in zip(data.curves, grid.obs):
        for j, y in zip(idx, c.y):
            cols[j].append(y)
    return float(sum(np.var(v, ddof=1) for v in cols if len(v) >= 2))


def estimate_sigma_s2(trace_cov_y: float, noise_var: float, trace_A: float, p: int,
                      delta: float) -> float:
    """Moment estimator ``(tr Cov(Y) - p * noise) / (tr A / (delta - 2))``."""
    if not delta > 2:
        raise ValueError("delta must exceed 2")
    num = trace_cov_y - p * noise_var
    if num <= 0:
        warnings.warn("noise dominates the signal; sigma_s2 estimate clamped", stacklevel=2)
        num = 1e-6 * trace_cov_y
    return num / (trace_A / (delta - 2.0))


def derive_hyperpriors(noise_var: float, sigma_s2_hat: float, b_eps: float, b_s: float):
    """Moment-match the hyperprior shapes.

    ``a_eps / b_eps`` equals the empirical noise precision and
    ``a_s / b_s`` equals the empirical scale variance.
    """
    return b_eps / noise_var, b_s * sigma_s2_hat


def estimate_prior_mean(data: FunctionalDataset, grid: PooledGrid, window: int = 5):
    """Cross-sectional mean on the pooled grid followed by a centred moving average."""
    sums = np.zeros(grid.p)
    counts = np.zeros(grid.p)
    for c, idx in zip(data.curves, grid.obs):
        sums[idx] += c.y
        counts[idx] += 1
    if np.any(counts == 0):
        raise ValueError("a pooled grid point is observed by no curve")
    return moving_average_matrix(grid.p, window) @ (sums / counts)


def empirical_correlation(data: FunctionalDataset, grid: PooledGrid, noise_var: float,
                          pd_floor: float = DEFAULT_PD_FLOOR) -> np.ndarray:
    """Correlation of the latent curves implied by the raw sample covariance.

    The noise variance is removed from the diagonal before normalising, so the
    surface estimates the correlation of the signals rather than of the noisy
    data.
    """
    C, counts = empirical_covariance(data, grid)
    if np.any(np.isnan(C)):
        # pairs never observed together carry no information; fill them in
        # from the PD-repaired remainder
        C = np.where(np.isnan(C), 0.0, C)
    C = C - noise_var * np.eye(grid.p)
    d = np.diag(C).copy()
    if np.any(d <= 0):
        d = np.where(d > 0, d, np.max(d) * 1e-3 if np.max(d) > 0 else 1.0)
    R = C / np.sqrt(np.outer(d, d))
    np.fill_diagonal(R, 1.0)
    R = nearest_pd(R, pd_floor)
    s = np.sqrt(np.diag(R))
    return R / np.outer(s, s)


_CONFIG_KEYS = {
    "c", "delta", "b_eps", "b_s", "window", "scale_kernel", "pd_floor",
    "a_eps", "a_s", "rho", "nu", "noise_var", "sigma_s2_hat", "mu0",
    "scale_kernel_path",
}
HYPER_CONFIG_KEYS = frozenset(_CONFIG_KEYS)


def default_hyperparams(data: FunctionalDataset, grid: PooledGrid | None = None, *,
                        c: float = 1.0, delta: float = 5.0, window: int = 5,
                        b_eps: float = 1.0, b_s: float = 20.0,
                        scale_kernel: str = "matern", scale_kernel_path: str | None = None,
                        pd_floor: float = DEFAULT_PD_FLOOR, **overrides) -> Hyperparams:
    """Empirical-Bayes hyperparameters with optional explicit overrides.

    Any of ``noise_var``, ``sigma_s2_hat``, ``rho``, ``nu``, ``a_eps``,
    ``a_s`` and ``mu0`` passed as keywords replaces the corresponding
    estimate. When every one of them is given (``rho``/``nu`` only matter for
    the Matérn kernel) no estimation is performed.
    """
    unknown = set(overrides) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown hyperparameter keys: {sorted(unknown)}")
    grid = pool_grids(data) if grid is None else grid

    noise_var = overrides.get("noise_var")
    if noise_var is None:
        noise_var = estimate_noise_variance(data)

    rho_hat = overrides.get("rho")
    nu_hat = overrides.get("nu")
    if scale_kernel == "matern":
        if rho_hat is None or nu_hat is None:
            R = empirical_correlation(data, grid, noise_var, pd_floor)
            D = np.abs(grid.points[:, None] - grid.points[None, :])
            fit_rho, fit_nu = fit_matern_params(R, D)
            rho_hat = fit_rho if rho_hat is None else rho_hat
            nu_hat = fit_nu if nu_hat is None else nu_hat
        spec = ScaleKernelSpec("matern", MaternParams(float(rho_hat), float(nu_hat)), window=window)
    elif scale_kernel == "empirical":
        spec = ScaleKernelSpec("empirical", window=window)
    elif scale_kernel == "file":
        spec = ScaleKernelSpec("file", path=scale_kernel_path, window=window)
    else:
        raise ValueError(f"unknown scale kernel kind {scale_kernel!r}")
    A = build_scale_kernel(spec, grid, data, pd_floor)

    sigma_s2_hat = overrides.get("sigma_s2_hat")
    if sigma_s2_hat is None and not ("a_s" in overrides):
        sigma_s2_hat = estimate_sigma_s2(
            trace_cov_y(data, grid), noise_var, float(np.trace(A)), grid.p, delta
        )
    a_eps, a_s = (None, None)
    if sigma_s2_hat is not None:
        a_eps, a_s = derive_hyperpriors(noise_var, sigma_s2_hat, b_eps, b_s)
    else:
        a_eps = b_eps / noise_var
    a_eps = overrides.get("a_eps", a_eps)
    a_s = overrides.get("a_s", a_s)

    mu0 = overrides.get("mu0")
    mu0 = estimate_prior_mean(data, grid, window) if mu0 is None else np.asarray(mu0, float)

    hyper = Hyperparams(
        c=float(c), mu0=mu0, delta=float(delta),
        a_eps=float(a_eps), b_eps=float(b_eps), a_s=float(a_s), b_s=float(b_s),
        A=A, scale_kernel=spec,
        rho_hat=None if rho_hat is None else float(rho_hat),
        nu_hat=None if nu_hat is None else float(nu_hat),
        noise_var=float(noise_var),
        sigma_s2_hat=None if sigma_s2_hat is None else float(sigma_s2_hat),
        pd_floor=float(pd_floor),
    )
    log.info("hyperparameters: %s", hyper.to_dict())
    return hyper


def hyperparams_from_config(data: FunctionalDataset, config, grid: PooledGrid | None = None):
    """Build :class:`Hyperparams` from a JSON config file path or a mapping.

    Recognised keys are ``c, delta, b_eps, b_s, window, scale_kernel``
    (a kind string, or ``{"kind": ..., "path": ...}``), ``pd_floor`` and the
    explicit overrides accepted by :func:`default_hyperparams`.
    """
    if isinstance(config, (str, Path)):
        config = json.loads(Path(config).read_text())
    cfg = dict(config)
    sk = cfg.pop("scale_kernel", "matern")
    if isinstance(sk, dict):
        cfg.setdefault("scale_kernel_path", sk.get("path"))
        sk = sk.get("kind", "matern")
    cfg = {k: v for k, v in cfg.items() if k in _CONFIG_KEYS}
    return default_hyperparams(data, grid, scale_kernel=sk, **cfg)


def with_overrides(hyper: Hyperparams, **changes) -> Hyperparams:
    return replace(hyper, **changes)
