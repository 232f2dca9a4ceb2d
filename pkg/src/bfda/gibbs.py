"""Gibbs sampler for the hierarchical GP / inverse-Wishart-process model.

One sweep updates, in order: the latent signals, the noise variance, the mean
curve, the covariance matrix and the IW scale variance.

The covariance is carried in factored form ``Sigma = F F^T``. The Bartlett
construction of the inverse-Wishart draw produces ``F`` through triangular
solves only, and the common-grid signal update is written as
``((1/s2) I + Sigma^{-1})^{-1} = F (I + F^T F / s2)^{-1} F^T`` so no
ill-conditioned matrix is ever inverted.

On uncommon grids the default ``"blocked"`` scheme draws each curve on the
whole pooled grid from its exact full conditional. The ``"alternating"``
scheme updates missing points given observed points and then observed points
given missing points, with a conditional-mean fallback when the conditional
variance of the missing block is numerically singular. Both target the same
posterior, but the alternating chain can stall when missing points are nearly
determined by observed ones.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh, solve_triangular
from scipy.linalg.lapack import dpotrf, dtrtri, dtrtrs

from .dataset import FunctionalDataset, PooledGrid, pool_grids
from .empirical_bayes import Hyperparams
from .kernels import DEFAULT_PD_FLOOR
from .randmat import bartlett_factor, chol_repaired, rng_stream, sample_gamma, sample_inverse_gamma

__all__ = [
    "Chain",
    "CurveLayout",
    "SamplerConfig",
    "SamplerError",
    "SamplerState",
    "init_state",
    "load_checkpoint",
    "run_chain",
    "sweep",
    "update_covariance",
    "update_mean",
    "update_missing",
    "update_noise_variance",
    "update_sigma_s",
    "update_signals_common",
    "update_signals_sparse",
]

log = logging.getLogger(__name__)

BLOCKS = ("signals", "sigma_eps2", "mu", "Sigma", "sigma_s2")


class SamplerError(RuntimeError):
    """A Gibbs step failed; carries the sweep index and an optional snapshot path."""

    def __init__(self, msg, iteration=None, snapshot=None):
        super().__init__(f"{msg} (sweep {iteration}, snapshot {snapshot})")
        self.iteration = iteration
        self.snapshot = snapshot


@dataclass
class SamplerConfig:
    """Run-length, storage and numerical settings for one chain.

    ``sparse_scheme`` selects the uncommon-grid signal update: ``"blocked"``
    draws each curve jointly on the pooled grid from its full conditional by
    pathwise conditioning of a prior draw on the observed points;
    ``"alternating"``
    draws the missing block given the current observed block first and then
    the observed block given the missing block, with the conditional-mean
    fallback for near-singular conditional variances.
    ``cov_every`` decimates the stored full covariance draws; the running
    covariance and correlation means always use every retained draw.
    ``frozen`` names blocks held at their initial value (any of
    ``"signals", "sigma_eps2", "mu", "Sigma", "sigma_s2"``).
    """

    n_burnin: int = 2000
    n_samples: int = 10000
    thin: int = 1
    seed: int = 0
    chain_id: int = 0
    degenerate_threshold: float = 1e-8
    pd_floor: float = DEFAULT_PD_FLOOR
    store_signals: bool = True
    store_mean: bool = True
    store_cov_diag: bool = True
    cov_every: int = 10
    force_sparse_path: bool = False
    sparse_scheme: str = "blocked"
    frozen: tuple = ()
    checkpoint_every: int | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.n_burnin < 0 or self.n_samples < 1 or self.thin < 1 or self.cov_every < 1:
            raise ValueError("need n_burnin >= 0, n_samples >= 1, thin >= 1, cov_every >= 1")
        if self.sparse_scheme not in ("blocked", "alternating"):
            raise ValueError("sparse_scheme must be 'blocked' or 'alternating'")
        self.frozen = tuple(self.frozen)
        bad = set(self.frozen) - set(BLOCKS)
        if bad:
            raise ValueError(f"unknown frozen blocks {sorted(bad)}")


@dataclass
class SamplerState:
    Z: np.ndarray
    mu: np.ndarray
    F: np.ndarray
    sigma_eps2: float
    sigma_s2: float
    iteration: int = 0

    @property
    def Sigma(self) -> np.ndarray:
        S = self.F @ self.F.T
        return 0.5 * (S + S.T)

    @classmethod
    def from_sigma(cls, Z, mu, Sigma, sigma_eps2, sigma_s2, iteration=0, pd_floor=DEFAULT_PD_FLOOR):
        F = chol_repaired(np.asarray(Sigma, dtype=float), pd_floor)
        return cls(np.array(Z, dtype=float), np.array(mu, dtype=float), F,
                   float(sigma_eps2), float(sigma_s2), iteration)

    def copy(self) -> "SamplerState":
        return SamplerState(self.Z.copy(), self.mu.copy(), self.F.copy(),
                            self.sigma_eps2, self.sigma_s2, self.iteration)


@dataclass
class _Group:
    curves: np.ndarray   # curve indices
    obs: np.ndarray      # (g, k) pooled indices
    mis: np.ndarray      # (g, m)
    Y: np.ndarray        # (g, k)
    oo: np.ndarray = None  # flat indices of the (o, o), (o, m), (m, m) blocks
    om: np.ndarray = None
    mm: np.ndarray = None

    def index(self, p):
        o, m = self.obs, self.mis
        self.oo = o[:, :, None] * p + o[:, None, :]
        self.om = o[:, :, None] * p + m[:, None, :]
        self.mm = m[:, :, None] * p + m[:, None, :]
        return self


@dataclass
class CurveLayout:
    """Observation pattern of a dataset on its pooled grid.

    Curves with missing points are grouped by observed count so their blocks
    can be stacked.
    """

    points: np.ndarray
    p: int
    n: int
    Yfull: np.ndarray     # (p, n), zero where unobserved
    mask: np.ndarray      # (p, n) bool
    n_obs: int
    common: bool
    complete: np.ndarray  # curves with no missing points
    groups: list          # _Group per observed-count for curves with missing points

    @classmethod
    def build(cls, data: FunctionalDataset, grid: PooledGrid | None = None) -> "CurveLayout":
        grid = pool_grids(data) if grid is None else grid
        p, n = grid.p, data.n
        Yfull = np.zeros((p, n))
        mask = np.zeros((p, n), dtype=bool)
        for i, (c, idx) in enumerate(zip(data.curves, grid.obs)):
            Yfull[idx, i] = c.y
            mask[idx, i] = True
        complete = np.array([i for i in range(n) if grid.mis[i].size == 0], dtype=int)
        by_k: dict = {}
        for i in range(n):
            if grid.mis[i].size:
                by_k.setdefault(grid.obs[i].size, []).append(i)
        groups = []
        for k in sorted(by_k):
            idx = np.array(by_k[k])
            obs = np.stack([grid.obs[i] for i in idx])
            mis = np.stack([grid.mis[i] for i in idx])
            groups.append(_Group(idx, obs, mis, np.stack([data.curves[i].y for i in idx])).index(p))
        return cls(grid.points, p, n, Yfull, mask, int(mask.sum()), grid.is_common(),
                   complete, groups)


# ---------------------------------------------------------------------------
# linear algebra helpers


def _t(M):
    return np.swapaxes(M, -1, -2)


def _chol(M, pd_floor):
    c, info = dpotrf(M, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        c = chol_repaired(M, pd_floor)
    return c


def _trsolve(L, b, trans=0):
    """Solve ``L x = b`` (``trans=1``: ``L^T x = b``) for lower-triangular ``L``."""
    x, info = dtrtrs(L, b, lower=1, trans=trans)
    if info != 0:
        raise np.linalg.LinAlgError("singular triangular factor")
    return x


# ---------------------------------------------------------------------------
# latent signals


def _woodbury_factor(F_rows, s2, pd_floor):
    """``G`` with ``G^T G = (I/s2 + (F_o F_o^T)^{-1})^{-1}`` for a row block ``F_o``."""
    M = np.eye(F_rows.shape[1]) + F_rows.T @ F_rows / s2
    R = _chol(M, pd_floor)
    return _trsolve(R, np.ascontiguousarray(F_rows.T))


def _conditional_gaussian_draw(G, m, Y, s2, z):
    """``m + G^T (G (Y - m) / s2 + z)``: draw from N(mean, G^T G) around data ``Y``."""
    return m + G.T @ (G @ (Y - m) / s2 + z)


def update_signals_common(state: SamplerState, layout: CurveLayout, rng, pd_floor=DEFAULT_PD_FLOOR):
    """Draw every curve from ``N(V (Y_i/s2 + Sigma^{-1} mu), V)``, ``V = (I/s2 + Sigma^{-1})^{-1}``.

    ``V`` is factored once per sweep and shared by all curves.
    """
    zeta = rng.standard_normal((layout.n, layout.p))
    G = _woodbury_factor(state.F, state.sigma_eps2, pd_floor)
    mu = state.mu[:, None]
    return _conditional_gaussian_draw(G, mu, layout.Yfull, state.sigma_eps2, zeta.T)


def _missing_moments(Sigma, mu, Z_obs, obs, mis, pd_floor):
    """Conditional mean and Schur-complement variance of the missing block.

    Returns ``(mean, V, W, L)`` with ``L`` the Cholesky factor of
    ``Sigma_oo`` and ``W = L^{-1} Sigma_om``, so that the regression matrix
    ``Sigma_mo Sigma_oo^{-1}`` is ``W^T L^{-1}``.
    """
    L = _chol(Sigma[np.ix_(obs, obs)], pd_floor)
    W = _trsolve(L, Sigma[np.ix_(obs, mis)])
    V = Sigma[np.ix_(mis, mis)] - W.T @ W
    V = 0.5 * (V + V.T)
    mean = mu[mis] + W.T @ _trsolve(L, Z_obs - mu[obs])
    return mean, V, W, L


def _min_eig(V):
    return float(eigh(V, eigvals_only=True, subset_by_index=(0, 0), check_finite=False)[0])


def _spectral_radius(Sigma):
    return float(eigh(Sigma, eigvals_only=True, subset_by_index=(Sigma.shape[0] - 1,) * 2,
                      check_finite=False)[0])


def _observed_draw(mu_o, mu_m, Z_mis, Y, W, L, LV, s2, z, pd_floor):
    """Observed-block draw including the conditional prior of the missing block."""
    k = L.shape[0]
    Linv, info = dtrtri(L, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError("singular Cholesky factor of Sigma_oo")
    Soo_inv = Linv.T @ Linv
    C = _trsolve(LV, np.ascontiguousarray(W.T)) @ Linv      # V^{-1/2} B
    P = np.eye(k) / s2 + Soo_inv + C.T @ C
    u = W.T @ (Linv @ mu_o) - mu_m                           # B mu_o - mu_m
    rhs = Y / s2 + Soo_inv @ mu_o + C.T @ _trsolve(LV, u + Z_mis)
    LP = _chol(0.5 * (P + P.T), pd_floor)
    mean = _trsolve(LP, _trsolve(LP, rhs), trans=1)
    return mean + _trsolve(LP, z[:k], trans=1)


def _collapsed_draw(mu_o, Y, L, s2, z, pd_floor):
    """Common-grid form on the observed points, using the factor ``L`` of ``Sigma_oo``."""
    G = _woodbury_factor(L, s2, pd_floor)
    return _conditional_gaussian_draw(G, mu_o, Y, s2, z[: L.shape[0]])


def update_missing(state: SamplerState, layout: CurveLayout, i: int, rng,
                   degenerate_threshold=1e-8, pd_floor=DEFAULT_PD_FLOOR, z=None):
    """Draw ``Z_i`` at its missing points given its observed points.

    Returns ``(values, degenerate)``. When the conditional variance is
    numerically singular (smallest eigenvalue below ``degenerate_threshold``
    times the spectral radius of ``Sigma``) the conditional mean is returned
    without noise.
    """
    obs = np.flatnonzero(layout.mask[:, i])
    mis = np.flatnonzero(~layout.mask[:, i])
    if mis.size == 0:
        raise ValueError(f"curve {i} has no missing points")
    Sigma = state.Sigma
    mean, V, _, _ = _missing_moments(Sigma, state.mu, state.Z[obs, i], obs, mis, pd_floor)
    if _min_eig(V) < degenerate_threshold * _spectral_radius(Sigma):
        return mean, True
    if z is None:
        z = rng.standard_normal(mis.size)
    return mean + _chol(V, pd_floor) @ z[: mis.size], False


def update_signals_sparse(state: SamplerState, layout: CurveLayout, i: int, rng, Z_mis=None,
                          degenerate=False, pd_floor=DEFAULT_PD_FLOOR, z=None):
    """Draw ``Z_i`` at its observed points given its missing-point values.

    With ``degenerate=True`` (or no missing points) the conditional prior of
    the missing block is dropped and the update collapses to the common-grid
    form on the observed points.
    """
    obs = np.flatnonzero(layout.mask[:, i])
    mis = np.flatnonzero(~layout.mask[:, i])
    Y = layout.Yfull[obs, i]
    s2 = state.sigma_eps2
    if z is None:
        z = rng.standard_normal(layout.p)
    if mis.size == 0:
        G = _woodbury_factor(state.F, s2, pd_floor)
        return _conditional_gaussian_draw(G, state.mu, Y, s2, z)
    Sigma = state.Sigma
    Z_mis = state.Z[mis, i] if Z_mis is None else np.asarray(Z_mis, dtype=float)
    _, V, W, L = _missing_moments(Sigma, state.mu, state.Z[obs, i], obs, mis, pd_floor)
    if degenerate:
        return _collapsed_draw(state.mu[obs], Y, L, s2, z, pd_floor)
    LV = _chol(V, pd_floor)
    return _observed_draw(state.mu[obs], state.mu[mis], Z_mis, Y, W, L, LV, s2, z, pd_floor)


def _chol_batch(M, pd_floor):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return np.stack([_chol(m, pd_floor) for m in M])


def _is_degenerate(V, threshold):
    # smallest eigenvalue below threshold  <=>  V - threshold I not PD
    _, info = dpotrf(V - threshold * np.eye(V.shape[0]), lower=1, clean=0)
    return info != 0


def _update_signals_alternating(state, layout, rng, degenerate_threshold, pd_floor):
    """Signal update on uncommon grids, missing block first.

    Curves without missing points share one factor. For the others the
    missing block is drawn from its conditional given the observed block, then
    the observed block from its full conditional. The precision of the latter,
    ``I/s2 + Sigma_oo^{-1} + B^T V*^{-1} B``, equals ``I/s2 + (Sigma^{-1})_oo``
    and its linear term equals
    ``Y/s2 + (Sigma^{-1})_oo mu_o - (Sigma^{-1})_om (Z* - mu_m)``, so one
    inverse of ``Sigma`` per sweep serves every curve; work is stacked over
    curves sharing an observed count.
    """
    s2 = state.sigma_eps2
    mu = state.mu
    p = layout.p
    Z = state.Z.copy()
    zeta_obs = rng.standard_normal((layout.n, p))
    if layout.complete.size:
        c = layout.complete
        G = _woodbury_factor(state.F, s2, pd_floor)
        Z[:, c] = _conditional_gaussian_draw(G, mu[:, None], layout.Yfull[:, c], s2, zeta_obs[c].T)
    if not layout.groups:
        return Z, 0
    zeta_mis = rng.standard_normal((layout.n, p))
    Sigma = state.Sigma
    threshold = degenerate_threshold * _spectral_radius(Sigma)
    Finv = np.linalg.solve(state.F, np.eye(p))
    Lam = Finv.T @ Finv
    n_degenerate = 0
    for g in layout.groups:
        cols, obs, mis = g.curves, g.obs, g.mis
        k, m = obs.shape[1], mis.shape[1]
        flat = Sigma.ravel()
        L = _chol_batch(flat[g.oo], pd_floor)
        S_om = flat[g.om]
        dz = Z[obs, cols[:, None]] - mu[obs]
        # one triangular solve per curve for [Sigma_om | Z_o - mu_o]
        X = np.stack([_trsolve(L[j], np.column_stack([S_om[j], dz[j]])) for j in range(cols.size)])
        W, a = X[:, :, :m], X[:, :, m]
        V = flat[g.mm] - _t(W) @ W
        V = 0.5 * (V + _t(V))
        Z_mis = mu[mis] + (_t(W) @ a[..., None])[..., 0]
        deg = np.array([_is_degenerate(v, threshold) for v in V])
        n_degenerate += int(deg.sum())
        for j in np.flatnonzero(deg):
            i, o = cols[j], obs[j]
            Z[o, i] = _collapsed_draw(mu[o], g.Y[j], L[j], s2, zeta_obs[i], pd_floor)
        ok = np.flatnonzero(~deg)
        if ok.size:
            o, u, ci = obs[ok], mis[ok], cols[ok]
            LV = _chol_batch(V[ok], pd_floor)
            Z_mis[ok] += (LV @ zeta_mis[ci, :m, None])[..., 0]
            L_oo = Lam.ravel()[g.oo[ok]]
            L_om = Lam.ravel()[g.om[ok]]
            P = L_oo + np.eye(k) / s2
            rhs = (g.Y[ok] / s2 + (L_oo @ mu[o][..., None])[..., 0]
                   - (L_om @ (Z_mis[ok] - mu[u])[..., None])[..., 0])
            # x = P^{-1}(rhs + R z) with R R^T = P has mean P^{-1} rhs, covariance P^{-1}
            R = _chol_batch(P, pd_floor)
            noise = (R @ zeta_obs[ci, :k, None])[..., 0]
            Z[o, ci[:, None]] = np.linalg.solve(P, (rhs + noise)[..., None])[..., 0]
        Z[mis, cols[:, None]] = Z_mis
    return Z, n_degenerate


def _update_signals_blocked(state, layout, rng, degenerate_threshold, pd_floor):
    """Signal update on uncommon grids as one exact draw of each curve's full conditional.

    Pathwise conditioning: with a prior path ``X = mu + F xi`` and prior noise
    ``e``, ``X + Sigma_{., o} (Sigma_oo + s2 I)^{-1} (Y - X_o - e)`` is a draw
    of the signal on the whole pooled grid given its observed values. Only the
    well-conditioned ``Sigma_oo + s2 I`` is factored, so near-singular
    conditional variances of the missing block need no special handling and
    ``degenerate_threshold`` is unused.
    """
    s2 = state.sigma_eps2
    mu = state.mu
    p = layout.p
    Z = state.Z.copy()
    zeta_obs = rng.standard_normal((layout.n, p))
    if layout.complete.size:
        c = layout.complete
        G = _woodbury_factor(state.F, s2, pd_floor)
        Z[:, c] = _conditional_gaussian_draw(G, mu[:, None], layout.Yfull[:, c], s2, zeta_obs[c].T)
    if not layout.groups:
        return Z, 0
    zeta_mis = rng.standard_normal((layout.n, p))
    Sigma = state.Sigma
    flat = Sigma.ravel()
    for g in layout.groups:
        cols, obs = g.curves, g.obs
        k = obs.shape[1]
        X = mu[:, None] + state.F @ zeta_obs[cols].T                    # (p, g) prior paths
        e = np.sqrt(s2) * zeta_mis[cols, :k]
        r = g.Y - X[obs, np.arange(cols.size)[:, None]] - e              # (g, k)
        K = flat[g.oo] + s2 * np.eye(k)
        x = np.linalg.solve(K, r[..., None])[..., 0]                    # (g, k)
        # Sigma_{., o} x  =  Sigma (H^T x)
        Hx = np.zeros((p, cols.size))
        Hx[obs, np.arange(cols.size)[:, None]] = x
        Z[:, cols] = X + Sigma @ Hx
    return Z, 0


# ---------------------------------------------------------------------------
# noise variance, mean, covariance, scale variance


def update_noise_variance(state: SamplerState, layout: CurveLayout, hyper: Hyperparams, rng):
    """Inverse-Gamma draw from residuals at observed points only."""
    resid = np.where(layout.mask, layout.Yfull - state.Z, 0.0)
    rss = float(np.sum(resid ** 2))
    return float(sample_inverse_gamma(hyper.a_eps + 0.5 * layout.n_obs, hyper.b_eps + 0.5 * rss, rng))


def update_mean(state: SamplerState, hyper: Hyperparams, rng):
    n = state.Z.shape[1]
    w = n + hyper.c
    centre = (state.Z.sum(axis=1) + hyper.c * hyper.mu0) / w
    return centre + state.F @ rng.standard_normal(centre.size) / np.sqrt(w)


def covariance_scale(state: SamplerState, hyper: Hyperparams) -> np.ndarray:
    """IW scale ``Q`` of the covariance full conditional."""
    R = state.Z - state.mu[:, None]
    d = state.mu - hyper.mu0
    Q = R @ R.T + hyper.c * np.outer(d, d) + state.sigma_s2 * hyper.A
    return 0.5 * (Q + Q.T)


def update_covariance(state: SamplerState, hyper: Hyperparams, rng, pd_floor=DEFAULT_PD_FLOOR):
    """Draw ``Sigma ~ IW(n + delta + 1, Q)`` (Dawid form); returns the factor ``F``.

    ``Sigma^{-1} ~ Wishart(n + delta + p, Q^{-1})``.
    """
    n = state.Z.shape[1]
    Q = covariance_scale(state, hyper)
    LQ = chol_repaired(Q, pd_floor)
    p = Q.shape[0]
    Bt = bartlett_factor(n + hyper.delta + 1 + p - 1, p, rng)
    return solve_triangular(Bt, LQ.T, lower=True, check_finite=False).T


def trace_A_sigma_inv(F, A_chol) -> float:
    X = np.linalg.solve(F, A_chol)
    return float(np.sum(X * X))


def update_sigma_s(state: SamplerState, hyper: Hyperparams, rng, A_chol=None):
    """Gamma draw for the IW scale variance given ``Sigma``."""
    p = hyper.p
    if A_chol is None:
        A_chol = chol_repaired(hyper.A, hyper.pd_floor)
    shape = hyper.a_s + 0.5 * (hyper.delta + p - 1) * p
    rate = hyper.b_s + 0.5 * trace_A_sigma_inv(state.F, A_chol)
    return float(sample_gamma(shape, rate, rng))


# ---------------------------------------------------------------------------
# orchestration


def init_state(layout: CurveLayout, hyper: Hyperparams) -> SamplerState:
    """Raw data at observed points, the prior mean at missing points, ``Sigma = I``."""
    if hyper.p != layout.p:
        raise ValueError(f"hyperparameters live on p={hyper.p}, data pool to p={layout.p}")
    Z = np.where(layout.mask, layout.Yfull, hyper.mu0[:, None])
    noise = hyper.noise_var if hyper.noise_var is not None else hyper.b_eps / hyper.a_eps
    s_s2 = hyper.sigma_s2_hat if hyper.sigma_s2_hat is not None else hyper.a_s / hyper.b_s
    return SamplerState(Z, hyper.mu0.copy(), np.eye(layout.p), float(noise), float(s_s2), 0)


def loglik(state: SamplerState, layout: CurveLayout) -> float:
    resid = np.where(layout.mask, layout.Yfull - state.Z, 0.0)
    s2 = state.sigma_eps2
    return float(-0.5 * layout.n_obs * np.log(2 * np.pi * s2) - 0.5 * np.sum(resid ** 2) / s2)


def sweep(state: SamplerState, layout: CurveLayout, hyper: Hyperparams, rng,
          config: SamplerConfig, A_chol=None):
    """One full pass of the five conditional updates. Mutates and returns ``state``."""
    frozen = config.frozen
    n_deg = 0
    if "signals" not in frozen:
        if layout.common and not config.force_sparse_path:
            state.Z = update_signals_common(state, layout, rng, config.pd_floor)
        else:
            update = (_update_signals_blocked if config.sparse_scheme == "blocked"
                      else _update_signals_alternating)
            state.Z, n_deg = update(state, layout, rng, config.degenerate_threshold, config.pd_floor)
    if "sigma_eps2" not in frozen:
        state.sigma_eps2 = update_noise_variance(state, layout, hyper, rng)
    if "mu" not in frozen:
        state.mu = update_mean(state, hyper, rng)
    if "Sigma" not in frozen:
        state.F = update_covariance(state, hyper, rng, config.pd_floor)
    if "sigma_s2" not in frozen:
        state.sigma_s2 = update_sigma_s(state, hyper, rng, A_chol)
    state.iteration += 1
    return state, n_deg


@dataclass
class Chain:
    """Retained post-burn-in draws of one chain plus running means."""

    grid: np.ndarray
    ids: list
    sigma_eps2: np.ndarray
    sigma_s2: np.ndarray
    loglik: np.ndarray
    cov_sum: np.ndarray
    cor_sum: np.ndarray
    signal_sum: np.ndarray
    mean_sum: np.ndarray
    n_draws: int
    signals: np.ndarray | None = None
    mean: np.ndarray | None = None
    cov_diag: np.ndarray | None = None
    cov_full: np.ndarray | None = None
    degenerate_rate: float = 0.0
    meta: dict = field(default_factory=dict)

    _ARRAYS = ("grid", "sigma_eps2", "sigma_s2", "loglik", "cov_sum", "cor_sum", "signal_sum",
               "mean_sum", "signals", "mean", "cov_diag", "cov_full")

    def save(self, directory, full: bool = True) -> Path:
        """Write ``chain.npz`` and ``manifest.json``.

        With ``full=False`` the per-draw signals and full covariance draws are
        left out, which keeps dumps small while retaining every monitored
        scalar trace and the running means.
        """
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        skip = () if full else ("signals", "cov_full")
        arrays = {k: getattr(self, k) for k in self._ARRAYS
                  if getattr(self, k) is not None and k not in skip}
        with open(d / "chain.npz.tmp", "wb") as fh:
            np.savez(fh, **arrays)
        (d / "chain.npz.tmp").replace(d / "chain.npz")
        manifest = dict(self.meta)
        manifest.update(ids=self.ids, n_draws=self.n_draws, degenerate_rate=self.degenerate_rate,
                        dims={k: list(v.shape) for k, v in arrays.items()})
        tmp = d / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
        tmp.replace(d / "manifest.json")
        return d

    @classmethod
    def load(cls, directory) -> "Chain":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        with np.load(d / "chain.npz") as z:
            arrays = {k: z[k] for k in z.files}
        meta = {k: v for k, v in manifest.items() if k not in ("ids", "n_draws", "degenerate_rate", "dims")}
        return cls(ids=manifest["ids"], n_draws=manifest["n_draws"],
                   degenerate_rate=manifest["degenerate_rate"], meta=meta,
                   **{k: arrays.get(k) for k in cls._ARRAYS})


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


class _Recorder:
    def __init__(self, layout, config):
        S = config.n_samples // config.thin
        p, n = layout.p, layout.n
        self.S = S
        self.k = 0
        self.config = config
        self.sigma_eps2 = np.empty(S)
        self.sigma_s2 = np.empty(S)
        self.signals = np.empty((S, p, n)) if config.store_signals else None
        self.mean = np.empty((S, p)) if config.store_mean else None
        self.cov_diag = np.empty((S, p)) if config.store_cov_diag else None
        self.cov_full = np.empty((-(-S // config.cov_every), p, p))
        self.cov_sum = np.zeros((p, p))
        self.cor_sum = np.zeros((p, p))
        self.signal_sum = np.zeros((p, n))
        self.mean_sum = np.zeros(p)

    def record(self, state):
        k = self.k
        Sigma = state.Sigma
        sd = np.sqrt(np.diag(Sigma))
        self.sigma_eps2[k] = state.sigma_eps2
        self.sigma_s2[k] = state.sigma_s2
        if self.signals is not None:
            self.signals[k] = state.Z
        if self.mean is not None:
            self.mean[k] = state.mu
        if self.cov_diag is not None:
            self.cov_diag[k] = np.diag(Sigma)
        if k % self.config.cov_every == 0:
            self.cov_full[k // self.config.cov_every] = Sigma
        self.cov_sum += Sigma
        cor = Sigma / np.outer(sd, sd)
        np.fill_diagonal(cor, 1.0)
        self.cor_sum += cor
        self.signal_sum += state.Z
        self.mean_sum += state.mu
        self.k += 1

    def state_arrays(self):
        return {k: getattr(self, k) for k in
                ("sigma_eps2", "sigma_s2", "signals", "mean", "cov_diag", "cov_full",
                 "cov_sum", "cor_sum", "signal_sum", "mean_sum") if getattr(self, k) is not None}


def _write_checkpoint(directory, state, rng, recorder, lls, n_deg, config):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arrays = {"Z": state.Z, "mu": state.mu, "F": state.F, "loglik": np.asarray(lls)}
    arrays.update({f"rec_{k}": v for k, v in recorder.state_arrays().items()})
    np.savez(d / "checkpoint.npz", **arrays)
    meta = {"iteration": state.iteration, "sigma_eps2": state.sigma_eps2,
            "sigma_s2": state.sigma_s2, "rng": rng.bit_generator.state,
            "recorded": recorder.k, "n_degenerate": n_deg, "config": asdict(config)}
    tmp = d / "checkpoint.json.tmp"
    tmp.write_text(json.dumps(meta, default=_json_default))
    tmp.replace(d / "checkpoint.json")
    return d


def load_checkpoint(directory):
    """Read a snapshot written during :func:`run_chain`; returns ``(state, meta, arrays)``."""
    d = Path(directory)
    meta = json.loads((d / "checkpoint.json").read_text())
    with np.load(d / "checkpoint.npz") as z:
        arrays = {k: z[k] for k in z.files}
    state = SamplerState(arrays["Z"], arrays["mu"], arrays["F"], meta["sigma_eps2"],
                         meta["sigma_s2"], meta["iteration"])
    return state, meta, arrays


def run_chain(data: FunctionalDataset, hyper: Hyperparams, config: SamplerConfig | None = None,
              init: SamplerState | None = None, resume_from=None, grid: PooledGrid | None = None,
              progress=None) -> Chain:
    """Run burn-in plus sampling sweeps and collect retained draws.

    Parameters
    ----------
    init : SamplerState, optional
        Starting point; blocks listed in ``config.frozen`` stay at these values.
    resume_from : path, optional
        Checkpoint directory to continue from.
    progress : callable, optional
        Called as ``progress(iteration, state)`` after each sweep.
    """
    config = SamplerConfig() if config is None else config
    layout = CurveLayout.build(data, grid)
    A_chol = chol_repaired(hyper.A, config.pd_floor)
    rng = rng_stream(config.seed, config.chain_id)
    recorder = _Recorder(layout, config)
    lls: list = []
    n_deg = 0
    if resume_from is not None:
        state, meta, arrays = load_checkpoint(resume_from)
        rng.bit_generator.state = meta["rng"]
        recorder.k = meta["recorded"]
        n_deg = meta["n_degenerate"]
        lls = list(arrays["loglik"])
        for k, v in arrays.items():
            if k.startswith("rec_"):
                getattr(recorder, k[4:])[...] = v
    else:
        state = init_state(layout, hyper) if init is None else init.copy()
    total = config.n_burnin + config.n_samples
    t0 = time.perf_counter()
    it = state.iteration
    try:
        while it < total:
            state, nd = sweep(state, layout, hyper, rng, config, A_chol)
            it = state.iteration
            n_deg += nd
            lls.append(loglik(state, layout))
            post = it - config.n_burnin
            if post > 0 and post % config.thin == 0 and recorder.k < recorder.S:
                recorder.record(state)
            if config.checkpoint_every and config.checkpoint_dir and it % config.checkpoint_every == 0:
                _write_checkpoint(config.checkpoint_dir, state, rng, recorder, lls, n_deg, config)
            if progress is not None:
                progress(it, state)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        snap = None
        if config.checkpoint_dir:
            snap = str(_write_checkpoint(config.checkpoint_dir, state, rng, recorder, lls, n_deg, config))
        raise SamplerError(f"Gibbs step failed: {exc}", state.iteration, snap) from exc
    wall = time.perf_counter() - t0
    n_missing_curves = sum(g.curves.size for g in layout.groups)
    deg_rate = n_deg / (total * n_missing_curves) if n_missing_curves else 0.0
    meta = {
        "seed": config.seed, "chain_id": config.chain_id, "config": asdict(config),
        "hyperparams": hyper.to_dict(), "wall_time": wall, "p": layout.p, "n": layout.n,
        "common_grid": layout.common,
    }
    return Chain(
        grid=layout.points.copy(), ids=list(data.ids), sigma_eps2=recorder.sigma_eps2,
        sigma_s2=recorder.sigma_s2, loglik=np.asarray(lls), cov_sum=recorder.cov_sum,
        cor_sum=recorder.cor_sum, signal_sum=recorder.signal_sum, mean_sum=recorder.mean_sum,
        n_draws=recorder.k, signals=recorder.signals, mean=recorder.mean,
        cov_diag=recorder.cov_diag, cov_full=recorder.cov_full, degenerate_rate=deg_rate,
        meta=meta,
    )
