"""Seeded samplers for the distributions used by the Gibbs sampler.

Every sampler takes an explicit :class:`numpy.random.Generator`; use
:func:`rng_stream` to derive reproducible, independent streams from a
``(seed, stream_id)`` pair.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .kernels import DEFAULT_PD_FLOOR, nearest_pd

__all__ = [
    "chol_repaired",
    "rng_stream",
    "sample_gamma",
    "sample_inverse_gamma",
    "sample_iw_dawid",
    "sample_iw_dawid_factor",
    "sample_mvn",
    "sample_wishart",
    "bartlett_factor",
]


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Generator for stream ``stream_id`` of a top-level ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def chol_repaired(M, pd_floor: float = DEFAULT_PD_FLOOR) -> np.ndarray:
    """Lower Cholesky factor, jittering the spectrum once if the first attempt fails."""
    try:
        return cholesky(M, lower=True, check_finite=False)
    except LinAlgError:
        return cholesky(nearest_pd(M, pd_floor), lower=True, check_finite=False)


def sample_mvn(mean, cov, rng: np.random.Generator, pd_floor: float = DEFAULT_PD_FLOOR):
    mean = np.asarray(mean, dtype=float)
    L = chol_repaired(np.atleast_2d(cov), pd_floor)
    return mean + L @ rng.standard_normal(mean.size)


def bartlett_factor(df: float, p: int, rng: np.random.Generator) -> np.ndarray:
    """Lower-triangular ``B`` with ``B B^T ~ Wishart(df, I_p)``.

    The diagonal holds square roots of chi-square draws with ``df - j``
    degrees of freedom (non-integer ``df`` allowed); the strict lower triangle
    is standard normal.
    """
    if not df > p - 1:
        raise ValueError(f"Wishart degrees of freedom {df} must exceed p - 1 = {p - 1}")
    B = np.zeros((p, p))
    B[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    il = np.tril_indices(p, -1)
    B[il] = rng.standard_normal(il[0].size)
    return B


def sample_wishart(df: float, scale, rng: np.random.Generator) -> np.ndarray:
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    p = scale.shape[0]
    if not df > p - 1:
        raise ValueError(f"Wishart degrees of freedom {df} must exceed p - 1 = {p - 1}")
    L = cholesky(scale, lower=True)
    LB = L @ bartlett_factor(df, p, rng)
    W = LB @ LB.T
    return 0.5 * (W + W.T)


def _check_delta(delta):
    if not delta >= 3:
        raise ValueError(f"inverse-Wishart shape delta must be >= 3, got {delta}")
    if delta < 5:
        warnings.warn(f"delta={delta} is below 5; the prior may be very diffuse", stacklevel=3)


def sample_iw_dawid_factor(delta: float, psi, rng: np.random.Generator,
                           chol_psi=None) -> np.ndarray:
    """Square factor ``F`` with ``F F^T ~ IW(delta, psi)`` in Dawid's form.

    ``Sigma^{-1} ~ Wishart(delta + p - 1, psi^{-1})``. With ``psi = L L^T``
    and the Bartlett factor ``B`` this is ``Sigma = (L B^{-T})(L B^{-T})^T``,
    which needs only triangular solves.
    """
    if chol_psi is None:
        psi = np.atleast_2d(np.asarray(psi, dtype=float))
        try:
            chol_psi = cholesky(psi, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise LinAlgError("inverse-Wishart scale matrix is singular") from exc
    p = chol_psi.shape[0]
    B = bartlett_factor(delta + p - 1, p, rng)
    # F^T = B^{-1} L^T
    return solve_triangular(B, chol_psi.T, lower=True, check_finite=False).T


def sample_iw_dawid(delta: float, psi, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Sigma ~ IW(delta, psi)`` with Dawid's dimension-free shape ``delta``.

    The mean is ``psi / (delta - 2)``.
    """
    _check_delta(delta)
    F = sample_iw_dawid_factor(delta, psi, rng)
    S = F @ F.T
    return 0.5 * (S + S.T)


def sample_gamma(shape, rate, rng: np.random.Generator, size=None):
    """Gamma draw parameterised by shape and rate (inverse scale)."""
    if not (np.all(np.asarray(shape) > 0) and np.all(np.asarray(rate) > 0)):
        raise ValueError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size)


def sample_inverse_gamma(shape, scale, rng: np.random.Generator, size=None):
    """Inverse-Gamma(shape, scale) as the reciprocal of Gamma(shape, rate=scale)."""
    if not (np.all(np.asarray(shape) > 0) and np.all(np.asarray(scale) > 0)):
        raise ValueError("inverse-gamma shape and scale must be positive")
    return 1.0 / sample_gamma(shape, scale, rng, size=size)
