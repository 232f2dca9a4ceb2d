"""Matérn kernels, scale-kernel construction and positive-definite repair."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import gammaln, kve

__all__ = [
    "DEFAULT_PD_FLOOR",
    "MaternParams",
    "ScaleKernelSpec",
    "build_scale_kernel",
    "empirical_covariance",
    "matern_cor",
    "matern_cor_bessel",
    "matern_matrix",
    "moving_average_matrix",
    "nearest_pd",
]

DEFAULT_PD_FLOOR = 1e-10

# polynomial coefficients for nu = k + 1/2:
# k!/(2k)! * sum_i (k+i)!/(i!(k-i)!) (2x)^(k-i)
_HALF_INTEGER = {0.5: 0, 1.5: 1, 2.5: 2, 3.5: 3, 4.5: 4}


@dataclass(frozen=True)
class MaternParams:
    rho: float
    nu: float
    sigma_s2: float = 1.0

    def __post_init__(self):
        if not (self.rho > 0 and self.nu > 0 and self.sigma_s2 > 0):
            raise ValueError(f"Matérn parameters must be positive, got {self}")


def _check(rho, nu):
    if not (rho > 0):
        raise ValueError(f"rho must be positive, got {rho}")
    if not (nu > 0):
        raise ValueError(f"nu must be positive, got {nu}")


def _half_integer_poly(x, k):
    coef = [
        math.factorial(k) / math.factorial(2 * k)
        * math.factorial(k + i) / (math.factorial(i) * math.factorial(k - i))
        * 2.0 ** (k - i)
        for i in range(k + 1)
    ]
    # coef[i] multiplies x^(k-i)
    return np.polyval(coef, x) * np.exp(-x)


def matern_cor_bessel(d, rho, nu):
    """Matérn correlation through the modified Bessel function of the second kind.

    Evaluated in log space with the exponentially scaled ``kve`` so large
    orders do not overflow.
    """
    _check(rho, nu)
    d = np.asarray(d, dtype=float)
    x = math.sqrt(2.0 * nu) * d / rho
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    with np.errstate(divide="ignore"):
        logk = np.log(kve(nu, xp)) - xp
    out[pos] = np.exp((1.0 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(xp) + logk)
    return out


def matern_cor(d, rho, nu):
    """Matérn correlation ``Matern_cor(d; rho, nu)``.

    Half-integer orders up to 4.5 use the closed polynomial-times-exponential
    form; other orders go through :func:`matern_cor_bessel`.

    Parameters
    ----------
    d : float or array_like
        Non-negative distances.
    rho, nu : float
        Length-scale and smoothness order, both positive.
    """
    _check(rho, nu)
    scalar = np.ndim(d) == 0
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(~np.isfinite(d)):
        raise ValueError("distances must be finite and non-negative")
    k = _HALF_INTEGER.get(float(nu))
    if k is None:
        out = matern_cor_bessel(d, rho, nu)
    else:
        out = _half_integer_poly(math.sqrt(2.0 * nu) * d / rho, k)
    return float(out) if scalar else out


def matern_matrix(grid, params: MaternParams) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    D = np.abs(grid[:, None] - grid[None, :])
    # upper triangle evaluated once and mirrored: exact symmetry
    iu = np.triu_indices(grid.size, 1)
    M = np.empty_like(D)
    vals = params.sigma_s2 * matern_cor(D[iu], params.rho, params.nu)
    M[iu] = vals
    M.T[iu] = vals
    np.fill_diagonal(M, params.sigma_s2)
    return M


def nearest_pd(M, pd_floor: float = DEFAULT_PD_FLOOR) -> np.ndarray:
    """Clamp the spectrum of a symmetric matrix from below ("jittering").

    The floor is ``pd_floor * max(largest eigenvalue, 1)``. A matrix whose
    smallest eigenvalue already clears the floor is returned symmetrised but
    otherwise untouched.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise np.linalg.LinAlgError("matrix has non-finite entries")
    S = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(S)
    floor = pd_floor * max(w[-1], 1.0)
    if w[0] >= floor:
        return S
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def moving_average_matrix(p: int, window: int) -> np.ndarray:
    """Row-stochastic centred moving-average operator.

    Near the edges the window shrinks symmetrically, so linear sequences pass
    through unchanged.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    h = window // 2
    K = np.zeros((p, p))
    for j in range(p):
        r = min(h, j, p - 1 - j)
        K[j, j - r:j + r + 1] = 1.0 / (2 * r + 1)
    return K


def empirical_covariance(data, grid):
    """Pairwise-complete cross-sectional covariance on the pooled grid.

    Returns ``(C, counts)`` where ``counts[j, k]`` is the number of curves
    observing both grid points. Entries with fewer than two shared curves are
    NaN.
    """
    p, n = grid.p, len(grid.obs)
    Y = np.full((p, n), np.nan)
    for i, (c, idx) in enumerate(zip(data.curves, grid.obs)):
        Y[idx, i] = c.y
    if grid.is_common():
        C = np.cov(Y)
        return np.atleast_2d(C), np.full((p, p), n)
    Wm = np.isfinite(Y).astype(float)
    Y0 = np.where(Wm > 0, Y, 0.0)
    counts = Wm @ Wm.T
    with np.errstate(invalid="ignore", divide="ignore"):
        # pairwise means over the shared curves
        sx = Y0 @ Wm.T
        sxy = Y0 @ Y0.T
        C = (sxy - sx * sx.T / counts) / (counts - 1)
    C[counts < 2] = np.nan
    return C, counts


@dataclass(frozen=True)
class ScaleKernelSpec:
    """Which base kernel ``A`` scales the inverse-Wishart prior.

    ``kind`` is one of ``"matern"``, ``"empirical"`` or ``"file"``.
    """

    kind: str = "matern"
    matern: Optional[MaternParams] = None
    path: Optional[str] = None
    window: int = 5

    def __post_init__(self):
        if self.kind not in ("matern", "empirical", "file"):
            raise ValueError(f"unknown scale kernel kind {self.kind!r}")
        if self.kind == "file" and self.path is None:
            raise ValueError("file scale kernel requires a path")


def _load_matrix(path) -> np.ndarray:
    text = Path(path).read_text().replace(",", " ")
    rows = [list(map(float, line.split())) for line in text.splitlines() if line.strip()]
    if len({len(r) for r in rows}) > 1:
        raise ValueError(f"ragged matrix in {path}")
    return np.array(rows)


def _unit_diagonal(M):
    d = np.sqrt(np.diag(M))
    out = M / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    return out


def build_scale_kernel(spec: ScaleKernelSpec, grid, data=None,
                       pd_floor: float = DEFAULT_PD_FLOOR) -> np.ndarray:
    """Evaluate the scale kernel ``A`` on the pooled grid.

    ``matern`` gives a unit-diagonal Matérn correlation. ``empirical`` smooths
    the cross-sectional covariance of the raw curves with a centred moving
    average along both axes, repairs it to PD and rescales to unit diagonal.
    ``file`` loads a dense matrix, symmetrises and repairs it.
    """
    points = grid.points if hasattr(grid, "points") else np.asarray(grid, dtype=float)
    p = points.size
    if spec.kind == "matern":
        if spec.matern is None:
            raise ValueError("matern scale kernel requires MaternParams")
        m = spec.matern
        A = matern_matrix(points, MaternParams(m.rho, m.nu, 1.0))
        return nearest_pd(A, pd_floor)
    if spec.kind == "file":
        A = _load_matrix(spec.path)
        if A.shape != (p, p):
            raise ValueError(f"scale kernel file is {A.shape}, expected {(p, p)}")
        return nearest_pd(A, pd_floor)
    if data is None:
        raise ValueError("empirical scale kernel requires the dataset")
    C, counts = empirical_covariance(data, grid)
    if np.any(np.isnan(C)):
        raise ValueError(
            "empirical scale kernel impossible: some grid-point pairs share fewer than 2 curves"
        )
    K = moving_average_matrix(p, spec.window)
    S = K @ C @ K.T
    A = nearest_pd(S, pd_floor)
    return nearest_pd(_unit_diagonal(A), pd_floor)
