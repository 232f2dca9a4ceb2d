"""Posterior summaries, credible intervals and convergence diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gibbs import Chain

__all__ = [
    "Band",
    "PosteriorSummary",
    "coverage",
    "coverage_probability",
    "gelman_rubin",
    "load_summary",
    "monitored_scalars",
    "rhat_report",
    "summarize",
    "write_summary",
]

MIN_COV_DRAWS = 100


@dataclass
class Band:
    """Posterior mean with pointwise lower/upper credible bounds."""

    mean: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)


@dataclass
class PosteriorSummary:
    grid: np.ndarray
    ids: list
    level: float
    n_draws: int
    signals: Band
    mean_curve: Band
    covariance: Band
    covariance_diag: Band
    correlation: np.ndarray
    sigma_eps2: Band
    sigma_s2: Band
    rhat: dict = field(default_factory=dict)


def _band(draws, level, mean=None):
    draws = np.asarray(draws, dtype=float)
    q = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
    m = draws.mean(axis=0) if mean is None else mean
    return Band(m, q[0], q[1])


def _pool(chains, name):
    arrs = [getattr(c, name) for c in chains]
    if any(a is None for a in arrs):
        return None
    return np.concatenate(arrs, axis=0)


def summarize(chains, level: float = 0.95, cov_ci: bool = True) -> PosteriorSummary:
    """Posterior means and pointwise credible intervals from one or more chains.

    Draws of several chains are pooled; with two or more chains the split
    R-hat of the monitored scalars is attached. Intervals are empirical
    ``(1 - level)/2`` and ``(1 + level)/2`` quantiles.

    Parameters
    ----------
    chains : Chain or sequence of Chain
    level : float
        Credible level in (0, 1).
    cov_ci : bool
        Compute pointwise intervals for the full covariance surface from the
        decimated draws. Requires at least 100 stored surfaces.
    """
    if isinstance(chains, Chain):
        chains = [chains]
    chains = list(chains)
    if not chains or any(c.n_draws == 0 for c in chains):
        raise ValueError("cannot summarize an empty chain")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    total = sum(c.n_draws for c in chains)
    signal_mean = sum(c.signal_sum for c in chains) / total
    mu_mean = sum(c.mean_sum for c in chains) / total
    cov_mean = sum(c.cov_sum for c in chains) / total
    cor_mean = sum(c.cor_sum for c in chains) / total
    np.fill_diagonal(cor_mean, 1.0)

    S = _pool(chains, "signals")
    signals = _band(S, level, signal_mean) if S is not None else Band(signal_mean)
    M = _pool(chains, "mean")
    mean_curve = _band(M, level, mu_mean) if M is not None else Band(mu_mean)
    D = _pool(chains, "cov_diag")
    cov_diag = _band(D, level, np.diag(cov_mean).copy()) if D is not None else Band(np.diag(cov_mean).copy())
    covariance = Band(cov_mean)
    if cov_ci:
        Cf = _pool(chains, "cov_full")
        if Cf is None or Cf.shape[0] < MIN_COV_DRAWS:
            got = 0 if Cf is None else Cf.shape[0]
            raise ValueError(
                f"covariance intervals need at least {MIN_COV_DRAWS} stored surfaces, got {got}"
            )
        covariance = _band(Cf, level, cov_mean)
    rhat = rhat_report(chains) if len(chains) >= 2 else {}
    return PosteriorSummary(
        grid=np.asarray(chains[0].grid, dtype=float), ids=list(chains[0].ids), level=level,
        n_draws=total, signals=signals, mean_curve=mean_curve, covariance=covariance,
        covariance_diag=cov_diag, correlation=cor_mean,
        sigma_eps2=_band(_pool(chains, "sigma_eps2"), level),
        sigma_s2=_band(_pool(chains, "sigma_s2"), level),
        rhat=rhat,
    )


def gelman_rubin(chains) -> float:
    """Split-chain potential scale reduction factor of a scalar.

    Each chain is cut into two halves (the middle draw is dropped for odd
    lengths) and the classic between/within comparison is applied to the
    halves. Constant input gives 1 when all halves agree and ``inf``
    otherwise.
    """
    arrs = [np.asarray(c, dtype=float).ravel() for c in chains]
    if len(arrs) < 2:
        raise ValueError("R-hat needs at least 2 chains")
    n = arrs[0].size
    if any(a.size != n for a in arrs) or n < 10:
        raise ValueError("R-hat needs chains of equal length >= 10")
    h = n // 2
    halves = np.array([part for a in arrs for part in (a[:h], a[n - h:])])
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean()
    B = h * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_plus = (h - 1) / h * W + B / h
    return float(np.sqrt(var_plus / W))


def _monitor_index(p):
    mu_idx = np.unique(np.round(np.linspace(0, p - 1, 5)).astype(int))
    cov_idx = np.unique(np.round(np.linspace(0, p - 1, 5)).astype(int)[1:4])
    return mu_idx, cov_idx


def monitored_scalars(chain: Chain) -> dict:
    """Scalar traces used for convergence checks.

    The noise variance, the IW scale variance, the mean curve at 5 equispaced
    grid points and the covariance diagonal at the three interior quartile
    points.
    """
    out = {"sigma_eps2": chain.sigma_eps2, "sigma_s2": chain.sigma_s2}
    p = chain.grid.size
    mu_idx, cov_idx = _monitor_index(p)
    if chain.mean is not None:
        for j in mu_idx:
            out[f"mu[{j}]"] = chain.mean[:, j]
    if chain.cov_diag is not None:
        for j in cov_idx:
            out[f"Sigma[{j},{j}]"] = chain.cov_diag[:, j]
    return out


def rhat_report(chains) -> dict:
    traces = [monitored_scalars(c) for c in chains]
    n = min(c.n_draws for c in chains)
    return {k: gelman_rubin([t[k][:n] for t in traces]) for k in traces[0]}


def coverage(lower, upper, truth) -> float:
    lower, upper, truth = (np.asarray(a, dtype=float) for a in (lower, upper, truth))
    if not lower.shape == upper.shape == truth.shape:
        raise ValueError(f"shape mismatch: bands {lower.shape}, truth {truth.shape}")
    return float(np.mean((truth >= lower) & (truth <= upper)))


def coverage_probability(summary: PosteriorSummary, truth, target: str = "signals") -> float:
    """Fraction of coordinates whose true value lies inside the credible band.

    ``target`` is one of ``"signals"``, ``"mean_curve"``, ``"covariance"``
    or ``"covariance_diag"``.
    """
    band = getattr(summary, target)
    if band.lower is None:
        raise ValueError(f"no credible interval stored for {target}")
    return coverage(band.lower, band.upper, truth)


# ---------------------------------------------------------------------------
# export


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path, header, rows):
    tmp = Path(str(path) + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def _write_matrix(path, M):
    _write_rows(path, None, [[_fmt(v) for v in row] for row in np.asarray(M)])


def _scalar(b: Band) -> dict:
    return {"mean": float(b.mean), "lower": float(b.lower), "upper": float(b.upper)}


def write_summary(summary: PosteriorSummary, directory) -> list:
    """Write CSV files per object plus ``report.json``; returns the paths written.

    Floats use ``repr`` so that identical summaries give identical bytes.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    t = summary.grid
    s = summary.signals
    paths = []

    def bounds(b, *idx):
        if b.lower is None:
            return ["", ""]
        return [_fmt(b.lower[idx]), _fmt(b.upper[idx])]

    rows = []
    for i, cid in enumerate(summary.ids):
        for j in range(t.size):
            rows.append([cid, _fmt(t[j]), _fmt(s.mean[j, i]), *bounds(s, j, i)])
    paths.append(d / "signals.csv")
    _write_rows(paths[-1], ["curve_id", "t", "mean", "lower", "upper"], rows)

    for name, band in (("mean.csv", summary.mean_curve), ("covariance_diag.csv", summary.covariance_diag)):
        rows = [[_fmt(t[j]), _fmt(band.mean[j]), *bounds(band, j)] for j in range(t.size)]
        paths.append(d / name)
        _write_rows(paths[-1], ["t", "mean", "lower", "upper"], rows)

    paths.append(d / "covariance.csv")
    _write_matrix(paths[-1], summary.covariance.mean)
    if summary.covariance.lower is not None:
        paths.append(d / "covariance_lower.csv")
        _write_matrix(paths[-1], summary.covariance.lower)
        paths.append(d / "covariance_upper.csv")
        _write_matrix(paths[-1], summary.covariance.upper)
    paths.append(d / "correlation.csv")
    _write_matrix(paths[-1], summary.correlation)

    report = {
        "level": summary.level, "n_draws": summary.n_draws,
        "grid": [float(v) for v in t], "ids": summary.ids,
        "sigma_eps2": _scalar(summary.sigma_eps2), "sigma_s2": _scalar(summary.sigma_s2),
        "rhat": summary.rhat,
    }
    paths.append(d / "report.json")
    tmp = d / "report.json.tmp"
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True))
    tmp.replace(paths[-1])
    return paths


def _read_matrix(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _read_band_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    mean = np.array([float(r["mean"]) for r in rows])
    if rows and rows[0]["lower"] != "":
        return Band(mean, np.array([float(r["lower"]) for r in rows]),
                    np.array([float(r["upper"]) for r in rows]))
    return Band(mean)


def load_summary(directory) -> PosteriorSummary:
    """Read a summary written by :func:`write_summary`."""
    d = Path(directory)
    report = json.loads((d / "report.json").read_text())
    grid = np.array(report["grid"])
    ids = report["ids"]
    p, n = grid.size, len(ids)
    with (d / "signals.csv").open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != p * n:
        raise ValueError(f"signals.csv has {len(rows)} rows, expected {p * n}")

    def col(key):
        return np.array([float(r[key]) for r in rows]).reshape(n, p).T

    signals = Band(col("mean"), col("lower"), col("upper")) if rows[0]["lower"] != "" else Band(col("mean"))
    cov = Band(_read_matrix(d / "covariance.csv"))
    if (d / "covariance_lower.csv").exists():
        cov.lower = _read_matrix(d / "covariance_lower.csv")
        cov.upper = _read_matrix(d / "covariance_upper.csv")

    def scalar(key):
        v = report[key]
        return Band(np.array(v["mean"]), np.array(v["lower"]), np.array(v["upper"]))

    return PosteriorSummary(
        grid=grid, ids=ids, level=report["level"], n_draws=report["n_draws"],
        signals=signals, mean_curve=_read_band_table(d / "mean.csv"), covariance=cov,
        covariance_diag=_read_band_table(d / "covariance_diag.csv"),
        correlation=_read_matrix(d / "correlation.csv"),
        sigma_eps2=scalar("sigma_eps2"), sigma_s2=scalar("sigma_s2"), rhat=report["rhat"],
    )
