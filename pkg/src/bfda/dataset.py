"""Functional datasets on common or uncommon grids.

A dataset is a collection of curves, each observed on its own strictly
increasing grid. Grid points are canonicalised to 12 significant digits at
construction so that grids coming from different files merge
deterministically when pooled.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Curve",
    "DatasetError",
    "FunctionalDataset",
    "PooledGrid",
    "canonical_round",
    "load_dataset",
    "pool_grids",
    "save_dataset",
]


class DatasetError(ValueError):
    """Raised when functional data cannot be parsed or fails validation."""


def canonical_round(x) -> np.ndarray:
    """Round values to 12 significant decimal digits."""
    arr = np.asarray(x, dtype=float)
    flat = [float(f"{v:.11e}") if v != 0.0 else 0.0 for v in arr.ravel()]
    return np.array(flat, dtype=float).reshape(arr.shape)


def _id_key(curve_id: str):
    try:
        return (0, int(curve_id), "")
    except ValueError:
        return (1, 0, curve_id)


@dataclass(frozen=True)
class Curve:
    id: str
    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        t = canonical_round(np.asarray(self.t, dtype=float).ravel())
        y = np.asarray(self.y, dtype=float).ravel()
        if t.size == 0:
            raise DatasetError(f"curve {self.id!r} is empty")
        if t.size != y.size:
            raise DatasetError(
                f"curve {self.id!r}: grid has {t.size} points but {y.size} values"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise DatasetError(f"curve {self.id!r} contains non-finite values")
        order = np.argsort(t, kind="stable")
        t, y = t[order], y[order]
        if np.any(np.diff(t) == 0):
            dup = t[:-1][np.diff(t) == 0][0]
            raise DatasetError(f"curve {self.id!r}: duplicate grid point t={dup!r}")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class FunctionalDataset:
    """Noisy curves, possibly on distinct grids.

    Parameters
    ----------
    curves : sequence of Curve
        Sorted by id on construction.
    domain : (float, float), optional
        Closed interval containing every grid. Defaults to the hull of the data.
    """

    curves: tuple
    domain: tuple = field(default=None)

    def __post_init__(self):
        curves = tuple(self.curves)
        if not curves:
            raise DatasetError("dataset has no curves")
        ids = [c.id for c in curves]
        if len(set(ids)) != len(ids):
            raise DatasetError("curve ids are not unique")
        curves = tuple(sorted(curves, key=lambda c: _id_key(c.id)))
        lo = min(float(c.t[0]) for c in curves)
        hi = max(float(c.t[-1]) for c in curves)
        if self.domain is None:
            domain = (lo, hi)
        else:
            domain = (float(self.domain[0]), float(self.domain[1]))
            if lo < domain[0] or hi > domain[1]:
                raise DatasetError(f"grid points fall outside domain {domain}")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "domain", domain)
        if len(np.unique(np.concatenate([c.t for c in curves]))) < 2:
            raise DatasetError("pooled grid must contain at least 2 points")

    @classmethod
    def from_arrays(cls, grids: Sequence, values: Sequence, ids: Iterable | None = None,
                    domain=None) -> "FunctionalDataset":
        grids, values = list(grids), list(values)
        if ids is None:
            ids = [str(i + 1) for i in range(len(grids))]
        return cls(tuple(Curve(i, t, y) for i, t, y in zip(ids, grids, values)), domain)

    @classmethod
    def from_matrix(cls, t, Y, ids=None, domain=None) -> "FunctionalDataset":
        """Build a common-grid dataset from a ``(p, n)`` value matrix."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[0] != len(t):
            raise DatasetError("value matrix must have shape (len(t), n)")
        return cls.from_arrays([t] * Y.shape[1], list(Y.T), ids, domain)

    @property
    def n(self) -> int:
        return len(self.curves)

    @property
    def ids(self) -> list:
        return [c.id for c in self.curves]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.curves])

    def is_common_grid(self) -> bool:
        t0 = self.curves[0].t
        return all(c.t.size == t0.size and np.array_equal(c.t, t0) for c in self.curves)

    def value_matrix(self) -> np.ndarray:
        """Values as a ``(p, n)`` matrix; only defined on a common grid."""
        if not self.is_common_grid():
            raise DatasetError("value_matrix requires a common grid")
        return np.column_stack([c.y for c in self.curves])

    def __eq__(self, other):
        if not isinstance(other, FunctionalDataset):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.ids == other.ids
            and all(
                np.array_equal(a.t, b.t) and np.array_equal(a.y, b.y)
                for a, b in zip(self.curves, other.curves)
            )
        )

    __hash__ = None


@dataclass(frozen=True)
class PooledGrid:
    """Sorted union of all curve grids with per-curve index sets (0-based)."""

    points: np.ndarray
    obs: tuple
    mis: tuple

    @property
    def p(self) -> int:
        return self.points.size

    def is_common(self) -> bool:
        return all(m.size == 0 for m in self.mis)


def pool_grids(data: FunctionalDataset) -> PooledGrid:
    points = np.unique(np.concatenate([c.t for c in data.curves]))
    everything = np.arange(points.size)
    obs, mis = [], []
    for c in data.curves:
        idx = np.searchsorted(points, c.t)
        obs.append(idx)
        mis.append(np.setdiff1d(everything, idx, assume_unique=True))
    return PooledGrid(points, tuple(obs), tuple(mis))


def _infer_format(path: Path, fmt):
    if fmt is not None:
        return fmt
    return "json" if path.suffix.lower() == ".json" else "csv-long"


def load_dataset(path, format: str | None = None, domain=None) -> FunctionalDataset:
    """Read a dataset from CSV long format or JSON.

    CSV files carry a ``curve_id,t,y`` header with one row per measurement.
    JSON files hold an array of ``{"id": ..., "t": [...], "y": [...]}``.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        if fmt == "json":
            records = json.loads(path.read_text(encoding="utf-8"))
            if not isinstance(records, list):
                raise DatasetError("JSON dataset must be an array of curve objects")
            grids, values, ids = [], [], []
            for rec in records:
                ids.append(str(rec["id"]))
                grids.append(np.asarray(rec["t"], dtype=float))
                values.append(np.asarray(rec["y"], dtype=float))
        elif fmt == "csv-long":
            rows: dict = {}
            with path.open(newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or not {"curve_id", "t", "y"} <= set(reader.fieldnames):
                    raise DatasetError("CSV header must contain curve_id,t,y")
                for row in reader:
                    cid = row["curve_id"].strip()
                    t, y = float(row["t"]), float(row["y"])
                    if not (math.isfinite(t) and math.isfinite(y)):
                        raise DatasetError(f"non-finite value for curve {cid!r}")
                    rows.setdefault(cid, []).append((t, y))
            ids = list(rows)
            grids = [np.array([r[0] for r in rows[k]]) for k in ids]
            values = [np.array([r[1] for r in rows[k]]) for k in ids]
        else:
            raise DatasetError(f"unknown dataset format {fmt!r}")
    except DatasetError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"cannot parse {path}: {exc}") from exc
    return FunctionalDataset.from_arrays(grids, values, ids, domain)


def save_dataset(data: FunctionalDataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "json":
        records = [{"id": c.id, "t": c.t.tolist(), "y": c.y.tolist()} for c in data.curves]
        path.write_text(json.dumps(records), encoding="utf-8")
    elif fmt == "csv-long":
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["curve_id", "t", "y"])
            for c in data.curves:
                for t, y in zip(c.t, c.y):
                    w.writerow([c.id, repr(float(t)), repr(float(y))])
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}")
