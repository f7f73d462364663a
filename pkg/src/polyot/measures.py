"""Discrete probability measures: validation, grid sampling and persistence."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import EmptyMeasureError, InvalidInputError

SUM_TOL = 1e-6
SNAP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud with weights summing to one.

    Duplicate points (within ``SNAP_TOL``) are merged at construction.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if P.shape[0] != w.shape[0]:
            raise InvalidInputError("points and weights have different lengths")
        if w.size == 0:
            raise EmptyMeasureError("measure has no atoms")
        if not np.all(np.isfinite(P)) or not np.all(np.isfinite(w)):
            raise InvalidInputError("non-finite coordinates or weights")
        if np.any(w < 0):
            raise InvalidInputError("negative weight")
        total = float(w.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidInputError(f"weights sum to {total}, not 1")
        P, w = _merge_duplicates(P, w)
        w = w / w.sum()
        P.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, DiscreteMeasure)
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def to_dict(self) -> dict:
        return {"dim": self.dim, "points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteMeasure":
        try:
            m = cls(np.asarray(data["points"], dtype=float), np.asarray(data["weights"], dtype=float))
        except KeyError as exc:
            raise InvalidInputError(f"missing key {exc}") from None
        if "dim" in data and int(data["dim"]) != m.dim:
            raise InvalidInputError("dim does not match points")
        return m

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        P = np.asarray(points, dtype=float)
        n = P.shape[0]
        return cls(P, np.full(n, 1.0 / n))


def _merge_duplicates(P: np.ndarray, w: np.ndarray):
    if P.shape[0] < 2:
        return P.copy(), w.copy()
    order = np.lexsort(P.T[::-1])
    Ps, ws = P[order], w[order]
    gaps = np.any(np.abs(np.diff(Ps, axis=0)) > SNAP_TOL, axis=1)
    if np.all(gaps):
        return P.copy(), w.copy()
    # only merge when needed so atom order is preserved otherwise
    keep_P, keep_w = [], []
    for p, x in zip(P, w):
        for k, q in enumerate(keep_P):
            if np.all(np.abs(q - p) <= SNAP_TOL):
                keep_w[k] += x
                break
        else:
            keep_P.append(p)
            keep_w.append(x)
    return np.array(keep_P), np.array(keep_w)


def load_measure(path, format: str | None = None) -> DiscreteMeasure:
    """Read a measure from CSV (coordinates then weight per row) or JSON."""
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "csv"
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from None
    return parse_measure(text, format)


def parse_measure(text: str, format: str = "csv") -> DiscreteMeasure:
    if format == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"bad JSON: {exc}") from None
        return DiscreteMeasure.from_dict(data)
    if format != "csv":
        raise InvalidInputError(f"unknown format {format!r}")
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
    try:
        arr = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise InvalidInputError(f"bad CSV: {exc}") from None
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise InvalidInputError("CSV rows need at least one coordinate and a weight")
    return DiscreteMeasure(arr[:, :-1], arr[:, -1])


def save_measure(m: DiscreteMeasure, path, format: str | None = None) -> None:
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "csv"
    if format == "json":
        path.write_text(json.dumps(m.to_dict()))
        return
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for p, w in zip(m.points, m.weights):
        writer.writerow([repr(float(v)) for v in p] + [repr(float(w))])
    path.write_text(buf.getvalue())


def grid_sample(density: Callable | str, box, n_per_axis: int) -> DiscreteMeasure:
    """Midpoint-grid discretization of ``density`` on an axis-aligned box.

    ``box`` is a sequence of ``(lo, hi)`` pairs.  Atoms are ordered with the
    first coordinate varying fastest.
    """
    if n_per_axis < 1:
        raise InvalidInputError("n_per_axis must be >= 1")
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    axes = [lo + (np.arange(n_per_axis) + 0.5) * (hi - lo) / n_per_axis for lo, hi in box]
    mesh = np.meshgrid(*axes[::-1], indexing="ij")
    P = np.column_stack([m.ravel() for m in mesh[::-1]])
    f = _density_fn(density)
    w = np.asarray([f(p) for p in P], dtype=float)
    if np.any(w < 0):
        raise InvalidInputError("density is negative on the box")
    total = w.sum()
    if total <= 0:
        raise EmptyMeasureError("density vanishes on the box")
    return DiscreteMeasure(P, w / total)


def _density_fn(density):
    if callable(density):
        return density
    if density == "uniform":
        return lambda p: 1.0
    # expression in x (coordinate vector) evaluated with numpy only
    expr = str(density)
    code = compile(expr, "<density>", "eval")
    return lambda p: float(eval(code, {"__builtins__": {}, "np": np}, {"x": p}))


def shift_measure(m: DiscreteMeasure, s) -> DiscreteMeasure:
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape[0] != m.dim:
        raise InvalidInputError("shift dimension mismatch")
    return DiscreteMeasure(m.points + s, m.weights)


def transform_measure(m: DiscreteMeasure, A=None, b=None) -> DiscreteMeasure:
    """Image of ``m`` under ``x -> A x + b``."""
    P = m.points
    if A is not None:
        P = P @ np.asarray(A, dtype=float).T
    if b is not None:
        P = P + np.asarray(b, dtype=float)
    return DiscreteMeasure(P, m.weights)
