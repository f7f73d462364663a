"""Sheaf grouping of partition cells and their re-coordinatization as fibrations.

A sheaf group collects cells of one dimension ``k`` whose cones, projected on
a reference ``k``-plane ``V``, are squeezed between a base cone ``C(r)`` and
its widening ``C(2r)``, with the projection staying nondegenerate.  Mapping a
group to a fibration puts every cell on its own copy of ``R^k``, labelled by
where its affine hull crosses ``z + V^perp``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateProjectionError, EmptyConeError, InvalidInputError, UncoveredCellError
from .partition import DirectedPartition, PartitionCell
from .polynorm import Cone, cone_enlarge, orthogonal_complement, orthonormal_span

DELTA = 1 - 1 / math.sqrt(2)
DEFAULT_RADII = (0.05, 0.1, 0.2, 0.3)


@dataclass(eq=False)
class SheafGroup:
    cell_ids: list
    k: int
    frame: np.ndarray  # k x d orthonormal rows spanning V
    radius: float = 0.0
    base_cone: Cone | None = None  # C(r) in V coordinates
    widened_cone: Cone | None = None  # C(2r) in V coordinates
    base_point: np.ndarray | None = None  # z in V (ambient coordinates)
    rectangle: tuple | None = None  # (lower corner, side) of the projected seed box, V coordinates

    def to_dict(self) -> dict:
        return {
            "cells": [int(c) for c in self.cell_ids],
            "k": self.k,
            "frame": self.frame.tolist(),
            "radius": self.radius,
            "base_cone": None if self.base_cone is None else self.base_cone.generators.tolist(),
            "widened_cone": None if self.widened_cone is None else self.widened_cone.generators.tolist(),
        }


def _unit_samples(G: np.ndarray, n: int = 64, seed: int = 0) -> np.ndarray:
    """Unit vectors of the cone spanned by ``G``: generators, pairwise mixes and random mixes."""
    G = G / np.linalg.norm(G, axis=1)[:, None]
    out = [G]
    if len(G) > 1:
        t = np.linspace(0, 1, 9)[1:-1, None]
        for a, b in itertools.combinations(range(len(G)), 2):
            out.append((1 - t) * G[a] + t * G[b])
        rng = np.random.default_rng(seed)
        out.append(rng.dirichlet(np.ones(len(G)), size=n) @ G)
    Z = np.vstack(out)
    return Z / np.linalg.norm(Z, axis=1)[:, None]


def projection_floor(gens: np.ndarray, frame: np.ndarray) -> float:
    """Smallest ``|p_V z|`` over sampled unit vectors ``z`` of the cone."""
    Z = _unit_samples(gens)
    return float(np.min(np.linalg.norm(Z @ frame.T, axis=1)))


def _in_cone(cone: Cone, V: np.ndarray, tol: float = 1e-9) -> bool:
    return all(cone.contains(v, tol) for v in V)


def sheaf_conditions(cell_gens: np.ndarray, frame: np.ndarray, base: Cone, wide: Cone,
                     tol: float = 1e-9) -> dict:
    """Check the three cone conditions for one cell cone (generators in ambient coordinates)."""
    pg = cell_gens @ frame.T
    proj = Cone(pg) if np.linalg.matrix_rank(pg, tol=1e-10) == frame.shape[0] else None
    return {
        "base_inside": proj is not None and _in_cone(proj, base.generators, tol),
        "inside_wide": _in_cone(wide, pg, tol),
        "nondegenerate": projection_floor(cell_gens, frame) >= 1 - DELTA - 1e-12,
    }


def _frames(k: int, d: int, seed_cell: PartitionCell) -> list:
    frames = []
    for idx in itertools.combinations(range(d), k):
        frames.append(np.eye(d)[list(idx)])
    frames.append(seed_cell.cone.basis.copy())
    return frames


def _base_cones(seed_gens: np.ndarray, frame: np.ndarray, r: float):
    """``(C(r), C(2r))`` for the base cone ``C = (p_V C_seed)(-1.5 r)``."""
    k = frame.shape[0]
    pg = seed_gens @ frame.T
    if np.linalg.matrix_rank(pg, tol=1e-10) < k:
        return None
    proj = Cone(pg)
    if k == 1:
        if np.ptp(np.sign(pg[:, 0])) > 0:
            return None
        return proj, proj
    try:
        core = cone_enlarge(proj, -1.5 * r)
        return cone_enlarge(core, r), cone_enlarge(core, 2 * r)
    except (EmptyConeError, InvalidInputError):
        return None


def decompose_sheaves(partition: DirectedPartition, r_grid=DEFAULT_RADII, tol: float = 1e-9) -> list:
    """Greedy covering of the cells by sheaf groups.

    Each group is seeded by the lowest uncovered cell; among all frames of
    the dictionary and radii in ``r_grid`` the triple covering the most
    uncovered cells of the same dimension wins.  Dimension-0 cells get
    trivial one-cell groups.
    """
    d = partition.norm.dim
    groups = []
    cells = partition.cells
    for c in cells:
        if c.k == 0:
            groups.append(SheafGroup([c.id], 0, np.zeros((0, d))))
    for k in sorted({c.k for c in cells if c.k > 0}):
        pending = [c for c in cells if c.k == k]
        while pending:
            seed = pending[0]
            best = None
            for frame in _frames(k, d, seed):
                if projection_floor(seed.cone.generators, frame) < 1 - DELTA:
                    continue
                for r in r_grid:
                    cones = _base_cones(seed.cone.generators, frame, r)
                    if cones is None:
                        continue
                    base, wide = cones
                    members = [c for c in pending
                               if all(sheaf_conditions(c.cone.generators, frame, base, wide, tol).values())]
                    if seed not in members:
                        continue
                    if best is None or len(members) > len(best[0]):
                        best = (members, frame, r, base, wide)
            if best is None:
                raise UncoveredCellError(f"cell {seed.id} fits no frame/radius in the dictionary")
            members, frame, r, base, wide = best
            z = frame.T @ (frame @ seed.base_point)
            W = np.vstack([partition.points[m] @ frame.T for c in members for m in c.members])
            lo, hi = W.min(axis=0), W.max(axis=0)
            groups.append(SheafGroup([c.id for c in members], k, frame, r, base, wide, z,
                                     (lo.tolist(), float((hi - lo).min()))))
            taken = {c.id for c in members}
            pending = [c for c in pending if c.id not in taken]
    return groups


def verify_sheaf(group: SheafGroup, partition: DirectedPartition, tol: float = 1e-9) -> dict:
    """Per-condition verdicts for every member cell."""
    if group.k == 0:
        return {"ok": True, "cells": {}}
    out = {}
    for cid in group.cell_ids:
        out[cid] = sheaf_conditions(partition.cells[cid].cone.generators, group.frame,
                                    group.base_cone, group.widened_cone, tol)
    return {"ok": all(all(v.values()) for v in out.values()), "cells": out}


# ---------------------------------------------------------------------------
# fibration


@dataclass(eq=False)
class FibrationCell:
    cell_id: int
    label: np.ndarray  # coordinates in V^perp of aff(cell) ∩ (z + V^perp)
    w: np.ndarray  # V-coordinates of the members
    cone: np.ndarray  # generators of the mapped cone in R^k
    base: np.ndarray
    basis: np.ndarray
    inverse: np.ndarray  # (V B^T)^{-1}

    def to_ambient(self, w) -> np.ndarray:
        """Inverse map from V-coordinates back to points of the cell's affine hull."""
        w = np.atleast_2d(w)
        return self.base + (w - self._vbase) @ self.inverse.T @ self.basis

    _vbase: np.ndarray = field(default=None, repr=False)


@dataclass(eq=False)
class Fibration:
    group: SheafGroup
    complement: np.ndarray
    cells: list

    def to_dict(self) -> dict:
        return {
            "k": self.group.k,
            "frame": self.group.frame.tolist(),
            "cells": [{"id": c.cell_id, "label": c.label.tolist(), "w": c.w.tolist(), "cone": c.cone.tolist()}
                      for c in self.cells],
        }


def to_fibration(group: SheafGroup, partition: DirectedPartition, cond_max: float = 1e12) -> Fibration:
    """Re-coordinatize each cell of the group on ``{label} x R^k``."""
    V = group.frame
    k, d = V.shape
    comp = orthogonal_complement(orthonormal_span(V) if k else V, d)
    z = group.base_point if group.base_point is not None else np.zeros(d)
    out = []
    for cid in group.cell_ids:
        cell = partition.cells[cid]
        X = partition.points[cell.members]
        B = cell.basis
        if k == 0:
            out.append(FibrationCell(cid, comp @ (X[0] - z), np.zeros((len(X), 0)), np.zeros((0, 0)),
                                     X[0].copy(), B, np.zeros((0, 0)), np.zeros(0)))
            continue
        M = V @ B.T
        if np.linalg.cond(M) > cond_max:
            raise DegenerateProjectionError(f"cell {cid} projects degenerately on the reference plane")
        Minv = np.linalg.inv(M)
        s = Minv @ (V @ (z - cell.base_point))
        cross = cell.base_point + B.T @ s
        fc = FibrationCell(cid, comp @ (cross - z), X @ V.T, cell.cone.generators @ V.T,
                           cell.base_point.copy(), B.copy(), Minv)
        fc._vbase = V @ cell.base_point
        out.append(fc)
    return Fibration(group, comp, out)
