"""Empirical checks on partitions: 1-d slices, push-forward density ratios,
atomized cone-field approximations, initial/final mass and conditional
density profiles.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.stats import gaussian_kde

from .errors import InsufficientDataError, InvalidInputError
from .partition import FINAL, INITIAL, DirectedPartition
from .polynorm import orthogonal_complement
from .sheaves import SheafGroup, to_fibration
from .simplex import TransportSimplex

log = logging.getLogger(__name__)

MIN_SECTION_POINTS = 16


# ---------------------------------------------------------------------------
# slices


@dataclass(eq=False)
class Slice1D:
    """Family of directed segments that all cross the sections ``<p, e> = t`` for ``t`` in ``[h_lo, h_hi]``.

    ``starts``/``ends`` are the segment points at ``h_lo`` and ``h_hi``.
    """

    direction: np.ndarray
    h_lo: float
    h_hi: float
    starts: np.ndarray
    ends: np.ndarray
    cell_ids: np.ndarray
    group: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.direction.shape[0]

    def __len__(self):
        return len(self.starts)

    @classmethod
    def from_segments(cls, starts, ends, direction, cell_ids=None, h_range=None, group=None) -> "Slice1D":
        """Clip arbitrary segments to a common section range (the largest shared one by default)."""
        e = np.asarray(direction, float)
        e = e / np.linalg.norm(e)
        A, B = np.atleast_2d(np.asarray(starts, float)), np.atleast_2d(np.asarray(ends, float))
        ha, hb = A @ e, B @ e
        if np.any(hb - ha <= 1e-14):
            raise InvalidInputError("segments must advance along the direction")
        lo, hi = (ha.max(), hb.min()) if h_range is None else h_range
        if not lo < hi:
            raise InvalidInputError("segments share no section range")
        ids = np.zeros(len(A), dtype=int) if cell_ids is None else np.asarray(cell_ids, dtype=int)
        S = A + ((lo - ha) / (hb - ha))[:, None] * (B - A)
        E = A + ((hi - ha) / (hb - ha))[:, None] * (B - A)
        return cls(e, float(lo), float(hi), S, E, ids, group)

    def at(self, t: float) -> np.ndarray:
        """Points of the section ``P_t`` (one per segment)."""
        lam = (t - self.h_lo) / (self.h_hi - self.h_lo)
        return self.starts + lam * (self.ends - self.starts)

    def transversal(self) -> np.ndarray:
        """Orthonormal basis of the hyperplane orthogonal to the direction."""
        return orthogonal_complement(self.direction[None, :], self.dim)

    def section_coords(self, t: float) -> np.ndarray:
        return self.at(t) @ self.transversal().T

    def reversed(self) -> "Slice1D":
        """Same segments traversed backwards (for the backward estimates)."""
        return Slice1D(-self.direction, -self.h_hi, -self.h_lo, self.ends.copy(), self.starts.copy(),
                       self.cell_ids.copy(), self.group, dict(self.meta, reversed=True))

    def to_dict(self) -> dict:
        return {"direction": self.direction.tolist(), "h": [self.h_lo, self.h_hi],
                "segments": [{"cell": int(c), "entry": a.tolist(), "exit": b.tolist()}
                             for c, a, b in zip(self.cell_ids, self.starts, self.ends)]}


def _clip_line(W: np.ndarray, p: np.ndarray, e: np.ndarray, tol: float = 1e-12):
    """Parameter interval of ``p + s e`` inside the convex hull of ``W`` (rows, ``k`` columns)."""
    k = W.shape[1]
    if k == 1:
        s = (W[:, 0] - p[0]) / e[0]
        return float(s.min()), float(s.max())
    try:
        hull = ConvexHull(W)
    except QhullError:
        return None
    lo, hi = -np.inf, np.inf
    for eq in hull.equations:  # n.x + c <= 0 inside
        n, c = eq[:-1], eq[-1]
        a, b = n @ e, -(n @ p + c)
        if abs(a) < tol:
            if b < -tol:
                return None
            continue
        if a > 0:
            hi = min(hi, b / a)
        else:
            lo = max(lo, b / a)
    return (lo, hi) if lo < hi else None


def extract_slices(partition: DirectedPartition, group: SheafGroup, directions, counts: int = 16,
                   coverage: float = 0.5, group_index: int | None = None) -> list:
    """One slice per direction (given in coordinates of the group frame).

    Lines ``w + s e`` with ``counts`` transversal offsets are intersected with
    the convex hull of every cell's members in frame coordinates; the common
    section range is the central ``coverage`` quantile band of the segment
    ranges and segments not covering it are dropped.
    """
    k = group.k
    if k == 0:
        return []
    fib = to_fibration(group, partition)
    out = []
    for e in np.atleast_2d(np.asarray(directions, float)):
        e = e / np.linalg.norm(e)
        if not group.base_cone.contains(e, 1e-9):
            log.warning("direction %s outside the base cone; skipped", e.tolist())
            continue
        perp = orthogonal_complement(e[None, :], k) if k > 1 else np.zeros((0, 1))
        allw = np.vstack([c.w for c in fib.cells])
        if k > 1:
            q = allw @ perp.T
            grids = [np.linspace(q[:, a].min(), q[:, a].max(), counts + 2)[1:-1] for a in range(k - 1)]
            offsets = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, k - 1) @ perp
        else:
            offsets = np.zeros((1, 1))
        segs = []
        for fc in fib.cells:
            if len(fc.w) < 2:
                continue
            for p in offsets:
                iv = _clip_line(fc.w, p, e)
                if iv is None:
                    continue
                a, b = fc.to_ambient(p + iv[0] * e)[0], fc.to_ambient(p + iv[1] * e)[0]
                segs.append((fc.cell_id, a, b, p @ e + iv[0], p @ e + iv[1]))
        if not segs:
            log.info("empty slice for direction %s", e.tolist())
            continue
        lo = float(np.quantile([s[3] for s in segs], 0.5 + coverage / 2))
        hi = float(np.quantile([s[4] for s in segs], 0.5 - coverage / 2))
        keep = [s for s in segs if s[3] <= lo + 1e-12 and s[4] >= hi - 1e-12]
        if not lo < hi or not keep:
            log.info("no segment crosses the full range for direction %s", e.tolist())
            continue
        A = np.array([s[1] for s in keep])
        B = np.array([s[2] for s in keep])
        ha, hb = np.array([s[3] for s in keep]), np.array([s[4] for s in keep])
        S = A + ((lo - ha) / (hb - ha))[:, None] * (B - A)
        E = A + ((hi - ha) / (hb - ha))[:, None] * (B - A)
        amb = group.frame.T @ e
        hs = float(S[0] @ amb)  # ambient section parameter of h_lo
        out.append(Slice1D(amb, hs, hs + (hi - lo), S, E, np.array([s[0] for s in keep]), group_index,
                           {"frame_direction": e.tolist()}))
    return out


# ---------------------------------------------------------------------------
# push-forward ratio


@dataclass
class RatioReport:
    s: float
    t: float
    epsilon: float
    bound: float
    ratios: np.ndarray  # per segment
    max_ratio: float
    max_violation: float  # max(ratio / bound - 1, 0)
    skipped_cells: list

    def series(self) -> list:
        return [{"segment": i, "ratio": float(r), "bound": self.bound} for i, r in enumerate(self.ratios)]


def ratio_bound(h_hi: float, eps: float, s: float, t: float, d: int) -> float:
    return ((h_hi + eps - s) / (h_hi + eps - t)) ** (d - 1)


def _density(coords: np.ndarray, at: np.ndarray, bw=None) -> np.ndarray:
    if coords.shape[1] == 0:
        return np.ones(len(at))
    kde = gaussian_kde(coords.T, bw_method=bw)
    return kde(at.T)


def pushforward_ratio(sl: Slice1D, s: float, t: float, epsilon: float | None = None,
                      bandwidth=None, orientation: str = "forward") -> RatioReport:
    """Density of the section map image on ``P_t`` over the density on ``P_s``, cell by cell.

    Densities are Gaussian kernel estimates (Scott bandwidth by default) of
    the counting measures on the sections, in transversal coordinates.
    For ``orientation="backward"`` the slice is reversed and ``s, t`` are
    read on the reversed axis.
    """
    if orientation == "backward":
        sl = sl.reversed()
    elif orientation != "forward":
        raise InvalidInputError("orientation must be 'forward' or 'backward'")
    if not (sl.h_lo <= s <= t <= sl.h_hi):
        raise InvalidInputError(f"need {sl.h_lo} <= s <= t <= {sl.h_hi}")
    if len(sl) < MIN_SECTION_POINTS:
        raise InsufficientDataError(f"{len(sl)} section points, need {MIN_SECTION_POINTS}")
    eps = 0.1 * (sl.h_hi - sl.h_lo) if epsilon is None else float(epsilon)
    bound = ratio_bound(sl.h_hi, eps, s, t, sl.dim)
    Qs, Qt = sl.section_coords(s), sl.section_coords(t)
    ratios = np.full(len(sl), np.nan)
    skipped = []
    for c in np.unique(sl.cell_ids):
        m = sl.cell_ids == c
        if m.sum() <= max(2, Qs.shape[1]):
            skipped.append(int(c))
            continue
        try:
            ds = _density(Qs[m], Qs[m], bandwidth)
            dt = _density(Qt[m], Qt[m], bandwidth)
        except np.linalg.LinAlgError:
            skipped.append(int(c))
            continue
        ratios[m] = dt / ds
    ok = np.isfinite(ratios)
    mr = float(ratios[ok].max()) if ok.any() else math.nan
    viol = float(max(mr / bound - 1.0, 0.0)) if ok.any() else math.nan
    return RatioReport(s, t, eps, bound, ratios, mr, viol, skipped)


# ---------------------------------------------------------------------------
# atomized cone fields


@dataclass(eq=False)
class ConeFieldApprox:
    base: np.ndarray  # section points at h_lo
    atoms: np.ndarray  # atom representatives on the terminal section
    atom_of: np.ndarray  # snapped atom per base point
    assignment: np.ndarray  # optimal assignment base -> atom (secondary cost)
    disjoint: bool
    crossing: tuple | None
    deviation: float
    assignment_gap: float  # quadratic cost of the snapped field minus the optimum
    feasible: bool = True
    report: str = ""


def _atomize(Q: np.ndarray, n_atoms: int):
    """Cube index per point for a grid of about ``n_atoms`` cubes over the bounding box."""
    m = Q.shape[1]
    if m == 0:
        return np.zeros(len(Q), dtype=int)
    per = max(1, int(round(n_atoms ** (1.0 / m))))
    lo, hi = Q.min(axis=0), Q.max(axis=0)
    width = np.where(hi > lo, (hi - lo) / per, 1.0)
    idx = np.clip(np.floor((Q - lo) / width).astype(int), 0, per - 1)
    return np.ravel_multi_index(idx.T, (per,) * m)


def _segments_cross(a0, a1, b0, b1, tol: float = 1e-10) -> bool:
    """Whether two segments meet at a point interior to at least one of them."""
    u, v, w = a1 - a0, b1 - b0, a0 - b0
    A = np.array([[u @ u, -(u @ v)], [-(u @ v), v @ v]])
    rhs = np.array([-(u @ w), v @ w])
    if abs(np.linalg.det(A)) < 1e-14 * max(1.0, A.trace() ** 2):
        return False  # parallel; shared supports are handled as non-crossing
    s, t = np.linalg.solve(A, rhs)
    if not (-tol <= s <= 1 + tol and -tol <= t <= 1 + tol):
        return False
    gap = np.linalg.norm((a0 + s * u) - (b0 + t * v))
    if gap > tol * max(1.0, np.linalg.norm(u), np.linalg.norm(v)):
        return False
    interior = (tol < s < 1 - tol) or (tol < t < 1 - tol)
    same_end = np.linalg.norm(a1 - b1) <= tol or np.linalg.norm(a0 - b0) <= tol
    return interior and not same_end


def disjointness_certificate(A: np.ndarray, B: np.ndarray):
    """``(True, None)`` when no two segments ``[A_i, B_i]`` cross in their interiors."""
    for i in range(len(A)):
        for j in range(i + 1, len(A)):
            if _segments_cross(A[i], B[i], A[j], B[j]):
                return False, (i, j)
    return True, None


def build_cone_approximation(sl: Slice1D, n_atoms: int, cones=None) -> ConeFieldApprox:
    """Snap the terminal section to ``n_atoms`` cubes and rebuild the field as rays to the atoms.

    Atom representatives are the barycenters of the terminal points in each
    cube.  The snapped field sends each base point to the atom of its own
    terminal point; the quadratic optimal assignment (capacities = atom
    counts, optionally restricted to ``cones[cell_id]``) is reported next
    to it.
    """
    if len(sl) == 0:
        raise InvalidInputError("empty slice")
    base, term = sl.starts, sl.ends
    cube = _atomize(term @ sl.transversal().T, n_atoms)
    keys, atom_of = np.unique(cube, return_inverse=True)
    atoms = np.array([term[atom_of == a].mean(axis=0) for a in range(len(keys))])
    counts = np.bincount(atom_of).astype(float)
    quad = ((atoms[None, :, :] - base[:, None, :]) ** 2).sum(-1)
    levels = [quad]
    if cones is not None:
        bad = np.array([[not cones[int(c)].contains(atoms[a] - base[i], 1e-9) for a in range(len(atoms))]
                        for i, c in enumerate(sl.cell_ids)], dtype=float)
        levels = [bad, quad]
    n = len(base)
    res = TransportSimplex(np.ones(n) / n, counts / n, levels).solve()
    X = res.dense(n, len(atoms))
    assign = X.argmax(axis=1)
    feasible = True
    report = "ok"
    if cones is not None and float((X * levels[0]).sum()) > 1e-12:
        feasible = False
        report = "assignment needs pairs outside the cell cones"
    snapped = atoms[atom_of]
    ok, bad_pair = disjointness_certificate(base, snapped)
    true_dir = term - base
    approx_dir = snapped - base
    dev = float(np.max(np.linalg.norm(
        true_dir / np.linalg.norm(true_dir, axis=1)[:, None]
        - approx_dir / np.maximum(np.linalg.norm(approx_dir, axis=1), 1e-300)[:, None], axis=1)))
    gap = float(quad[np.arange(n), atom_of].sum() - (X * quad).sum() * n)
    return ConeFieldApprox(base, atoms, atom_of, assign, ok, bad_pair, dev, gap, feasible, report)


# ---------------------------------------------------------------------------
# initial/final mass


def flagged_mass(partition: DirectedPartition, weights) -> float:
    w = np.asarray(weights, float)
    tot = 0.0
    for c in partition.cells:
        if c.flags & {INITIAL, FINAL}:
            tot += c.share * float(w[c.members].sum())
    return tot / float(w.sum())


def initial_final_mass(part_h: DirectedPartition, w_h, part_h2: DirectedPartition, w_h2) -> dict:
    """Initial/final mass fractions at steps ``h`` and ``h/2`` and their ratio."""
    fh, fh2 = flagged_mass(part_h, w_h), flagged_mass(part_h2, w_h2)
    return {"fraction_h": fh, "fraction_h2": fh2, "ratio": fh2 / fh if fh > 0 else (0.0 if fh2 == 0 else math.inf)}


# ---------------------------------------------------------------------------
# conditional densities


@dataclass
class DensityProfile:
    cell_id: int
    k: int
    axis_coord: np.ndarray
    density: np.ndarray


def disintegration_density(partition: DirectedPartition, weights, lower: float = 0.25,
                           upper: float = 4.0, min_members: int = 3) -> dict:
    """Per-cell mass per unit ``k``-volume, and whether it stays within ``[lower, upper]`` x median.

    The local volume of a member is ``r^k`` with ``r`` its nearest-neighbour
    distance inside the cell (in cell coordinates).  Profiles are ordered
    along the cone axis.
    """
    w = np.asarray(weights, float)
    profiles = []
    for c in partition.cells:
        if c.k == 0 or len(c.members) < min_members:
            continue
        P = partition.points[c.members]
        W = (P - c.base_point) @ c.basis.T
        dist, _ = cKDTree(W).query(W, k=2)
        r = dist[:, 1]
        dens = w[c.members] / np.maximum(r, 1e-300) ** c.k
        ax = P @ c.cone.axis()
        o = np.argsort(ax, kind="stable")
        profiles.append(DensityProfile(c.id, c.k, ax[o], dens[o]))
    if not profiles:
        return {"profiles": [], "regular_like": True, "spread": 1.0}
    allv = np.concatenate([p.density for p in profiles])
    med = float(np.median(allv))
    lo, hi = float(allv.min() / med), float(allv.max() / med)
    return {"profiles": profiles, "regular_like": bool(lo >= lower and hi <= upper),
            "spread": hi / lo if lo > 0 else math.inf, "range": (lo, hi)}
