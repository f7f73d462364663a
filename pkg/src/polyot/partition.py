"""Directed locally affine partition of the source cloud.

Pipeline: potential -> tight (superdifferential) relation on the point cloud
-> forward/backward direction sets -> per-point classification -> cells
with extremal cones.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InternalConsistencyError,
    NoCommonFaceError,
    StalePotentialError,
)
from .kantorovich import Potential, TransportPlan, duality_gap
from .polynorm import (
    ExtremalCone,
    PolyhedralNorm,
    active_set,
    minimal_extremal_cone,
    orthogonal_complement,
)

FIXED = "fixed"
REGULAR = "regular"
INITIAL = "initial_like"
FINAL = "final_like"
RESIDUAL = "residual"


# ---------------------------------------------------------------------------
# direction sets


@dataclass(eq=False)
class DirectionSets:
    """Tight relation ``psi(b) - psi(a) = |b - a|`` on the stored point cloud.

    ``tight[a, b]`` means transport may run from ``a`` to ``b``; forward
    directions at ``a`` are the unit vectors towards its tight successors,
    backward directions at ``b`` the unit vectors from its tight predecessors.
    """

    points: np.ndarray
    tight: np.ndarray
    src_ids: np.ndarray
    tgt_ids: np.ndarray
    closure_rounds: int = 0

    def _unit(self, V):
        if len(V) == 0:
            return np.zeros((0, self.points.shape[1]))
        return V / np.linalg.norm(V, axis=1)[:, None]

    def forward(self, a: int) -> np.ndarray:
        return self._unit(self.points[self.tight[a]] - self.points[a])

    def backward(self, b: int) -> np.ndarray:
        return self._unit(self.points[b] - self.points[self.tight[:, b]])

    def forward_of_source(self, i: int) -> np.ndarray:
        return self.forward(self.src_ids[i])

    def backward_of_source(self, i: int) -> np.ndarray:
        return self.backward(self.src_ids[i])


def transitive_closure(T: np.ndarray, max_rounds: int = 64) -> tuple[np.ndarray, int]:
    """Boolean transitive closure by repeated squaring."""
    T = T.copy()
    rounds = 0
    while rounds < max_rounds:
        F = T.astype(np.float32)
        nxt = T | ((F @ F) > 0)
        rounds += 1
        if np.array_equal(nxt, T):
            break
        T = nxt
    return T, rounds


def superdifferential_graph(plan: TransportPlan, P: Potential, tol: float = 1e-9,
                            norm: PolyhedralNorm | None = None) -> DirectionSets:
    """Forward/backward direction sets of every stored point."""
    gap = duality_gap(plan, P)
    if abs(gap) > tol * max(1.0, abs(plan.cost_value)):
        raise StalePotentialError(f"duality gap {gap:.3g} exceeds {tol:.1g}")
    norm = P.norm if norm is None else norm
    return tight_relation(P.points, P.psi, norm, P.src_ids, P.tgt_ids, tol)


def tight_relation(points, psi, norm, src_ids, tgt_ids, tol: float = 1e-9) -> DirectionSets:
    dist = norm.cost_matrix(points, points)  # dist[a, b] = |b - a|
    inc = psi[None, :] - psi[:, None]
    tight = inc >= dist - tol * (1.0 + dist)
    np.fill_diagonal(tight, False)
    tight, rounds = transitive_closure(tight)
    np.fill_diagonal(tight, False)
    return DirectionSets(np.asarray(points), tight, np.asarray(src_ids), np.asarray(tgt_ids), rounds)


# ---------------------------------------------------------------------------
# classification


@dataclass
class Classification:
    kind: str
    forward_cone: ExtremalCone | None = None
    backward_cone: ExtremalCone | None = None
    note: str = ""

    @property
    def k(self) -> int:
        if self.kind == REGULAR:
            return self.forward_cone.dim
        return 0

    @property
    def cone(self) -> ExtremalCone | None:
        return self.forward_cone if self.kind == REGULAR else None


def _meets_relint(dirs: np.ndarray, F: ExtremalCone, tol: float) -> bool:
    mean = dirs.sum(axis=0)
    if np.linalg.norm(mean) < 1e-12:
        return False
    return tuple(active_set(F.norm, mean, tol)) == F.active_set


def classify_point(forward: np.ndarray, backward: np.ndarray, N: PolyhedralNorm,
                   tol: float = 1e-9) -> Classification:
    """Classify one point from its forward and backward direction sets.

    ``residual`` is returned when a direction set is not contained in a
    single extremal cone, or when the two faces are incomparable.
    """
    has_f, has_b = len(forward) > 0, len(backward) > 0
    if not has_f and not has_b:
        return Classification(FIXED)
    try:
        Fp = minimal_extremal_cone(N, forward, tol) if has_f else None
        Fm = minimal_extremal_cone(N, backward, tol) if has_b else None
    except NoCommonFaceError as exc:
        return Classification(RESIDUAL, note=f"nonconvex direction set: {exc}")
    if not has_b:
        return Classification(INITIAL, Fp, None)
    if not has_f:
        return Classification(FINAL, None, Fm)
    if Fp == Fm:
        if _meets_relint(forward, Fp, tol) and _meets_relint(backward, Fm, tol):
            return Classification(REGULAR, Fp, Fm)
        return Classification(RESIDUAL, Fp, Fm, note="direction sets miss the relative interior")
    if Fm.subcone_of(Fp):
        return Classification(INITIAL, Fp, Fm)
    if Fp.subcone_of(Fm):
        return Classification(FINAL, Fp, Fm)
    return Classification(RESIDUAL, Fp, Fm, note="incomparable forward and backward faces")


def classify_all(ds: DirectionSets, N: PolyhedralNorm, tol: float = 1e-9) -> list:
    return [classify_point(ds.forward_of_source(i), ds.backward_of_source(i), N, tol)
            for i in range(len(ds.src_ids))]


# ---------------------------------------------------------------------------
# partition


@dataclass(eq=False)
class PartitionCell:
    id: int
    k: int
    cone: ExtremalCone
    members: list
    base_point: np.ndarray
    basis: np.ndarray
    flags: frozenset = frozenset()
    pairs: list | None = None  # carriage pairs of a split atom carried by this cell
    share: float = 1.0  # fraction of the member's mass carried (below 1 only for split atoms)

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "k": self.k,
            "cone_active_set": list(self.cone.active_set),
            "members": [int(m) for m in self.members],
            "flags": sorted(self.flags),
            "basis": {"base_point": self.base_point.tolist(), "vectors": self.basis.tolist()},
        }
        if self.pairs is not None:
            out["pairs"] = [[int(i), int(j)] for i, j in self.pairs]
            out["share"] = self.share
        return out

    def contains_affinely(self, X: np.ndarray, tol: float = 1e-8, scale: float = 1.0) -> bool:
        D = (np.atleast_2d(X) - self.base_point) / scale
        if self.k:
            D = D - (D @ self.basis.T) @ self.basis
        return bool(np.all(np.linalg.norm(D, axis=1) <= tol))


@dataclass(eq=False)
class DirectedPartition:
    cells: list
    n_points: int
    norm: PolyhedralNorm
    classifications: list = field(default_factory=list)
    points: np.ndarray | None = None

    def cell_of(self) -> np.ndarray:
        """Cell per point (the first one for split atoms)."""
        out = np.full(self.n_points, -1)
        for c in reversed(self.cells):
            out[c.members] = c.id
        return out

    def pair_cells(self, rows, cols) -> np.ndarray:
        """Cell carrying each carriage pair ``(rows[p], cols[p])``."""
        owner = self.cell_of()
        split = {(i, j): c.id for c in self.cells if c.pairs is not None for i, j in c.pairs}
        return np.array([split.get((int(i), int(j)), owner[i]) for i, j in zip(rows, cols)], dtype=int)

    def by_kind(self) -> dict:
        counts = {}
        for c in self.classifications:
            counts[c.kind] = counts.get(c.kind, 0) + 1
        return counts

    def to_json(self) -> str:
        return json.dumps([c.to_dict() for c in self.cells])

    def mass_by_dim(self, weights) -> dict:
        out = {}
        for c in self.cells:
            out[c.k] = out.get(c.k, 0.0) + c.share * float(np.sum(np.asarray(weights)[c.members]))
        return out


def _plan_dirs(plan, i):
    x = plan.mu.points[i]
    V = plan.nu.points[plan.cols[plan.rows == i]] - x
    V = V[np.linalg.norm(V, axis=1) > 0]
    return V


def _singleton_cone(cl: Classification, plan: TransportPlan | None, i: int, N: PolyhedralNorm):
    if cl.forward_cone is not None:
        return cl.forward_cone
    if plan is not None:
        V = _plan_dirs(plan, i)
        if len(V):
            try:
                return minimal_extremal_cone(N, V)
            except NoCommonFaceError:
                pass
    return N.zero_cone()


def build_partition(classifications: list, points: np.ndarray, N: PolyhedralNorm,
                    plan: TransportPlan | None = None, tol: float = 1e-8) -> DirectedPartition:
    """Group regular points into cells; other points become flagged singletons.

    A residual atom whose plan directions share no extremal face is split
    into several singleton cells, one per face-compatible group of its plan
    pairs, each carrying its share of the atom's mass.

    Two regular points share a cell when they have the same face and their
    difference lies in the span of that face (after scaling the data to the
    unit box).  When ``plan`` is given, every pair leaving a cell is checked
    against the cell cone.
    """
    points = np.asarray(points, float)
    n = len(classifications)
    scale = float(np.ptp(points, axis=0).max()) if n > 1 else 1.0
    scale = scale if scale > 0 else 1.0
    cells = []
    groups: dict = {}
    for i, cl in enumerate(classifications):
        if cl.kind == REGULAR:
            groups.setdefault(cl.forward_cone.active_set, []).append(i)
    for key in sorted(groups):
        idx = groups[key]
        cone = classifications[idx[0]].forward_cone
        comp = orthogonal_complement(cone.basis, N.dim)
        Q = (points[idx] @ comp.T) / scale
        assigned = np.full(len(idx), -1)
        for a in range(len(idx)):
            if assigned[a] >= 0:
                continue
            close = (np.linalg.norm(Q - Q[a], axis=1) <= tol) & (assigned < 0)
            assigned[close] = a
            members = [idx[b] for b in np.flatnonzero(close)]
            cells.append(PartitionCell(len(cells), cone.dim, cone, members, points[members[0]].copy(),
                                       cone.basis.copy(), frozenset({REGULAR})))
    for i, cl in enumerate(classifications):
        if cl.kind == REGULAR:
            continue
        if plan is not None and cl.kind == RESIDUAL and _faceless(plan, i, N):
            for cone, pairs, share in _split_atom(plan, i, N):
                cells.append(PartitionCell(len(cells), cone.dim, cone, [i], points[i].copy(), cone.basis.copy(),
                                           frozenset({RESIDUAL}), pairs, share))
            continue
        cone = _singleton_cone(cl, plan, i, N)
        cells.append(PartitionCell(len(cells), cone.dim, cone, [i], points[i].copy(), cone.basis.copy(),
                                   frozenset({cl.kind})))
    part = DirectedPartition(cells, n, N, list(classifications), points)
    if plan is not None:
        check_partition(part, plan)
    return part


def _faceless(plan: TransportPlan, i: int, N: PolyhedralNorm) -> bool:
    """The plan directions out of source ``i`` share no extremal face."""
    V = _plan_dirs(plan, i)
    if not len(V):
        return False
    try:
        minimal_extremal_cone(N, V)
    except NoCommonFaceError:
        return True
    return False


def _split_atom(plan: TransportPlan, i: int, N: PolyhedralNorm) -> list:
    """Greedy grouping of the pairs out of ``i`` into face-compatible groups.

    Pairs are taken by decreasing mass (ties by target index); a pair joins
    the first group whose directions still share a face.  Returns
    ``(cone, pairs, share)`` per group.
    """
    x = plan.mu.points[i]
    sel = np.flatnonzero(plan.rows == i)
    order = sorted(sel, key=lambda p: (-plan.mass[p], plan.cols[p]))
    groups: list = []  # [dirs, pair positions]
    for p in order:
        v = plan.nu.points[plan.cols[p]] - x
        for g in groups:
            if np.linalg.norm(v) == 0:
                g[1].append(p)
                break
            try:
                minimal_extremal_cone(N, np.vstack(g[0] + [v]))
            except NoCommonFaceError:
                continue
            g[0].append(v)
            g[1].append(p)
            break
        else:
            groups.append([[v] if np.linalg.norm(v) > 0 else [], [p]])
    total = float(plan.mass[sel].sum())
    out = []
    for dirs, ps in groups:
        cone = minimal_extremal_cone(N, np.vstack(dirs)) if dirs else N.zero_cone()
        pairs = sorted((int(plan.rows[p]), int(plan.cols[p])) for p in ps)
        out.append((cone, pairs, float(plan.mass[ps].sum()) / total))
    return out


def check_partition(part: DirectedPartition, plan: TransportPlan, tol: float = 1e-9) -> None:
    """Raise when a plan pair leaves the cone of its cell or the cells overlap.

    Only the cells of a split atom may share a member; their pairs must
    then cover the atom's plan pairs exactly once.
    """
    owner = part.cell_of()
    if np.any(owner < 0):
        raise InternalConsistencyError("some sources are not covered")
    seen: dict = {}
    for c in part.cells:
        for m in c.members:
            seen.setdefault(m, []).append(c)
    for m, cs in seen.items():
        if len(cs) == 1:
            continue
        if any(c.pairs is None for c in cs):
            raise InternalConsistencyError(f"cells overlap at point {m}")
        carried = sorted(pr for c in cs for pr in c.pairs)
        expected = sorted((int(m), int(j)) for j in plan.cols[plan.rows == m])
        if carried != expected:
            raise InternalConsistencyError(f"split cells of point {m} do not cover its pairs exactly")
    X, Y = plan.mu.points, plan.nu.points
    for (i, j), cid in zip(zip(plan.rows, plan.cols), part.pair_cells(plan.rows, plan.cols)):
        if not part.cells[cid].cone.contains(Y[j] - X[i], tol):
            raise InternalConsistencyError(f"pair ({i}, {j}) leaves the cone of cell {cid}")


def partition_from_plan(plan: TransportPlan, P: Potential, tol: float = 1e-9) -> tuple:
    """Convenience chain: direction sets, classification and partition."""
    ds = superdifferential_graph(plan, P, tol)
    cls = classify_all(ds, P.norm, tol)
    part = build_partition(cls, plan.mu.points, P.norm, plan)
    return part, ds


def completeness_violations(part: DirectedPartition, plan: TransportPlan, tol: float = 1e-9) -> list:
    """Sources lying in an order interval ``(x + C) ∩ (t - C)`` of a cell but outside it.

    ``x`` runs over the members of the cell and ``t`` over their targets.
    Only realized points are inspected.
    """
    X, Y = plan.mu.points, plan.nu.points
    owner = part.cell_of()
    out = []
    for cell in part.cells:
        if cell.k == 0:
            continue
        mem = np.asarray(cell.members)
        tg = np.unique(plan.cols[np.isin(plan.rows, mem)])
        others = np.flatnonzero(owner != cell.id)
        for z in others:
            ok_from = cell.cone.contains_many(X[z] - X[mem], tol)
            if not ok_from.any():
                continue
            ok_to = cell.cone.contains_many(Y[tg] - X[z], tol)
            if ok_to.any():
                out.append((cell.id, int(z)))
    return out
