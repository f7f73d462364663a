"""Secondary-cost selection and assembly of a transport map.

The primary norm cost is linear on each extremal cone, so inside a cell every
cone-respecting coupling has the same primary cost.  The map is assembled
cell by cell: monotone rearrangement along 1-dimensional cells, and for
higher-dimensional cells a few rounds of strictly-convex-like polygonal
surrogates followed by a split into the rays of the quadratic plan.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cycles import build_axial_graph, cycle_classes
from .errors import InvalidInputError
from .kantorovich import (
    ConeCost,
    NormCost,
    QuadraticCost,
    RestrictedCost,
    TransportPlan,
    cyclic_potential,
    solve_primal,
)
from .measures import DiscreteMeasure
from .partition import DirectedPartition
from .polynorm import PolyhedralNorm, _fibonacci_sphere, minimal_extremal_cone, regular_polygon_norm
from .simplex import TransportSimplex

MASS_TOL = 1e-12


# ---------------------------------------------------------------------------
# secondary selection


@dataclass(eq=False)
class SecondaryPlan:
    plan: TransportPlan
    secondary_cost_value: float

    @property
    def cost_value(self) -> float:
        return self.plan.cost_value


def secondary_select(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, secondary=None) -> SecondaryPlan:
    """Plan minimizing ``secondary`` (squared Euclidean by default) over the primary-optimal plans."""
    secondary = QuadraticCost() if secondary is None else secondary
    plan = solve_primal(mu, nu, cost, secondary=secondary)
    return SecondaryPlan(plan, plan.evaluate(secondary))


# ---------------------------------------------------------------------------
# per-cell potentials


@dataclass
class CellPotentials:
    ok: bool
    phi: np.ndarray | None = None  # on the cell sources
    psi: np.ndarray | None = None  # on the cell targets
    report: str = ""
    slackness: float = math.nan  # max |phi + psi - c| on the carriage
    feasibility: float = math.nan  # max (phi + psi - c) over all source/target pairs


def cell_potentials(X, Y, pairs, cone, secondary=None, tol: float = 1e-9) -> CellPotentials:
    """Potentials ``phi + psi <= c_m`` with equality on ``pairs`` for the cone-restricted secondary cost.

    ``pairs`` index ``X`` (sources) and ``Y`` (targets).  When the carriage
    is not cyclically connected, no potential is built and the reason is
    reported.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    pairs = sorted({(int(i), int(j)) for i, j in pairs})
    secondary = QuadraticCost() if secondary is None else secondary
    cm = RestrictedCost(secondary, cone, tol)
    g = build_axial_graph(pairs, X, Y, cone, tol, identity=False)
    labels = cycle_classes(g)
    if labels.max(initial=0) > 0:
        return CellPotentials(False, report=f"carriage splits into {labels.max() + 1} cycle classes; "
                                            "the defining infimum runs over an empty path set")
    srcs = g.nodes
    pos = {int(v): k for k, v in enumerate(srcs)}
    tg = np.array(sorted({j for _, j in pairs}), dtype=int)
    tpos = {int(v): k for k, v in enumerate(tg)}
    local = [(pos[i], tpos[j]) for i, j in pairs]
    phi, psi, defined, _ = cyclic_potential(X[srcs], Y[tg], local, cm)
    if not defined.all():
        return CellPotentials(False, report="potential undefined on part of the cell")
    C = cm.matrix(X[srcs], Y[tg])
    S = phi[:, None] + psi[None, :] - C
    slack = max(abs(S[a, b]) for a, b in local)
    return CellPotentials(True, phi, psi, "ok", float(slack), float(np.max(S)))


# ---------------------------------------------------------------------------
# 1-d monotone coupling


@dataclass
class Coupling1D:
    entries: list  # (i, j, mass)
    is_map: bool


def monotone_map_1d(xs, xw, ys, yw, tol: float = 1e-12) -> Coupling1D:
    """Quantile coupling of two weighted point sets on the line (indices refer to the inputs)."""
    xs, xw = np.asarray(xs, float).ravel(), np.asarray(xw, float).ravel()
    ys, yw = np.asarray(ys, float).ravel(), np.asarray(yw, float).ravel()
    tx, ty = math.fsum(xw.tolist()), math.fsum(yw.tolist())
    if abs(tx - ty) > 1e-9 * max(1.0, tx):
        raise InvalidInputError(f"mass mismatch {tx} vs {ty}")
    ox = np.argsort(xs, kind="stable")
    oy = np.argsort(ys, kind="stable")
    rx = xw[ox].copy()
    ry = yw[oy].copy() * (tx / ty if ty > 0 else 1.0)
    entries = []
    a = b = 0
    while a < len(rx) and b < len(ry):
        m = min(rx[a], ry[b])
        if m > tol:
            entries.append((int(ox[a]), int(oy[b]), float(m)))
        rx[a] -= m
        ry[b] -= m
        if rx[a] <= tol:
            a += 1
        if b < len(ry) and ry[b] <= tol:
            b += 1
    srcs = [e[0] for e in entries]
    is_map = len(srcs) == len(set(srcs))
    return Coupling1D(entries, is_map)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class RefinedCell:
    members: list
    k: int
    origin: int  # id of the primary cell
    stage: str  # "primary", "round-<m>" or "ray-split"
    share: float = 1.0  # mass fraction of the members (below 1 for split atoms)


@dataclass(eq=False)
class MapResult:
    table: np.ndarray  # target index per source, -1 where the atom is split
    entries: list  # final coupling (i, j, mass)
    residual: list  # (i, [(j, mass), ...]) for split atoms
    refined_cells: list
    rounds_used: int
    cost_value: float = math.nan
    notes: list = field(default_factory=list)

    @property
    def is_map(self) -> bool:
        return not self.residual

    def residual_mass(self, mu: DiscreteMeasure) -> float:
        return float(sum(mu.weights[i] for i, _ in self.residual))

    def mass_by_dim(self, mu: DiscreteMeasure) -> dict:
        out = {}
        for c in self.refined_cells:
            out[c.k] = out.get(c.k, 0.0) + c.share * float(mu.weights[c.members].sum())
        return out


def surrogate_norm(k: int, m: int) -> PolyhedralNorm:
    """Round-``m`` polyhedral stand-in for the Euclidean norm on ``R^k``."""
    if k == 1:
        return PolyhedralNorm(np.array([[1.0], [-1.0]]))
    if k == 2:
        return regular_polygon_norm(2 ** (m + 2))
    if k == 3:
        return PolyhedralNorm(_fibonacci_sphere(2 ** (m + 4)))
    raise InvalidInputError("surrogates implemented for k <= 3")


def _line_key(x, e, scale, digits=9):
    """Hashable id of the line ``x + R e`` (component of ``x`` orthogonal to ``e``)."""
    q = (x - (x @ e) * e) / scale
    return tuple(np.round(q, digits).tolist())


def assemble_map(partition: DirectedPartition, plan: TransportPlan, rounds: int = 3,
                 tol: float = 1e-9) -> MapResult:
    """Piece a map together cell by cell from a (secondary) optimal plan."""
    mu, nu = plan.mu, plan.nu
    X, Y = mu.points, nu.points
    wx = mu.weights
    scale = max(float(np.ptp(np.vstack([X, Y]), axis=0).max()), 1e-12)
    by_src: dict = {}
    for i, j, w in zip(plan.rows.tolist(), plan.cols.tolist(), plan.mass.tolist()):
        by_src.setdefault(i, {}).setdefault(j, 0.0)
        by_src[i][j] += w

    entries: list = []
    refined: list = []
    notes: list = []
    rounds_used = 0

    def targets_of(members):
        acc: dict = {}
        for i in members:
            for j, w in by_src.get(i, {}).items():
                acc[j] = acc.get(j, 0.0) + w
        return acc

    def monotone(members, tgt, e):
        tj = sorted(tgt)
        c = monotone_map_1d(X[members] @ e, wx[members], Y[tj] @ e, [tgt[j] for j in tj])
        return [(members[a], tj[b], w) for a, b, w in c.entries]

    def ray_split(members, pairs, origin):
        """Group pairs by the directed line they run on and rearrange monotonically on each."""
        lines: dict = {}
        still: list = []
        for i in members:
            tj = [(j, w) for (a, j, w) in pairs if a == i]
            dirs = {}
            for j, w in tj:
                v = Y[j] - X[i]
                nv = np.linalg.norm(v)
                if nv <= 1e-14 * scale:
                    dirs.setdefault(("fixed",), []).append((j, w))
                    continue
                e = v / nv
                dirs.setdefault(("ray",) + tuple(np.round(e, 9).tolist()) + _line_key(X[i], e, scale), []).append((j, w))
            if len(dirs) != 1:
                still.append(i)
                continue
            key = next(iter(dirs))
            lines.setdefault(key, []).append(i)
        out = []
        for key, mem in lines.items():
            tgt = {}
            for i in mem:
                for (a, j, w) in pairs:
                    if a == i:
                        tgt[j] = tgt.get(j, 0.0) + w
            if key[0] == "fixed":
                for i in mem:
                    out += [(i, j, w) for (a, j, w) in pairs if a == i]
                refined.append(RefinedCell(list(mem), 0, origin, "ray-split"))
                continue
            e = np.array(key[1:1 + X.shape[1]])
            out += monotone(mem, tgt, e)
            refined.append(RefinedCell(list(mem), 1, origin, "ray-split"))
        for i in still:
            out += [(a, j, w) for (a, j, w) in pairs if a == i]
            refined.append(RefinedCell([i], 2, origin, "ray-split"))
        return out

    for cell in partition.cells:
        mem = list(cell.members)
        tgt = targets_of(mem)
        if cell.pairs is not None:
            entries += [(i, j, by_src[i][j]) for i, j in cell.pairs]
            refined.append(RefinedCell(mem, 0, cell.id, "primary", cell.share))
            continue
        if len(mem) == 1 or cell.k == 0:
            for i in mem:
                entries += [(i, j, w) for j, w in by_src.get(i, {}).items()]
            refined.append(RefinedCell(mem, 0 if len(mem) == 1 else cell.k, cell.id, "primary"))
            continue
        if cell.k == 1:
            e = cell.cone.axis()
            entries += monotone(mem, tgt, e)
            refined.append(RefinedCell(mem, 1, cell.id, "primary"))
            continue
        # k >= 2: surrogate rounds on the cell subproblem
        B = cell.basis
        tj = sorted(tgt)
        a = wx[mem]
        b = np.array([tgt[j] for j in tj])
        b = b * (a.sum() / b.sum())
        P = X[mem] @ B.T
        Q = Y[tj] @ B.T
        gate = ConeCost(cell.cone, tol).matrix(X[mem], Y[tj])
        forbidden = ~np.isfinite(gate)
        quad = QuadraticCost().matrix(X[mem], Y[tj])
        pairs = [(i, j, w) for i in mem for j, w in by_src.get(i, {}).items()]
        active = list(range(len(mem)))
        for m in range(rounds):
            if not active:
                break
            rounds_used = max(rounds_used, m + 1)
            S = surrogate_norm(cell.k, m)
            sc = S.cost_matrix(P, Q)
            levels = ([forbidden.astype(float)] if forbidden.any() else []) + [np.where(forbidden, 0.0, sc), quad]
            res = TransportSimplex(a, b, levels).solve()
            keep = res.flow > MASS_TOL
            pairs = [(mem[r], tj[c], w) for r, c, w in zip(res.rows[keep], res.cols[keep], res.flow[keep])]
            # sources whose realized directions sit on a 1-dimensional face of the surrogate
            resolved = []
            for r in active:
                i = mem[r]
                D = np.array([Q[tj.index(j)] - P[r] for (a_, j, _) in pairs if a_ == i])
                D = D[np.linalg.norm(D, axis=1) > 1e-14 * scale] if len(D) else D
                if len(D) == 0:
                    continue
                try:
                    F = minimal_extremal_cone(S, D, tol)
                except Exception:
                    continue
                if F.dim <= 1:
                    resolved.append(r)
            if resolved:
                notes.append(f"cell {cell.id} round {m}: {len(resolved)} sources on surrogate rays")
                sub = [mem[r] for r in resolved]
                entries += ray_split(sub, [p for p in pairs if p[0] in set(sub)], cell.id)
                active = [r for r in active if r not in set(resolved)]
        if active:
            sub = [mem[r] for r in active]
            entries += ray_split(sub, [p for p in pairs if p[0] in set(sub)], cell.id)

    table = np.full(len(mu), -1)
    per_src: dict = {}
    for i, j, w in entries:
        if w > MASS_TOL:
            per_src.setdefault(i, {}).setdefault(j, 0.0)
            per_src[i][j] += w
    residual = []
    for i, tg in per_src.items():
        if len(tg) == 1:
            table[i] = next(iter(tg))
        else:
            residual.append((i, sorted(tg.items())))
    residual.sort()
    cost = NormCost(partition.norm)
    val = math.fsum(w * cost(X[i], Y[j]) for i, j, w in entries)
    return MapResult(table, entries, residual, refined, rounds_used, val, notes)


@dataclass
class PushforwardVerdict:
    passed: bool
    mismatch: tuple | None = None  # (target index, image mass, expected mass)
    reason: str = ""


def verify_pushforward(table, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = 1e-12) -> PushforwardVerdict:
    """Check that the image of ``mu`` under the map ``table`` equals ``nu`` atom by atom."""
    table = np.asarray(table)
    if np.any(table < 0):
        return PushforwardVerdict(False, None, "map is not total")
    img = [[] for _ in range(len(nu))]
    for i, j in enumerate(table.tolist()):
        img[j].append(float(mu.weights[i]))
    for j in range(len(nu)):
        got = math.fsum(img[j])
        if abs(got - nu.weights[j]) > tol:
            return PushforwardVerdict(False, (j, got, float(nu.weights[j])), "image mass differs")
    return PushforwardVerdict(True)


def map_plan(result: MapResult, mu, nu, cost) -> TransportPlan:
    """The coupling of a map result as a :class:`TransportPlan`."""
    X = np.zeros((len(mu), len(nu)))
    for i, j, w in result.entries:
        X[i, j] += w
    rows, cols = np.nonzero(X > MASS_TOL)
    mass = X[rows, cols]
    C = cost.matrix(mu.points, nu.points)
    return TransportPlan(mu, nu, rows, cols, mass, math.fsum((C[rows, cols] * mass).tolist()))
