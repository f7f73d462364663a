"""Discrete Kantorovich problem: plans, potentials and optimality checks."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InfeasibleError, InvalidInputError, NotOptimalError
from .measures import DiscreteMeasure
from .polynorm import PolyhedralNorm
from .simplex import SimplexResult, TransportSimplex

MASS_TOL = 1e-12


# ---------------------------------------------------------------------------
# cost oracles


class NormCost:
    """``c(x, y) = |y - x|`` for a polyhedral norm."""

    def __init__(self, norm: PolyhedralNorm):
        self.norm = norm

    def __call__(self, x, y) -> float:
        return float(self.norm.values(np.asarray(y, float) - np.asarray(x, float)))

    def matrix(self, X, Y) -> np.ndarray:
        return self.norm.cost_matrix(X, Y)


class ConeCost:
    """Indicator cost of a cone: 0 on ``y - x in C``, ``inf`` elsewhere."""

    def __init__(self, cone, tol: float = 1e-9):
        self.cone = cone
        self.tol = tol

    def __call__(self, x, y) -> float:
        v = np.asarray(y, float) - np.asarray(x, float)
        return 0.0 if self.cone.contains(v, self.tol) else math.inf

    def matrix(self, X, Y) -> np.ndarray:
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        D = (Y[None, :, :] - X[:, None, :]).reshape(-1, X.shape[1])
        ok = self.cone.contains_many(D, self.tol).reshape(X.shape[0], Y.shape[0])
        return np.where(ok, 0.0, math.inf)


class RestrictedCost:
    """A finite cost restricted to displacements in a cone (``inf`` outside)."""

    def __init__(self, base, cone, tol: float = 1e-9):
        self.base = base
        self.gate = ConeCost(cone, tol)

    def __call__(self, x, y) -> float:
        return self.base(x, y) + self.gate(x, y)

    def matrix(self, X, Y) -> np.ndarray:
        return self.base.matrix(X, Y) + self.gate.matrix(X, Y)


class QuadraticCost:
    """``c(x, y) = |y - x|^2`` (Euclidean)."""

    def __call__(self, x, y) -> float:
        d = np.asarray(y, float) - np.asarray(x, float)
        return float(d @ d)

    def matrix(self, X, Y) -> np.ndarray:
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        return ((Y[None, :, :] - X[:, None, :]) ** 2).sum(axis=-1)


# ---------------------------------------------------------------------------
# plans


@dataclass(frozen=True)
class Carriage:
    """Finite set of index pairs ``(i, j)`` carrying a plan."""

    pairs: tuple

    @classmethod
    def of(cls, pairs) -> "Carriage":
        return cls(tuple(sorted({(int(i), int(j)) for i, j in pairs})))

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)

    @staticmethod
    def identity(n: int) -> "Carriage":
        return Carriage(tuple((i, i) for i in range(n)))


@dataclass(eq=False)
class TransportPlan:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost_value: float
    basis: SimplexResult | None = field(default=None, repr=False)

    @property
    def entries(self) -> list:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def carriage(self) -> Carriage:
        return Carriage.of(zip(self.rows.tolist(), self.cols.tolist()))

    def dense(self) -> np.ndarray:
        X = np.zeros((len(self.mu), len(self.nu)))
        np.add.at(X, (self.rows, self.cols), self.mass)
        return X

    def marginal_error(self) -> float:
        X = self.dense()
        return float(max(np.abs(X.sum(1) - self.mu.weights).max(), np.abs(X.sum(0) - self.nu.weights).max()))

    def evaluate(self, cost) -> float:
        C = cost.matrix(self.mu.points[self.rows], self.nu.points[self.cols])
        return math.fsum((np.diag(C) * self.mass).tolist()) if len(self.mass) else 0.0

    def targets_of(self, i: int) -> list:
        return [(int(j), float(w)) for r, j, w in zip(self.rows, self.cols, self.mass) if r == i]


def plan_from_dense(mu, nu, X, cost, tol: float = MASS_TOL) -> TransportPlan:
    rows, cols = np.nonzero(X > tol)
    mass = X[rows, cols]
    C = cost.matrix(mu.points, nu.points)
    val = math.fsum((C[rows, cols] * mass).tolist())
    return TransportPlan(mu, nu, rows, cols, mass, val)


def _check_feasible(mu, nu, finite: np.ndarray) -> None:
    """Max-flow test that a plan exists using only finite-cost arcs."""
    if finite.all():
        return
    G = nx.DiGraph()
    for i, w in enumerate(mu.weights):
        G.add_edge("s", ("x", i), capacity=float(w))
    for j, w in enumerate(nu.weights):
        G.add_edge(("y", j), "t", capacity=float(w))
    for i, j in zip(*np.nonzero(finite)):
        G.add_edge(("x", int(i)), ("y", int(j)))  # uncapacitated
    if "s" not in G or "t" not in G:
        raise InfeasibleError("no finite-cost arcs")
    value = nx.maximum_flow_value(G, "s", "t") if nx.has_path(G, "s", "t") else 0.0
    if value < 1.0 - 1e-9:
        raise InfeasibleError(f"only {value:.6g} of the mass can move at finite cost")


def _levels(C: np.ndarray, secondary: np.ndarray | None = None) -> list:
    forbidden = ~np.isfinite(C)
    levels = []
    if forbidden.any():
        levels.append(forbidden.astype(float))
    levels.append(np.where(forbidden, 0.0, C))
    if secondary is not None:
        levels.append(np.where(forbidden, 0.0, secondary))
    return levels


def build_solver(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, secondary=None) -> tuple:
    if mu.dim != nu.dim:
        raise InvalidInputError("measures live in different dimensions")
    C = cost.matrix(mu.points, nu.points)
    _check_feasible(mu, nu, np.isfinite(C))
    S2 = secondary.matrix(mu.points, nu.points) if secondary is not None else None
    return TransportSimplex(mu.weights, nu.weights, _levels(C, S2)), C


def plan_from_basis(mu, nu, res: SimplexResult, C: np.ndarray, tol: float = MASS_TOL) -> TransportPlan:
    keep = res.flow > tol
    rows, cols, mass = res.rows[keep], res.cols[keep], res.flow[keep]
    order = np.lexsort((cols, rows))
    rows, cols, mass = rows[order], cols[order], mass[order]
    c = C[rows, cols]
    if not np.all(np.isfinite(c)):
        raise InfeasibleError("optimal basis uses a forbidden arc")
    return TransportPlan(mu, nu, rows, cols, mass, math.fsum((c * mass).tolist()), res)


def solve_primal(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, secondary=None) -> TransportPlan:
    """Optimal basic transport plan.

    With ``secondary`` given, the plan minimizes the secondary cost among the
    primary-optimal plans (lexicographic objective).
    """
    solver, C = build_solver(mu, nu, cost, secondary)
    return plan_from_basis(mu, nu, solver.solve(), C)


def enumerate_optimal_plans(mu, nu, cost, budget: int = 8, seed: int = 0, secondary=None) -> list:
    """Up to ``budget`` optimal plans with distinct supports (objective-preserving pivots)."""
    solver, C = build_solver(mu, nu, cost, secondary)
    res = solver.solve()
    rng = np.random.default_rng(seed)
    return [plan_from_basis(mu, nu, r, C) for r in solver.alternative_optima(res, rng, budget)]


# ---------------------------------------------------------------------------
# potentials


@dataclass(eq=False)
class Potential:
    """Values of a Kantorovich potential ``psi`` on a point cloud.

    ``src_ids[i]`` / ``tgt_ids[j]`` index into ``points`` for source ``i`` and
    target ``j``.  ``defined`` marks points where the construction reached.
    """

    points: np.ndarray
    psi: np.ndarray
    src_ids: np.ndarray
    tgt_ids: np.ndarray
    norm: PolyhedralNorm | None = None
    defined: np.ndarray | None = None
    component: np.ndarray | None = None

    @property
    def phi(self) -> np.ndarray:
        return -self.psi

    def at_source(self, i: int) -> float:
        return float(self.psi[self.src_ids[i]])

    def at_target(self, j: int) -> float:
        return float(self.psi[self.tgt_ids[j]])

    def source_values(self) -> np.ndarray:
        return self.psi[self.src_ids]

    def target_values(self) -> np.ndarray:
        return self.psi[self.tgt_ids]


def union_points(X: np.ndarray, Y: np.ndarray):
    """Deduplicated union of two clouds plus index maps into it."""
    pts = []
    index = {}
    ids_x = np.empty(len(X), dtype=int)
    ids_y = np.empty(len(Y), dtype=int)
    for arr, ids in ((X, ids_x), (Y, ids_y)):
        for k, p in enumerate(arr):
            kk = tuple(p.tolist())
            if kk not in index:
                index[kk] = len(pts)
                pts.append(p)
            ids[k] = index[kk]
    return np.array(pts), ids_x, ids_y


def _relax(W: np.ndarray, anchors: np.ndarray, thresh: float) -> np.ndarray:
    """Shortest-path values from ``anchors`` (Bellman-Ford on a dense weight matrix)."""
    N = W.shape[0]
    d = np.full(N, np.inf)
    d[anchors] = 0.0
    for it in range(N + 1):
        cand = np.min(d[:, None] + W, axis=0)
        improve = cand < d - thresh
        if not improve.any():
            return d
        if it == N:
            raise NotOptimalError("negative cycle in the carriage graph")
        d = np.where(improve, cand, d)
    return d


def cyclic_potential(X, Y, pairs, cost, tol: float = 1e-12, central: bool = False):
    """Shortest-path potential built from chains of carriage pairs.

    ``pairs`` is a list of ``(a, t)`` with ``a`` indexing ``X`` and ``t``
    indexing ``Y``.  Returns ``(phi, psi_y, defined, component)`` where
    ``phi(b) = min_a phi(a) + W[a, b]`` with
    ``W[a, b] = min_{(a, t)} c(X[b], Y[t]) - c(X[a], Y[t])`` and one anchor
    (the lowest index) per weakly connected component.  ``psi_y`` holds
    ``c(x, y) - phi(x)`` on targets of pairs so ``phi + psi <= c`` with
    equality on the pairs.  Raises :class:`NotOptimalError` on a negative
    cycle.

    With ``central`` the result is the average of this (largest) solution
    and the smallest one, ``-dist(x, anchor)``; a constraint is then tight
    only when it is tight for both.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    N = X.shape[0]
    pairs = np.asarray(sorted(set(map(tuple, pairs))), dtype=int).reshape(-1, 2)
    ps, pt = pairs[:, 0], pairs[:, 1]
    C = cost.matrix(X, Y[pt]) if len(pairs) else np.zeros((N, 0))
    base = C[ps, np.arange(len(pairs))]
    if not np.all(np.isfinite(base)):
        raise InvalidInputError("carriage contains an infinite-cost pair")
    M = C - base[None, :]  # M[b, p] = c(X[b], Y[t_p]) - c(X[a_p], Y[t_p])
    W = np.full((N, N), np.inf)
    if len(pairs):
        starts = np.flatnonzero(np.r_[True, ps[1:] != ps[:-1]])
        mins = np.minimum.reduceat(M, starts, axis=1)  # (N, #distinct sources)
        W[ps[starts], :] = mins.T
    np.fill_diagonal(W, np.minimum(np.diag(W), 0.0))
    finite = np.isfinite(W)
    scale = max(1.0, float(np.abs(W[finite]).max()) if finite.any() else 1.0)
    thresh = tol * scale

    _, labels = connected_components(csr_matrix(finite), directed=True, connection="weak")
    # renumber components by their lowest member; that member is the anchor
    _, anchors, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(anchors))
    component = rank[inverse]
    phi = _relax(W, anchors, thresh)
    if central:
        low = -_relax(W.T, anchors, thresh)
        both = np.isfinite(phi) & np.isfinite(low)
        phi = np.where(both, 0.5 * (phi + low), np.inf)
    defined = np.isfinite(phi)
    psi_y = np.full(Y.shape[0], np.nan)
    for p, (a, t) in enumerate(pairs):
        if defined[a]:
            psi_y[t] = base[p] - phi[a]
    return phi, psi_y, defined, component


def extract_potentials(plan: TransportPlan, cost, anchor: int | None = None, tol: float = 1e-12,
                       central: bool = False) -> Potential:
    """Kantorovich potential ``psi`` (and ``phi = -psi``) from an optimal plan.

    For a norm cost the construction runs on the union of source and target
    points with identity pairs added, which yields one globally defined
    potential.  ``anchor`` optionally selects the point (union index) where
    ``psi = 0``.  ``central`` averages the largest and smallest solutions
    of the chain constraints (see :func:`cyclic_potential`).
    """
    X, Y = plan.mu.points, plan.nu.points
    if not isinstance(cost, NormCost):
        n, m = len(X), len(Y)
        phi, psi_y, defined, comp = cyclic_potential(X, Y, zip(plan.rows, plan.cols), cost, tol, central)
        psi = np.concatenate([-phi, psi_y])
        defined = np.concatenate([defined, ~np.isnan(psi_y)])
        comp_y = np.full(m, -1)
        comp_y[plan.cols] = comp[plan.rows]
        return Potential(np.vstack([X, Y]), psi, np.arange(n), n + np.arange(m), None, defined,
                         np.concatenate([comp, comp_y]))
    pts, sid, tid = union_points(X, Y)
    pairs = [(sid[i], tid[j]) for i, j in zip(plan.rows, plan.cols)]
    pairs += [(k, k) for k in range(len(pts))]
    phi, _, defined, comp = cyclic_potential(pts, pts, pairs, cost, tol, central)
    psi = -phi
    if anchor is not None:
        psi = psi - psi[anchor]
    return Potential(pts, psi, sid, tid, cost.norm, defined, comp)


def extend_potential(P: Potential, x) -> float:
    """Norm-Lipschitz extension ``psi(x) = max_z psi(z) - |z - x|``."""
    x = np.asarray(x, float)
    ok = P.defined if P.defined is not None else np.ones(len(P.psi), bool)
    Z = P.points[ok]
    return float(np.max(P.psi[ok] - P.norm.values(Z - x[None, :])))


def duality_gap(plan: TransportPlan, P: Potential, mu=None, nu=None) -> float:
    """``cost - (sum psi dnu - sum psi dmu)``."""
    mu = plan.mu if mu is None else mu
    nu = plan.nu if nu is None else nu
    dual = math.fsum((P.target_values() * nu.weights).tolist()) - math.fsum((P.source_values() * mu.weights).tolist())
    return plan.cost_value - dual


def dual_violation(P: Potential, cost) -> float:
    """``max_{x, y} psi(y) - psi(x) - c(x, y)`` over stored sources and targets (<= 0 when feasible)."""
    X = P.points[P.src_ids]
    Y = P.points[P.tgt_ids]
    C = cost.matrix(X, Y)
    D = P.target_values()[None, :] - P.source_values()[:, None] - C
    return float(np.max(D))


# ---------------------------------------------------------------------------
# cyclical monotonicity


@dataclass
class MonotonicityVerdict:
    passed: bool
    witness: tuple | None
    excess: float
    cycles_checked: int
    exhaustive: bool


def _cycle_count(P: int, max_len: int) -> int:
    total = 0
    for k in range(2, max_len + 1):
        if k <= P:
            total += math.perm(P, k) // k
    return total


def check_cyclical_monotonicity(carriage, X, Y, cost, max_len: int = 4, tol: float = 1e-9,
                                max_cycles: int = 200_000, seed: int = 0) -> MonotonicityVerdict:
    """Test ``sum c(x_i, y_i) <= sum c(x_{i+1}, y_i)`` over cycles of carriage pairs.

    All cycles of length ``<= max_len`` are enumerated (one rotation each)
    when their number is at most ``max_cycles``; otherwise ``max_cycles``
    random cycles are drawn.
    """
    if max_len < 2:
        raise InvalidInputError("max_len must be >= 2")
    pairs = list(carriage)
    P = len(pairs)
    if P < 2:
        return MonotonicityVerdict(True, None, 0.0, 0, True)
    xi = np.array([p[0] for p in pairs])
    yj = np.array([p[1] for p in pairs])
    # D[p, q] = c(x_q, y_p)
    D = cost.matrix(np.asarray(X)[xi], np.asarray(Y)[yj]).T
    diag = np.diag(D).copy()
    scale = max(1.0, float(np.abs(diag[np.isfinite(diag)]).max(initial=0.0)))

    def excess(cyc):
        cur = math.fsum(diag[list(cyc)].tolist())
        nxt = math.fsum(D[cyc[k], cyc[(k + 1) % len(cyc)]] for k in range(len(cyc)))
        return cur - nxt

    exhaustive = _cycle_count(P, max_len) <= max_cycles
    checked = 0
    if exhaustive:
        for k in range(2, min(max_len, P) + 1):
            for cyc in itertools.permutations(range(P), k):
                if cyc[0] != min(cyc):
                    continue
                checked += 1
                e = excess(cyc)
                if e > tol * scale:
                    return MonotonicityVerdict(False, tuple(pairs[c] for c in cyc), e, checked, True)
    else:
        rng = np.random.default_rng(seed)
        for _ in range(max_cycles):
            k = int(rng.integers(2, min(max_len, P) + 1))
            cyc = tuple(rng.choice(P, size=k, replace=False).tolist())
            checked += 1
            e = excess(cyc)
            if e > tol * scale:
                return MonotonicityVerdict(False, tuple(pairs[c] for c in cyc), e, checked, False)
    return MonotonicityVerdict(True, None, 0.0, checked, exhaustive)
