"""Polyhedral convex norms, their extremal cones and cone set-operations.

A norm is stored in support-function form: ``|x| = max_i v_i . x`` over the
vertices ``v_i`` of the dual ball.  The extremal cones of the norm are the
cells of the normal fan of the dual ball; each one is identified by the set of
dual vertices that are simultaneously active on it.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import ConvexHull

from .errors import (
    DegenerateDirectionError,
    EmptyConeError,
    EmptyIntervalError,
    InvalidInputError,
    NoCommonFaceError,
)

DEFAULT_TOL = 1e-9


def _as_vector(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != dim:
        raise InvalidInputError(f"expected a {dim}-vector, got shape {x.shape}")
    return x


def orthonormal_span(vectors: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Rows of the result form an orthonormal basis of span(vectors)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.size == 0:
        return np.zeros((0, vectors.shape[-1]))
    _, s, vt = np.linalg.svd(vectors, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((0, vectors.shape[1]))
    rank = int(np.sum(s > tol * s[0]))
    return vt[:rank]


def orthogonal_complement(basis: np.ndarray, dim: int) -> np.ndarray:
    if basis.shape[0] == 0:
        return np.eye(dim)
    _, _, vt = np.linalg.svd(basis, full_matrices=True)
    return vt[basis.shape[0]:]


@dataclass(frozen=True, eq=False)
class PolyhedralNorm:
    """``|x| = max_i dual_vertices[i] . x``.

    The dual ball ``conv(dual_vertices)`` must contain the origin in its
    interior, so the norm is finite, positive and positively 1-homogeneous
    (it need not be symmetric).
    """

    dual_vertices: np.ndarray
    name: str = "poly"
    symmetry_checked: bool = field(init=False)

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.dual_vertices, dtype=float))
        if V.size == 0:
            raise InvalidInputError("dual_vertices must be nonempty")
        object.__setattr__(self, "dual_vertices", V)
        self._check_interior()
        sym = all(np.min(np.linalg.norm(V + v, axis=1)) < 1e-12 for v in V)
        object.__setattr__(self, "symmetry_checked", bool(sym))

    @property
    def dim(self) -> int:
        return self.dual_vertices.shape[1]

    def _check_interior(self):
        V = self.dual_vertices
        if V.shape[1] == 1:
            if not (V.min() < 0.0 < V.max()):
                raise InvalidInputError("0 must lie in the interior of the dual ball")
            return
        try:
            hull = ConvexHull(V)
        except Exception as exc:  # qhull raises on flat inputs
            raise InvalidInputError(f"dual ball is not full-dimensional: {exc}") from None
        if np.any(hull.equations[:, -1] >= -1e-12):
            raise InvalidInputError("0 must lie in the interior of the dual ball")

    # -- evaluation ---------------------------------------------------------

    def __call__(self, x) -> float:
        return norm_value(self, x)

    def values(self, X) -> np.ndarray:
        """Vectorized norm over the last axis of ``X``."""
        X = np.asarray(X, dtype=float)
        return np.max(X @ self.dual_vertices.T, axis=-1)

    def cost_matrix(self, X, Y) -> np.ndarray:
        """``C[i, j] = |Y[j] - X[i]|``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        # max_v v.(y - x) = max_v (v.y - v.x); chunk over vertices to bound memory
        VX = X @ self.dual_vertices.T
        VY = Y @ self.dual_vertices.T
        out = np.full((X.shape[0], Y.shape[0]), -np.inf)
        for k in range(self.dual_vertices.shape[0]):
            np.maximum(out, VY[None, :, k] - VX[:, k, None], out=out)
        return out

    # -- normal fan ---------------------------------------------------------

    @cached_property
    def facets(self) -> tuple[np.ndarray, np.ndarray]:
        """Outward unit normals ``n`` and offsets ``b`` with ``n.v + b <= 0`` on the dual ball."""
        V = self.dual_vertices
        if self.dim == 1:
            return np.array([[1.0], [-1.0]]), np.array([-V.max(), V.min()])
        eq = ConvexHull(V).equations
        normals, offsets = [], []
        for row in eq:
            n, b = row[:-1], row[-1]
            if any(np.allclose(n, m, atol=1e-9) for m in normals):
                continue
            normals.append(n)
            offsets.append(b)
        return np.array(normals), np.array(offsets)

    def face_generators(self, active: Sequence[int], tol: float = 1e-9) -> np.ndarray:
        """Generators of the normal cone of ``conv(dual_vertices[active])``."""
        normals, offsets = self.facets
        pts = self.dual_vertices[list(active)]
        scale = max(1.0, float(np.abs(self.dual_vertices).max()))
        resid = np.abs(pts @ normals.T + offsets[None, :])
        mask = np.all(resid <= tol * scale, axis=0)
        return normals[mask]

    def cone(self, active: Sequence[int]) -> "ExtremalCone":
        key = tuple(sorted(int(i) for i in active))
        cache = self.__dict__.setdefault("_cone_cache", {})
        if key not in cache:
            gens = self.face_generators(key)
            dim = orthonormal_span(gens).shape[0] if len(gens) else 0
            cache[key] = ExtremalCone(self, key, dim, gens)
        return cache[key]

    def zero_cone(self) -> "ExtremalCone":
        return self.cone(range(self.dual_vertices.shape[0]))

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {"dim": self.dim, "dual_vertices": self.dual_vertices.tolist()}

    @classmethod
    def from_dict(cls, data: dict, name: str = "poly") -> "PolyhedralNorm":
        V = np.asarray(data["dual_vertices"], dtype=float)
        if "dim" in data and V.shape[1] != int(data["dim"]):
            raise InvalidInputError("dim does not match dual_vertices")
        return cls(V, name=name)

    @classmethod
    def from_primal_vertices(cls, P, name: str = "poly") -> "PolyhedralNorm":
        """Norm whose unit ball is ``conv(P)`` (converted to dual-vertex form)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[1] == 1:
            return cls(np.array([[1.0 / P.max()], [1.0 / P.min()]]), name=name)
        eq = ConvexHull(P).equations
        if np.any(eq[:, -1] >= 0):
            raise InvalidInputError("0 must lie in the interior of the unit ball")
        V = eq[:, :-1] / (-eq[:, -1])[:, None]
        uniq = []
        for v in V:
            if not any(np.allclose(v, u, atol=1e-10) for u in uniq):
                uniq.append(v)
        return cls(np.array(uniq), name=name)


def l1_norm(dim: int = 2) -> PolyhedralNorm:
    V = np.array(list(itertools.product([1.0, -1.0], repeat=dim)))
    return PolyhedralNorm(V, name="l1")


def linf_norm(dim: int = 2) -> PolyhedralNorm:
    V = np.vstack([np.eye(dim), -np.eye(dim)])
    return PolyhedralNorm(V, name="linf")


def regular_polygon_norm(m: int, phase: float = 0.0) -> PolyhedralNorm:
    """Planar norm whose unit ball is the regular m-gon with a vertex at angle ``phase``."""
    theta = phase + math.pi * (2 * np.arange(m) + 1) / m
    V = np.column_stack([np.cos(theta), np.sin(theta)]) / math.cos(math.pi / m)
    return PolyhedralNorm(V, name=f"{m}-gon")


def load_norm(spec: str, dim: int = 2) -> PolyhedralNorm:
    """Parse ``l1 | linf | poly:<path> | <path>.json``."""
    if spec == "l1":
        return l1_norm(dim)
    if spec == "linf":
        return linf_norm(dim)
    if spec.startswith("gon:"):
        return regular_polygon_norm(int(spec[4:]))
    path = spec[5:] if spec.startswith("poly:") else spec
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read norm file {path!r}: {exc}") from None
    return PolyhedralNorm.from_dict(data)


def save_norm(norm: PolyhedralNorm, path) -> None:
    Path(path).write_text(json.dumps(norm.to_dict()))


# ---------------------------------------------------------------------------
# cones


@dataclass(frozen=True, eq=False)
class ExtremalCone:
    """Normal cone of the face ``conv(dual_vertices[active_set])`` of the dual ball."""

    norm: PolyhedralNorm
    active_set: tuple
    dim: int
    generators: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, ExtremalCone)
            and other.norm is self.norm
            and other.active_set == self.active_set
        )

    def __hash__(self):
        return hash((id(self.norm), self.active_set))

    def __repr__(self):
        return f"ExtremalCone(active_set={self.active_set}, dim={self.dim})"

    @cached_property
    def basis(self) -> np.ndarray:
        return orthonormal_span(self.generators) if self.dim else np.zeros((0, self.norm.dim))

    def contains(self, v, tol: float = DEFAULT_TOL) -> bool:
        v = np.asarray(v, dtype=float)
        nv = float(np.linalg.norm(v))
        if nv <= 1e-14:
            return True
        if self.dim == 0:
            return False
        return set(self.active_set) <= set(active_set(self.norm, v, tol))

    def contains_many(self, V, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Vectorized :meth:`contains` over the rows of ``V``."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        dots = V @ self.norm.dual_vertices.T
        val = dots.max(axis=1)
        act = dots[:, list(self.active_set)] if self.active_set else dots[:, :0]
        ok = np.all(act >= (val - tol * np.abs(val))[:, None], axis=1)
        zero = np.linalg.norm(V, axis=1) <= 1e-14
        if self.dim == 0:
            return zero
        return ok | zero

    def subcone_of(self, other: "ExtremalCone") -> bool:
        """True when this cone is a face of ``other`` (larger active set)."""
        return set(other.active_set) <= set(self.active_set)

    def halfspaces(self) -> np.ndarray:
        """Rows ``a`` with ``C = {x : a.x <= 0}``."""
        V = self.norm.dual_vertices
        i0 = self.active_set[0]
        rows = [V[j] - V[i0] for j in range(V.shape[0]) if j != i0]
        for i in self.active_set[1:]:
            rows.append(V[i0] - V[i])
        return np.array(rows) if rows else np.zeros((0, self.norm.dim))

    def axis(self) -> np.ndarray:
        """Unit vector along the cone's central direction."""
        g = self.generators / np.linalg.norm(self.generators, axis=1)[:, None]
        a = g.sum(axis=0)
        return a / np.linalg.norm(a)


class Cone:
    """Closed convex cone given by generators (not tied to a norm)."""

    def __init__(self, generators, tol: float = 1e-9):
        G = np.atleast_2d(np.asarray(generators, dtype=float))
        G = G[np.linalg.norm(G, axis=1) > 0]
        self.generators = G / np.linalg.norm(G, axis=1)[:, None] if len(G) else G
        self.tol = tol
        self.basis = orthonormal_span(self.generators) if len(G) else np.zeros((0, 0))
        self.dim = self.basis.shape[0]

    def __repr__(self):
        return f"Cone(dim={self.dim}, n_generators={len(self.generators)})"

    @property
    def ambient_dim(self) -> int:
        return self.generators.shape[1]

    def contains(self, v, tol: float | None = None) -> bool:
        tol = self.tol if tol is None else tol
        v = np.asarray(v, dtype=float)
        nv = float(np.linalg.norm(v))
        if nv <= 1e-14:
            return True
        if self.dim == 0:
            return False
        _, resid = nnls(self.generators.T, v)
        return resid <= max(tol, 1e-10) * nv

    def contains_many(self, V, tol: float | None = None) -> np.ndarray:
        return np.array([self.contains(v, tol) for v in np.atleast_2d(V)])

    def inward_normals(self) -> np.ndarray:
        """Unit normals ``a`` (in ambient coordinates, inside the span) with ``C = {a.x >= 0} ∩ span``."""
        B = self.basis
        G = self.generators @ B.T
        k = self.dim
        if k == 1:
            return (np.sign(G[0, 0]) * B[0])[None, :]
        if k == 2:
            lo, hi = _sector_extremes(G)
            rot = np.array([[0.0, -1.0], [1.0, 0.0]])
            a1 = rot @ lo
            a2 = -(rot @ hi)
            return np.array([a1, a2]) @ B
        normals = []
        for a, b in itertools.combinations(range(len(G)), 2):
            n = np.cross(G[a], G[b])
            nn = np.linalg.norm(n)
            if nn < 1e-12:
                continue
            n /= nn
            s = G @ n
            if np.all(s >= -1e-10):
                pass
            elif np.all(s <= 1e-10):
                n = -n
            else:
                continue
            if not any(np.allclose(n, m, atol=1e-9) for m in normals):
                normals.append(n)
        return np.array(normals) @ B

    def halfspaces(self) -> np.ndarray:
        """Rows ``a`` with ``C = {x : a.x <= 0}`` (includes the span equalities)."""
        comp = orthogonal_complement(self.basis, self.ambient_dim)
        return np.vstack([-self.inward_normals(), comp, -comp])

    def axis(self) -> np.ndarray:
        a = self.generators.sum(axis=0)
        return a / np.linalg.norm(a)


def _sector_extremes(G2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boundary rays (counter-clockwise order) of a pointed planar cone given by generators."""
    c = G2.sum(axis=0)
    if np.linalg.norm(c) < 1e-12:
        raise EmptyConeError("generators do not span a pointed cone")
    c = c / np.linalg.norm(c)
    ang = np.arctan2(G2[:, 1] * c[0] - G2[:, 0] * c[1], G2 @ c)
    lo, hi = G2[np.argmin(ang)], G2[np.argmax(ang)]
    return lo / np.linalg.norm(lo), hi / np.linalg.norm(hi)


def sector_half_angle(cone) -> float:
    """Half opening angle of a 2-dimensional cone."""
    B = cone.basis
    lo, hi = _sector_extremes(np.asarray(cone.generators) @ B.T)
    return 0.5 * math.acos(float(np.clip(lo @ hi, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# operations


def norm_value(N: PolyhedralNorm, x) -> float:
    x = _as_vector(x, N.dim)
    return float(np.max(N.dual_vertices @ x))


def active_set(N: PolyhedralNorm, x, tol: float = DEFAULT_TOL) -> tuple:
    x = _as_vector(x, N.dim)
    if not np.any(x):
        raise DegenerateDirectionError("active set of the zero vector is undefined")
    dots = N.dual_vertices @ x
    val = dots.max()
    return tuple(int(i) for i in np.nonzero(dots >= val - tol * abs(val))[0])


def minimal_extremal_cone(N: PolyhedralNorm, dirs, tol: float = DEFAULT_TOL) -> ExtremalCone:
    """Smallest extremal cone of ``N`` containing every direction in ``dirs``."""
    D = np.atleast_2d(np.asarray(dirs, dtype=float))
    if D.shape[0] == 0:
        raise InvalidInputError("dirs must be nonempty")
    if D.shape[1] != N.dim:
        raise InvalidInputError("dimension mismatch")
    lens = np.linalg.norm(D, axis=1)
    if np.any(lens == 0):
        raise DegenerateDirectionError("zero direction")
    mean = (D / lens[:, None]).sum(axis=0)
    if np.linalg.norm(mean) < 1e-12:
        raise NoCommonFaceError("directions cancel out")
    A = list(active_set(N, mean, tol))
    dots = D @ N.dual_vertices.T
    val = dots.max(axis=1)
    ok = np.all(dots[:, A] >= (val - tol * np.abs(val))[:, None], axis=1)
    if not ok.all():
        bad = D[np.argmin(ok)]
        raise NoCommonFaceError(f"direction {bad} is not in the face exposed by the mean")
    return N.cone(A)


def cone_cost(C, x, y, tol: float = DEFAULT_TOL) -> float:
    """Indicator cost: 0 when ``y - x`` lies in ``C``, ``inf`` otherwise."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    v = y - x
    # coincident points up to rounding
    if np.linalg.norm(v) <= tol * max(1.0, np.linalg.norm(x), np.linalg.norm(y)):
        return 0.0
    return 0.0 if C.contains(v, tol) else math.inf


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = math.pi * (1 + 5 ** 0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def _prune_generators(U: np.ndarray) -> np.ndarray:
    """Extreme rays of cone(U) for a pointed cone in R^3 (span coordinates)."""
    c = U.sum(axis=0)
    c /= np.linalg.norm(c)
    E = orthogonal_complement(c[None, :], 3)
    P = (U / (U @ c)[:, None]) @ E.T
    hull = ConvexHull(P)
    return U[hull.vertices]


def cone_enlarge(C, r: float, samples: int = 4000) -> Cone:
    """The widened cone ``C(r)`` for ``r > 0`` or the shrunken cone ``C(-r)`` for ``r < 0``.

    ``C(r)`` is spanned by ``(C ∩ S + B_r) ∩ span C``; ``C(-r)`` by the unit
    directions whose ``r``-ball (inside ``span C``) stays in ``C``.  Exact for
    cones of dimension at most 2, sampled for dimension 3.
    """
    G = np.asarray(C.generators, dtype=float)
    cone = C if isinstance(C, Cone) else Cone(G)
    k = cone.dim
    if k == 0:
        raise EmptyConeError("cannot enlarge the trivial cone")
    if r == 0 or k == 1:
        return Cone(cone.generators)
    if abs(r) >= 1:
        raise InvalidInputError("|r| must be < 1")
    B = cone.basis
    if k == 2:
        lo, hi = _sector_extremes(cone.generators @ B.T)
        half = 0.5 * math.acos(float(np.clip(lo @ hi, -1, 1)))
        mid = lo + hi
        mid /= np.linalg.norm(mid)
        new_half = half + math.asin(r) if r > 0 else half - math.asin(-r)
        if new_half < 0:
            raise EmptyConeError("shrinkage empties the cone")
        if new_half >= math.pi / 2:
            raise InvalidInputError("enlarged cone is no longer pointed")
        perp = np.array([-mid[1], mid[0]])
        if perp @ hi < 0:
            perp = -perp
        g1 = math.cos(new_half) * mid - math.sin(new_half) * perp
        g2 = math.cos(new_half) * mid + math.sin(new_half) * perp
        return Cone(np.array([g1, g2]) @ B)
    if k != 3:
        raise InvalidInputError("cone_enlarge supports cones of dimension <= 3")
    S = _fibonacci_sphere(samples)
    Gs = cone.generators @ B.T
    if r > 0:
        keep = []
        cos_lim = math.sqrt(1 - r * r)
        for u in S:
            lam, _ = nnls(Gs.T, u)
            if np.linalg.norm(Gs.T @ lam) >= cos_lim - 1e-12:
                keep.append(u)
        U = np.array(keep)
        U = np.vstack([U, Gs])
    else:
        A = cone.inward_normals() @ B.T
        U = S[np.all(S @ A.T >= -r, axis=1)]
        if len(U) < 3:
            raise EmptyConeError("shrinkage empties the cone")
    return Cone(_prune_generators(U) @ B)


def order_interval(C, w, w2, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Halfspace form ``A z <= b`` of ``(w + C) ∩ (w2 - C)``."""
    w = np.asarray(w, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if not C.contains(w2 - w, tol):
        raise EmptyIntervalError("w2 - w is not in the cone")
    H = C.halfspaces()
    A = np.vstack([H, -H])
    b = np.concatenate([H @ w, -(H @ w2)])
    return A, b


def polytope_vertices(A: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Vertices of ``{z : A z <= b}`` by brute force over d-subsets of constraints."""
    d = A.shape[1]
    verts = []
    scale = max(1.0, float(np.abs(b).max()) if b.size else 1.0)
    for rows in itertools.combinations(range(A.shape[0]), d):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        z = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ z <= b + tol * scale):
            if not any(np.allclose(z, u, atol=1e-9 * scale) for u in verts):
                verts.append(z)
    return np.array(verts)
