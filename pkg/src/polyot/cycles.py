"""Axial-path reachability, cycle classes and lexicographic signatures.

For a carriage ``Gamma`` and a cone cost, an axial step goes from ``u`` to
``v`` when some base pair ``(u, y)`` of ``Gamma`` (identity pairs included)
has ``y - v`` in the cone.  Strongly connected components of the step graph
are the cycle classes; reachability sets from every node give binary
signatures whose lexicographic order is a compatible linear preorder.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InternalConsistencyError, InvalidInputError


@dataclass(eq=False)
class AxialGraph:
    """``adj[a, b]``: one axial step goes from node ``a`` to node ``b``.

    ``nodes`` are source indices (into the source cloud), sorted.
    """

    nodes: np.ndarray
    adj: np.ndarray
    points: np.ndarray

    def reachability(self) -> np.ndarray:
        """Reflexive-transitive closure of ``adj``."""
        R = self.adj | np.eye(len(self.nodes), dtype=bool)
        while True:
            F = R.astype(np.float32)
            nxt = (F @ F) > 0
            if np.array_equal(nxt, R):
                return R
            R = nxt


def build_axial_graph(carriage, X, Y, cone, tol: float = 1e-9, identity: bool = True) -> AxialGraph:
    """Step graph over the sources of ``carriage`` (pairs of source/target indices).

    With ``identity`` the pairs ``(x, x)`` are added to the carriage.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    pairs = list(carriage)
    nodes = np.array(sorted({int(i) for i, _ in pairs}), dtype=int)
    pos = {int(v): k for k, v in enumerate(nodes)}
    P = X[nodes]
    n = len(nodes)
    # base targets per node: its carriage targets plus the node itself
    base_pts = [P] if identity else [np.zeros((0, X.shape[1]))]
    base_src = [np.arange(n)] if identity else [np.zeros(0, dtype=int)]
    if pairs:
        base_pts.append(Y[[j for _, j in pairs]])
        base_src.append(np.array([pos[int(i)] for i, _ in pairs]))
    T = np.vstack(base_pts)
    S = np.concatenate(base_src)
    # ok[t, v]: T[t] - P[v] in the cone
    D = (T[:, None, :] - P[None, :, :]).reshape(-1, X.shape[1])
    ok = cone.contains_many(D, tol).reshape(len(T), n)
    adj = np.zeros((n, n), dtype=bool)
    np.logical_or.at(adj, S, ok)
    np.fill_diagonal(adj, True)
    return AxialGraph(nodes, adj, P)


def cycle_classes(g: AxialGraph) -> np.ndarray:
    """Class label per node (strongly connected components, numbered by lowest member)."""
    _, labels = connected_components(csr_matrix(g.adj), directed=True, connection="strong")
    return _canonical(labels)


def _canonical(labels) -> np.ndarray:
    """Relabel so classes are numbered in order of first appearance."""
    items = labels.tolist() if isinstance(labels, np.ndarray) else list(labels)
    first = {}
    out = np.empty(len(items), dtype=int)
    for k, l in enumerate(items):
        if l not in first:
            first[l] = len(first)
        out[k] = first[l]
    return out


def classes_as_sets(labels) -> set:
    groups = {}
    for k, l in enumerate(np.asarray(labels).tolist()):
        groups.setdefault(l, []).append(k)
    return {frozenset(v) for v in groups.values()}


def build_H_sets(g: AxialGraph, W=None) -> np.ndarray:
    """``H[n, x]``: node ``x`` is reached by an axial path from ``W[n]`` (node positions)."""
    if W is None:
        W = np.arange(len(g.nodes))
    W = np.asarray(W, dtype=int)
    if W.size == 0:
        raise InvalidInputError("W must be nonempty")
    if W.min() < 0 or W.max() >= len(g.nodes):
        raise InvalidInputError("W must index graph nodes")
    return g.reachability()[W]


@dataclass(eq=False)
class PreorderSignature:
    bits: np.ndarray  # bits[x, n] = x not in H_n
    labels: np.ndarray  # fiber label per node
    class_id: np.ndarray  # rank of the key among distinct keys
    nodes: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def key(self, x: int) -> tuple:
        return (tuple(self.labels[x].tolist()), tuple(int(b) for b in self.bits[x]))

    def classes(self) -> set:
        return classes_as_sets(self.class_id)

    def to_records(self) -> list:
        out = []
        for c in sorted(set(self.class_id.tolist())):
            mem = np.flatnonzero(self.class_id == c)
            x = mem[0]
            nodes = self.nodes[mem] if self.nodes is not None else mem
            out.append({
                "fiber": self.labels[x].tolist(),
                "class_key_bits": "".join(str(int(b)) for b in self.bits[x]),
                "members": [int(v) for v in nodes],
            })
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_records())


def signature_preorder(H: np.ndarray, labels=None, finite=None, nodes=None) -> PreorderSignature:
    """Lexicographic (label, bits) keys; classes are the equal-key groups.

    ``finite[x, x']`` (optional) marks pairs with finite cone cost; the key
    order is checked to be compatible with it.
    """
    bits = ~np.asarray(H, dtype=bool).T
    n = bits.shape[0]
    labels = np.zeros((n, 0)) if labels is None else np.atleast_2d(np.asarray(labels, float))
    if labels.shape[0] != n:
        labels = labels.reshape(n, -1)
    keys = [(tuple(labels[x].tolist()), tuple(bits[x].astype(int).tolist())) for x in range(n)]
    distinct = sorted(set(keys))
    rank = {k: r for r, k in enumerate(distinct)}
    cid = np.array([rank[k] for k in keys], dtype=int)
    sig = PreorderSignature(bits, labels, cid, None if nodes is None else np.asarray(nodes))
    if finite is not None:
        bad = compatibility_violations(sig, finite)
        sig.meta["compatibility_checked"] = True
        if bad:
            raise InternalConsistencyError(f"key order incompatible with the cost on pairs {bad[:5]}")
    return sig


def compatibility_violations(sig: PreorderSignature, finite) -> list:
    finite = np.asarray(finite, dtype=bool)
    bad = []
    for x, y in zip(*np.nonzero(finite)):
        if sig.class_id[x] > sig.class_id[y]:
            bad.append((int(x), int(y)))
    return bad


def finite_cost_matrix(points, cone, tol: float = 1e-9) -> np.ndarray:
    """``F[x, x']``: ``x' - x`` lies in the cone."""
    P = np.atleast_2d(points)
    D = (P[None, :, :] - P[:, None, :]).reshape(-1, P.shape[1])
    return cone.contains_many(D, tol).reshape(len(P), len(P))


def signatures_for_carriage(carriage, X, Y, cone, label=None, tol: float = 1e-9) -> PreorderSignature:
    g = build_axial_graph(carriage, X, Y, cone, tol)
    H = build_H_sets(g)
    n = len(g.nodes)
    labels = None if label is None else np.tile(np.atleast_1d(label), (n, 1))
    return signature_preorder(H, labels, finite_cost_matrix(g.points, cone, tol), g.nodes)


def meet_refinement(partitions) -> np.ndarray:
    """Common refinement of class labelings over the same nodes."""
    partitions = [np.asarray(p.class_id if isinstance(p, PreorderSignature) else p) for p in partitions]
    if not partitions:
        raise InvalidInputError("need at least one partition")
    n = len(partitions[0])
    if any(len(p) != n for p in partitions):
        raise InvalidInputError("partitions over different node sets")
    joint = list(zip(*[p.tolist() for p in partitions]))
    return _canonical(joint) if n else np.zeros(0, dtype=int)


@dataclass
class MeetResult:
    class_id: np.ndarray
    nodes: np.ndarray
    carriages_used: int
    budget: int
    label: str = "minimal among enumerated"


def minimal_meet(plans, cone, budget: int | None = None, tol: float = 1e-9) -> MeetResult:
    """Meet of the cycle classes of several optimal carriages over their common sources."""
    sigs = []
    node_sets = [set(int(i) for i in p.rows) for p in plans]
    common = np.array(sorted(set.intersection(*node_sets)), dtype=int)
    for p in plans:
        sig = signatures_for_carriage(p.carriage(), p.mu.points, p.nu.points, cone, tol=tol)
        pos = {int(v): k for k, v in enumerate(sig.nodes)}
        sigs.append(sig.class_id[[pos[v] for v in common]])
    return MeetResult(meet_refinement(sigs), common, len(plans), budget or len(plans))
