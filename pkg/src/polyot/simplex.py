"""Network simplex for the balanced transportation problem.

Costs are lexicographic: ``levels[0]`` is minimized first, ``levels[1]`` over
the optimal face of ``levels[0]`` and so on.  This handles forbidden arcs
(a 0/1 indicator level in front of the real cost) and secondary-cost
selection over the optimal face in one solve.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, PolyotError

DEGENERATE_SWITCH = 50


@dataclass
class SimplexResult:
    rows: np.ndarray
    cols: np.ndarray
    flow: np.ndarray
    u: np.ndarray
    v: np.ndarray
    iterations: int = 0
    degenerate_pivots: int = 0
    used_bland: bool = False

    def support(self, tol: float = 0.0) -> frozenset:
        keep = self.flow > tol
        return frozenset(zip(self.rows[keep].tolist(), self.cols[keep].tolist()))

    def dense(self, n: int, m: int) -> np.ndarray:
        X = np.zeros((n, m))
        X[self.rows, self.cols] = self.flow
        return X


class TransportSimplex:
    """Primal network simplex on the complete bipartite graph ``n x m``."""

    def __init__(self, a, b, levels, eps: float = 1e-10, bland_after: int = DEGENERATE_SWITCH,
                 max_iter: int | None = None):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        L = np.asarray(levels, dtype=float)
        if L.ndim == 2:
            L = L[None]
        n, m = a.size, b.size
        if L.shape[1:] != (n, m):
            raise InvalidInputError("cost shape does not match marginals")
        if not np.all(np.isfinite(L)):
            raise InvalidInputError("cost levels must be finite (use a forbidden-arc level)")
        if abs(a.sum() - b.sum()) > 1e-9 * max(1.0, a.sum()):
            raise InvalidInputError("unbalanced marginals")
        self.a, self.b, self.L = a, b, L
        self.n, self.m = n, m
        scale = np.maximum(1.0, np.abs(L).reshape(L.shape[0], -1).max(axis=1))
        self.eps = eps * scale
        self.bland_after = bland_after
        self.max_iter = max_iter or 50 * (n + m) ** 2 + 1000

    # -- initial basis --------------------------------------------------------

    def northwest_corner(self):
        n, m = self.n, self.m
        a, b = self.a.copy(), self.b.copy()
        rows, cols, flow = [], [], []
        i = j = 0
        while True:
            x = min(a[i], b[j])
            rows.append(i)
            cols.append(j)
            flow.append(x)
            a[i] -= x
            b[j] -= x
            if i == n - 1 and j == m - 1:
                break
            if j == m - 1 or (i < n - 1 and a[i] <= b[j]):
                a[i] = 0.0
                i += 1
            else:
                b[j] = 0.0
                j += 1
        # absorb rounding residue into the last arc
        flow[-1] = max(flow[-1], 0.0)
        return np.array(rows), np.array(cols), np.array(flow)

    # -- tree utilities -----------------------------------------------------

    def _tree(self, rows, cols):
        N = self.n + self.m
        adj = [[] for _ in range(N)]
        for k, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
            adj[i].append((self.n + j, k))
            adj[self.n + j].append((i, k))
        parent = np.full(N, -1)
        parc = np.full(N, -1)
        depth = np.zeros(N, dtype=int)
        order = [0]
        seen = np.zeros(N, dtype=bool)
        seen[0] = True
        q = deque([0])
        while q:
            x = q.popleft()
            for y, k in adj[x]:
                if not seen[y]:
                    seen[y] = True
                    parent[y] = x
                    parc[y] = k
                    depth[y] = depth[x] + 1
                    order.append(y)
                    q.append(y)
        if len(order) != N:
            raise PolyotError("basis is not a spanning tree")
        return parent, parc, depth, order

    def _potentials(self, rows, cols, parent, parc, order):
        K = self.L.shape[0]
        pot = np.zeros((K, self.n + self.m))
        for x in order[1:]:
            k = parc[x]
            c = self.L[:, rows[k], cols[k]]
            p = parent[x]
            # u_i + v_j = c on basic arcs
            pot[:, x] = c - pot[:, p]
        return pot[:, : self.n], pot[:, self.n:]

    def _reduced(self, u, v):
        return self.L - u[:, :, None] - v[:, None, :]

    def _entering(self, R, bland: bool):
        """Flat index of a lexicographically negative arc, or ``None``."""
        mask = np.ones(R.shape[1:], dtype=bool)
        for k in range(R.shape[0]):
            neg = mask & (R[k] < -self.eps[k])
            if neg.any():
                if bland:
                    return int(np.flatnonzero(neg)[0])
                vals = np.where(neg, R[k], np.inf)
                return int(np.argmin(vals))
            mask &= np.abs(R[k]) <= self.eps[k]
        return None

    def _cycle(self, i, j, parent, parc, depth):
        """Basic arcs on the tree path from column ``j`` to row ``i`` (in order)."""
        x, y = self.n + j, i
        up_j, up_i = [], []
        while depth[x] > depth[y]:
            up_j.append(parc[x])
            x = parent[x]
        while depth[y] > depth[x]:
            up_i.append(parc[y])
            y = parent[y]
        while x != y:
            up_j.append(parc[x])
            x = parent[x]
            up_i.append(parc[y])
            y = parent[y]
        return up_j + up_i[::-1]

    # -- main loop ----------------------------------------------------------

    def solve(self, init=None) -> SimplexResult:
        rows, cols, flow = init if init is not None else self.northwest_corner()
        rows, cols, flow = rows.copy(), cols.copy(), flow.astype(float).copy()
        it = 0
        degenerate_run = 0
        total_degenerate = 0
        used_bland = False
        while True:
            parent, parc, depth, order = self._tree(rows, cols)
            u, v = self._potentials(rows, cols, parent, parc, order)
            bland = degenerate_run >= self.bland_after
            used_bland |= bland
            e = self._entering(self._reduced(u, v), bland)
            if e is None:
                return SimplexResult(rows, cols, flow, u, v, it, total_degenerate, used_bland)
            if it >= self.max_iter:
                raise PolyotError("network simplex iteration limit reached")
            it += 1
            i, j = divmod(e, self.m)
            path = self._cycle(i, j, parent, parc, depth)
            minus = path[0::2]
            plus = path[1::2]
            fm = flow[minus]
            theta = fm.min()
            ties = [minus[t] for t in np.flatnonzero(fm <= theta)]
            if bland:
                leave = min(ties, key=lambda k: rows[k] * self.m + cols[k])
            else:
                leave = ties[-1]
            flow[minus] -= theta
            flow[plus] += theta
            flow[leave] = 0.0
            rows[leave], cols[leave], flow[leave] = i, j, theta
            np.maximum(flow, 0.0, out=flow)
            if theta <= 0.0:
                degenerate_run += 1
                total_degenerate += 1
            else:
                degenerate_run = 0

    def zero_reduced_arcs(self, res: SimplexResult) -> np.ndarray:
        """Nonbasic arcs whose reduced cost is zero on every level."""
        R = self._reduced(res.u, res.v)
        mask = np.ones(R.shape[1:], dtype=bool)
        for k in range(R.shape[0]):
            mask &= np.abs(R[k]) <= self.eps[k]
        mask[res.rows, res.cols] = False
        return np.flatnonzero(mask)

    def pivot_in(self, res: SimplexResult, e: int) -> SimplexResult:
        """Pivot arc ``e`` into the basis (objective-preserving when its reduced cost is 0)."""
        rows, cols, flow = res.rows.copy(), res.cols.copy(), res.flow.copy()
        parent, parc, depth, _ = self._tree(rows, cols)
        i, j = divmod(int(e), self.m)
        path = self._cycle(i, j, parent, parc, depth)
        minus, plus = path[0::2], path[1::2]
        theta = flow[minus].min()
        leave = [k for k in minus if flow[k] <= theta][-1]
        flow[minus] -= theta
        flow[plus] += theta
        rows[leave], cols[leave], flow[leave] = i, j, theta
        np.maximum(flow, 0.0, out=flow)
        parent, parc, depth, order = self._tree(rows, cols)
        u, v = self._potentials(rows, cols, parent, parc, order)
        return SimplexResult(rows, cols, flow, u, v, res.iterations, res.degenerate_pivots, res.used_bland)

    def alternative_optima(self, res: SimplexResult, rng, budget: int = 8,
                           max_steps: int | None = None, tol: float = 1e-12) -> list:
        """Random walk over optimal bases; returns bases with pairwise distinct supports.

        The first entry is ``res`` itself.  At most ``budget`` bases are
        returned and at most ``max_steps`` pivots are performed.
        """
        found = [res]
        seen = {res.support(tol)}
        cur = res
        steps = max_steps if max_steps is not None else 20 * budget
        for _ in range(steps):
            if len(found) >= budget:
                break
            cand = self.zero_reduced_arcs(cur)
            if cand.size == 0:
                break
            cur = self.pivot_in(cur, rng.choice(cand))
            s = cur.support(tol)
            if s not in seen:
                seen.add(s)
                found.append(cur)
        return found


def solve_transport(a, b, levels, **kw) -> SimplexResult:
    return TransportSimplex(a, b, levels, **kw).solve()
