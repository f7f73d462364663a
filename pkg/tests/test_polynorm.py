import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyot.errors import (
    DegenerateDirectionError,
    EmptyConeError,
    EmptyIntervalError,
    InvalidInputError,
    NoCommonFaceError,
)
from polyot.fixtures import random_norm
from polyot.polynorm import (
    Cone,
    PolyhedralNorm,
    active_set,
    cone_cost,
    cone_enlarge,
    l1_norm,
    linf_norm,
    load_norm,
    minimal_extremal_cone,
    norm_value,
    order_interval,
    polytope_vertices,
    regular_polygon_norm,
    save_norm,
    sector_half_angle,
)

L1 = l1_norm(2)
LINF = linf_norm(2)


def vertex_index(N, v):
    return int(np.flatnonzero(np.all(np.isclose(N.dual_vertices, v), axis=1))[0])


# --- norm values ----------------------------------------------------------


def test_norm_value_examples():
    assert norm_value(L1, (0, 0)) == 0
    assert norm_value(L1, (3, 4)) == 7
    assert norm_value(LINF, (3, -4)) == 4


def test_norm_value_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        norm_value(L1, (1, 2, 3))


def test_rejects_dual_ball_without_interior_origin():
    with pytest.raises(InvalidInputError):
        PolyhedralNorm(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))


def test_primal_vertices_roundtrip():
    # the unit ball of l1 is the diamond with vertices (+-1, 0), (0, +-1)
    N = PolyhedralNorm.from_primal_vertices(np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]]))
    for x in np.random.default_rng(0).normal(size=(50, 2)):
        assert N(x) == pytest.approx(abs(x).sum())


def test_load_and_save(tmp_path):
    p = tmp_path / "n.json"
    save_norm(regular_polygon_norm(6), p)
    N = load_norm(f"poly:{p}")
    assert N.dim == 2 and N(np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert load_norm("l1", 3).dim == 3
    with pytest.raises(InvalidInputError):
        load_norm(str(tmp_path / "missing.json"))


def test_regular_polygon_unit_ball_vertices():
    N = regular_polygon_norm(8)
    for k in range(8):
        a = 2 * math.pi * k / 8
        assert N(np.array([math.cos(a), math.sin(a)])) == pytest.approx(1.0)


# --- active sets ------------------------------------------------------------


def test_active_set_examples():
    a = active_set(L1, (1, 0), 1e-9)
    assert {tuple(L1.dual_vertices[i]) for i in a} == {(1.0, 1.0), (1.0, -1.0)}
    a = active_set(L1, (1, 1))
    assert {tuple(L1.dual_vertices[i]) for i in a} == {(1.0, 1.0)}
    a = active_set(LINF, (1, 1))
    assert {tuple(LINF.dual_vertices[i]) for i in a} == {(1.0, 0.0), (0.0, 1.0)}


def test_active_set_zero_raises():
    with pytest.raises(DegenerateDirectionError):
        active_set(L1, (0, 0))


# --- minimal extremal cone --------------------------------------------------


def test_mec_axis_ray():
    C = minimal_extremal_cone(L1, [(1, 0)])
    assert C.dim == 1
    assert C.contains((5, 0)) and not C.contains((1, 0.01)) and not C.contains((-1, 0))


def test_mec_quadrant():
    C = minimal_extremal_cone(L1, [(1, 0), (0, 1)])
    assert C.dim == 2
    assert C.active_set == (vertex_index(L1, (1, 1)),)
    assert C.contains((0.3, 2)) and not C.contains((-0.1, 1))


def _fan_cell_oracle(N, x, tol=1e-12):
    """Normal-fan cell of x by brute force over vertex subsets: the largest S
    with v_i . x maximal for all i in S, and its membership test."""
    best = None
    for r in range(1, len(N.dual_vertices) + 1):
        for S in itertools.combinations(range(len(N.dual_vertices)), r):
            vals = N.dual_vertices @ x
            if all(vals[i] >= vals.max() - tol for i in S):
                best = S
    return best, (lambda y: np.all((N.dual_vertices[list(best)] @ y)[:, None]
                                   >= (N.dual_vertices @ y)[None, :] - 1e-12))


def test_mec_linf_vertex_cone_matches_fan_enumeration():
    C = minimal_extremal_cone(LINF, [(2, 1)])
    S, member = _fan_cell_oracle(LINF, np.array([2.0, 1.0]))
    assert C.active_set == S
    assert C.dim == 2
    rng = np.random.default_rng(1)
    for y in rng.normal(size=(400, 2)):
        assert C.contains(y) == bool(member(y)) == (y[0] >= abs(y[1]))
    G = C.generators / np.linalg.norm(C.generators, axis=1)[:, None]
    assert {tuple(np.round(g, 12)) for g in G} == {tuple(np.round(np.array([1, s]) / math.sqrt(2), 12)) for s in (1, -1)}


def test_mec_no_common_face():
    with pytest.raises(NoCommonFaceError):
        minimal_extremal_cone(L1, [(1, 0), (-1, 0.1)])
    with pytest.raises(NoCommonFaceError):
        minimal_extremal_cone(L1, [(1, 0), (0, 1), (1, -1)])


def test_mec_zero_direction():
    with pytest.raises(DegenerateDirectionError):
        minimal_extremal_cone(L1, [(0, 0)])


# --- cone cost --------------------------------------------------------------


def test_cone_cost_examples():
    Q = minimal_extremal_cone(L1, [(1, 0), (0, 1)])
    assert cone_cost(Q, (0, 0), (1, 1)) == 0
    assert cone_cost(Q, (0, 0), (-1, 1)) == math.inf
    for C in (Q, minimal_extremal_cone(L1, [(1, 0)]), L1.zero_cone()):
        assert cone_cost(C, (0.3, 0.2), (0.3, 0.2)) == 0


# --- cone enlargement ---------------------------------------------------------


def test_enlarge_ray_is_unchanged():
    N1 = l1_norm(1)
    C = minimal_extremal_cone(N1, [(1.0,)])
    for r in (0.1, 0.5, 0.9):
        E = cone_enlarge(C, r)
        assert E.contains((1.0,)) and not E.contains((-1.0,))


def test_enlarge_zero_is_identity():
    Q = minimal_extremal_cone(L1, [(1, 0), (0, 1)])
    E = cone_enlarge(Q, 0)
    assert sector_half_angle(E) == pytest.approx(math.pi / 4)


def test_enlarge_quadrant_by_tan_pi_8():
    # numeric oracle: the widened cone is spanned by unit vectors within
    # distance r of the quarter arc; find its extreme angle by bisection
    r = math.tan(math.pi / 8)
    lo, hi = math.pi / 2, math.pi
    for _ in range(200):
        mid = (lo + hi) / 2
        # a ray is in the span of the r-neighbourhood iff the distance of the
        # arc to the ray is <= r; for an angle beyond the arc this is sin(gap)
        gap = mid - math.pi / 2
        (lo, hi) = (mid, hi) if math.sin(gap) <= r else (lo, mid)
    expected_half = lo - math.pi / 4
    E = cone_enlarge(minimal_extremal_cone(L1, [(1, 0), (0, 1)]), r)
    assert sector_half_angle(E) == pytest.approx(expected_half, abs=1e-9)
    assert E.contains((1, 1))


def test_shrink_to_empty_raises():
    Q = minimal_extremal_cone(L1, [(1, 0), (0, 1)])
    with pytest.raises(EmptyConeError):
        cone_enlarge(Q, -0.9)


def test_enlarge_three_dimensional_contains_original():
    N = l1_norm(3)
    C = minimal_extremal_cone(N, [(1, 1, 1)])
    E = cone_enlarge(C, 0.2)
    for g in C.generators:
        assert E.contains(g, 1e-6)
    S = cone_enlarge(C, -0.1)
    for g in S.generators:
        assert Cone(C.generators).contains(g, 1e-6)


# --- order intervals --------------------------------------------------------


def test_order_interval_segment():
    N1 = l1_norm(1)
    C = minimal_extremal_cone(N1, [(1.0,)])
    A, b = order_interval(C, [0.0], [1.0])
    V = np.sort(polytope_vertices(A, b).ravel())
    assert np.allclose(V, [0, 1])


def test_order_interval_unit_square():
    Q = minimal_extremal_cone(L1, [(1, 0), (0, 1)])
    A, b = order_interval(Q, (0, 0), (1, 1))
    V = polytope_vertices(A, b)
    assert {tuple(np.round(v, 12) + 0.0) for v in V} == {(0, 0), (1, 0), (0, 1), (1, 1)}


def test_order_interval_degenerate_point():
    Q = minimal_extremal_cone(L1, [(1, 0), (0, 1)])
    A, b = order_interval(Q, (0.5, 0.5), (0.5, 0.5))
    V = polytope_vertices(A, b)
    assert np.allclose(V, [[0.5, 0.5]])


def test_order_interval_empty():
    Q = minimal_extremal_cone(L1, [(1, 0), (0, 1)])
    with pytest.raises(EmptyIntervalError):
        order_interval(Q, (0, 0), (-1, 1))


# --- properties -------------------------------------------------------------

vec2 = st.tuples(st.floats(-10, 10), st.floats(-10, 10))


@st.composite
def norms(draw):
    seed = draw(st.integers(0, 10_000))
    dim = draw(st.integers(1, 3))
    return random_norm(np.random.default_rng(seed), dim, draw(st.integers(4, 12)))


@given(norms(), st.integers(0, 10_000), st.floats(0, 100))
def test_homogeneity(N, seed, t):
    x = np.random.default_rng(seed).normal(size=N.dim)
    assert N(t * x) == pytest.approx(t * N(x), rel=1e-12, abs=1e-12)


@given(norms(), st.integers(0, 10_000))
def test_triangle_inequality_and_positivity(N, seed):
    x, y = np.random.default_rng(seed).normal(size=(2, N.dim))
    assert N(x + y) <= N(x) + N(y) + 1e-12
    assert N(x) > 0


@given(norms(), st.integers(0, 10_000))
def test_face_lattice_consistency(N, seed):
    x = np.random.default_rng(seed).normal(size=N.dim)
    C = minimal_extremal_cone(N, [x])
    assert C.contains(x)
    A = set(C.active_set)
    for g in C.generators:
        assert A <= set(active_set(N, g, 1e-7))
    assert np.linalg.matrix_rank(C.generators) == C.dim
    # maximality: any further index is not active on some generator
    for j in set(range(len(N.dual_vertices))) - A:
        vals = C.generators @ N.dual_vertices[j]
        norms_g = np.array([N(g) for g in C.generators])
        assert np.any(vals < norms_g - 1e-9 * norms_g)


@given(norms(), st.integers(0, 10_000), st.floats(1e-12, 1e-3), st.floats(1e-12, 1e-3))
def test_active_set_monotone_in_tol(N, seed, t1, t2):
    x = np.random.default_rng(seed).normal(size=N.dim)
    lo, hi = sorted((t1, t2))
    assert set(active_set(N, x, lo)) <= set(active_set(N, x, hi))


@given(st.integers(0, 10_000))
def test_order_interval_vertices_are_reachable(seed):
    rng = np.random.default_rng(seed)
    N = random_norm(rng, 2, 8)
    x = rng.normal(size=2)
    C = minimal_extremal_cone(N, [x])
    w = rng.normal(size=2)
    lam = rng.random(len(C.generators)) + 0.1
    w2 = w + lam @ C.generators
    V = polytope_vertices(*order_interval(C, w, w2))
    assert len(V) >= 1
    for v in V:
        assert cone_cost(C, w, v, 1e-7) == 0
        assert cone_cost(C, v, w2, 1e-7) == 0
