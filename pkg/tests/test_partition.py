import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyot.errors import InternalConsistencyError, StalePotentialError
from polyot.fixtures import chain3, random_instance, shift_instance
from polyot.kantorovich import NormCost, Potential, extract_potentials, solve_primal
from polyot.measures import DiscreteMeasure
from polyot.partition import (
    FINAL,
    FIXED,
    INITIAL,
    REGULAR,
    RESIDUAL,
    build_partition,
    check_partition,
    classify_all,
    classify_point,
    completeness_violations,
    partition_from_plan,
    superdifferential_graph,
    tight_relation,
)
from polyot.polynorm import l1_norm, minimal_extremal_cone

L1 = l1_norm(2)


def solved(mu, nu, N, central=True):
    plan = solve_primal(mu, nu, NormCost(N))
    return plan, extract_potentials(plan, NormCost(N), central=central)


def dirac(*pts):
    return DiscreteMeasure.uniform(np.array(pts, float))


# --- direction sets ---------------------------------------------------------


def test_identity_all_fixed():
    mu = dirac((0, 0), (1, 0), (0.3, 2))
    plan, P = solved(mu, mu, L1)
    ds = superdifferential_graph(plan, P)
    assert not ds.tight.any()
    assert all(c.kind == FIXED for c in classify_all(ds, L1))
    part = build_partition(classify_all(ds, L1), mu.points, L1, plan)
    assert all(c.k == 0 and len(c.members) == 1 and FIXED in c.flags for c in part.cells)


def test_single_pair_directions():
    plan, P = solved(dirac((0, 0)), dirac((1, 0)), L1)
    ds = superdifferential_graph(plan, P)
    assert np.allclose(ds.forward_of_source(0), [[1, 0]])
    assert np.allclose(ds.backward(P.tgt_ids[0]), [[1, 0]])
    assert len(ds.backward_of_source(0)) == 0


def test_stale_potential():
    plan, P = solved(dirac((0, 0)), dirac((1, 0)), L1)
    bad = Potential(P.points, np.zeros_like(P.psi), P.src_ids, P.tgt_ids, L1)
    with pytest.raises(StalePotentialError):
        superdifferential_graph(plan, bad)


def test_shift_4x4_directions_span_quadrant():
    mu, nu, N = shift_instance(4)
    plan, P = solved(mu, nu, N)
    ds = superdifferential_graph(plan, P)
    e = np.array([2.0, 1.0]) / np.sqrt(5)
    Q = minimal_extremal_cone(N, [(1, 0), (0, 1)])
    for i, x in enumerate(mu.points):
        F = ds.forward_of_source(i)
        # the translate target is always reachable
        assert np.any(np.all(np.isclose(F, e), axis=1))
        assert np.linalg.matrix_rank(F) == 2
        assert all(Q.contains(f) for f in F)


def test_closure_is_fixed_point():
    mu, nu, N = shift_instance(4)
    plan, P = solved(mu, nu, N)
    ds = superdifferential_graph(plan, P)
    again = tight_relation(ds.points, P.psi, N, ds.src_ids, ds.tgt_ids)
    assert np.array_equal(again.tight, ds.tight)
    T = ds.tight.astype(int)
    assert not ((T @ T > 0) & ~ds.tight).any()


# --- classification -----------------------------------------------------------


def test_classify_examples():
    e = np.array([[1.0, 0.0]])
    assert classify_point(np.zeros((0, 2)), np.zeros((0, 2)), L1).kind == FIXED
    c = classify_point(e, e, L1)
    assert c.kind == REGULAR and c.k == 1 and c.cone == minimal_extremal_cone(L1, e)
    quad = np.array([[1.0, 1.0], [2.0, 1.0]]) / np.sqrt([[2.0], [5.0]])
    c = classify_point(quad, e, L1)
    assert c.kind == INITIAL
    c = classify_point(e, quad, L1)
    assert c.kind == FINAL
    assert classify_point(np.zeros((0, 2)), e, L1).kind == FINAL
    assert classify_point(e, np.zeros((0, 2)), L1).kind == INITIAL


def test_classify_residual_on_nonconvex_directions():
    c = classify_point(np.array([[1.0, 0.0], [-1.0, 0.1]]), np.array([[1.0, 0.0]]), L1)
    assert c.kind == RESIDUAL


def test_three_point_initial_like_instance():
    # (0,0) -> (1,0) -> (2,1): the middle atom is entered along the ray (1,0)
    # and left towards the open quadrant
    mu = dirac((0, 0), (1, 0))
    nu = dirac((1, 0), (2, 1))
    plan, P = solved(mu, nu, L1)
    part, _ = partition_from_plan(plan, P)
    c = part.classifications[1]
    assert c.kind == INITIAL
    assert c.forward_cone.dim == 2 and c.backward_cone.dim == 1


# --- partitions ---------------------------------------------------------------


def test_shift_interior_regular_quadrant():
    mu, nu, N = shift_instance(8)
    plan, P = solved(mu, nu, N)
    part, _ = partition_from_plan(plan, P)
    Q = minimal_extremal_cone(N, [(1, 0), (0, 1)])
    h = 1 / 8
    for i, x in enumerate(mu.points):
        interior = np.all(x > h) and np.all(x < 1 - h)
        cl = part.classifications[i]
        if interior:
            assert cl.kind == REGULAR and cl.k == 2 and cl.cone == Q


def test_chain3_cells():
    mu, nu, N = chain3()
    plan, P = solved(mu, nu, N)
    part, _ = partition_from_plan(plan, P)
    R = minimal_extremal_cone(N, [(1.0,)])
    assert all(c.k == 1 and c.cone == R for c in part.cells)
    regular = [c for c in part.cells if REGULAR in c.flags]
    assert len(regular) == 1 and regular[0].members == [1, 2]
    assert part.classifications[0].kind == INITIAL


def test_partition_json_schema():
    mu, nu, N = shift_instance(4)
    plan, P = solved(mu, nu, N)
    part, _ = partition_from_plan(plan, P)
    recs = json.loads(part.to_json())
    for r in recs:
        assert set(r) == {"id", "k", "cone_active_set", "members", "flags", "basis"}
        assert set(r["basis"]) == {"base_point", "vectors"}
        assert len(r["basis"]["vectors"]) == r["k"]


def test_check_partition_catches_leaving_pair():
    mu, nu, N = shift_instance(4)
    plan, P = solved(mu, nu, N)
    part, _ = partition_from_plan(plan, P)
    ray = minimal_extremal_cone(N, [(1, 0)])
    part.cells[0].cone = ray
    with pytest.raises(InternalConsistencyError):
        check_partition(part, plan)


def test_completeness_on_shift():
    mu, nu, N = shift_instance(4)
    plan, P = solved(mu, nu, N)
    part, _ = partition_from_plan(plan, P)
    v = completeness_violations(part, plan)
    # only flagged singletons can sit inside an interval of the regular cell
    owner = part.cell_of()
    from_regular = [(c, z) for c, z in v if REGULAR in part.cells[c].flags]
    assert all(REGULAR not in part.cells[owner[z]].flags for _, z in from_regular)


@given(st.integers(0, 10_000))
def test_partition_invariants_random(seed):
    mu, nu, N = random_instance(seed, n_max=15, d_max=2)
    plan, P = solved(mu, nu, N)
    part, _ = partition_from_plan(plan, P)
    owner = part.cell_of()
    assert np.all(owner >= 0)
    # points are covered once, except split atoms whose cells share the point
    counts = np.bincount([m for c in part.cells for m in c.members], minlength=len(mu))
    for i in np.flatnonzero(counts > 1):
        cs = [c for c in part.cells if i in c.members]
        assert all(c.pairs is not None and RESIDUAL in c.flags for c in cs)
        assert sum(c.share for c in cs) == pytest.approx(1.0)
    assert sum(part.mass_by_dim(mu.weights).values()) == pytest.approx(1.0)
    scale = max(1.0, float(np.ptp(mu.points, axis=0).max()))
    for c in part.cells:
        assert c.cone.dim == c.k
        assert c.contains_affinely(mu.points[c.members], 1e-7, scale)
        flags = c.flags
        assert not (REGULAR in flags and (INITIAL in flags or FINAL in flags))
    cells = part.pair_cells(plan.rows, plan.cols)
    for (i, j), cid in zip(zip(plan.rows, plan.cols), cells):
        assert i in part.cells[cid].members
        assert part.cells[cid].cone.contains(nu.points[j] - mu.points[i], 1e-9)


def test_split_atom_cells():
    # one atom sends half its mass right and half up-left: no common l1 face
    mu = DiscreteMeasure.uniform(np.array([[0.0, 0.0]]))
    nu = DiscreteMeasure.uniform(np.array([[1.0, 0.0], [-1.0, 1.0]]))
    plan, P = solved(mu, nu, L1)
    part, _ = partition_from_plan(plan, P)
    assert len(part.cells) == 2
    assert all(c.members == [0] and RESIDUAL in c.flags for c in part.cells)
    assert sorted(c.share for c in part.cells) == [0.5, 0.5]
    assert sorted(pr for c in part.cells for pr in c.pairs) == [(0, 0), (0, 1)]
    assert part.mass_by_dim(mu.weights) == {1: 0.5, 2: 0.5}
    bad = part.cells[0]
    bad.pairs = [(0, 0), (0, 1)]
    with pytest.raises(InternalConsistencyError):
        check_partition(part, plan)
