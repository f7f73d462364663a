import math

import numpy as np
import pytest

from polyot.diagnostics import (
    Slice1D,
    build_cone_approximation,
    disintegration_density,
    extract_slices,
    flagged_mass,
    initial_final_mass,
    pushforward_ratio,
    ratio_bound,
)
from polyot.errors import InsufficientDataError, InvalidInputError
from polyot.fixtures import chain3, shift_instance
from polyot.kantorovich import NormCost, extract_potentials, solve_primal
from polyot.measures import DiscreteMeasure
from polyot.partition import REGULAR, DirectedPartition, PartitionCell, partition_from_plan
from polyot.polynorm import active_set, l1_norm
from polyot.sheaves import decompose_sheaves


def partition_of(mu, nu, N):
    plan = solve_primal(mu, nu, NormCost(N))
    return partition_from_plan(plan, extract_potentials(plan, NormCost(N), central=True))[0]


def cone_field(apex, xs, h_lo=0.0, h_hi=1.0):
    """Segments from ``(x, h_lo)`` toward ``apex`` in the plane, cut at height ``h_hi``."""
    apex = np.asarray(apex, float)
    starts = np.column_stack([xs, np.full(len(xs), h_lo)])
    lam = (h_hi - h_lo) / (apex[1] - h_lo)
    ends = starts + lam * (apex - starts)
    return starts, ends


# --- slices -----------------------------------------------------------------


def test_slice_from_segments_and_sections():
    sl = Slice1D.from_segments([[0, 0], [1, -1]], [[0, 2], [1, 3]], [0, 1])
    assert (sl.h_lo, sl.h_hi) == (0.0, 2.0)
    assert np.allclose(sl.at(1.0), [[0, 1], [1, 1]])
    assert np.allclose(np.abs(sl.section_coords(0.5).ravel()), [0, 1])
    r = sl.reversed()
    assert (r.h_lo, r.h_hi) == (-2.0, 0.0)
    with pytest.raises(InvalidInputError):
        Slice1D.from_segments([[0, 1]], [[0, 0]], [0, 1])


def test_diagonal_slice_of_quadrant_cell():
    mu, nu, N = shift_instance(8)
    part = partition_of(mu, nu, N)
    group = next(g for g in decompose_sheaves(part) if g.k == 2)
    regular = next(c for c in part.cells if REGULAR in c.flags)
    lo = mu.points[regular.members].min(axis=0)
    hi = mu.points[regular.members].max(axis=0)
    for e in ([1.0, 1.0], [2.0, 1.0]):
        sls = extract_slices(part, group, [e], counts=8)
        assert len(sls) == 1
        sl = sls[0]
        u = np.asarray(e) / np.linalg.norm(e)
        assert np.allclose(sl.direction, u)
        d = sl.ends - sl.starts
        assert np.allclose(d / np.linalg.norm(d, axis=1)[:, None], u)
        assert np.allclose(sl.starts @ u, sl.h_lo) and np.allclose(sl.ends @ u, sl.h_hi)
        for P in (sl.starts, sl.ends):
            assert np.all(P >= lo - 1e-9) and np.all(P <= hi + 1e-9)


def test_parallel_cells_are_their_own_segments():
    N = l1_norm(2)
    cone = N.cone(active_set(N, [1.0, 0.0]))
    cells, pts = [], []
    for i, y in enumerate([0.0, 0.5, 1.0]):
        members = list(range(len(pts), len(pts) + 3))
        pts += [[0.0, y], [0.5, y], [1.0, y]]
        cells.append(PartitionCell(i, 1, cone, members, np.array([0.0, y]), cone.basis.copy(), frozenset({REGULAR})))
    part = DirectedPartition(cells, len(pts), N, [], np.array(pts))
    group = decompose_sheaves(part)[0]
    sl = extract_slices(part, group, [[1.0]], coverage=1.0)[0]
    assert np.allclose(np.sort(sl.starts[:, 1]), [0, 0.5, 1])
    assert np.allclose(sl.starts[:, 0], 0) and np.allclose(sl.ends[:, 0], 1)


# --- push-forward ratio -----------------------------------------------------


def test_single_vertex_equality():
    eps = 0.1
    xs = np.linspace(-1, 1, 40)
    s, e = cone_field([0.2, 1.0 + eps], xs)
    sl = Slice1D.from_segments(s, e, [0, 1])
    for a, b in [(0.0, 0.5), (0.2, 0.9), (0.0, 1.0)]:
        rep = pushforward_ratio(sl, a, b, eps)
        assert np.allclose(rep.ratios, rep.bound, rtol=1e-10)
        assert rep.bound == pytest.approx(ratio_bound(1.0, eps, a, b, 2))
        assert rep.max_violation <= 1e-10


def test_translation_ratio_one():
    xs = np.linspace(0, 1, 30)
    s = np.column_stack([xs, np.zeros(30)])
    sl = Slice1D.from_segments(s, s + [0.3, 1.0], [0, 1])
    rep = pushforward_ratio(sl, 0.0, 0.8)
    assert np.allclose(rep.ratios, 1.0)
    assert rep.bound >= 1.0 and rep.max_violation == 0.0


def test_two_disjoint_vertices_below_bound():
    eps = 0.1
    s1, e1 = cone_field([0.5, 1.0 + eps], np.linspace(0, 1, 20))
    s2, e2 = cone_field([2.5, 1.0 + 3 * eps], np.linspace(2, 3, 20))
    sl = Slice1D.from_segments(np.vstack([s1, s2]), np.vstack([e1, e2]), [0, 1], cell_ids=[0] * 20 + [1] * 20)
    rep = pushforward_ratio(sl, 0.0, 0.9, eps)
    assert rep.max_violation <= 1e-10
    far = rep.ratios[20:]
    # the farther vertex contracts less: exact value by similar triangles
    assert np.allclose(far, (1.3 - 0.0) / (1.3 - 0.9))
    assert np.all(far < rep.bound)


def test_backward_orientation_and_errors():
    xs = np.linspace(0, 1, 20)
    s = np.column_stack([xs, np.zeros(20)])
    sl = Slice1D.from_segments(s, s + [0.0, 1.0], [0, 1])
    rep = pushforward_ratio(sl, -1.0, -0.2, orientation="backward")
    assert np.allclose(rep.ratios, 1.0)
    with pytest.raises(InvalidInputError):
        pushforward_ratio(sl, 0.8, 0.2)
    small = Slice1D.from_segments(s[:5], s[:5] + [0.0, 1.0], [0, 1])
    with pytest.raises(InsufficientDataError):
        pushforward_ratio(small, 0.0, 0.5)


# --- cone-field approximation ----------------------------------------------


def test_single_cone_one_atom_exact():
    s, e = cone_field([0.4, 2.0], np.linspace(0, 1, 12))
    sl = Slice1D.from_segments(s, e, [0, 1], h_range=(0.0, 2.0))
    approx = build_cone_approximation(sl, 1)
    assert approx.deviation <= 1e-12
    assert approx.disjoint


def test_translation_deviation_shrinks():
    rng = np.random.default_rng(3)
    xs = np.sort(rng.random(200))
    s = np.column_stack([xs, np.zeros(200)])
    sl = Slice1D.from_segments(s, s + [0.2, 1.0], [0, 1])
    devs = [build_cone_approximation(sl, n).deviation for n in (4, 16, 64)]
    assert devs[0] >= devs[1] >= devs[2]
    assert devs[2] < 0.05


def test_crossing_field_not_disjoint():
    s = np.array([[0.0, 0.0], [1.0, 0.0]])
    e = np.array([[1.0, 1.0], [0.0, 1.0]])
    sl = Slice1D.from_segments(s, e, [0, 1])
    approx = build_cone_approximation(sl, 4)
    assert not approx.disjoint
    assert approx.crossing == (0, 1)


# --- initial/final mass -----------------------------------------------------


def test_shift_flagged_mass_halves():
    parts = {}
    for n in (8, 16):
        mu, nu, N = shift_instance(n)
        parts[n] = (partition_of(mu, nu, N), mu.weights)
    rep = initial_final_mass(*parts[8], *parts[16])
    # initial points are the bottom row and left column: (2n - 1) / n^2
    assert rep["fraction_h"] == pytest.approx(15 / 64)
    assert rep["fraction_h2"] == pytest.approx(31 / 256)
    assert rep["ratio"] == pytest.approx(0.5, abs=0.05)


def test_identity_no_flagged_mass():
    mu = DiscreteMeasure.uniform(np.array([[0.0, 0.0], [1.0, 0.5], [0.2, 2.0]]))
    assert flagged_mass(partition_of(mu, mu, l1_norm(2)), mu.weights) == 0.0


def test_chain_flagged_mass_is_first_atom():
    mu, nu, N = chain3()
    assert flagged_mass(partition_of(mu, nu, N), mu.weights) == pytest.approx(1 / 3)


# --- conditional densities --------------------------------------------------


def one_d_partition(lines, weights):
    N = l1_norm(2)
    cone = N.cone(active_set(N, [1.0, 0.0]))
    cells, pts, w = [], [], []
    for i, (base, xs) in enumerate(lines):
        members = list(range(len(pts), len(pts) + len(xs)))
        pts += [[x, base] for x in xs]
        w += list(weights(i, np.asarray(xs)))
        cells.append(PartitionCell(i, 1, cone, members, np.array([xs[0], base]), cone.basis.copy(),
                                   frozenset({REGULAR})))
    w = np.array(w)
    return DirectedPartition(cells, len(pts), N, [], np.array(pts)), w / w.sum()


def test_translation_profiles_flat():
    xs = np.linspace(0, 1, 10)
    part, w = one_d_partition([(y, xs) for y in np.linspace(0, 1, 10)], lambda i, x: np.ones_like(x))
    rep = disintegration_density(part, w)
    assert rep["regular_like"]
    assert rep["spread"] == pytest.approx(1.0)


def test_fan_profiles_bounded():
    # rays from the origin: mass per unit length grows linearly with the radius
    angles = np.linspace(0.1, 1.4, 8)
    radii = np.linspace(1.0, 2.0, 12)
    N = l1_norm(2)
    cells, pts, w = [], [], []
    for i, a in enumerate(angles):
        d = np.array([math.cos(a), math.sin(a)])
        members = list(range(len(pts), len(pts) + len(radii)))
        pts += [r * d for r in radii]
        w += list(radii)
        cone = N.cone(active_set(N, [1.0, 1.0]))
        cells.append(PartitionCell(i, 1, cone, members, radii[0] * d, d[None, :], frozenset({REGULAR})))
    part = DirectedPartition(cells, len(pts), N, [], np.array(pts))
    rep = disintegration_density(part, np.array(w) / sum(w))
    assert rep["regular_like"]
    assert rep["spread"] == pytest.approx(2.0, rel=1e-9)


def test_leaf_concentration_fails():
    xs = np.linspace(0, 1, 10)
    part, w = one_d_partition([(y, xs) for y in np.linspace(0, 1, 10)],
                              lambda i, x: np.full_like(x, 100.0 if i == 3 else 1.0))
    assert not disintegration_density(part, w)["regular_like"]
