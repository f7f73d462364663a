import math

import numpy as np
import pytest

from polyot.errors import DegenerateProjectionError
from polyot.fixtures import shift_instance
from polyot.kantorovich import NormCost, extract_potentials, solve_primal
from polyot.partition import REGULAR, DirectedPartition, PartitionCell, partition_from_plan
from polyot.polynorm import PolyhedralNorm, active_set, l1_norm
from polyot.sheaves import (
    DELTA,
    decompose_sheaves,
    projection_floor,
    to_fibration,
    verify_sheaf,
)


def ray_partition(N, dirs, offsets):
    """One two-point 1-d cell per direction, starting at the given offset."""
    cells, pts = [], []
    for i, (d, o) in enumerate(zip(dirs, offsets)):
        cone = N.cone(active_set(N, d))
        assert cone.dim == 1
        o = np.asarray(o, float)
        members = [len(pts), len(pts) + 1]
        pts += [o, o + np.asarray(d, float)]
        cells.append(PartitionCell(i, 1, cone, members, o.copy(), cone.basis.copy(), frozenset({REGULAR})))
    return DirectedPartition(cells, len(pts), N, [], np.array(pts))


NEAR = PolyhedralNorm.from_primal_vertices([(1, 0), (0.95, 0.095), (0, 1), (-1, 0), (0, -1)])


def test_single_cell_one_group():
    part = ray_partition(l1_norm(2), [(1, 0)], [(0, 0)])
    groups = decompose_sheaves(part)
    assert [g.cell_ids for g in groups] == [[0]]
    assert verify_sheaf(groups[0], part)["ok"]


def test_orthogonal_rays_two_groups():
    part = ray_partition(l1_norm(2), [(1, 0), (0, 1)], [(0, 0), (0, 2)])
    groups = decompose_sheaves(part)
    assert sorted(g.cell_ids for g in groups) == [[0], [1]]


def test_nearby_rays_share_group():
    part = ray_partition(NEAR, [(1, 0), (0.95, 0.095)], [(0, 0), (0, 2)])
    # independent check of the nondegeneracy condition on the reference axis (1, 0)
    u = np.array([0.95, 0.095]) / math.hypot(0.95, 0.095)
    assert u[0] >= 1 / math.sqrt(2)
    groups = decompose_sheaves(part, r_grid=(0.05,))
    assert [g.cell_ids for g in groups] == [[0, 1]]
    assert verify_sheaf(groups[0], part)["ok"]


def test_projection_floor_matches_cosine():
    gens = np.array([[1.0, 1.0]])
    assert projection_floor(gens, np.array([[1.0, 0.0]])) == pytest.approx(1 / math.sqrt(2))
    assert DELTA == pytest.approx(1 - 1 / math.sqrt(2))


def test_fibration_of_horizontal_cell():
    part = ray_partition(l1_norm(2), [(1, 0)], [(0, 0.7)])
    g = decompose_sheaves(part)[0]
    fib = to_fibration(g, part)
    fc = fib.cells[0]
    assert np.allclose(np.abs(g.frame), [[1, 0]])
    assert np.allclose(np.abs(fc.label), [0.7])
    assert np.allclose(np.abs(fc.w.ravel()), [0.0, 1.0])


def test_fibration_round_trip_shift():
    mu, nu, N = shift_instance(6)
    plan = solve_primal(mu, nu, NormCost(N))
    part, _ = partition_from_plan(plan, extract_potentials(plan, NormCost(N), central=True))
    for g in decompose_sheaves(part):
        assert verify_sheaf(g, part)["ok"]
        for fc in to_fibration(g, part).cells:
            if g.k:
                back = fc.to_ambient(fc.w)
                assert np.allclose(back, part.points[part.cells[fc.cell_id].members], atol=1e-9)


def test_degenerate_projection_raises():
    part = ray_partition(l1_norm(2), [(0, 1)], [(0, 0)])
    g = decompose_sheaves(part)[0]
    g.frame = np.array([[1.0, 0.0]])
    with pytest.raises(DegenerateProjectionError):
        to_fibration(g, part)


def test_groups_cover_each_cell_once():
    mu, nu, N = shift_instance(5)
    plan = solve_primal(mu, nu, NormCost(N))
    part, _ = partition_from_plan(plan, extract_potentials(plan, NormCost(N), central=True))
    ids = sorted(c for g in decompose_sheaves(part) for c in g.cell_ids)
    assert ids == list(range(len(part.cells)))
