from collections import Counter

import numpy as np
import pytest
import shapely
from hypothesis import given, strategies as st

from preflect.curve_core import BoundaryArc
from preflect.errors import EmptyShadow
from preflect.reflect import reflect_partition
from preflect.refine import (balance_audit, balanced_shadow_partition, k_large_census, neighbor_audit,
                             neighbor_graph, next_cut, polar_neighbor_graph, shadow_refinement, size_audit)
from preflect.whitney import dyadic_annulus, image_partition


@pytest.fixture(scope="module")
def disk_mesh(disk_maps, disk_refl):
    qt = image_partition(disk_maps[0], dyadic_annulus(4))
    q = reflect_partition(disk_refl, qt)
    return qt, q, shadow_refinement(disk_refl, q)


def test_disk_six_children(disk_mesh):
    _, q, kids = disk_mesh
    counts = Counter(k.parent for k in kids)
    assert set(counts.values()) == {6} and len(counts) == len(q)


def test_disk_children_congruent_per_level(disk_mesh):
    _, q, kids = disk_mesh
    by_parent = {}
    for k in kids:
        by_parent.setdefault(k.parent, []).append(k.shadow.length)
    for Q in q:
        lens = np.array(by_parent[Q.id])
        # all pieces equal except the merged tail
        assert np.ptp(lens[:-1]) <= 1e-3 * lens[0]
        assert lens[-1] >= lens[0]


def test_single_piece(square):
    arc = BoundaryArc(square, 0.1, 0.3)
    part = balanced_shadow_partition(arc, lambda s: np.full(np.size(s), 5.0))
    assert len(part) == 1


def test_merge_tail(square):
    arc = BoundaryArc(square, 0.0, 0.25)  # straight piece, 2.5 steps
    part = balanced_shadow_partition(arc, lambda s: np.full(np.size(s), 0.1))
    assert len(part) == 2
    assert part.breakpoints == pytest.approx([0.0, 0.1, 0.25])


def test_empty_shadow(square):
    with pytest.raises(EmptyShadow):
        balanced_shadow_partition(BoundaryArc(square, 0.2, 0.2), lambda s: s)


@given(st.floats(0, 4), st.floats(0.01, 1.5))
def test_next_cut_hits_diameter(square, x, ell):
    y = next_cut(square, x, x + 4 - 1e-9, ell)
    if y is None:
        return
    arc = BoundaryArc(square, x, y)
    assert arc.diameter == pytest.approx(ell, rel=1e-9, abs=1e-12)
    # first solution: slightly shorter arcs stay below ell
    assert BoundaryArc(square, x, x + 0.999 * (y - x)).diameter <= ell + 1e-12


def test_children_tile_parent(disk_mesh):
    _, q, kids = disk_mesh
    for Q in q[::7]:
        ks = [k for k in kids if k.parent == Q.id]
        for a, b in zip(ks[:-1], ks[1:]):
            assert np.array_equal(a.right, b.left)
            assert a.shadow.end_param == b.shadow.start_param
        assert ks[0].shadow.start_param == Q.shadow.start_param
        assert ks[-1].shadow.end_param == Q.shadow.end_param
        polys = [k.polygon() for k in ks]
        union = shapely.union_all(polys)
        assert union.area == pytest.approx(sum(p.area for p in polys), rel=1e-9)
        assert union.area == pytest.approx(Q.polygon().area, rel=1e-3)


def test_census(disk_mesh, circle):
    qt, q, kids = disk_mesh
    for Qt, Q in zip(qt, q):
        ks = [k for k in kids if k.parent == Q.id]
        cen = k_large_census(ks, Q, Qt.dist_to(circle))
        assert sum(cen.histogram.values()) == len(ks)
        # the merged tail may straddle a power of two
        assert max(cen.histogram) - min(cen.histogram) <= 1
        assert cen.max_count <= 6


def test_neighbors(disk_mesh):
    _, _, kids = disk_mesh
    adj = polar_neighbor_graph(kids)
    aud = neighbor_audit(kids, adj)
    assert aud["symmetric"]
    assert aud["max_degree"] <= 8
    assert aud["shadow_ratio_max"] <= 4
    # every exact adjacency is also a geometric one
    geo = neighbor_graph(kids, rel_tol=1e-2)
    assert all(set(adj[a]) <= set(geo[a]) for a in adj)


def test_balance_and_size(disk_mesh, disk_refl, circle):
    qt, _, kids = disk_mesh
    bal = balance_audit(disk_refl, kids)
    lo, hi = min(b.min_ratio for b in bal), max(b.max_ratio for b in bal)
    assert 0 < lo and hi / lo <= 2
    sz = size_audit(disk_refl, kids, {t.id: t.dist_to(circle) for t in qt})
    assert sz["large_c"] > 0
    assert sz["diam_over_dist"][1] / sz["diam_over_dist"][0] <= 2
