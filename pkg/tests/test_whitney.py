import numpy as np
import pytest
import shapely
from hypothesis import given, strategies as st

from preflect.errors import BadLevel, TouchesBoundary
from preflect.whitney import (AnnulusCell, annulus_rect, cell_count, dyadic_annulus, image_partition,
                              set_whitney, whitney_audit, whitney_lambda)


def test_level_one():
    cells = dyadic_annulus(1)
    assert len(cells) == 4
    for c in cells:
        assert (c.r_lo, c.r_hi) == (0.5, 0.75)
        assert c.th_hi - c.th_lo == pytest.approx(np.pi / 2)


def test_cell_count_example():
    assert cell_count(3) == 28 == len(dyadic_annulus(3))


@given(st.integers(1, 9))
def test_cell_count_formula(k_max):
    assert len(dyadic_annulus(k_max)) == cell_count(k_max) == sum(2 ** (k + 1) for k in range(1, k_max + 1))


@given(st.integers(1, 8), st.data())
def test_upper_neighbors_share_edge(k, data):
    j = data.draw(st.integers(0, 2 ** (k + 1) - 1))
    c = AnnulusCell(k, j)
    a, b = c.upper_neighbors()
    # binary rationals: exact equality
    assert a.th_lo == c.th_lo and b.th_hi == c.th_hi and a.th_hi == b.th_lo
    assert a.r_lo == c.r_hi
    assert a.lower_neighbor() == c


def test_bad_level():
    with pytest.raises(BadLevel):
        dyadic_annulus(0)


def test_disk_cells_map_to_themselves(disk_maps):
    I, _ = disk_maps
    a, s = I.boundary_table.T
    rot = np.exp(1j * np.median(np.angle(np.exp(1j * (s - a)))))
    cells = dyadic_annulus(3)
    for rect, c in zip(image_partition(I, cells), cells):
        ref = annulus_rect(c)
        got = shapely.Polygon(np.column_stack([(rect.loop() / rot).real, (rect.loop() / rot).imag]))
        assert shapely.hausdorff_distance(got, ref.polygon()) <= 1e-2


def test_he_is_union_of_upper_flat_edges(square_maps):
    I, _ = square_maps
    c = AnnulusCell(2, 3)
    q, up0, up1 = image_partition(I, [c, *c.upper_neighbors()])
    n = q.he.size
    assert np.allclose(q.he[0], up0.he_flat[0]) and np.allclose(q.he[-1], up1.he_flat[-1])
    assert np.allclose(up0.he_flat[-1], up1.he_flat[0])
    assert np.allclose(q.he[n // 2], up0.he_flat[-1], atol=1e-12)


def test_shadow_is_sector_image(square_maps):
    I, _ = square_maps
    c = AnnulusCell(2, 5)
    (q,) = image_partition(I, [c])
    assert q.shadow.start == pytest.approx(complex(I.boundary_point(c.th_lo)))
    assert q.shadow.end == pytest.approx(complex(I.boundary_point(c.th_hi)))


def test_half_disk_lambda(circle):
    t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    ball = shapely.Polygon(np.column_stack([0.5 * np.cos(t), 0.5 * np.sin(t)]))
    assert set_whitney(ball, circle).lam == pytest.approx(2.0, rel=2e-3)


def test_p10_lambda(circle):
    rep = whitney_lambda(annulus_rect(AnnulusCell(1, 0)), circle)
    assert rep.lam == pytest.approx(8.49, abs=0.02)
    assert rep.diam / rep.dist_to_curve == pytest.approx(4.24, abs=0.02)


def test_touching_set(circle):
    with pytest.raises(TouchesBoundary):
        set_whitney(shapely.Polygon([(0, 0), (1, 0), (0, 0.5)]), circle)


def test_disk_levels_comparable(disk_maps, circle):
    rects = image_partition(disk_maps[0], dyadic_annulus(5))
    aud = whitney_audit(rects, circle)
    assert aud["ratio"] <= 2.0
    assert sorted(aud["per_level_max"]) == [1, 2, 3, 4, 5]
