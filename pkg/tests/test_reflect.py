import numpy as np
import pytest
from hypothesis import given, strategies as st

from preflect.conformal import build_exterior_map, build_interior_map, shadow_project
from preflect.errors import OutsideCollar
from preflect.reflect import (StableReflection, audit_power_law, audit_ray_comparability, reflect_partition,
                              stable_reflect)
from preflect.whitney import dyadic_annulus, image_partition


@pytest.mark.parametrize("t, expected", [(0.75, 2.0), (0.9, 1.4)])
def test_disk_closed_form(disk_refl, t, expected):
    assert abs(stable_reflect(disk_refl, t) - expected) <= 1e-3


def test_core_rejected(disk_refl):
    with pytest.raises(OutsideCollar):
        stable_reflect(disk_refl, 0.3)
    with pytest.raises(OutsideCollar):
        stable_reflect(disk_refl, 1.3)


def test_curve_points_fixed(square_refl, square):
    z = square.point_at(np.linspace(0, 4, 9))
    assert np.array_equal(stable_reflect(square_refl, z), z)


def test_disk_partition_radii(disk_maps, disk_refl):
    qt = image_partition(disk_maps[0], dyadic_annulus(3))
    for q in reflect_partition(disk_refl, qt):
        k = q.level
        assert np.allclose(np.abs(q.he), 1 + 4 * 2.0 ** -(k + 1), rtol=1e-3)
        assert np.allclose(np.abs(q.he_flat), 1 + 4 * 2.0 ** -k, rtol=1e-3)


def test_partition_shadows_and_rays(square_maps, square_refl):
    I, E = square_maps
    qt = image_partition(I, dyadic_annulus(2))
    for q, qq in zip(qt, reflect_partition(square_refl, qt)):
        assert (qq.shadow.start_param, qq.shadow.end_param) == (q.shadow.start_param, q.shadow.end_param)
        assert qq.partner == q.id
        assert np.allclose(shadow_project(E, qq.left), q.shadow.start, atol=1e-6)
        assert np.allclose(shadow_project(E, qq.right), q.shadow.end, atol=1e-6)


def test_disk_comparability(disk_refl):
    a = audit_ray_comparability(disk_refl, n_samples=64)
    lo, hi = a["length_ratio"]
    assert lo == pytest.approx(4.0, rel=1e-2) and hi == pytest.approx(4.0, rel=1e-2)
    assert a["dist_ratio_max"] <= 1.0


def test_square_comparability_stable(square, square_refl):
    fine = StableReflection(build_interior_map(square, 1024), build_exterior_map(square, 1024), 1.5)
    a = audit_ray_comparability(square_refl, n_samples=64)["L"]
    b = audit_ray_comparability(fine, n_samples=64)["L"]
    assert np.isfinite(a) and abs(a / b - 1) <= 0.10


@pytest.mark.parametrize("fixture", ["disk_refl", "square_refl"])
def test_length_residual(request, fixture):
    refl = request.getfixturevalue(fixture)
    idx = refl.rays(np.linspace(0, 2 * np.pi, 24, endpoint=False))
    assert refl.length_residual(idx) <= 1e-3


def test_power_law_on_disk(disk_refl):
    a = audit_power_law(disk_refl)
    assert abs(a["slope_mean"] - (disk_refl.p - 1)) <= 0.1


@given(st.floats(0.5, 0.999), st.floats(0.5, 0.999), st.floats(0, 2 * np.pi))
def test_monotone_along_ray(square_refl, t1, t2, th):
    if abs(t1 - t2) < 1e-6:
        return
    R, _ = square_refl.reflect_polar(np.array([t1, t2]), th)
    # deeper interior points go farther out
    assert (R[0] - R[1]) * (t1 - t2) < 0


@given(st.floats(0.5, 0.999), st.floats(0, 2 * np.pi), st.floats(0.5, 0.999), st.floats(0, 2 * np.pi))
def test_injective_on_distinct_rays(square_refl, t1, a1, t2, a2):
    if abs(np.exp(1j * a1) - np.exp(1j * a2)) < 1e-6:
        return
    R, te = square_refl.reflect_polar(np.array([t1, t2]), np.array([a1, a2]))
    w = square_refl.point(R, te)
    assert w[0] != w[1]
