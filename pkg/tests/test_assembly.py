import numpy as np
import pytest

from preflect.errors import OutsideCollar
from preflect.tukia_assembly import (
    assemble_reflection, boundary_trace, foldover_audit, image_grids, inner_core_extend,
)


@pytest.fixture(scope="module")
def disk_f(disk_collar):
    return inner_core_extend(assemble_reflection(disk_collar))


@pytest.fixture(scope="module")
def square_f(square_collar):
    return inner_core_extend(assemble_reflection(square_collar))


@pytest.fixture(params=["disk", "square"])
def f(request, disk_f, square_f):
    return disk_f if request.param == "disk" else square_f


def test_glue_within_chart_accuracy(f):
    g = f.audits["glue"]
    assert g["residual"] <= g["tolerance"]


def test_glue_small_against_cell_height(disk_f):
    assert disk_f.audits["glue"]["residual_over_dist_max"] <= 1e-2


def test_core_interface_matches_collar(f):
    assert f.audits["core_interface"]["relative"] <= 1e-9


def test_boundary_trace(f):
    assert boundary_trace(f)["ratio"] <= 2.0


def test_no_foldovers(f):
    rep = foldover_audit(f)
    assert rep["foldover_quads"] == 0
    assert rep["rectangles"] == len(f.children)


def test_locator_finds_own_rectangle(f):
    T = f.tab
    ci = np.arange(len(f.children))
    X, Y = T["wt"] / 2, T["dt"] / 2
    zeta = f.refl.interior.inverse(f.source_point(ci, X, Y))
    got, X2, Y2 = f.locate(np.abs(zeta), np.angle(zeta))
    assert np.array_equal(got, ci)
    assert np.max(np.abs(X2 - X)) <= 1e-9 * T["wt"].max()
    assert np.max(np.abs(Y2 - Y)) <= 1e-9 * T["dt"].max()


def test_plane_call_matches_chart(f):
    T = f.tab
    ci = np.arange(len(f.children))
    z = f.source_point(ci, T["wt"] / 3, T["dt"] / 3)
    assert np.max(np.abs(f(z) - f.eval_chart(ci, T["wt"] / 3, T["dt"] / 3))) <= 1e-8


def test_boundary_points_fixed(f):
    z = f.refl.curve.z[:16]
    assert np.array_equal(f(z), z)


def test_exterior_points_fixed(f):
    z = np.array([10.0 + 0j, -7j])
    assert np.array_equal(f(z), z)


def test_disk_core_closed_form(disk_f):
    # the collar ends at radius 3 on t = 1/2; the core scales by 1/(2t)
    w = disk_f(disk_f.refl.interior.forward(np.array([0.3, 0.1j])))
    np.testing.assert_allclose(np.abs(w), [5.0, 15.0], rtol=1e-3)
    np.testing.assert_allclose(np.angle(w), [0.0, np.pi / 2], atol=1e-3)


def test_core_centre_goes_to_cap(f):
    w = f(f.refl.interior.forward(np.array([0j])))
    assert np.abs(w[0]) > 1e4
    assert f.meta["orientation"] == -1


def test_beyond_finest_level_raises(f):
    with pytest.raises(OutsideCollar):
        f(f.refl.interior.forward(np.array([0.99 + 0j])))


def test_image_grids_shape(disk_f):
    g = image_grids(disk_f, 3)
    assert len(g) == len(disk_f.children)
    assert np.asarray(g[0]["grid"]).shape == (3, 3, 2)
