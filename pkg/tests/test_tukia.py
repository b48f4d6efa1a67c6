import numpy as np
import pytest
from hypothesis import given, strategies as st

from preflect.errors import MarkMismatch, NonMonotoneBoundary
from preflect.tukia_assembly import (
    BoundaryMap, boundary_bilip, count_foldovers, distortion_ratio, linear_boundary,
    piecewise_linear, random_boundary_map, tukia_extend,
)

P = 1.5
U = np.linspace(0, 1, 33)
GX, GY = np.meshgrid(U, U)


def _C(F):
    r, _ = distortion_ratio(F.jacobian(GX, GY), P)
    return float(max(r.max(), (1 / r).max()))


def test_identity_is_exact():
    F = tukia_extend(linear_boundary(1, 1, 1, 1))
    x, y = F(GX, GY)
    assert np.max(np.abs(x - GX)) <= 1e-12
    assert np.max(np.abs(y - GY)) <= 1e-12


@pytest.mark.parametrize("a", [1.0, 4.0, 16.0])
def test_linear_is_exact(a):
    F = tukia_extend(linear_boundary(1, 1, a, a ** (P - 1)))
    x, y = F(GX, GY)
    assert np.max(np.abs(x - a * GX)) <= 1e-12 * a
    assert np.max(np.abs(y - a ** (P - 1) * GY)) <= 1e-12 * a
    # the linear model diag(a, a^(p-1)) has |DF|^p = J exactly
    assert _C(F) == pytest.approx(1.0, abs=1e-9)


@given(a=st.floats(1.0, 16.0), seed=st.integers(0, 2 ** 31))
def test_random_maps_are_bilipschitz_and_unfolded(a, seed):
    bm = random_boundary_map(a, np.random.default_rng(seed), P)
    assert boundary_bilip(bm, P, 160) <= 2.0
    F = tukia_extend(bm)
    assert F.foldovers(33) == 0
    assert _C(F) <= 1.6


def test_corners_are_fixed(rng):
    bm = random_boundary_map(4.0, rng, P)
    F = tukia_extend(bm)
    x, y = F(np.array([0, 1, 1, 0.0]), np.array([0, 0, 1, 1.0]))
    np.testing.assert_allclose(x + 1j * y, [0, bm.a2, bm.a2 + 1j * bm.b2, 1j * bm.b2], atol=1e-12)


def test_boundary_is_reproduced(rng):
    bm = random_boundary_map(16.0, rng, P)
    F = tukia_extend(bm)
    x, _ = F(U, np.zeros_like(U))
    np.testing.assert_allclose(x, bm.e0(U), atol=1e-12 * bm.a2)
    _, y = F(np.ones_like(U), U)
    np.testing.assert_allclose(y, bm.right(U), atol=1e-12 * bm.a2)


def test_non_monotone_edge_rejected():
    bm = linear_boundary(1, 1, 1, 1)
    bm.e1 = lambda x: np.asarray(x) ** 2 * (3 - 2 * np.asarray(x)) - 0.2 * np.sin(2 * np.pi * np.asarray(x))
    with pytest.raises(NonMonotoneBoundary):
        tukia_extend(bm)


def test_mark_mismatch_rejected():
    bm = linear_boundary(1, 1, 2, 1)
    bm.marks = {"e0": ([0.5], [1.1])}
    with pytest.raises(MarkMismatch):
        bm.check()
    bm.marks = {"e0": ([0.5], [1.0])}
    bm.check()


def test_piecewise_linear():
    f = piecewise_linear([0, 0.5, 1], [0, 0.8, 2])
    assert f(0.25) == pytest.approx(0.4)
    with pytest.raises(NonMonotoneBoundary):
        piecewise_linear([0, 0.5, 0.4], [0, 1, 2])
    with pytest.raises(NonMonotoneBoundary):
        piecewise_linear([0, 0.5, 1], [0, 1, 1])


def test_count_foldovers():
    Z = GX + 1j * GY
    assert count_foldovers(Z) == 0
    assert count_foldovers(np.conj(Z)) == 0  # consistent reversed orientation
    assert count_foldovers(np.conj(Z), sign=1) == Z[:-1, :-1].size
    W = Z.copy()
    W[16, 16] += 0.2  # push one vertex across its neighbour
    assert count_foldovers(W) > 0


def test_boundary_map_without_marks_checks():
    bm = BoundaryMap(2.0, 1.0, 2.0, 1.0, lambda x: x, lambda x: x, lambda y: y, lambda y: y)
    assert bm.check() is bm
