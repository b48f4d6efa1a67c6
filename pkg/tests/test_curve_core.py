import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from preflect import curves
from preflect.curve_core import arc_between, load_curve, three_point_constant, validate_curve
from preflect.errors import DegenerateArc, DegenerateEdge, PointNotOnCurve, SelfIntersection, TooFewSamples, \
    TooFewVertices

UNIT_SQUARE = [[0, 0], [1, 0], [1, 1], [0, 1]]


def test_square_valid():
    c = validate_curve(UNIT_SQUARE)
    assert c.length == pytest.approx(4.0)
    assert not c.reversed_input
    assert c.area == pytest.approx(1.0)


def test_clockwise_input_is_flipped():
    c = validate_curve(UNIT_SQUARE[::-1])
    assert c.reversed_input
    assert c.area > 0


def test_rejects():
    with pytest.raises(SelfIntersection):
        validate_curve([[0, 0], [1, 1], [1, 0], [0, 1]])
    with pytest.raises(DegenerateEdge):
        validate_curve([[0, 0], [1, 0], [1, 0], [0, 1]])
    with pytest.raises(TooFewVertices):
        validate_curve([[0, 0], [1, 0]])


def test_explicit_closure_dropped():
    c = validate_curve(UNIT_SQUARE + [[0, 0]])
    assert c.n == 4


def test_load_curve(tmp_path):
    f = tmp_path / "sq.json"
    f.write_text(json.dumps({"vertices": UNIT_SQUARE}))
    assert load_curve(f).length == pytest.approx(4.0)


def test_arc_quarter_circle():
    c = curves.circle(256)
    arc = arc_between(c, (1, 0), (0, 1))
    assert arc.length == pytest.approx(np.pi / 2, abs=1e-3)


def test_arc_adjacent_corners():
    c = validate_curve(UNIT_SQUARE)
    assert arc_between(c, (1, 0), (1, 1)).length == pytest.approx(1.0)


def test_arc_errors():
    c = validate_curve(UNIT_SQUARE)
    with pytest.raises(DegenerateArc):
        arc_between(c, (1, 0), (1, 0))
    with pytest.raises(PointNotOnCurve):
        arc_between(c, (0.5, 0.5), (1, 0))


@given(st.floats(0, 4), st.floats(0, 4))
def test_arcs_tile_curve(s, t):
    c = validate_curve(UNIT_SQUARE)
    a, b = c.point_at(s), c.point_at(t)
    if min(abs(s - t), 4 - abs(s - t)) < 1e-6:
        return
    total = arc_between(c, a, b).length + arc_between(c, b, a).length
    assert total == pytest.approx(c.length, rel=1e-9)


def test_three_point_circle():
    assert three_point_constant(curves.circle(512), 256) == pytest.approx(np.sqrt(2), rel=0.02)


def test_three_point_square_stable():
    c = validate_curve(UNIT_SQUARE)
    a, b = three_point_constant(c, 100), three_point_constant(c, 320)
    assert np.isfinite(a) and abs(a / b - 1) <= 0.02


def test_three_point_monotone_in_samples():
    c = curves.rounded_l()
    assert three_point_constant(c, 64) <= three_point_constant(c, 128) + 1e-12


def test_three_point_too_few():
    with pytest.raises(TooFewSamples):
        three_point_constant(validate_curve(UNIT_SQUARE), 2)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 2 * np.pi), st.floats(0.1, 10))
def test_three_point_similarity_invariant(dx, dy, rot, scale):
    base = curves.rounded_l()
    w = scale * np.exp(1j * rot) * base.z + complex(dx, dy)
    moved = validate_curve(np.column_stack([w.real, w.imag]))
    assert three_point_constant(moved, 64) == pytest.approx(three_point_constant(base, 64), rel=1e-6)


def test_reverse_only_changes_flag():
    v = curves.rounded_l().vertices  # counterclockwise after validation
    c, r = validate_curve(v), validate_curve(v[::-1])
    assert not c.reversed_input and r.reversed_input
    assert r.length == pytest.approx(c.length)
    assert r.area == pytest.approx(c.area)
    assert np.allclose(np.sort_complex(r.z), np.sort_complex(c.z))
