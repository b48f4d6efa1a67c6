"""Shipped test curves."""

from __future__ import annotations

import numpy as np
import shapely

from .curve_core import JordanCurve, validate_curve


def circle(n: int = 512, radius: float = 1.0) -> JordanCurve:
    t = np.arange(n) * (2 * np.pi / n)
    return validate_curve(np.column_stack([radius * np.cos(t), radius * np.sin(t)]))


def square(side: float = 1.0) -> JordanCurve:
    return validate_curve([[0, 0], [side, 0], [side, side], [0, side]])


def rounded_l(radius: float = 0.2, quad_segs: int = 8) -> JordanCurve:
    ell = shapely.Polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])
    # opening rounds the convex corners, closing the reflex one
    g = ell.buffer(-radius, quad_segs=quad_segs).buffer(radius, quad_segs=quad_segs)
    g = g.buffer(radius, quad_segs=quad_segs).buffer(-radius, quad_segs=quad_segs)
    xy = np.asarray(g.exterior.coords)[:-1]
    return validate_curve(xy)


def cusp(power: float = 1.5, n_branch: int = 96, n_cap: int = 32, x_min: float = 0.03) -> JordanCurve:
    """Region |y| <= x**power for 0 <= x <= 1, closed by a half-disk cap at x = 1."""
    x = np.geomspace(x_min, 1.0, n_branch)
    lower = np.column_stack([x, -x ** power])
    a = np.linspace(-np.pi / 2, np.pi / 2, n_cap + 2)[1:-1]
    cap = np.column_stack([1 + np.cos(a), np.sin(a)])
    upper = (lower * [1, -1])[::-1]
    v = np.concatenate([[[0.0, 0.0]], lower, cap, upper])
    return validate_curve(v)


CURVES = {"circle": circle, "square": square, "rounded_l": rounded_l, "cusp": cusp}
