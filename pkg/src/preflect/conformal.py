"""Interior and exterior Riemann maps, hyperbolic rays, shadow projection and
weighted ray lengths."""

from __future__ import annotations

import warnings

from dataclasses import dataclass
from typing import Literal

import numpy as np
import shapely
from scipy.optimize import minimize

from .curve_core import JordanCurve, as_complex, validate_curve
from .errors import (
    BasePointUndefined,
    ConformalAccuracyWarning,
    ConvergenceFailure,
    NonFinite,
    OutsideDomain,
    PointNotOnCurve,
)
from .zipper import Zipper

TOL_REL = 1e-3
MAX_DOUBLINGS = 3
CROWDING_SLACK = 4.0  # accepted error multiple when crowding blocks refinement


def deepest_point(curve: JordanCurve) -> complex:
    """Maximum of the distance field inside the curve."""
    circ = shapely.maximum_inscribed_circle(curve.polygon, tolerance=1e-4 * curve.diameter)
    x0 = np.asarray(circ.coords[0])

    def neg(p):
        w = complex(p[0], p[1])
        if not curve.contains(w):
            return 0.0
        return -float(curve.distance(w))

    res = minimize(neg, x0, method="Nelder-Mead",
                   options={"xatol": 1e-10 * curve.diameter, "fatol": 1e-14 * curve.diameter})
    best = res.x if res.fun <= neg(x0) else x0
    return complex(best[0], best[1])


@dataclass
class HyperbolicRay:
    shadow_point: complex
    angle: float  # disk-side angle of the ray
    radii: np.ndarray  # disk-side radii, base first, 1 last
    samples: np.ndarray  # image points; last one is the shadow point

    @property
    def cumulative_arclength(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(np.abs(np.diff(self.samples)))])


class ConformalMap:
    """Discrete Riemann map of one side of the curve.

    `forward` sends the disk side (|z| < 1 for the interior, |z| > 1 for the
    exterior) to the domain, `inverse` goes back.
    """

    def __init__(self, side, curve, zipper, center, params, angles, accuracy, n_boundary):
        self.side: Literal["interior", "exterior"] = side
        self.curve = curve
        self._z = zipper
        self._c = center  # inversion center for the exterior map
        self.n_boundary = n_boundary
        self.accuracy = accuracy
        order = np.argsort(params)
        p = params[order]
        a = np.unwrap(angles[order])
        a = a - 2 * np.pi * np.floor(a[0] / (2 * np.pi))
        # periodic table: arclength parameter <-> boundary angle
        L = curve.length
        self.table_params = np.concatenate([p[-1:] - L, p, p[:1] + L])
        self.table_angles = np.concatenate([a[-1:] - 2 * np.pi, a, a[:1] + 2 * np.pi])
        if not np.all(np.diff(self.table_angles) > 0):
            raise ConvergenceFailure("boundary correspondence is not monotone")

    @property
    def base_image(self):
        return self._c if self.side == "interior" else complex(np.inf)

    @property
    def boundary_table(self) -> np.ndarray:
        """(angle, arclength-parameter) rows, angle in [0, 2 pi)."""
        a = self.table_angles[1:-1]
        p = self.table_params[1:-1]
        return np.column_stack([np.mod(a, 2 * np.pi), p])

    # evaluators ---------------------------------------------------------
    def forward(self, zeta, deriv: bool = False):
        zeta = np.asarray(zeta, dtype=complex)
        if self.side == "interior":
            return self._z.from_disk(zeta, deriv=deriv)
        eta = 1 / np.conj(zeta)
        if deriv:
            psi, dpsi = self._z.from_disk(eta, deriv=True)
            w = self._c + 1 / np.conj(psi)
            d = np.conj(dpsi) / (np.conj(psi) ** 2 * zeta ** 2)
            return w, d
        psi = self._z.from_disk(eta)
        return self._c + 1 / np.conj(psi)

    def inverse(self, w, deriv: bool = False):
        w = np.asarray(w, dtype=complex)
        if self.side == "interior":
            return self._z.to_disk(w, deriv=deriv)
        v = 1 / np.conj(w - self._c)
        if deriv:
            eta, deta = self._z.to_disk(v, deriv=True)
            zeta = 1 / np.conj(eta)
            # zeta = 1/conj(g(1/conj(w - c))), g analytic
            d = np.conj(deta) / (np.conj(eta) ** 2 * (w - self._c) ** 2)
            return zeta, d
        return 1 / np.conj(self._z.to_disk(v))

    # boundary correspondence -------------------------------------------
    def angle_of_param(self, s) -> np.ndarray:
        L = self.curve.length
        s = np.asarray(s, dtype=float)
        k = np.floor(s / L)
        return np.interp(s - k * L, self.table_params, self.table_angles) + 2 * np.pi * k

    def param_of_angle(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        k = np.floor(theta / (2 * np.pi))
        L = self.curve.length
        return np.interp(theta - 2 * np.pi * k, self.table_angles, self.table_params) + L * k

    def boundary_point(self, theta) -> np.ndarray:
        return self.curve.point_at(self.param_of_angle(theta))

    def in_domain(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        inside = self.curve.contains(w)
        off = self.curve.distance(w) > self.curve.snap_tol
        return (inside & off) if self.side == "interior" else (~inside & off)

    def disk_radius_range(self, r_outer: float = 2.0):
        return (0.0, 1.0) if self.side == "interior" else (1.0, r_outer)


def _probe_error(cm: ConformalMap, n: int = 512) -> float:
    """Distance to the curve of the map evaluated just off the unit circle."""
    a = np.sort(cm.table_angles[1:-1])
    mids = 0.5 * (a[:-1] + a[1:])
    if len(mids) > n:
        mids = mids[np.linspace(0, len(mids) - 1, n).astype(int)]
    r = 1 - 1e-10 if cm.side == "interior" else 1 + 1e-10
    w = cm.forward(r * np.exp(1j * mids))
    if not np.all(np.isfinite(w)):
        return np.inf
    return float(np.max(cm.curve.distance(w)))


def _boundary_points(curve: JordanCurve, n: int):
    s, w = curve.sample(n, include_vertices=True)
    return s, w


def _better(best, cm, err):
    cm.accuracy = err
    return cm if best is None or err < best.accuracy else best


def _crowded(best, tol):
    """Refinement stopped by crowding: keep the best coarser map if it is close enough."""
    if best is None or best.accuracy > CROWDING_SLACK * tol:
        raise ConvergenceFailure("boundary correspondence lost monotonicity (crowding)")
    warnings.warn(f"crowding stopped refinement; boundary error {best.accuracy:.3g} (tol {tol:.3g})",
                  ConformalAccuracyWarning, stacklevel=3)
    return best


def _default_n(curve: JordanCurve, n_boundary: int | None) -> int:
    if n_boundary is None:
        n_boundary = 512
    return max(int(n_boundary), curve.n)


def build_interior_map(curve: JordanCurve, n_boundary: int | None = None, tol: float | None = None,
                       base: complex | None = None) -> ConformalMap:
    if tol is None:
        tol = TOL_REL * curve.diameter
    if tol <= 0:
        raise ConvergenceFailure("tolerance must be positive")
    c = deepest_point(curve) if base is None else complex(base)
    n = _default_n(curve, n_boundary)
    best = None
    for _ in range(MAX_DOUBLINGS + 1):
        s, w = _boundary_points(curve, n)
        z = Zipper(w, c)
        try:
            cm = ConformalMap("interior", curve, z, c, s, z.boundary_angles, tol, len(w))
        except ConvergenceFailure:
            return _crowded(best, tol)
        err = _probe_error(cm)
        if err <= tol:
            cm.accuracy = err
            return cm
        best = _better(best, cm, err)
        n *= 2
    raise ConvergenceFailure(f"boundary error {err:.3g} above tol {tol:.3g} with {len(w)} points")


def build_exterior_map(curve: JordanCurve, n_boundary: int | None = None, tol: float | None = None,
                       center: complex | None = None) -> ConformalMap:
    """Exterior map fixing infinity, via inversion about the deepest point."""
    if tol is None:
        tol = TOL_REL * curve.diameter
    if tol <= 0:
        raise ConvergenceFailure("tolerance must be positive")
    c = deepest_point(curve) if center is None else complex(center)
    n = _default_n(curve, n_boundary)
    best = None
    for _ in range(MAX_DOUBLINGS + 1):
        # dense sampling so that inverted edges (circular arcs) are resolved
        s_dense, w_dense = curve.sample(8 * n, include_vertices=True)
        inv = 1 / np.conj(w_dense - c)
        # w -> 1/conj(w - c) keeps arguments about c, so the order stays counterclockwise
        inv_ccw = inv
        s_ccw = s_dense
        seg = np.abs(np.diff(np.concatenate([inv_ccw, inv_ccw[:1]])))
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        corners = np.isin(s_ccw, curve.cumulative_length[:-1])
        targets = np.arange(n) * (cum[-1] / n)
        if curve.n >= n:
            pick = np.flatnonzero(corners)  # the vertices already resolve the curve
        else:
            pick = np.unique(np.concatenate([np.searchsorted(cum[:-1], targets), np.flatnonzero(corners)]))
        pick = pick[pick < len(inv_ccw)]
        w_inv = inv_ccw[pick]
        s_pick = s_ccw[pick]
        z = Zipper(w_inv, 0.0)
        # on |zeta| = 1 the inversion is the identity, so angles carry over
        ang = z.boundary_angles
        try:
            cm = ConformalMap("exterior", curve, z, c, s_pick, ang, tol, len(w_inv))
        except ConvergenceFailure:
            return _crowded(best, tol)
        err = _probe_error(cm)
        if err <= tol:
            cm.accuracy = err
            return cm
        best = _better(best, cm, err)
        n *= 2
    raise ConvergenceFailure(f"boundary error {err:.3g} above tol {tol:.3g} with {len(w_inv)} points")


# rays -----------------------------------------------------------------------

def ray_radii(side: str, n_samples: int, r_outer: float = 2.0, depth: int = 30) -> np.ndarray:
    """Disk-side radii from the ray start to the circle, dyadically refined toward |z| = 1.

    Gaps to the circle are halved level by level; each dyadic cell gets
    max(2, n_samples // 8) points.
    """
    per = max(2, n_samples // 8)
    if side == "interior":
        gaps = [np.linspace(1.0, 0.5, per, endpoint=False)]  # 1 - r from the base outward
    else:
        gaps = [np.linspace(r_outer - 1, 0.5 * (r_outer - 1), per, endpoint=False)]
    scale = 1.0 if side == "interior" else r_outer - 1
    for j in range(1, depth):
        hi = scale * 2.0 ** -j
        gaps.append(np.linspace(hi, hi / 2, per, endpoint=False))
    g = np.concatenate(gaps + [[0.0]])
    return 1 - g if side == "interior" else 1 + g


def hyperbolic_ray(cm: ConformalMap, z, n_samples: int = 64, r_outer: float = 2.0,
                   depth: int | None = None) -> HyperbolicRay:
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    z = complex(as_complex(z))
    s = cm.curve.param_of(z)  # raises PointNotOnCurve
    theta = float(cm.angle_of_param(s))
    if depth is None:
        # stop the dyadic layers once they fall under the map's boundary resolution
        depth = int(np.clip(np.ceil(np.log2(cm.n_boundary)) + 2, 4, 30))
    radii = ray_radii(cm.side, n_samples, r_outer, depth)
    pts = cm.forward(radii[:-1] * np.exp(1j * theta))
    samples = np.concatenate([pts, [z]])
    if cm.side == "interior":
        samples[0] = cm.base_image
    return HyperbolicRay(z, theta, radii, samples)


def shadow_project(cm: ConformalMap, w) -> np.ndarray:
    w = np.asarray(as_complex(w), dtype=complex)
    if not np.all(cm.in_domain(w)):
        raise OutsideDomain("point not inside the map's domain")
    zeta = cm.inverse(w)
    if np.any(np.abs(zeta) < 1e-12) and cm.side == "interior":
        raise BasePointUndefined("the base point has no ray")
    theta = np.angle(zeta)
    return cm.boundary_point(np.mod(theta, 2 * np.pi))


def weighted_length(curve: JordanCurve, path, exponent: float, depth: int = 40,
                    min_sub: int = 1) -> float:
    """Integral of dist(., curve)**exponent along a polyline.

    Composite midpoint rule; segments are split so each cell is short compared
    to its distance from the curve, and a segment ending on the curve is cut
    dyadically toward that end, whose last cell uses the closed form for a
    distance vanishing linearly.
    """
    path = np.atleast_1d(np.asarray(as_complex(path), dtype=complex))
    if path.size < 2:
        return 0.0
    if exponent == 0:
        return float(np.sum(np.abs(np.diff(path))))
    d = curve.distance(path)
    tol = max(curve.snap_tol, 1e-15)
    total = 0.0
    for k in range(path.size - 1):
        a, b = path[k], path[k + 1]
        da, db = d[k], d[k + 1]
        ln = abs(b - a)
        if ln == 0:
            continue
        if da <= tol and db <= tol:
            raise NonFinite("segment runs along the curve")
        if da <= tol or db <= tol:
            if da <= tol:
                a, b, da, db = b, a, db, da  # integrate from the off-curve end
            total += _touching_segment(curve, a, b, da, exponent, depth)
            continue
        n = max(min_sub, int(np.ceil(4 * ln / min(da, db))))
        n = min(n, 4096)
        t = (np.arange(n) + 0.5) / n
        mids = a + t * (b - a)
        dm = curve.distance(mids)
        total += float(np.sum(dm ** exponent)) * ln / n
    return total


def _touching_segment(curve, a, b, da, exponent, depth):
    if exponent <= -1:
        raise NonFinite("non-integrable singularity at the curve")
    ln = abs(b - a)
    # dyadic cells [1 - 2^-j, 1 - 2^-(j+1)] of the unit parameter, each split in 16
    edges = 1 - 2.0 ** -np.arange(depth + 1)
    t0, t1 = edges[:-1], edges[1:]
    sub = 16
    u = (np.arange(sub) + 0.5) / sub
    tm = (t0[:, None] + (t1 - t0)[:, None] * u[None, :]).ravel()
    w = np.repeat((t1 - t0) / sub, sub)
    dm = curve.distance(a + tm * (b - a))
    if np.any(dm <= 0):
        raise NonFinite("integrand not finite inside the path")
    body = float(np.sum(dm ** exponent * w)) * ln
    # last cell: distance ~ linear, vanishing at the end
    h = 2.0 ** -depth
    d_last = float(curve.distance(a + (1 - h) * (b - a)))
    tail = d_last ** exponent * h * ln / (exponent + 1)
    return body + tail


def uniform_weighted_length(curve: JordanCurve, path, exponent: float, n: int) -> float:
    """Plain midpoint rule with n equal cells along the path (quadrature control)."""
    path = np.asarray(as_complex(path), dtype=complex)
    seg = np.abs(np.diff(path))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    L = cum[-1]
    t = (np.arange(n) + 0.5) * L / n
    k = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(seg) - 1)
    pts = path[k] + (t - cum[k]) / seg[k] * (path[k + 1] - path[k])
    return float(np.sum(curve.distance(pts) ** exponent)) * L / n


def ray_weighted_table(curve: JordanCurve, samples: np.ndarray, exponent: float,
                       sub: int = 4) -> np.ndarray:
    """Weighted length from each ray sample to the end of the ray (on the curve).

    Midpoint rule on `sub` pieces per ray segment; the final segment touching
    the curve gets the closed-form cell.
    """
    samples = np.asarray(samples, dtype=complex)
    m = samples.size
    a, b = samples[:-1], samples[1:]
    u = (np.arange(sub) + 0.5) / sub
    mids = a[:, None] + u[None, :] * (b - a)[:, None]
    dm = curve.distance(mids)
    ln = np.abs(b - a)
    with np.errstate(divide="ignore"):
        seg = np.sum(dm ** exponent, axis=1) * ln / sub
    # last segment ends on the curve: closed form with linear distance
    d_start = float(curve.distance(samples[-2]))
    seg[-1] = d_start ** exponent * ln[-1] / (exponent + 1)
    if not np.all(np.isfinite(seg)):
        raise NonFinite("ray integrand blew up")
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    return tail
