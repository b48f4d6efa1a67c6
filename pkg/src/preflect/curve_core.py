"""Oriented polygonal Jordan curves, boundary arcs and the three-point constant."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numba
import numpy as np
import shapely
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateArc,
    DegenerateEdge,
    PointNotOnCurve,
    SelfIntersection,
    TooFewSamples,
    TooFewVertices,
)

SNAP_REL = 1e-9


def as_complex(p) -> complex | np.ndarray:
    """Accept complex, (x, y) pairs or (n, 2) arrays."""
    if isinstance(p, (complex, float, int, np.complexfloating)):
        return complex(p)
    a = np.asarray(p)
    if np.iscomplexobj(a):
        return a
    a = a.astype(float)
    if a.shape == (2,):
        return complex(a[0], a[1])
    return a[..., 0] + 1j * a[..., 1]


@numba.njit(cache=True, fastmath=True)
def _segment_distance(px, py, ax, ay, dx, dy, inv):
    # brute force over edges; beats shapely's per-point loop by a wide margin
    out = np.empty(px.size)
    for i in range(px.size):
        best = 1e300
        for j in range(ax.size):
            ux = px[i] - ax[j]
            uy = py[i] - ay[j]
            t = (ux * dx[j] + uy * dy[j]) * inv[j]
            t = min(max(t, 0.0), 1.0)
            ex = ux - t * dx[j]
            ey = uy - t * dy[j]
            best = min(best, ex * ex + ey * ey)
        out[i] = np.sqrt(best)
    return out


def point_set_diameter(z: np.ndarray) -> float:
    z = np.asarray(z, dtype=complex).ravel()
    if z.size < 2:
        return 0.0
    if z.size > 64:
        xy = np.column_stack([z.real, z.imag])
        try:
            z = z[ConvexHull(xy).vertices]
        except QhullError:
            pass  # collinear input, brute force below
    best = 0.0
    for k in range(0, z.size, 1024):
        best = max(best, float(np.abs(z[k:k + 1024, None] - z[None, :]).max()))
    return best


@dataclass(frozen=True, eq=False)
class JordanCurve:
    vertices: np.ndarray  # (n, 2), counterclockwise, closure implied
    reversed_input: bool = False
    cumulative_length: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        z = self.z
        seg = np.abs(np.roll(z, -1) - z)
        object.__setattr__(self, "cumulative_length", np.concatenate([[0.0], np.cumsum(seg)]))

    @cached_property
    def z(self) -> np.ndarray:
        return self.vertices[:, 0] + 1j * self.vertices[:, 1]

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def length(self) -> float:
        return float(self.cumulative_length[-1])

    @cached_property
    def diameter(self) -> float:
        return point_set_diameter(self.z)

    @cached_property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @cached_property
    def ring(self):
        return shapely.LinearRing(self.vertices)

    @cached_property
    def polygon(self):
        p = shapely.Polygon(self.vertices)
        shapely.prepare(p)
        return p

    @property
    def snap_tol(self) -> float:
        return SNAP_REL * self.diameter

    def point_at(self, s) -> np.ndarray:
        """Point(s) at arclength parameter s (taken mod length)."""
        s = np.mod(np.asarray(s, dtype=float), self.length)
        cl = self.cumulative_length
        i = np.clip(np.searchsorted(cl, s, side="right") - 1, 0, self.n - 1)
        z = self.z
        z0, z1 = z[i], np.roll(z, -1)[i]
        w = (s - cl[i]) / (cl[i + 1] - cl[i])
        return z0 + w * (z1 - z0)

    def param_of(self, p) -> np.ndarray | float:
        """Arclength parameter of point(s) on the curve, snapped within tolerance."""
        w = np.atleast_1d(as_complex(p)).astype(complex)
        z = self.z
        a, b = z, np.roll(z, -1)
        d = b - a
        t = np.clip(((w[:, None] - a[None, :]) * np.conj(d)[None, :]).real / np.abs(d)[None, :] ** 2, 0, 1)
        proj = a[None, :] + t * d[None, :]
        dist = np.abs(w[:, None] - proj)
        k = np.argmin(dist, axis=1)
        dmin = dist[np.arange(len(w)), k]
        if np.any(dmin > max(self.snap_tol, 1e-15)):
            raise PointNotOnCurve(f"point at distance {dmin.max():.3g} from curve")
        s = self.cumulative_length[k] + t[np.arange(len(w)), k] * np.abs(d[k])
        s = np.mod(s, self.length)
        return float(s[0]) if np.ndim(as_complex(p)) == 0 else s

    def distance(self, w) -> np.ndarray:
        """Euclidean distance from point(s) to the curve."""
        w = np.asarray(w, dtype=complex)
        a, d, inv = self._edges
        flat = w.ravel()
        return _segment_distance(np.ascontiguousarray(flat.real), np.ascontiguousarray(flat.imag),
                                 a.real, a.imag, d.real, d.imag, inv).reshape(w.shape)

    @cached_property
    def _edges(self):
        a = self.z
        d = np.roll(a, -1) - a
        return np.ascontiguousarray(a), np.ascontiguousarray(d), 1.0 / np.abs(d) ** 2

    def contains(self, w) -> np.ndarray:
        """Strict interior test."""
        w = np.asarray(w, dtype=complex)
        return shapely.contains_xy(self.polygon, w.real, w.imag)

    def sample(self, n: int, include_vertices: bool = False) -> np.ndarray:
        """n points at uniform arclength, optionally merged with the vertices."""
        s = np.arange(n) * (self.length / n)
        if include_vertices:
            s = np.unique(np.concatenate([s, self.cumulative_length[:-1]]))
            keep = np.concatenate([[True], np.diff(s) > 1e-12 * self.length])
            s = s[keep]
        return s, self.point_at(s)

    def transformed(self, fn) -> "JordanCurve":
        """Apply a point map (complex -> complex) to the vertices and revalidate."""
        w = fn(self.z)
        return validate_curve(np.column_stack([w.real, w.imag]))

    def to_json(self) -> str:
        return json.dumps({"vertices": self.vertices.tolist()})


def validate_curve(vertices: Sequence) -> JordanCurve:
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        if np.iscomplexobj(np.asarray(vertices)):
            c = np.asarray(vertices)
            v = np.column_stack([c.real, c.imag])
        else:
            raise TooFewVertices("vertices must be an (n, 2) array")
    if len(v) >= 2 and np.allclose(v[0], v[-1]):
        v = v[:-1]  # explicit closure
    if len(v) < 3:
        raise TooFewVertices(f"need at least 3 vertices, got {len(v)}")
    if not np.all(np.isfinite(v)):
        raise TooFewVertices("non-finite coordinates")
    seg = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
    scale = max(np.ptp(v[:, 0]), np.ptp(v[:, 1]))
    if np.any(seg <= 1e-14 * max(scale, 1e-300)):
        raise DegenerateEdge(f"zero-length edge at vertex {int(np.argmin(seg))}")
    ring = shapely.LinearRing(v)
    if not ring.is_simple:
        raise SelfIntersection("curve is not simple")
    x, y = v[:, 0], v[:, 1]
    area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if area == 0:
        raise SelfIntersection("zero signed area")
    flipped = area < 0
    if flipped:
        v = v[::-1].copy()
    return JordanCurve(np.ascontiguousarray(v), reversed_input=bool(flipped))


def load_curve(path) -> JordanCurve:
    with open(path) as fh:
        data = json.load(fh)
    return validate_curve(data["vertices"])


@dataclass(frozen=True, eq=False)
class BoundaryArc:
    curve: JordanCurve
    start_param: float
    end_param: float  # unwrapped, end_param > start_param

    @property
    def length(self) -> float:
        return self.end_param - self.start_param

    @property
    def start(self) -> complex:
        return complex(self.curve.point_at(self.start_param))

    @property
    def end(self) -> complex:
        return complex(self.curve.point_at(self.end_param))

    def polyline(self, n_min: int = 2) -> np.ndarray:
        """Arc vertices plus endpoints, at least n_min points."""
        c = self.curve
        L = c.length
        s = np.linspace(self.start_param, self.end_param, max(n_min, 2))
        knots = c.cumulative_length[:-1]
        reps = np.floor(self.start_param / L) + np.arange(0, 3)
        extra = (knots[None, :] + L * reps[:, None]).ravel()
        extra = extra[(extra > self.start_param) & (extra < self.end_param)]
        s = np.unique(np.concatenate([s, extra]))
        return c.point_at(s)

    @cached_property
    def diameter(self) -> float:
        return point_set_diameter(self.polyline())

    def split(self, params: Sequence[float]) -> "ArcPartition":
        cuts = [self.start_param, *sorted(params), self.end_param]
        return ArcPartition([BoundaryArc(self.curve, a, b) for a, b in zip(cuts[:-1], cuts[1:])])


@dataclass(frozen=True)
class ArcPartition:
    arcs: list

    def __len__(self):
        return len(self.arcs)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([self.arcs[0].start_param] + [a.end_param for a in self.arcs])


def arc_between(curve: JordanCurve, a, b) -> BoundaryArc:
    """Positively oriented arc from a to b."""
    sa = curve.param_of(a)
    sb = curve.param_of(b)
    L = curve.length
    gap = (sb - sa) % L
    if gap <= curve.snap_tol or L - gap <= curve.snap_tol:
        raise DegenerateArc("endpoints coincide")
    return BoundaryArc(curve, sa, sa + gap)


def _arc_mask(m: int, i: int) -> np.ndarray:
    """mask[j, k]: sample k lies on the positive arc from i to j (inclusive)."""
    k = np.arange(m)
    off_k = (k - i) % m
    off_j = (np.arange(m) - i) % m
    return off_k[None, :] <= off_j[:, None]


def three_point_constant(curve: JordanCurve, n_samples: int) -> float:
    """Sampled three-point constant on n_samples uniform boundary points.

    For each pair (z1, z2) the third point ranges over the arc of smaller
    diameter; ties go to the positively oriented arc from z1 to z2.
    """
    m = int(n_samples)
    if m < 3:
        raise TooFewSamples("need at least 3 sample points")
    _, z = curve.sample(m)
    D = np.abs(z[:, None] - z[None, :])
    best = 1.0
    for i in range(m):
        fwd = _arc_mask(m, i)  # arc i -> j
        # diameter of the arc i..j is a running max over rows of the permuted matrix
        diam_fwd = np.empty(m)
        diam_bwd = np.empty(m)
        for sign, out in ((1, diam_fwd), (-1, diam_bwd)):
            perm = (i + sign * np.arange(m)) % m
            rows = np.tril(D[np.ix_(perm, perm)]).max(axis=1)
            out[perm] = np.maximum.accumulate(rows)
        use_fwd = diam_fwd <= diam_bwd
        mask = np.where(use_fwd[:, None], fwd, ~fwd)
        mask[:, i] = True
        mask[np.arange(m), np.arange(m)] = True
        num = D[i][None, :] + D  # |z1 - z3| + |z2 - z3| with z2 = row j
        val = np.where(mask, num, -np.inf).max(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = val / D[i]
        ratio[i] = 1.0
        best = max(best, float(np.nanmax(ratio)))
    return best
