"""Graph estimates of quasihyperbolic and subhyperbolic distances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .curve_core import JordanCurve, as_complex
from .errors import BadAlpha, DisconnectedGraph, OutsideDomain, TooFewSamples

N_SUB = 8  # midpoint subsamples per edge
NEIGHBOR_RADIUS = 1.5  # in units of local spacing; covers the 8-neighborhood


@dataclass
class DensityGraph:
    nodes: np.ndarray  # complex
    spacing: np.ndarray  # local spacing per node
    edges: np.ndarray  # (m, 2) int
    lengths: np.ndarray  # Euclidean edge lengths
    mid_dist: np.ndarray  # (m, N_SUB) distances to the curve at subsample points
    mesh_h: float
    n_fixed: int = 0  # leading nodes inserted on request (query points)

    def weights(self, alpha: float) -> np.ndarray:
        return np.mean(self.mid_dist ** (alpha - 1.0), axis=1) * self.lengths

    def matrix(self, alpha: float):
        n = len(self.nodes)
        w = self.weights(alpha)
        i, j = self.edges.T
        return coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                          shape=(n, n)).tocsr()


def _in_side(curve: JordanCurve, side: str, w: np.ndarray) -> np.ndarray:
    inside = curve.contains(w)
    return inside if side == "interior" else ~inside


def _check_points(curve, side, pts):
    d = curve.distance(pts)
    ok = _in_side(curve, side, pts) & (d > curve.snap_tol)
    if not np.all(ok):
        raise OutsideDomain("query point not strictly inside the chosen side")
    return d


def build_graph(curve: JordanCurve, side: str, mesh_h: float, extra=(), min_dist: float | None = None,
                pad: float = 1.0) -> DensityGraph:
    """Lattice of spacing mesh_h clipped to the side, plus dyadic rings near the curve."""
    extra = np.atleast_1d(np.asarray(extra, dtype=complex))
    h = float(mesh_h)
    x0, y0 = curve.vertices.min(axis=0)
    x1, y1 = curve.vertices.max(axis=0)
    if side == "exterior":
        m = pad * curve.diameter
        x0, y0, x1, y1 = x0 - m, y0 - m, x1 + m, y1 + m
    xs = np.arange(np.floor(x0 / h), np.ceil(x1 / h) + 1) * h
    ys = np.arange(np.floor(y0 / h), np.ceil(y1 / h) + 1) * h
    X, Y = np.meshgrid(xs, ys)
    lat = (X + 1j * Y).ravel()
    keep = _in_side(curve, side, lat) & (curve.distance(lat) >= 0.5 * h)
    lat = lat[keep]
    # rings at distances h/2, h/4, ... down to min_dist
    if min_dist is None:
        min_dist = h / 8
    rings, ring_sp = [], []
    poly = shapely.Polygon(curve.vertices)
    delta = h / 2
    while True:
        off = poly.buffer(-delta if side == "interior" else delta, quad_segs=8, join_style="round")
        geoms = getattr(off, "geoms", [off])
        for g in geoms:
            if g.is_empty:
                continue
            ring = g.exterior
            n = max(8, int(np.ceil(ring.length / delta)))
            pts = shapely.line_interpolate_point(ring, np.linspace(0, ring.length, n, endpoint=False))
            xy = shapely.get_coordinates(pts)
            rings.append(xy[:, 0] + 1j * xy[:, 1])
            ring_sp.append(np.full(n, ring.length / n))
        if delta <= min_dist:
            break
        delta /= 2
    ring_nodes = np.concatenate(rings) if rings else np.zeros(0, complex)
    ring_spacing = np.concatenate(ring_sp) if ring_sp else np.zeros(0)
    if side == "exterior" and ring_nodes.size:
        box = (ring_nodes.real >= x0) & (ring_nodes.real <= x1) & (ring_nodes.imag >= y0) & (ring_nodes.imag <= y1)
        ring_nodes, ring_spacing = ring_nodes[box], ring_spacing[box]
    # query points first, each linked at the scale of its own distance to the curve
    ed = curve.distance(extra) if extra.size else np.zeros(0)
    extra_sp = np.minimum(h, np.maximum(ed, 1e-300))
    nodes = np.concatenate([extra, lat, ring_nodes])
    spacing = np.concatenate([extra_sp, np.full(lat.size, h), ring_spacing])
    tree = cKDTree(np.column_stack([nodes.real, nodes.imag]))
    nbrs = tree.query_ball_point(np.column_stack([nodes.real, nodes.imag]), NEIGHBOR_RADIUS * spacing)
    src = np.repeat(np.arange(len(nodes)), [len(v) for v in nbrs])
    dst = np.concatenate([np.asarray(v, dtype=int) for v in nbrs]) if len(nbrs) else np.zeros(0, int)
    pair = np.unique(np.sort(np.column_stack([src, dst]), axis=1), axis=0)
    pair = pair[pair[:, 0] != pair[:, 1]]
    a, b = nodes[pair[:, 0]], nodes[pair[:, 1]]
    t = (np.arange(N_SUB) + 0.5) / N_SUB
    sub = a[:, None] + t[None, :] * (b - a)[:, None]
    dist = curve.distance(sub)
    inside = _in_side(curve, side, sub.ravel()).reshape(sub.shape)
    ok = np.all(inside & (dist > 0), axis=1)
    return DensityGraph(nodes, spacing, pair[ok], np.abs(b - a)[ok], dist[ok], h, n_fixed=extra.size)


def _graph_distance(curve, side, z1, z2, mesh_h, alpha):
    pts = np.array([as_complex(z1), as_complex(z2)], dtype=complex)
    d = _check_points(curve, side, pts)
    if pts[0] == pts[1]:
        return 0.0
    g = build_graph(curve, side, mesh_h, extra=pts, min_dist=min(mesh_h / 8, 0.5 * d.min()))
    dist = dijkstra(g.matrix(alpha), directed=False, indices=0)
    val = dist[1]
    if not np.isfinite(val):
        raise DisconnectedGraph("query points are not connected in the graph")
    return float(val)


def quasihyperbolic_distance(curve, side, z1, z2, mesh_h) -> float:
    return _graph_distance(curve, side, z1, z2, mesh_h, 0.0)


def subhyperbolic_distance(curve, side, alpha, z1, z2, mesh_h) -> float:
    if not 0 < alpha < 1:
        raise BadAlpha(f"alpha must lie in (0, 1), got {alpha}")
    return _graph_distance(curve, side, z1, z2, mesh_h, alpha)


@dataclass
class SubhypReport:
    alpha: float
    C_est: float
    pair_samples: int
    mesh_h: float
    go_ratio: float  # max d_qh / log(1 + |z1 - z2| / min dist)
    rows: list = field(default_factory=list)  # (pair_id, |z1 - z2|, d_alpha, ratio)


def sample_domain_points(curve, side, n, rng, min_rel: float = 0.02):
    """Rejection sampling inside the side, away from the curve by min_rel * diameter."""
    x0, y0 = curve.vertices.min(axis=0)
    x1, y1 = curve.vertices.max(axis=0)
    if side == "exterior":
        m = 0.5 * curve.diameter
        x0, y0, x1, y1 = x0 - m, y0 - m, x1 + m, y1 + m
    out = []
    while sum(len(o) for o in out) < n:
        w = rng.uniform(x0, x1, 4 * n) + 1j * rng.uniform(y0, y1, 4 * n)
        ok = _in_side(curve, side, w) & (curve.distance(w) > min_rel * curve.diameter)
        out.append(w[ok])
    return np.concatenate(out)[:n]


def classify_subhyperbolic(curve, side, alpha, n_pairs, mesh_h, seed: int = 0, min_rel: float = 0.02) -> SubhypReport:
    if not 0 < alpha < 1:
        raise BadAlpha(f"alpha must lie in (0, 1), got {alpha}")
    if n_pairs < 1:
        raise TooFewSamples("need at least one pair")
    rng = np.random.default_rng(seed)
    pts = sample_domain_points(curve, side, 2 * n_pairs, rng, min_rel)
    z1, z2 = pts[:n_pairs], pts[n_pairs:]
    d = curve.distance(pts)
    g = build_graph(curve, side, mesh_h, extra=pts, min_dist=min(mesh_h / 8, 0.5 * d.min()))
    da = dijkstra(g.matrix(alpha), directed=False, indices=np.arange(n_pairs))
    dq = dijkstra(g.matrix(0.0), directed=False, indices=np.arange(n_pairs))
    idx = np.arange(n_pairs)
    dal = da[idx, n_pairs + idx]
    dqh = dq[idx, n_pairs + idx]
    if not np.all(np.isfinite(dal)):
        raise DisconnectedGraph("some sample pairs are not connected")
    sep = np.abs(z1 - z2)
    ratio = dal / sep ** alpha
    jd = np.log1p(sep / np.minimum(d[:n_pairs], d[n_pairs:]))
    rows = [(int(i), float(sep[i]), float(dal[i]), float(ratio[i])) for i in idx]
    return SubhypReport(alpha, float(ratio.max()), n_pairs, mesh_h, float(np.max(dqh / jd)), rows)
