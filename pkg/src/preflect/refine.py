"""Balanced shadow refinement of the reflected partition, census and neighbor audits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely

from .curve_core import ArcPartition, BoundaryArc, JordanCurve
from .errors import EmptyShadow
from .reflect import StableReflection
from .whitney import PartitionRect, rect_id

TWO_PI = 2 * np.pi


# arc geometry ---------------------------------------------------------------

def _arc_points(curve: JordanCurve, s0: float, s1: float) -> tuple[np.ndarray, np.ndarray]:
    """Params and points of the vertices strictly inside (s0, s1), plus both ends."""
    L = curve.length
    knots = curve.cumulative_length[:-1]
    reps = np.floor(s0 / L) + np.arange(0, int(np.ceil((s1 - s0) / L)) + 2)
    inner = (knots[None, :] + L * reps[:, None]).ravel()
    inner = np.sort(inner[(inner > s0) & (inner < s1)])
    s = np.concatenate([[s0], inner, [s1]])
    return s, curve.point_at(s)


def next_cut(curve: JordanCurve, x: float, b: float, ell: float, iters: int = 60) -> float | None:
    """First parameter y in (x, b] with diam(curve[x, y]) = ell, or None.

    The diameter of a growing arc is nondecreasing, so we walk the vertices
    to find the edge where it first reaches ell and bisect inside that edge;
    the first (smallest) solution is returned.
    """
    s, z = _arc_points(curve, x, b)
    # running diameter at each arc vertex
    D = np.abs(z[:, None] - z[None, :])
    run = np.maximum.accumulate(np.tril(D).max(axis=1))
    j = int(np.searchsorted(run, ell, side="left"))
    if j >= s.size:
        return None
    if j == 0:
        return float(s[0])
    prev, w = run[j - 1], z[:j]
    lo, hi = s[j - 1], s[j]
    a, bb = z[j - 1], z[j]
    if prev >= ell:
        return float(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        y = a + (mid - s[j - 1]) / (s[j] - s[j - 1]) * (bb - a)
        if max(prev, float(np.abs(y - w).max())) >= ell:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-14 * max(1.0, abs(hi)):
            break
    return float(hi)


def _merge_tail(cuts: list, b: float) -> list:
    # cuts = [x_0, ..., x_m]; the tail [x_m, b] failed the rule
    if cuts[-1] >= b:
        return cuts
    if len(cuts) >= 2:
        cuts[-1] = b  # glue the short tail onto the last full piece
    else:
        cuts.append(b)
    return cuts


def balanced_shadow_partition(shadow: BoundaryArc, step) -> ArcPartition:
    """Greedy partition of a shadow arc.

    step(params) gives the target diameter at each cut point; for a reflected
    rectangle it is the length of the interior ray from the cut to the upper
    edge of the preimage rectangle.
    """
    if shadow is None or shadow.length <= 0:
        raise EmptyShadow("shadow arc is empty")
    a, b = shadow.start_param, shadow.end_param
    cuts = [a]
    while True:
        ell = float(np.atleast_1d(step(np.array([cuts[-1]])))[0])
        y = next_cut(shadow.curve, cuts[-1], b, ell)
        if y is None:
            break
        cuts.append(y)
        if y >= b:
            break
    cuts = _merge_tail(cuts, b)
    return ArcPartition([BoundaryArc(shadow.curve, u, v) for u, v in zip(cuts[:-1], cuts[1:])])


# refinement -----------------------------------------------------------------

def interior_step(refl: StableReflection, level: int):
    """Length of the interior ray from a curve point to the upper edge of a level cell."""
    col = refl.level_index(level + 1)

    def step(params):
        th = refl.interior.angle_of_param(np.asarray(params))
        idx = refl.rays(th)
        return refl.Lint[idx, col]

    return step


def shadow_refinement(refl: StableReflection, qrects, n_edge: int = 17) -> list[PartitionRect]:
    """Split every Q along its balanced shadow partition (family Qref).

    All rectangles advance their greedy walk in lockstep so that new rays are
    built in batches.
    """
    qrects = list(qrects)
    I = refl.interior
    curve = refl.curve
    state = []
    for q in qrects:
        if q.shadow is None or q.shadow.length <= 0:
            raise EmptyShadow(f"{q.id} has an empty shadow")
        state.append({"q": q, "cuts": [q.shadow.start_param], "open": True})
    while True:
        act = [st for st in state if st["open"]]
        if not act:
            break
        x = np.array([st["cuts"][-1] for st in act])
        lv = np.array([st["q"].level for st in act])
        idx = refl.rays(I.angle_of_param(x))
        cols = np.array([refl.level_index(k + 1) for k in lv])
        ell = refl.Lint[idx, cols]
        for st, e in zip(act, ell):
            b = st["q"].shadow.end_param
            y = next_cut(curve, st["cuts"][-1], b, float(e))
            if y is None:
                st["open"] = False
            else:
                st["cuts"].append(y)
                if y >= b:
                    st["open"] = False
    for st in state:
        st["cuts"] = _merge_tail(st["cuts"], st["q"].shadow.end_param)
    return _build_children(refl, state, n_edge)


def _build_children(refl, state, n_edge):
    I = refl.interior
    tt, th_all = [], []
    u = np.linspace(0, 1, n_edge)
    for st in state:
        c = st["q"].meta["cell"]
        cuts = np.asarray(st["cuts"])
        ang = I.angle_of_param(cuts)
        ang[0], ang[-1] = c.th_lo, c.th_hi  # keep the dyadic ends exact
        st["ang"] = ang
        r = c.r_hi + u * (c.r_lo - c.r_hi)
        for a in ang:
            tt.append(r)
            th_all.append(np.full(n_edge, a))
        tt.append(np.full(ang.size, c.r_hi))
        th_all.append(ang)
        tt.append(np.full(ang.size, c.r_lo))
        th_all.append(ang)
    R, te = refl.reflect_polar(np.concatenate(tt), np.concatenate(th_all))
    pts = refl.point(R, te)
    out = []
    pos = 0
    for st in state:
        q, ang = st["q"], st["ang"]
        c = q.meta["cell"]
        m = ang.size
        vert = pts[pos:pos + m * n_edge].reshape(m, n_edge)
        vR = R[pos:pos + m * n_edge].reshape(m, n_edge)
        pos += m * n_edge
        top, topR = pts[pos:pos + m], R[pos:pos + m]
        pos += m
        bot, botR = pts[pos:pos + m], R[pos:pos + m]
        pos += m
        te_c = te[pos - m:pos]
        th_q = c.th_lo + u * (c.th_hi - c.th_lo)
        kids = []
        for i in range(m - 1):
            inside = (th_q > ang[i]) & (th_q < ang[i + 1])
            he = np.concatenate([[top[i]], q.he[inside], [top[i + 1]]])
            hf = np.concatenate([[bot[i]], q.he_flat[inside], [bot[i + 1]]])
            rid = rect_id("Qref", c.k, c.j, i)
            kid = PartitionRect(
                id=rid, family="Qref", level=c.k, index=c.j,
                he=he, he_flat=hf, left=vert[i], right=vert[i + 1],
                shadow=BoundaryArc(refl.curve, st["cuts"][i], st["cuts"][i + 1]),
                parent=q.id, grandparent=q.partner,
                meta={"cell": c, "child": i, "theta_t": (ang[i], ang[i + 1]),
                      "theta_e": (te_c[i], te_c[i + 1]),
                      "R_top": (topR[i], topR[i + 1]), "R_bot": (botR[i], botR[i + 1]),
                      "R_left": vR[i], "R_right": vR[i + 1]},
            )
            kids.append(kid)
        q.children = [k.id for k in kids]
        q.meta["cuts"] = np.asarray(st["cuts"])
        q.meta["cut_theta_t"] = ang
        q.meta["cut_theta_e"] = te_c
        out.extend(kids)
    return out


# audits ---------------------------------------------------------------------

@dataclass
class BalanceAudit:
    rect_id: str
    min_ratio: float
    max_ratio: float


@dataclass
class LargeChildCensus:
    parent_id: str
    histogram: dict = field(default_factory=dict)

    @property
    def max_count(self) -> int:
        return max(self.histogram.values()) if self.histogram else 0


def interior_tails(refl: StableReflection, theta_t, cols) -> np.ndarray:
    """Weighted tails from grid column cols to the curve, without caching the rays.

    Only the part of each ray beyond its column is evaluated.
    """
    th = np.asarray(theta_t, dtype=float)
    cols = np.asarray(cols)
    I = refl.interior
    T = refl.t_grid
    out = np.empty(th.size)
    for col in np.unique(cols):
        m = cols == col
        z = refl.curve.point_at(I.param_of_angle(th[m]))
        P = I.forward(T[None, col:-1] * np.exp(1j * th[m, None]))
        P = np.concatenate([P, z[:, None]], axis=1)
        out[m] = refl._tails(P)[:, 0]
    return out


def balance_audit(refl: StableReflection, qref, n_samples: int = 16) -> list[BalanceAudit]:
    """diam(S(R)) over the exterior ray length from z to R, for sampled z in S(R).

    The exterior ray from z first meets R on its upper edge, whose distance
    along the ray is the target length of h at the upper level radius.
    """
    qref = list(qref)
    u = (np.arange(n_samples) + 0.5) / n_samples
    th, cols, diam = [], [], []
    for r in qref:
        a, b = r.meta["theta_t"]
        th.append(a + u * (b - a))
        cols.append(np.full(n_samples, refl.level_index(r.level + 1)))
        diam.append(r.shadow.diameter)
    if not qref:
        return []
    th = np.concatenate(th)
    cols = np.concatenate(cols)
    W = np.concatenate([interior_tails(refl, th[i:i + 8192], cols[i:i + 8192])
                        for i in range(0, th.size, 8192)])
    ell = refl.target_length(W).reshape(len(qref), n_samples)
    ratio = np.asarray(diam)[:, None] / ell
    return [BalanceAudit(r.id, float(lo), float(hi)) for r, lo, hi in zip(qref, ratio.min(1), ratio.max(1))]


def k_large_census(qref, parent: PartitionRect, dist_qt: float) -> LargeChildCensus:
    hist: dict[int, int] = {}
    kids = [r for r in qref if r.parent == parent.id]
    for r in kids:
        k = int(np.floor(np.log2(r.shadow.diameter / dist_qt)))
        hist[k] = hist.get(k, 0) + 1
    return LargeChildCensus(parent.id, dict(sorted(hist.items())))


def neighbor_graph(rects, rel_tol: float = 1e-6) -> dict:
    """Adjacency of closures. Touching rectangles share exact corner points, and
    their sampled edges along a common level curve cross; the tolerance only
    absorbs rounding, so nearby but disjoint cuts are not merged."""
    rects = list(rects)
    polys = [r.polygon() for r in rects]
    tree = shapely.STRtree(polys)
    diam = np.array([r.diameter for r in rects])
    adj = {r.id: set() for r in rects}
    for i, (r, p) in enumerate(zip(rects, polys)):
        tol = rel_tol * diam[i]
        for j in tree.query(p, predicate="dwithin", distance=tol):
            if j != i:
                adj[r.id].add(rects[j].id)
                adj[rects[j].id].add(r.id)
    return {k: sorted(v) for k, v in adj.items()}


def _edge_intervals(rect: PartitionRect):
    """Angular intervals of the edge nearer the curve and of the other one,
    in the rectangle's own polar coordinate."""
    m = rect.meta
    if "mu" in m:
        c = m["cell"]
        w = c.th_hi - c.th_lo
        c0, c1, g0, g1 = m["mu"]
        return (c.th_lo + c0 * w, c.th_lo + c1 * w), (c.th_lo + g0 * w, c.th_lo + g1 * w)
    iv = m["theta_t"] if "theta_t" in m else m["theta_e"]
    return tuple(iv), tuple(iv)


def _touch(a, b, tol) -> bool:
    # closed arcs on the circle
    for s in (-TWO_PI, 0.0, TWO_PI):
        if a[0] <= b[1] + s + tol and b[0] + s <= a[1] + tol:
            return True
    return False


def polar_neighbor_graph(rects, rel_tol: float = 1e-12) -> dict:
    """Exact adjacency for the collar families (Qref, Qtref, Wref).

    Each rectangle is the homeomorphic image of a polar rectangle between two
    level circles, so closures meet iff the level ranges are consecutive and
    the angular intervals on the shared circle meet; within a level only the
    cyclic successor shares a vertical edge.
    """
    rects = list(rects)
    adj = {r.id: set() for r in rects}
    by_level: dict = {}
    for r in rects:
        by_level.setdefault(r.level, []).append(r)
    tol = rel_tol * TWO_PI
    for k, rs in by_level.items():
        rs = sorted(rs, key=lambda r: _edge_intervals(r)[0][0])
        for a, b in zip(rs, rs[1:] + rs[:1]):
            if a is not b:
                adj[a.id].add(b.id)
                adj[b.id].add(a.id)
        ups = by_level.get(k + 1, [])
        for a in rs:
            he = _edge_intervals(a)[0]
            for b in ups:
                if _touch(he, _edge_intervals(b)[1], tol):
                    adj[a.id].add(b.id)
                    adj[b.id].add(a.id)
    return {k: sorted(v) for k, v in adj.items()}


def neighbor_audit(rects, adj: dict) -> dict:
    by_id = {r.id: r for r in rects}
    deg = [len(v) for v in adj.values()]
    ratios = [by_id[a].shadow.diameter / by_id[b].shadow.diameter for a, nb in adj.items() for b in nb]
    return {"max_degree": int(max(deg)) if deg else 0,
            "shadow_ratio_max": float(max(ratios)) if ratios else 1.0,
            "symmetric": all(a in adj[b] for a, nb in adj.items() for b in nb)}


def size_audit(refl: StableReflection, qref, dist_qt: dict) -> dict:
    """Two-sided bands for diam(S(R)) ~ dist(R), diam(R) ~ dist(R), the
    lower bound diam(S(R)) >= c dist(Qt), and the ray-piece power law."""
    curve = refl.curve
    a, b, c, d = [], [], [], []
    p = refl.p
    for r in qref:
        dr = r.dist_to(curve)
        dq = dist_qt[r.grandparent]
        ds = r.shadow.diameter
        a.append(ds / dr)
        b.append(r.diameter / dr)
        c.append(ds / dq)
        piece = np.sum(np.abs(np.diff(r.left)))
        d.append(piece / ((dr / dq) ** (p - 1) * dq))
    band = lambda v: [float(np.min(v)), float(np.max(v))]  # noqa: E731
    return {"shadow_over_dist": band(a), "diam_over_dist": band(b), "large_c": float(np.min(c)),
            "size_power_band": band(d)}

