"""Edge partitions of the horizontal edges, the interpolation refinement,
rectangle charts and the Lipschitz partition of the exterior collar."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curve_core import point_set_diameter
from .errors import (
    BadEpsilon,
    BadExponent,
    CountMismatch,
    DegenerateRect,
    MalformedRect,
    MarkedPointConflict,
    MissingNeighborPartition,
)
from .reflect import StableReflection
from .whitney import AnnulusCell, PartitionRect, rect_id

TWO_PI = 2 * np.pi
MAX_DEPTH = 6  # at most 64 linear pieces between consecutive marked points


@dataclass
class EdgePartition:
    """Breakpoints are arclengths measured from the start of the edge."""

    edge: np.ndarray
    breakpoints: np.ndarray
    labels: list
    kind: str
    offset: float = 0.0  # absolute arclength of the edge start on its level curve

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b.size < 2 or np.any(np.diff(b) <= 0):
            raise MalformedRect("breakpoints must increase strictly")
        if len(self.labels) != b.size - 1:
            raise CountMismatch("one label per piece")
        self.breakpoints = b

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def absolute(self) -> np.ndarray:
        return self.offset + self.breakpoints


class CircleTable:
    """Arclength along the image of a level circle as a function of the disk angle."""

    def __init__(self, angles: np.ndarray, points: np.ndarray):
        self.angles = np.asarray(angles, dtype=float)
        self.points = np.asarray(points, dtype=complex)
        self.s = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(self.points)))])

    def s_of(self, theta) -> np.ndarray:
        return np.interp(theta, self.angles, self.s)

    def theta_of(self, s) -> np.ndarray:
        return np.interp(s, self.s, self.angles)

    def point_of(self, theta) -> np.ndarray:
        # linear along the tabulated polyline, consistent with s_of
        i = np.clip(np.searchsorted(self.angles, theta, side="right") - 1, 0, self.angles.size - 2)
        w = (np.asarray(theta) - self.angles[i]) / (self.angles[i + 1] - self.angles[i])
        return self.points[i] + w * (self.points[i + 1] - self.points[i])


def interior_circle_table(refl: StableReflection, m: int, per_cell: int = 32) -> CircleTable:
    n = per_cell * 2 ** (m + 1)
    th = np.linspace(0.0, TWO_PI, n + 1)
    t = 1 - 2.0 ** -m
    return CircleTable(th, refl.interior.forward(t * np.exp(1j * th)))


# partitions of horizontal edges ---------------------------------------------

def horizontal_edges(rect: PartitionRect):
    """(HE, HE_flat) and the ids of the two upper neighbors."""
    c = rect.meta.get("cell")
    if c is None or rect.he is None or rect.he_flat is None:
        raise MalformedRect(f"{rect.id} lacks cell structure")
    up = [rect_id(rect.family, n.k, n.j) for n in c.upper_neighbors()]
    return rect.he, rect.he_flat, up


def geometric_lengths(edge_length: float, dist_qt: float, child_diams, p: float, r: float) -> np.ndarray:
    """Piece lengths proportional to (dist/diam)^((p-r)/(r-1)), summing to edge_length."""
    if not 1 < r < p:
        raise BadExponent(f"need 1 < r < p, got r={r}, p={p}")
    d = np.asarray(child_diams, dtype=float)
    w = (dist_qt / d) ** ((p - r) / (r - 1))
    return edge_length * w / w.sum()


def geometric_reparam(edge: np.ndarray, edge_length: float, dist_qt: float, child_diams, p: float,
                      r: float, labels=None, offset: float = 0.0) -> EdgePartition:
    ln = geometric_lengths(edge_length, dist_qt, child_diams, p, r)
    b = np.concatenate([[0.0], np.cumsum(ln)])
    b[-1] = edge_length
    labels = list(labels) if labels is not None else list(range(ln.size))
    return EdgePartition(edge, b, labels, "geometric", offset)


def combinatorial_lengths(tau_lengths, tau_bounds, child_bounds, piece_diam) -> tuple[np.ndarray, list]:
    """Split each tau piece among the children meeting it, proportionally to
    the diameters of the image pieces.

    tau_bounds and child_bounds are increasing exterior angles (len n+1)
    sharing their first and last values. Returns breakpoints (relative
    arclength) for the children cuts.
    """
    tb = np.asarray(tau_bounds, dtype=float)
    cb = np.asarray(child_bounds, dtype=float)
    tl = np.asarray(tau_lengths, dtype=float)
    if tl.size != tb.size - 1:
        raise MissingNeighborPartition("tau lengths and bounds disagree")
    scale = max(abs(tb[-1] - tb[0]), 1e-300)
    if abs(tb[0] - cb[0]) > 1e-9 * scale or abs(tb[-1] - cb[-1]) > 1e-9 * scale:
        raise MarkedPointConflict("partitions do not span the same edge")
    starts = np.concatenate([[0.0], np.cumsum(tl)])
    cuts = [0.0]
    owner = []
    for l in range(tl.size):
        lo, hi = tb[l], tb[l + 1]
        inner = cb[(cb > lo + 1e-12 * scale) & (cb < hi - 1e-12 * scale)]
        if inner.size:
            ends = np.concatenate([[lo], inner, [hi]])
            diams = np.array([piece_diam(a, b) for a, b in zip(ends[:-1], ends[1:])])
            frac = np.cumsum(diams)[:-1] / diams.sum()
            cuts.extend(starts[l] + tl[l] * frac)
        # otherwise a single child covers tau: identity on tau
        owner.append(l)
        if l < tl.size - 1 and np.any(np.abs(cb - hi) <= 1e-12 * scale):
            cuts.append(starts[l + 1])  # a child cut sitting on the tau end
    cuts.append(starts[-1])
    return np.asarray(cuts), owner


def combinatorial_reparam(edge, tau_lengths, tau_bounds, child_bounds, piece_diam, labels=None,
                          offset: float = 0.0) -> EdgePartition:
    b, _ = combinatorial_lengths(tau_lengths, tau_bounds, child_bounds, piece_diam)
    n = len(child_bounds) - 1
    if b.size - 1 != n:
        raise CountMismatch(f"{b.size - 1} pieces for {n} children")
    labels = list(labels) if labels is not None else list(range(n))
    return EdgePartition(edge, b, labels, "combinatorial", offset)


# the square chart of a preimage cell ------------------------------------------

def mu_to_polar(cell: AnnulusCell, x, y):
    """Unit-square chart of a cell: x normalized angle, y normalized log-radius
    (0 on the edge nearer the curve)."""
    th = cell.th_lo + np.asarray(x) * (cell.th_hi - cell.th_lo)
    t = cell.r_hi * (cell.r_lo / cell.r_hi) ** np.asarray(y)
    return t, th


def polar_to_mu(cell: AnnulusCell, t, th):
    x = (np.asarray(th) - cell.th_lo) / (cell.th_hi - cell.th_lo)
    y = np.log(np.asarray(t) / cell.r_hi) / np.log(cell.r_lo / cell.r_hi)
    return x, y


# charts -------------------------------------------------------------------------

@dataclass
class RectChart:
    rect_id: str
    width: float
    height: float
    forward: object  # plane point -> chart (complex X + iY)
    inverse: object  # chart -> plane point
    bilip_estimate: float = float("nan")

    def measure(self, n: int = 9) -> float:
        u = np.linspace(0.0, 1.0, n)
        X, Y = np.meshgrid(u * self.width, u * self.height)
        c = (X + 1j * Y).ravel()
        z = self.inverse(c)
        i, j = np.triu_indices(c.size, 1)
        dc, dz = np.abs(c[i] - c[j]), np.abs(z[i] - z[j])
        ok = dz > 0
        ratio = dc[ok] / dz[ok]
        self.bilip_estimate = float(max(ratio.max(), 1 / ratio.min()))
        return self.bilip_estimate


def _coons_chart(rect: PartitionRect) -> RectChart:
    """Bilinear chart from the four corners, for rectangles without collar data."""
    p00, p10 = rect.he[0], rect.he[-1]
    p01, p11 = rect.he_flat[0], rect.he_flat[-1]
    w = float(np.sum(np.abs(np.diff(rect.he))))
    h = float(np.sum(np.abs(np.diff(rect.left))))
    if w <= 1e-14 * max(h, 1.0) or h <= 1e-14 * max(w, 1.0):
        raise DegenerateRect(f"{rect.id} has a zero-length side")

    def inv(c):
        u, v = np.real(c) / w, np.imag(c) / h
        return (1 - u) * (1 - v) * p00 + u * (1 - v) * p10 + (1 - u) * v * p01 + u * v * p11

    def fwd(z, iters=30):
        c = np.full(np.shape(z), 0.5 * w + 0.5j * h)
        for _ in range(iters):
            # Newton on the bilinear map
            u, v = np.real(c) / w, np.imag(c) / h
            r = inv(c) - z
            du = ((1 - v) * (p10 - p00) + v * (p11 - p01)) / w
            dv = ((1 - u) * (p01 - p00) + u * (p11 - p10)) / h
            det = (np.conj(du) * dv).imag
            dx = (np.real(r) * dv.imag - np.imag(r) * dv.real) / det
            dy = (np.imag(r) * du.real - np.real(r) * du.imag) / det
            c = c - (dx + 1j * dy)
        return c

    ch = RectChart(rect.id, w, h, fwd, inv)
    ch.measure()
    return ch


def rect_chart(rect: PartitionRect, mesh=None) -> RectChart:
    """Chart of a rectangle onto [0, width] x [0, height], edge nearer the curve at height 0."""
    if mesh is not None and rect.family == "Qtref":
        return mesh.source_chart(rect)
    if mesh is not None and rect.family == "Wref":
        return mesh.target_chart(rect)
    return _coons_chart(rect)


# Lipschitz level curves ---------------------------------------------------------

@dataclass
class WCurve:
    """Piecewise-linear log-radius over the exterior angle, through its knots."""

    m: int
    theta: np.ndarray
    rho: np.ndarray
    marked: np.ndarray  # boolean mask of marked knots
    table: CircleTable | None = None

    def __call__(self, th) -> np.ndarray:
        return np.interp(th, self.theta, self.rho)

    def slope(self, th) -> np.ndarray:
        i = np.clip(np.searchsorted(self.theta, th, side="right") - 1, 0, self.theta.size - 2)
        return (self.rho[i + 1] - self.rho[i]) / (self.theta[i + 1] - self.theta[i])

    def build_table(self, exterior, sub: int = 8):
        th = np.concatenate([np.linspace(a, b, sub, endpoint=False) for a, b in zip(self.theta[:-1], self.theta[1:])]
                            + [self.theta[-1:]])
        self.table = CircleTable(th, exterior.forward(np.exp(self(th) + 1j * th)))
        return self.table


def _exterior_to_interior(refl: StableReflection, th):
    return refl.interior.angle_of_param(refl.exterior.param_of_angle(th))


def fit_level_curve(refl: StableReflection, m: int, knot_th, knot_te, eps: float,
                    max_depth: int = MAX_DEPTH) -> tuple[WCurve, dict]:
    """Adaptive piecewise-linear fit of the reflected level curve t = 1 - 2^-m.

    Knots start at the marked points (exterior angles knot_te, interior
    angles knot_th). A dyadic midpoint is inserted while the log-radius
    misses the true curve by more than eps times the local cell height.
    """
    if not 0 < eps < 1 / 9:
        raise BadEpsilon(f"eps must lie in (0, 1/9), got {eps}")
    order = np.argsort(knot_te)
    te = np.asarray(knot_te, float)[order]
    th = np.asarray(knot_th, float)[order]
    keep = np.concatenate([[True], np.diff(te) > 1e-13])
    te, th = te[keep], th[keep]
    t_m, t_n = 1 - 2.0 ** -m, 1 - 2.0 ** -(m + 1)
    R, _ = refl.reflect_polar(np.full(te.size, t_m), th)
    Rn, _ = refl.reflect_polar(np.full(te.size, t_n), th)
    rho = np.log(R)
    hgt = rho - np.log(Rn)
    knots = {float(a): (float(b), True) for a, b in zip(te, rho)}
    # intervals as (left, right) pairs of exterior angles
    lo, hi = te[:-1], te[1:]
    tol = eps * np.minimum(hgt[:-1], hgt[1:])
    rl, rh = rho[:-1], rho[1:]
    worst = 0.0
    for depth in range(max_depth + 1):
        if lo.size == 0:
            break
        mid = 0.5 * (lo + hi)
        Rm, _ = refl.reflect_polar(np.full(mid.size, t_m), _exterior_to_interior(refl, mid))
        gm = np.log(Rm)
        dev = np.abs(gm - 0.5 * (rl + rh))
        bad = dev > tol
        if depth == max_depth:
            worst = float(np.max(dev / tol)) if dev.size else 0.0
            break
        for a, g in zip(mid[bad], gm[bad]):
            knots[float(a)] = (float(g), False)
        lo, hi, rl, rh, tol, mid, gm = lo[bad], hi[bad], rl[bad], rh[bad], tol[bad], mid[bad], gm[bad]
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        rl, rh = np.concatenate([rl, gm]), np.concatenate([gm, rh])
        tol = np.concatenate([tol, tol])
    ks = np.array(sorted(knots))
    vals = np.array([knots[k][0] for k in ks])
    marked = np.array([knots[k][1] for k in ks])
    w = WCurve(m, ks, vals, marked)
    return w, {"level": m, "knots": int(ks.size), "marked": int(marked.sum()),
               "budget_exceeded_ratio": worst}


# the collar mesh ---------------------------------------------------------------

@dataclass
class CollarMesh:
    refl: StableReflection
    k_max: int
    p: float
    r: float
    qt: dict = field(default_factory=dict)
    q: dict = field(default_factory=dict)
    qref: dict = field(default_factory=dict)  # (k, j) -> ordered children
    dist_qt: dict = field(default_factory=dict)
    circles: dict = field(default_factory=dict)
    geom: dict = field(default_factory=dict)
    comb: dict = field(default_factory=dict)
    qtref: dict = field(default_factory=dict)
    wcurves: dict = field(default_factory=dict)
    wref: dict = field(default_factory=dict)
    dims: dict = field(default_factory=dict)  # child id -> (d_tilde, d, w_tilde, H)
    audits: dict = field(default_factory=dict)

    @property
    def levels(self):
        return range(1, self.k_max + 1)

    def children(self, k, j):
        return self.qref[(k, j)]

    # level-curve points of the reflected partition, sorted by exterior angle
    def level_points(self, m: int):
        """Exact points of h on t = 1 - 2^-m known from the partition, as (theta_e, point)."""
        th, pts = [], []
        for (k, j), q in self.q.items():
            if k == m - 1:
                th.append(q.meta["theta_e"])
                pts.append(q.he)
                for r in self.qref[(k, j)]:
                    th.append(np.array(r.meta["theta_e"]))
                    pts.append(np.array([r.he[0], r.he[-1]]))
            if k == m:
                for r in self.qref[(k, j)]:
                    th.append(np.array(r.meta["theta_e"]))
                    pts.append(np.array([r.he_flat[0], r.he_flat[-1]]))
        th = np.concatenate(th)
        pts = np.concatenate(pts)
        o = np.argsort(th, kind="stable")
        return th[o], pts[o]

    # chart helpers
    def source_chart(self, rt: PartitionRect) -> RectChart:
        m = rt.meta
        cell = m["cell"]
        c0, c1, g0, g1 = m["mu"]
        dtl, _, wt, _ = self.dims[rt.partner]
        I = self.refl.interior

        def inv(c):
            X, Y = np.real(c), np.imag(c)
            y = Y / dtl
            xl = c0 + (g0 - c0) * y
            xr = c1 + (g1 - c1) * y
            x = xl + X / wt * (xr - xl)
            t, th = mu_to_polar(cell, x, y)
            return I.forward(t * np.exp(1j * th))

        def fwd(z):
            zeta = I.inverse(z)
            x, y = polar_to_mu(cell, np.abs(zeta), np.mod(np.angle(zeta) - cell.th_lo, TWO_PI) + cell.th_lo)
            xl = c0 + (g0 - c0) * y
            xr = c1 + (g1 - c1) * y
            return wt * (x - xl) / (xr - xl) + 1j * dtl * y

        ch = RectChart(rt.id, wt, dtl, fwd, inv)
        ch.measure()
        return ch

    def target_chart(self, w: PartitionRect) -> RectChart:
        k = w.level
        a, b = w.meta["theta_e"]
        _, d, _, H = self.dims[w.partner]
        top, bot = self.wcurves[k + 1], self.wcurves[k]
        E = self.refl.exterior

        def inv(c):
            X, Y = np.real(c), np.imag(c)
            th = a + X / d * (b - a)
            g1, g0 = top(th), bot(th)
            return E.forward(np.exp(g1 + Y / H * (g0 - g1) + 1j * th))

        def fwd(z):
            zeta = E.inverse(z)
            th = np.mod(np.angle(zeta) - a + np.pi, TWO_PI) + a - np.pi
            g1, g0 = top(th), bot(th)
            return d * (th - a) / (b - a) + 1j * H * (np.log(np.abs(zeta)) - g1) / (g0 - g1)

        ch = RectChart(w.id, d, H, fwd, inv)
        ch.measure()
        return ch


def _piece_diam_fn(th_sorted, pts_sorted):
    def diam(a, b):
        i0 = np.searchsorted(th_sorted, a - 1e-13, side="left")
        i1 = np.searchsorted(th_sorted, b + 1e-13, side="right")
        return point_set_diameter(pts_sorted[i0:i1])

    return diam


def build_edge_partitions(mesh: CollarMesh):
    """Geometric partitions on every HE_flat (ghost level included), then the
    combinatorial partitions on every HE."""
    refl = mesh.refl
    K = mesh.k_max + 1
    for m in range(1, K + 1):
        mesh.circles[m] = interior_circle_table(refl, m)
    for (k, j), qt in mesh.qt.items():
        cell = qt.meta["cell"]
        tab = mesh.circles[k]
        s0, s1 = tab.s_of(cell.th_lo), tab.s_of(cell.th_hi)
        kids = mesh.qref[(k, j)]
        diams = [point_set_diameter(r.he_flat) for r in kids]
        mesh.geom[(k, j)] = geometric_reparam(qt.he_flat, s1 - s0, mesh.dist_qt[(k, j)], diams, mesh.p, mesh.r,
                                              labels=[r.id for r in kids], offset=s0)
    for k in range(1, K):
        th_sorted, pts_sorted = mesh.level_points(k + 1)
        diam = _piece_diam_fn(th_sorted, pts_sorted)
        for j in range(2 ** (k + 1)):
            qt = mesh.qt[(k, j)]
            cell = qt.meta["cell"]
            ups = cell.upper_neighbors()
            try:
                gp = [mesh.geom[(u.k, u.j)] for u in ups]
            except KeyError as exc:
                raise MissingNeighborPartition(f"no geometric partition for {exc}") from None
            tau_len = np.concatenate([g.lengths for g in gp])
            tau_b = np.concatenate([mesh.q[(ups[0].k, ups[0].j)].meta["cut_theta_e"],
                                    mesh.q[(ups[1].k, ups[1].j)].meta["cut_theta_e"][1:]])
            child_b = mesh.q[(k, j)].meta["cut_theta_e"]
            kids = mesh.qref[(k, j)]
            tab = mesh.circles[k + 1]
            s0 = tab.s_of(cell.th_lo)
            mesh.comb[(k, j)] = combinatorial_reparam(qt.he, tau_len, tau_b, child_b, diam,
                                                      labels=[r.id for r in kids], offset=s0)


def interpolation_refinement(mesh: CollarMesh, k: int, j: int, n_edge: int = 17) -> list[PartitionRect]:
    """Children of Qt(k, j): joins of matched upper and lower pieces in the square chart."""
    qt = mesh.qt[(k, j)]
    cell = qt.meta["cell"]
    comb, geom = mesh.comb[(k, j)], mesh.geom[(k, j)]
    if comb.breakpoints.size != geom.breakpoints.size:
        raise CountMismatch(f"Qt {k},{j}: {comb.breakpoints.size - 1} upper vs {geom.breakpoints.size - 1} lower pieces")
    up_th = mesh.circles[k + 1].theta_of(comb.absolute)
    lo_th = mesh.circles[k].theta_of(geom.absolute)
    cx = (up_th - cell.th_lo) / (cell.th_hi - cell.th_lo)
    gx = (lo_th - cell.th_lo) / (cell.th_hi - cell.th_lo)
    cx[0], cx[-1], gx[0], gx[-1] = 0.0, 1.0, 0.0, 1.0
    u = np.linspace(0.0, 1.0, n_edge)
    I = mesh.refl.interior
    blocks = []
    n = cx.size - 1
    for i in range(n):
        xs = [cx[i] + u * (cx[i + 1] - cx[i]), gx[i] + u * (gx[i + 1] - gx[i]),
              cx[i] + u * (gx[i] - cx[i]), cx[i + 1] + u * (gx[i + 1] - cx[i + 1])]
        ys = [np.zeros(n_edge), np.ones(n_edge), u, u]
        t, th = mu_to_polar(cell, np.concatenate(xs), np.concatenate(ys))
        blocks.append(t * np.exp(1j * th))
    pts = I.forward(np.concatenate(blocks))
    kids = mesh.qref[(k, j)]
    out = []
    for i in range(n):
        b = pts[i * 4 * n_edge:(i + 1) * 4 * n_edge]
        rt = PartitionRect(
            id=rect_id("Qtref", k, j, i), family="Qtref", level=k, index=j,
            he=b[:n_edge], he_flat=b[n_edge:2 * n_edge], left=b[2 * n_edge:3 * n_edge], right=b[3 * n_edge:],
            shadow=kids[i].shadow, parent=qt.id, partner=kids[i].id,
            meta={"cell": cell, "child": i, "mu": (cx[i], cx[i + 1], gx[i], gx[i + 1])},
        )
        out.append(rt)
    qt.children = [r.id for r in out]
    return out


def build_interpolation_refinement(mesh: CollarMesh):
    for (k, j) in mesh.qt:
        if k <= mesh.k_max:
            mesh.qtref[(k, j)] = interpolation_refinement(mesh, k, j)


def chart_dims(mesh: CollarMesh):
    """Target rectangle sizes: Rect(Rt) = [0, wt] x [0, dt], Rect(W) = [0, d] x [0, H]."""
    p, r = mesh.p, mesh.r
    curve = mesh.refl.curve
    for (k, j), kids in mesh.qref.items():
        if k > mesh.k_max:
            continue
        dt = mesh.dist_qt[(k, j)]
        for R in kids:
            d = R.dist_to(curve)
            wt = dt ** ((p - 1) / (r - 1)) * d ** ((r - p) / (r - 1))
            H = d ** (p - 1) * dt ** (2 - p)
            mesh.dims[R.id] = (dt, d, wt, H)


def lipschitz_partition(mesh: CollarMesh, eps: float, n_edge: int = 17) -> list[PartitionRect]:
    """Replace the horizontal edges of every R by the fitted level curves (family Wref)."""
    if not 0 < eps < 1 / 9:
        raise BadEpsilon(f"eps must lie in (0, 1/9), got {eps}")
    refl = mesh.refl
    reports = []
    for m in range(1, mesh.k_max + 2):
        te, th = [], []
        for lvl in (m - 1, m):
            if lvl < 1 or lvl > mesh.k_max:
                continue
            for jj in range(2 ** (lvl + 1)):
                q = mesh.q[(lvl, jj)]
                te.append(q.meta["cut_theta_e"])
                th.append(q.meta["cut_theta_t"])
        if m == mesh.k_max + 1:
            # the ghost level supplies the marks on the top curve
            for jj in range(2 ** (m + 1)):
                q = mesh.q[(m, jj)]
                te.append(q.meta["cut_theta_e"])
                th.append(q.meta["cut_theta_t"])
        w, rep = fit_level_curve(refl, m, np.concatenate(th), np.concatenate(te), eps)
        w.build_table(refl.exterior)
        mesh.wcurves[m] = w
        reports.append(rep)
    mesh.audits["level_curves"] = reports
    out = []
    E = refl.exterior
    u = np.linspace(0.0, 1.0, n_edge)
    for (k, j), kids in mesh.qref.items():
        if k > mesh.k_max:
            continue
        ws = []
        for R in kids:
            a, b = R.meta["theta_e"]
            top, bot = mesh.wcurves[k + 1], mesh.wcurves[k]
            tt = np.unique(np.concatenate([a + u * (b - a), top.theta[(top.theta > a) & (top.theta < b)]]))
            tb = np.unique(np.concatenate([a + u * (b - a), bot.theta[(bot.theta > a) & (bot.theta < b)]]))
            he = E.forward(np.exp(top(tt) + 1j * tt))
            hf = E.forward(np.exp(bot(tb) + 1j * tb))
            he[0], he[-1] = R.left[0], R.right[0]
            hf[0], hf[-1] = R.left[-1], R.right[-1]
            wr = PartitionRect(
                id=rect_id("Wref", k, j, R.meta["child"]), family="Wref", level=k, index=j,
                he=he, he_flat=hf, left=R.left, right=R.right, shadow=R.shadow,
                parent=R.parent, grandparent=R.grandparent, partner=R.id,
                meta={"cell": R.meta["cell"], "child": R.meta["child"], "theta_e": (a, b)},
            )
            ws.append(wr)
        mesh.wref[(k, j)] = ws
        out.extend(ws)
    return out


def lipschitz_audit(mesh: CollarMesh, eps: float, n_test: int = 9) -> dict:
    """Normalized sup-deviation of the fitted curves and plane Hausdorff distance
    between each W and its R, against eps * dist(Qt, curve)."""
    import shapely

    refl = mesh.refl
    worst_norm, worst_haus = 0.0, 0.0
    for (k, j), kids in mesh.qref.items():
        if k > mesh.k_max:
            continue
        dt = mesh.dist_qt[(k, j)]
        for R, W in zip(kids, mesh.wref[(k, j)]):
            a, b = R.meta["theta_e"]
            th = a + (np.arange(n_test) + 0.5) / n_test * (b - a)
            tht = _exterior_to_interior(refl, th)
            t1, t0 = 1 - 2.0 ** -(k + 1), 1 - 2.0 ** -k
            R1, _ = refl.reflect_polar(np.full(th.size, t1), tht)
            R0, _ = refl.reflect_polar(np.full(th.size, t0), tht)
            g1, g0 = np.log(R1), np.log(R0)
            hgt = g0 - g1
            dev = np.maximum(np.abs(mesh.wcurves[k + 1](th) - g1), np.abs(mesh.wcurves[k](th) - g0)) / hgt
            worst_norm = max(worst_norm, float(dev.max()))
            hd = shapely.hausdorff_distance(W.polygon().exterior, R.polygon().exterior, densify=0.25)
            worst_haus = max(worst_haus, float(hd) / (eps * dt))
    return {"normalized_deviation_max": worst_norm, "hausdorff_over_eps_dist_max": worst_haus}


def build_mesh(refl: StableReflection, k_max: int, r: float, ghost_edge: int = 9) -> CollarMesh:
    """Whitney images, their reflections and refinements, with one extra
    (ghost) level that only supplies partitions to the top level."""
    from .refine import shadow_refinement
    from .reflect import reflect_partition
    from .whitney import dyadic_annulus, image_partition

    curve = refl.curve
    mesh = CollarMesh(refl, int(k_max), refl.p, r)
    cells = dyadic_annulus(k_max)
    ghost = [AnnulusCell(k_max + 1, j) for j in range(2 ** (k_max + 2))]
    for cs, ne in ((cells, 17), (ghost, ghost_edge)):
        qt = image_partition(refl.interior, cs, n_edge=ne)
        q = reflect_partition(refl, qt, n_edge=ne)
        kids = shadow_refinement(refl, q, n_edge=ne)
        for a, b in zip(qt, q):
            key = (a.level, a.index)
            mesh.qt[key], mesh.q[key] = a, b
            mesh.dist_qt[key] = a.dist_to(curve)
        for kid in kids:
            mesh.qref.setdefault((kid.level, kid.index), []).append(kid)
    build_edge_partitions(mesh)
    build_interpolation_refinement(mesh)
    chart_dims(mesh)
    return mesh
