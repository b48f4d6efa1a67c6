"""Boundary maps between matched rectangles, their Tukia extensions and the
assembled reflection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .edges import CollarMesh, polar_to_mu
from .errors import GlueViolation, MarkMismatch, NonMonotoneBoundary, OutsideCollar

TWO_PI = 2 * np.pi
R_CAP = 1e6  # exterior radius standing in for the point at infinity


def _solve(e0, e1, l, r, a2, b2):
    """Intersection of I_x = [(e0, 0), (e1, b2)] with J_y = [(0, l), (a2, r)]."""
    dx, dy = e1 - e0, r - l
    den = b2 - dy * dx / a2
    s = (l + dy * e0 / a2) / den
    return e0 + s * dx, s * b2


def _monotone(f, a, b, n=129):
    x = np.linspace(0.0, a, n)
    y = f(x)
    return np.all(np.diff(y) > 0) and abs(y[0]) <= 1e-12 * b and abs(y[-1] - b) <= 1e-12 * b


@dataclass
class BoundaryMap:
    """Edge correspondences from [0, a1] x [0, b1] onto [0, a2] x [0, b2].

    e0 maps the edge y = 0, e1 the edge y = b1 (both x -> x'); left and
    right map x = 0 and x = a1 (y -> y'). Marks pair source and target
    positions per edge.
    """

    a1: float
    b1: float
    a2: float
    b2: float
    e0: object
    e1: object
    left: object
    right: object
    source: str | None = None
    target: str | None = None
    marks: dict = field(default_factory=dict)

    def check(self, n: int = 129, tol: float = 1e-9):
        for name, f, a, b in (("e0", self.e0, self.a1, self.a2), ("e1", self.e1, self.a1, self.a2),
                              ("left", self.left, self.b1, self.b2), ("right", self.right, self.b1, self.b2)):
            if not _monotone(f, a, b, n):
                raise NonMonotoneBoundary(f"edge {name} is not an increasing map onto its target")
        for name, (src, tgt) in self.marks.items():
            f = getattr(self, name)
            err = np.abs(f(np.asarray(src)) - np.asarray(tgt))
            scale = self.a2 if name in ("e0", "e1") else self.b2
            if err.size and err.max() > tol * scale:
                raise MarkMismatch(f"edge {name} misses a marked point by {err.max():.3g}")
        return self


def piecewise_linear(src, tgt):
    src, tgt = np.asarray(src, float), np.asarray(tgt, float)
    if np.any(np.diff(src) <= 0) or np.any(np.diff(tgt) <= 0):
        raise NonMonotoneBoundary("knots must increase")
    return lambda x: np.interp(x, src, tgt)


def linear_boundary(a1, b1, a2, b2) -> BoundaryMap:
    sx, sy = a2 / a1, b2 / b1
    return BoundaryMap(a1, b1, a2, b2, lambda x: sx * np.asarray(x), lambda x: sx * np.asarray(x),
                       lambda y: sy * np.asarray(y), lambda y: sy * np.asarray(y))


def _sine_field(length: float, rng, grad: float, n_modes: int = 3):
    """Random smooth g(x, y) vanishing at x = 0 and x = length, with |grad g| <= grad.

    Mode frequencies are drawn per unit length, so the law does not depend on
    the aspect of the rectangle.
    """
    modes = []
    for _ in range(n_modes):
        n = max(1, int(round(rng.uniform(0.5, 2.0) * length)))
        modes.append((n, rng.uniform(0.5, 3.0), rng.uniform(0, TWO_PI), rng.uniform(-1, 1)))
    s = grad / sum(abs(c) * (np.pi * n / length + w) for n, w, _, c in modes)

    def g(x, y):
        return s * sum(c * np.sin(np.pi * n * x / length) * np.cos(w * y + ph) for n, w, ph, c in modes)

    return g


def random_boundary_map(a: float, rng, p: float, grad: float = 0.3) -> BoundaryMap:
    """Random boundary map from the unit square onto [0, a] x [0, a^(p-1)].

    The map is A o g on the boundary, with A = diag(a, a^(p-1)) and g = id
    plus random sine fields of gradient at most `grad`. Top and bottom
    disagree by a^(p-2) times a field, which keeps the map bilipschitz in
    the norm max(a|x|, a^(p-1)|y|) with a constant independent of a.
    """
    ax, ay = a, a ** (p - 1)
    k = a ** (p - 2)
    psi = _sine_field(1.0, rng, grad / 2)
    dpsi = _sine_field(1.0, rng, grad / 2)
    chi = _sine_field(1.0, rng, grad)
    return BoundaryMap(1.0, 1.0, ax, ay,
                       lambda x: ax * (x + psi(x, 0.0) + k * dpsi(x, 0.0)),
                       lambda x: ax * (x + psi(x, 0.0) + k * dpsi(x, 1.0)),
                       lambda y: ay * (y + chi(y, 0.0)), lambda y: ay * (y + chi(y, 1.0)))


def _boundary_loop(bm: BoundaryMap, n: int):
    a, b = bm.a1, bm.b1
    per = 2 * (a + b)
    s = np.linspace(0.0, per, n, endpoint=False)
    P = np.empty(n, complex)
    Q = np.empty(n, complex)
    for lo, hi, src, img in (
            (0, a, lambda u: u + 0j, lambda u: bm.e0(u) + 0j),
            (a, a + b, lambda u: a + 1j * (u - a), lambda u: bm.a2 + 1j * bm.right(u - a)),
            (a + b, 2 * a + b, lambda u: (2 * a + b - u) + 1j * b, lambda u: bm.e1(2 * a + b - u) + 1j * bm.b2),
            (2 * a + b, per, lambda u: 1j * (per - u), lambda u: 1j * bm.left(per - u))):
        m = (s >= lo) & (s < hi)
        P[m], Q[m] = src(s[m]), img(s[m])
    return P, Q


def boundary_bilip(bm: BoundaryMap, p: float, n: int = 400) -> float:
    """Bilipschitz constant of the boundary map, source measured in max(a|dx|, a^(p-1)|dy|)
    with a = a2 / a1; the target is Euclidean."""
    a = bm.a2 / bm.a1
    P, Q = _boundary_loop(bm, n)
    dP = P[:, None] - P[None]
    d1 = np.maximum(a * np.abs(dP.real), a ** (p - 1) * np.abs(dP.imag))
    d2 = np.abs(Q[:, None] - Q[None])
    off = ~np.eye(n, dtype=bool)
    ratio = d2[off] / d1[off]
    return float(max(ratio.max(), 1.0 / ratio.min()))


class TukiaMap:
    """F(x, y) = I_x ∩ J_y."""

    def __init__(self, bm: BoundaryMap):
        self.bm = bm

    def __call__(self, x, y):
        bm = self.bm
        x, y = np.asarray(x, float), np.asarray(y, float)
        return _solve(bm.e0(x), bm.e1(x), bm.left(y), bm.right(y), bm.a2, bm.b2)

    def jacobian(self, x, y, h=None):
        """Central differences with step 1/64 of the rectangle dimensions."""
        bm = self.bm
        hx, hy = (bm.a1 / 64, bm.b1 / 64) if h is None else h
        xp, yp = self(x + hx, y)
        xm, ym = self(x - hx, y)
        xq, yq = self(x, y + hy)
        xn, yn = self(x, y - hy)
        D = np.empty(np.shape(x) + (2, 2))
        D[..., 0, 0], D[..., 1, 0] = (xp - xm) / (2 * hx), (yp - ym) / (2 * hx)
        D[..., 0, 1], D[..., 1, 1] = (xq - xn) / (2 * hy), (yq - yn) / (2 * hy)
        return D

    def foldovers(self, n: int = 17) -> int:
        bm = self.bm
        X, Y = np.meshgrid(np.linspace(0, bm.a1, n), np.linspace(0, bm.b1, n))
        U, V = self(X, Y)
        return count_foldovers(U + 1j * V)


def count_foldovers(Z: np.ndarray, sign: int | None = None) -> int:
    """Quads of an image grid whose orientation differs from the majority or that collapse."""
    a = Z[:-1, :-1]
    b = Z[:-1, 1:]
    c = Z[1:, 1:]
    d = Z[1:, :-1]

    def cross(u, v):
        return (np.conj(u) * v).imag

    # both triangles of each quad
    t1 = cross(b - a, c - a)
    t2 = cross(c - a, d - a)
    s = sign if sign is not None else (1 if np.sum(t1 + t2) >= 0 else -1)
    scale = np.max(np.abs(Z - Z.mean())) ** 2
    bad = (s * t1 <= 1e-14 * scale) | (s * t2 <= 1e-14 * scale)
    return int(np.count_nonzero(bad))


def tukia_extend(bm: BoundaryMap, check: bool = True) -> TukiaMap:
    if check:
        bm.check()
    return TukiaMap(bm)


def distortion_ratio(D: np.ndarray, p: float):
    """|DF|^p / |J| and its reciprocal bound from a stack of 2x2 matrices."""
    s = np.linalg.svd(D, compute_uv=False)
    J = np.abs(np.linalg.det(D))
    return s[..., 0] ** p / J, J


# assembled reflection ----------------------------------------------------------

def _rows_interp(x, row, xp, fp):
    """np.interp with a separate knot row per query; xp rows increase within [0, 1]."""
    n = xp.shape[1]
    off = 2.0 * np.arange(xp.shape[0])
    flat_x = (xp + off[:, None]).ravel()
    q = np.clip(x, 0.0, 1.0) + off[row]
    i = np.clip(np.searchsorted(flat_x, q, side="right") - 1, 0, flat_x.size - 2)
    # stay inside the query's own row
    i = np.clip(i, row * n, row * n + n - 2)
    x0, x1 = flat_x[i], flat_x[i + 1]
    f = fp.ravel()
    w = (q - x0) / (x1 - x0)
    return f[i] + w * (f[i + 1] - f[i])


def _arc_fraction(z):
    s = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(z)))])
    return s / s[-1]


class PiecewiseReflection:
    """f on the collar: chart into Rect(Rt), Tukia core, chart out of W."""

    def __init__(self, mesh: CollarMesh):
        self.mesh = mesh
        self.refl = mesh.refl
        self.k_max = mesh.k_max
        self.kappa = {}
        self.children = []
        self.meta = {"orientation": -1, "core_radius_cap": R_CAP}
        self.audits = {}

    # construction
    def build_knot_maps(self):
        m_ = self.mesh
        for m in range(1, m_.k_max + 2):
            tab = m_.wcurves[m].table
            src, tgt = [], []
            for (k, j), g in m_.geom.items():
                if k == m:
                    src.append(g.absolute)
                    tgt.append(tab.s_of(m_.q[(k, j)].meta["cut_theta_e"]))
            for (k, j), c in m_.comb.items():
                if k == m - 1:
                    src.append(c.absolute)
                    tgt.append(tab.s_of(m_.q[(k, j)].meta["cut_theta_e"]))
            src, tgt = np.concatenate(src), np.concatenate(tgt)
            o = np.lexsort((tgt, src))
            src, tgt = src[o], tgt[o]
            scale = src[-1] - src[0]
            keep = np.concatenate([[True], np.diff(src) > 1e-12 * scale])
            if np.any(np.abs(np.diff(tgt)[~keep[1:]]) > 1e-9 * (tgt[-1] - tgt[0])):
                raise MarkMismatch(f"level {m}: one source mark sent to two targets")
            src, tgt = src[keep], tgt[keep]
            if np.any(np.diff(tgt) <= 0):
                raise NonMonotoneBoundary(f"level {m}: marked points out of order")
            self.kappa[m] = (src, tgt)

    def build_children(self):
        m_ = self.mesh
        rows = []
        left_src, left_tgt, left_rho = [], [], []
        right_src, right_tgt, right_rho = [], [], []
        for (k, j) in sorted(m_.qtref):
            for rt, R, W in zip(m_.qtref[(k, j)], m_.qref[(k, j)], m_.wref[(k, j)]):
                cell = rt.meta["cell"]
                c0, c1, g0, g1 = rt.meta["mu"]
                dt, d, wt, H = m_.dims[R.id]
                a, b = R.meta["theta_e"]
                rows.append((k, j, cell.th_lo, cell.th_hi, cell.r_lo, cell.r_hi, c0, c1, g0, g1, dt, d, wt, H, a, b))
                left_src.append(_arc_fraction(rt.left))
                left_tgt.append(_arc_fraction(R.left))
                left_rho.append(np.log(R.meta["R_left"]))
                right_src.append(_arc_fraction(rt.right))
                right_tgt.append(_arc_fraction(R.right))
                right_rho.append(np.log(R.meta["R_right"]))
                self.children.append((rt, R, W))
        names = ["k", "j", "th_lo", "th_hi", "r_lo", "r_hi", "c0", "c1", "g0", "g1", "dt", "d", "wt", "H", "a", "b"]
        arr = np.array(rows, dtype=float)
        self.tab = {n: arr[:, i] for i, n in enumerate(names)}
        self.tab["k"] = self.tab["k"].astype(int)
        self.tab["j"] = self.tab["j"].astype(int)
        u = np.linspace(0.0, 1.0, left_src[0].size)
        self._u = u
        self.vert = {"left": (np.array(left_src), np.array(left_tgt), np.array(left_rho)),
                     "right": (np.array(right_src), np.array(right_tgt), np.array(right_rho))}
        self.index = {rt.id: i for i, (rt, _, _) in enumerate(self.children)}
        # per cell: child row range, for the locator
        self.cell_rows = {}
        for i, (k, j) in enumerate(zip(self.tab["k"], self.tab["j"])):
            self.cell_rows.setdefault((int(k), int(j)), []).append(i)

    # edge maps, vectorized over child rows ci
    def _horizontal(self, ci, X, upper: bool):
        T, m_ = self.tab, self.mesh
        x = np.where(upper, T["c0"][ci] + X / T["wt"][ci] * (T["c1"][ci] - T["c0"][ci]),
                     T["g0"][ci] + X / T["wt"][ci] * (T["g1"][ci] - T["g0"][ci]))
        th_t = T["th_lo"][ci] + x * (T["th_hi"][ci] - T["th_lo"][ci])
        lev = T["k"][ci] + np.where(upper, 1, 0)
        th_e = np.empty_like(th_t)
        for m in np.unique(lev):
            s = lev == m
            th_e[s] = self.trace(int(m), th_t[s])
        a, b = T["a"][ci], T["b"][ci]
        return T["d"][ci] * (th_e - a) / (b - a)

    def trace(self, m: int, th_t):
        """Exterior angle matched to interior angle th_t on level curve m."""
        m_ = self.mesh
        s = m_.circles[m].s_of(th_t)
        src, tgt = self.kappa[m]
        return m_.wcurves[m].table.theta_of(np.interp(s, src, tgt))

    def _vertical(self, ci, Y, side: str):
        T = self.tab
        src, tgt, rho = self.vert[side]
        y = Y / T["dt"][ci]
        frac = _rows_interp(y, ci, np.broadcast_to(self._u, src.shape), src)
        r = _rows_interp(frac, ci, tgt, rho)
        k = T["k"][ci]
        th = T["a"][ci] if side == "left" else T["b"][ci]
        g1 = self._g(k + 1, th)
        g0 = self._g(k, th)
        return T["H"][ci] * (r - g1) / (g0 - g1)

    def _g(self, lev, th):
        out = np.empty_like(th)
        for m in np.unique(lev):
            s = lev == m
            out[s] = self.mesh.wcurves[int(m)](th[s])
        return out

    def F(self, ci, X, Y):
        """Tukia extension of the chart boundary map of child rows ci."""
        T = self.tab
        e0 = self._horizontal(ci, X, True)
        e1 = self._horizontal(ci, X, False)
        l = self._vertical(ci, Y, "left")
        r = self._vertical(ci, Y, "right")
        return _solve(e0, e1, l, r, T["d"][ci], T["H"][ci])

    def boundary_map(self, i: int) -> BoundaryMap:
        """Chart boundary map of child row i, with its marks."""
        T = self.tab
        ci = lambda v: np.full(np.shape(v), i)  # noqa: E731
        bm = BoundaryMap(T["wt"][i], T["dt"][i], T["d"][i], T["H"][i],
                         lambda X: self._horizontal(ci(X), np.asarray(X, float), True),
                         lambda X: self._horizontal(ci(X), np.asarray(X, float), False),
                         lambda Y: self._vertical(ci(Y), np.asarray(Y, float), "left"),
                         lambda Y: self._vertical(ci(Y), np.asarray(Y, float), "right"),
                         source=self.children[i][0].id, target=self.children[i][2].id)
        return bm

    def source_point(self, ci, X, Y):
        T = self.tab
        y = Y / T["dt"][ci]
        xl = T["c0"][ci] + (T["g0"][ci] - T["c0"][ci]) * y
        xr = T["c1"][ci] + (T["g1"][ci] - T["c1"][ci]) * y
        x = xl + X / T["wt"][ci] * (xr - xl)
        th = T["th_lo"][ci] + x * (T["th_hi"][ci] - T["th_lo"][ci])
        t = T["r_hi"][ci] * (T["r_lo"][ci] / T["r_hi"][ci]) ** y
        return self.refl.interior.forward(t * np.exp(1j * th))

    def image_point(self, ci, Xp, Yp):
        T = self.tab
        k = T["k"][ci]
        th = T["a"][ci] + Xp / T["d"][ci] * (T["b"][ci] - T["a"][ci])
        g1, g0 = self._g(k + 1, th), self._g(k, th)
        rho = g1 + Yp / T["H"][ci] * (g0 - g1)
        return self.refl.exterior.forward(np.exp(rho + 1j * th))

    def eval_chart(self, ci, X, Y):
        ci = np.asarray(ci)
        Xp, Yp = self.F(ci, np.asarray(X, float), np.asarray(Y, float))
        return self.image_point(ci, Xp, Yp)

    # inner core
    def core(self, t, th_t):
        t = np.asarray(t, float)
        th_e = self.trace(1, th_t)
        rho = self.mesh.wcurves[1](th_e) + np.log(0.5 / np.maximum(t, 1e-300))
        rho = np.minimum(rho, np.log(R_CAP))
        return self.refl.exterior.forward(np.exp(rho + 1j * th_e))

    # plane evaluation
    def locate(self, t, th_t):
        """Child rows and chart coordinates of collar points given in disk polar form."""
        T = self.tab
        k = np.clip(np.floor(-np.log2(1 - t)).astype(int), 1, self.k_max)
        th_t = np.mod(th_t, TWO_PI)
        j = np.clip(np.floor(th_t / (np.pi * 2.0 ** -k)).astype(int), 0, 2 ** (k + 1) - 1)
        ci = np.empty(t.size, int)
        X = np.empty(t.size)
        Y = np.empty(t.size)
        for key in set(zip(k.tolist(), j.tolist())):
            s = (k == key[0]) & (j == key[1])
            rows = np.array(self.cell_rows[key])
            cell = self.children[rows[0]][0].meta["cell"]
            x, y = polar_to_mu(cell, t[s], th_t[s])
            cut_l = T["c0"][rows][None, :] + (T["g0"][rows] - T["c0"][rows])[None, :] * y[:, None]
            n = np.clip(np.sum(cut_l <= x[:, None], axis=1) - 1, 0, rows.size - 1)
            r = rows[n]
            xl = T["c0"][r] + (T["g0"][r] - T["c0"][r]) * y
            xr = T["c1"][r] + (T["g1"][r] - T["c1"][r]) * y
            ci[s] = r
            X[s] = T["wt"][r] * (x - xl) / (xr - xl)
            Y[s] = T["dt"][r] * y
        return ci, X, Y

    def __call__(self, z):
        z = np.atleast_1d(np.asarray(z, complex))
        I = self.refl.interior
        out = np.empty(z.size, complex)
        on = ~I.in_domain(z)
        zeta = np.zeros(z.size, complex)
        zeta[~on] = I.inverse(z[~on])
        t, th = np.abs(zeta), np.mod(np.angle(zeta), TWO_PI)
        top = 1 - 2.0 ** -(self.k_max + 1)
        if np.any(~on & (t > top)):
            raise OutsideCollar("point lies beyond the finest level")
        out[on] = z[on]
        core = ~on & (t < 0.5)
        if np.any(core):
            out[core] = self.core(t[core], th[core])
        col = ~on & ~core
        if np.any(col):
            ci, X, Y = self.locate(t[col], th[col])
            out[col] = self.eval_chart(ci, X, Y)
        return out


def assemble_reflection(mesh: CollarMesh, n_glue: int = 17, check: bool = True) -> PiecewiseReflection:
    f = PiecewiseReflection(mesh)
    f.build_knot_maps()
    f.build_children()
    if check:
        rep = glue_audit(f, n_glue)
        f.audits["glue"] = rep
        if rep["residual"] > rep["tolerance"]:
            raise GlueViolation(f"glue residual {rep['residual']:.3g} at {rep['worst_edge']}")
    return f


def inner_core_extend(f: PiecewiseReflection) -> PiecewiseReflection:
    """Attach the radial core filler and audit the interface circle t = 1/2."""
    T = f.tab
    rows = np.flatnonzero(T["k"] == 1)
    u = np.linspace(0.0, 1.0, 17)
    ci = np.repeat(rows, u.size)
    X = np.tile(u, rows.size) * T["wt"][ci]
    Y = T["dt"][ci]
    z_col = f.eval_chart(ci, X, Y)
    src = f.source_point(ci, X, Y)
    zeta = f.refl.interior.inverse(src)
    # exact preimage coordinates of the interface samples
    g0, g1 = T["g0"][ci], T["g1"][ci]
    th = T["th_lo"][ci] + (g0 + X / T["wt"][ci] * (g1 - g0)) * (T["th_hi"][ci] - T["th_lo"][ci])
    z_core = f.core(np.full(ci.size, 0.5), th)
    scale = np.max(np.abs(z_col - z_col.mean()))
    f.audits["core_interface"] = {"residual": float(np.max(np.abs(z_core - z_col))),
                                  "relative": float(np.max(np.abs(z_core - z_col)) / scale),
                                  "preimage_radius_error": float(np.max(np.abs(np.abs(zeta) - 0.5)))}
    f.meta["core"] = "radial filler in preimage coordinates"
    return f


def glue_audit(f: PiecewiseReflection, n: int = 17) -> dict:
    """Images of shared-edge samples computed from both sides."""
    T = f.tab
    u = np.linspace(0.0, 1.0, n)
    worst, where = 0.0, None
    dist_worst = 0.0
    # vertical edges: consecutive children around each level
    for k in range(1, f.k_max + 1):
        rows = np.flatnonzero(T["k"] == k)
        rows = rows[np.lexsort((T["c0"][rows], T["j"][rows]))]
        left, right = rows, np.roll(rows, -1)
        ci_l, ci_r = np.repeat(left, n), np.repeat(right, n)
        y = np.tile(u, left.size)
        zl = f.eval_chart(ci_l, T["wt"][ci_l], y * T["dt"][ci_l])
        zr = f.eval_chart(ci_r, np.zeros(ci_r.size), y * T["dt"][ci_r])
        err = np.abs(zl - zr)
        i = int(np.argmax(err))
        rel = err / T["dt"][ci_l]
        dist_worst = max(dist_worst, float(rel.max()))
        if err[i] > worst:
            worst, where = float(err[i]), (f.children[ci_l[i]][0].id, f.children[ci_r[i]][0].id)
    # horizontal edges: top of level k against bottom of level k + 1
    for k in range(1, f.k_max):
        lo = np.flatnonzero(T["k"] == k)
        ci = np.repeat(lo, n)
        X = np.tile(u, lo.size) * T["wt"][ci]
        x = T["c0"][ci] + X / T["wt"][ci] * (T["c1"][ci] - T["c0"][ci])
        th = T["th_lo"][ci] + x * (T["th_hi"][ci] - T["th_lo"][ci])
        z_lo = f.eval_chart(ci, X, np.zeros(ci.size))
        t = np.full(ci.size, 1 - 2.0 ** -(k + 1))
        # from the upper level: locate on its lower edge
        cu, Xu, Yu = f.locate(t, th)
        Yu = np.where(T["k"][cu] == k + 1, T["dt"][cu], Yu)
        z_up = f.eval_chart(cu, Xu, Yu)
        err = np.abs(z_lo - z_up)
        i = int(np.argmax(err))
        dist_worst = max(dist_worst, float(np.max(err / T["dt"][ci])))
        if err[i] > worst:
            worst, where = float(err[i]), (f.children[ci[i]][0].id, f.children[cu[i]][0].id)
    acc = chart_accuracy(f)
    scale = float(np.max(np.abs(f.refl.curve.vertices - f.refl.curve.vertices.mean())))
    tol = 2 * max(acc, 64 * np.finfo(float).eps * scale)
    return {"residual": worst, "worst_edge": where, "chart_accuracy": acc, "tolerance": tol,
            "residual_over_dist_max": dist_worst}


def chart_accuracy(f: PiecewiseReflection, n: int = 5, stride: int = 7) -> float:
    """Round-trip error of source and target charts on edge samples of a subset of children."""
    T = f.tab
    rows = np.arange(0, len(f.children), stride)
    u = np.linspace(0.0, 1.0, n)
    X = np.concatenate([u, u, np.zeros(n), np.ones(n)])
    Y = np.concatenate([np.zeros(n), np.ones(n), u, u])
    ci = np.repeat(rows, X.size)
    Xs = np.tile(X, rows.size) * T["wt"][ci]
    Ys = np.tile(Y, rows.size) * T["dt"][ci]
    z = f.source_point(ci, Xs, Ys)
    zeta = f.refl.interior.inverse(z)
    back = f.refl.interior.forward(zeta)
    e1 = np.max(np.abs(back - z))
    Xp = np.tile(X, rows.size) * T["d"][ci]
    Yp = np.tile(Y, rows.size) * T["H"][ci]
    w = f.image_point(ci, Xp, Yp)
    back = f.refl.exterior.forward(f.refl.exterior.inverse(w))
    e2 = np.max(np.abs(back - w))
    return float(max(e1, e2))


def boundary_trace(f: PiecewiseReflection, n: int = 1024) -> dict:
    """|f(x) - z| for x on the finest level curve over each boundary sample z."""
    I = f.refl.interior
    s = np.linspace(0.0, f.refl.curve.length, n, endpoint=False)
    z = f.refl.curve.point_at(s)
    th = np.mod(I.angle_of_param(s), TWO_PI)
    t = np.full(n, 1 - 2.0 ** -(f.k_max + 1))
    ci, X, Y = f.locate(t, th)
    w = f.eval_chart(ci, X, np.zeros(n))
    T = f.tab
    fine = np.flatnonzero(T["k"] == f.k_max)
    scale = max(max(f.children[i][0].diameter, f.children[i][2].diameter) for i in fine)
    err = float(np.max(np.abs(w - z)))
    return {"sup_error": err, "finest_scale": float(scale), "ratio": err / scale}


def image_grids(f: PiecewiseReflection, n: int = 5) -> list[dict]:
    """Forward images of an n x n parameter grid per rectangle."""
    T = f.tab
    u = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(u, u)
    out = []
    N = len(f.children)
    ci = np.repeat(np.arange(N), n * n)
    Xs = np.tile(X.ravel(), N) * T["wt"][ci]
    Ys = np.tile(Y.ravel(), N) * T["dt"][ci]
    w = f.eval_chart(ci, Xs, Ys).reshape(N, n, n)
    for i in range(N):
        out.append({"id": f.children[i][0].id, "target": f.children[i][2].id,
                    "grid": [[[float(v.real), float(v.imag)] for v in row] for row in w[i]]})
    return out


def foldover_audit(f: PiecewiseReflection, n: int = 17) -> dict:
    """Orientation of the image grid on every rectangle, in chart coordinates."""
    T = f.tab
    u = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(u, u)
    N = len(f.children)
    ci = np.repeat(np.arange(N), n * n)
    Xp, Yp = f.F(ci, np.tile(X.ravel(), N) * T["wt"][ci], np.tile(Y.ravel(), N) * T["dt"][ci])
    Z = (Xp + 1j * Yp).reshape(N, n, n)
    bad = sum(count_foldovers(Z[i], sign=1) for i in range(N))
    return {"foldover_quads": int(bad), "rectangles": N}
