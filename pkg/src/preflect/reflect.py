"""Stable reflection across the curve and the reflected partition."""

from __future__ import annotations

import numpy as np

from .conformal import ConformalMap
from .curve_core import BoundaryArc, as_complex
from .errors import NonFinite, OutsideCollar, RootBracketFailure
from .whitney import PartitionRect, rect_id

TWO_PI = 2 * np.pi
_KEY_SCALE = 2.0 ** 44 / TWO_PI


def _dyadic_gaps(scale: float, layers: int, per: int, first: int = 0) -> np.ndarray:
    """Gaps to the circle, per points in each dyadic layer, ending with 0."""
    g = [np.linspace(scale * 2.0 ** -j, scale * 2.0 ** -(j + 1), per, endpoint=False)
         for j in range(first, layers + 1)]
    return np.concatenate(g + [[0.0]])


class StableReflection:
    """h maps the interior collar 1/2 <= |zeta| < 1 onto an exterior collar.

    A point at disk radius t on the interior ray with shadow z goes to the
    point of the exterior ray at z whose arclength to the curve equals
    (weighted interior tail)^(1/(2-p)), the weight being dist^(1-p).

    Rays are tabulated lazily and cached by their interior disk angle.
    """

    def __init__(self, interior: ConformalMap, exterior: ConformalMap, p: float,
                 per_layer: int = 3, layers: int | None = None, sub: int = 4,
                 r_outer: float = 2.0, r_extend: float = 16.0):
        if not 1 < p < 2:
            raise ValueError("p must lie in (1, 2)")
        self.interior, self.exterior, self.p = interior, exterior, float(p)
        self.curve = interior.curve
        if layers is None:
            layers = int(np.clip(np.ceil(np.log2(interior.n_boundary)) + 1, 6, 30))
        self.layers = layers
        self.sub = sub
        self.root_tol = 1e-11
        self.r_outer, self.r_extend = r_outer, r_extend
        self.t_grid = 1 - _dyadic_gaps(1.0, layers, per_layer, first=1)  # 1/2 .. 1
        self.R_main = 1 + _dyadic_gaps(r_outer - 1, layers, per_layer)[::-1]  # 1 .. r_outer
        n_x = int(np.ceil(8 * np.log2(r_extend / r_outer)))
        self.R_extra = np.geomspace(r_outer, r_extend, n_x + 1)[1:]
        self.R_grid = np.concatenate([self.R_main, self.R_extra])
        self._n_main = self.R_main.size
        self._keys: dict[int, int] = {}
        nT, nR = self.t_grid.size, self.R_grid.size
        self.theta_t = np.zeros(0)
        self.theta_e = np.zeros(0)
        self.param = np.zeros(0)
        self.W = np.zeros((0, nT))  # weighted tail from t to the curve
        self.Lint = np.zeros((0, nT))  # Euclidean interior tail
        self.Pint = np.zeros((0, nT), complex)
        self.Pext = np.zeros((0, nR), complex)
        self.Lext = np.zeros((0, nR))  # exterior arclength from the curve
        self.extended = np.zeros(0, bool)

    @property
    def exponent(self) -> float:
        return 1.0 - self.p

    @property
    def n_rays(self) -> int:
        return self.theta_t.size

    def level_index(self, m: int) -> int:
        """Index of t = 1 - 2^-m in the interior grid."""
        i = int(np.searchsorted(self.t_grid, 1 - 2.0 ** -m))
        if i >= self.t_grid.size or abs(self.t_grid[i] - (1 - 2.0 ** -m)) > 1e-15:
            raise ValueError(f"level {m} beyond the tabulated depth")
        return i

    # cache ---------------------------------------------------------------
    def rays(self, theta_t) -> np.ndarray:
        """Cache indices of the rays at the given interior angles, building missing ones."""
        th = np.mod(np.asarray(theta_t, dtype=float), TWO_PI)
        keys = np.round(th * _KEY_SCALE).astype(np.int64)
        uk, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        idx = np.empty(uk.size, dtype=np.int64)
        missing = []
        for n, k in enumerate(uk.tolist()):
            i = self._keys.get(k)
            if i is None:
                missing.append(n)
            else:
                idx[n] = i
        if missing:
            miss = np.asarray(missing)
            new = self._build(th[first[miss]])
            for n, i in zip(miss.tolist(), new.tolist()):
                self._keys[int(uk[n])] = i
                idx[n] = i
        return idx[inv].reshape(np.shape(th))

    def _build(self, th: np.ndarray, chunk: int = 512) -> np.ndarray:
        start = self.n_rays
        for a in range(0, th.size, chunk):
            self._build_chunk(th[a:a + chunk])
        return np.arange(start, self.n_rays)

    def _build_chunk(self, th):
        I, E = self.interior, self.exterior
        s = I.param_of_angle(th)
        z = self.curve.point_at(s)
        te = E.angle_of_param(s)
        T = self.t_grid
        P = I.forward(T[None, :-1] * np.exp(1j * th[:, None]))
        P = np.concatenate([P, z[:, None]], axis=1)
        W = self._tails(P)
        seg = np.abs(np.diff(P, axis=1))
        Lint = np.concatenate([np.cumsum(seg[:, ::-1], axis=1)[:, ::-1], np.zeros((th.size, 1))], axis=1)
        Rm = self.R_main
        Q = E.forward(Rm[None, 1:] * np.exp(1j * te[:, None]))
        Q = np.concatenate([z[:, None], Q], axis=1)
        Lm = np.concatenate([np.zeros((th.size, 1)), np.cumsum(np.abs(np.diff(Q, axis=1)), axis=1)], axis=1)
        nx = self.R_extra.size
        Pext = np.concatenate([Q, np.full((th.size, nx), np.nan + 0j)], axis=1)
        Lext = np.concatenate([Lm, np.full((th.size, nx), np.inf)], axis=1)
        self.theta_t = np.concatenate([self.theta_t, th])
        self.theta_e = np.concatenate([self.theta_e, te])
        self.param = np.concatenate([self.param, s])
        self.W = np.concatenate([self.W, W])
        self.Lint = np.concatenate([self.Lint, Lint])
        self.Pint = np.concatenate([self.Pint, P])
        self.Pext = np.concatenate([self.Pext, Pext])
        self.Lext = np.concatenate([self.Lext, Lext])
        self.extended = np.concatenate([self.extended, np.zeros(th.size, bool)])

    def _tails(self, P: np.ndarray) -> np.ndarray:
        """Weighted tails along each row of ray samples (last sample on the curve)."""
        e = self.exponent
        a, b = P[:, :-1], P[:, 1:]
        u = (np.arange(self.sub) + 0.5) / self.sub
        mids = a[..., None] + u * (b - a)[..., None]
        dm = self.curve.distance(mids)
        ln = np.abs(b - a)
        with np.errstate(divide="ignore"):
            seg = np.mean(dm ** e, axis=-1) * ln
        # last segment touches the curve; distance taken linear along it
        seg[:, -1] = self.curve.distance(P[:, -2]) ** e * ln[:, -1] / (e + 1)
        if not np.all(np.isfinite(seg)):
            raise NonFinite("weighted ray integrand blew up")
        return np.concatenate([np.cumsum(seg[:, ::-1], axis=1)[:, ::-1], np.zeros((P.shape[0], 1))], axis=1)

    def _extend(self, idx: np.ndarray):
        idx = np.unique(idx[~self.extended[idx]])
        if idx.size == 0:
            return
        R = self.R_extra
        Q = self.exterior.forward(R[None, :] * np.exp(1j * self.theta_e[idx, None]))
        n = self._n_main
        last = self.Pext[idx, n - 1]
        steps = np.abs(np.diff(np.concatenate([last[:, None], Q], axis=1), axis=1))
        self.Pext[idx, n:] = Q
        self.Lext[idx, n:] = self.Lext[idx, n - 1, None] + np.cumsum(steps, axis=1)
        self.extended[idx] = True

    # evaluation ----------------------------------------------------------
    def weighted_tail(self, idx, t, x=None) -> np.ndarray:
        """Weighted length of the interior ray from radius t to the curve."""
        idx = np.asarray(idx)
        t = np.broadcast_to(np.asarray(t, dtype=float), idx.shape)
        T = self.t_grid
        i = np.clip(np.searchsorted(T, t, side="right") - 1, 0, T.size - 2)
        on = np.isclose(t, T[i], rtol=0, atol=1e-15)
        out = np.where(on, self.W[idx, i], 0.0)
        off = ~on
        if np.any(off):
            ii, jj, tt = idx[off], i[off] + 1, t[off]
            if x is None:
                xo = self.interior.forward(tt * np.exp(1j * self.theta_t[ii]))
            else:
                xo = np.broadcast_to(np.asarray(x), idx.shape)[off]
            b = self.Pint[ii, jj]
            e = self.exponent
            last = jj == T.size - 1
            u = (np.arange(self.sub) + 0.5) / self.sub
            mids = xo[:, None] + u * (b - xo)[:, None]
            part = np.mean(self.curve.distance(mids) ** e, axis=1) * np.abs(b - xo)
            if np.any(last):
                part[last] = self.curve.distance(xo[last]) ** e * np.abs(b - xo)[last] / (e + 1)
            out[off] = self.W[ii, jj] + part
        return out

    def target_length(self, W) -> np.ndarray:
        return np.asarray(W) ** (1.0 / (2.0 - self.p))

    def solve_radius(self, idx, lam, iters: int = 40) -> np.ndarray:
        """Exterior disk radius whose ray arclength to the curve is lam."""
        idx = np.asarray(idx).ravel()
        lam = np.asarray(lam, dtype=float).ravel()
        n = self._n_main
        need = lam > self.Lext[idx, n - 1]
        if np.any(need):
            self._extend(idx[need])
            if np.any(lam[need] > self.Lext[idx[need], -1]):
                raise RootBracketFailure("exterior ray too short even after extension")
        L = self.Lext[idx]
        j = np.clip(np.sum(L <= lam[:, None], axis=1) - 1, 0, self.R_grid.size - 2)
        rows = np.arange(idx.size)
        R0, R1 = self.R_grid[j], self.R_grid[j + 1]
        base = self.Pext[idx, j]
        Lb = L[rows, j]
        th = self.theta_e[idx]
        # tight and independent of the lazy extension, so repeated solves agree
        tol = self.root_tol * L[rows, n - 1]

        def resid(R, m):
            q = self.exterior.forward(R * np.exp(1j * th[m]))
            return Lb[m] + np.abs(q - base[m]) - lam[m]

        a, b = R0.copy(), R1.copy()
        fa = Lb - lam  # <= 0
        fb = L[rows, j + 1] - lam  # table value as the first upper estimate
        R = a.copy()
        act = np.arange(idx.size)
        side = np.zeros(idx.size)
        for _ in range(iters):
            A, B, FA, FB = a[act], b[act], fa[act], fb[act]
            den = FB - FA
            Rn = np.where(den > 0, B - FB * (B - A) / np.where(den > 0, den, 1.0), 0.5 * (A + B))
            fr = resid(Rn, act)
            R[act] = Rn
            done = np.abs(fr) <= tol[act]
            left = fr < 0
            sd = side[act]
            # Illinois modification keeps both ends moving
            a[act] = np.where(left, Rn, A)
            fa[act] = np.where(left, fr, np.where(sd < 0, FA / 2, FA))
            b[act] = np.where(left, B, Rn)
            fb[act] = np.where(left, np.where(sd > 0, FB / 2, FB), fr)
            side[act] = np.where(left, 1.0, -1.0)
            act = act[~done]
            if act.size == 0:
                break
        else:
            raise RootBracketFailure("root refinement did not converge")
        return R

    def reflect_polar(self, t, theta_t, x=None):
        """(interior radius, interior angle) -> (exterior radius, exterior angle)."""
        t = np.asarray(t, dtype=float)
        th = np.broadcast_to(np.asarray(theta_t, dtype=float), t.shape)
        shape = t.shape
        t, th = t.ravel(), th.ravel()
        if np.any(t < 0.5 - 1e-12) or np.any(t > 1):
            raise OutsideCollar("interior radius outside [1/2, 1]")
        idx = self.rays(th)
        xr = None if x is None else np.asarray(x).ravel()
        lam = self.target_length(self.weighted_tail(idx, t, xr))
        R = self.solve_radius(idx, lam)
        R = np.where(t >= 1, 1.0, R)
        # the cache is periodic; keep the exterior angle on the caller's sheet
        te = self.theta_e[idx] + TWO_PI * np.round((th - self.theta_t[idx]) / TWO_PI)
        return R.reshape(shape), te.reshape(shape)

    def point(self, R, theta_e) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        out = self.exterior.forward(R * np.exp(1j * np.asarray(theta_e)))
        on = R <= 1
        if np.any(on):
            out = np.where(on, self.exterior.boundary_point(theta_e), out)
        return out

    def __call__(self, x):
        return stable_reflect(self, x)

    def exterior_length(self, idx, R) -> np.ndarray:
        """Arclength of the exterior ray between the curve and radius R."""
        idx = np.asarray(idx).ravel()
        R = np.asarray(R, dtype=float).ravel()
        if np.any(R > self.r_outer):
            self._extend(idx[R > self.r_outer])
        j = np.clip(np.searchsorted(self.R_grid, R, side="right") - 1, 0, self.R_grid.size - 2)
        q = self.exterior.forward(R * np.exp(1j * self.theta_e[idx]))
        out = self.Lext[idx, j] + np.abs(q - self.Pext[idx, j])
        return np.where(R <= 1, 0.0, out)

    def length_residual(self, idx=None, n_dense: int = 1024) -> float:
        """Max relative mismatch between the target length and an independent
        dense measurement of the exterior arclength at the solved radius."""
        if idx is None:
            idx = np.arange(self.n_rays)
        idx = np.asarray(idx)
        worst = 0.0
        cols = [self.level_index(m) for m in range(1, 6)]
        for c in cols:
            lam = self.target_length(self.W[idx, c])
            R = self.solve_radius(idx, lam)
            u = np.linspace(0, 1, n_dense)
            rr = 1 + (R[:, None] - 1) * u ** 2
            rr[:, 0] = 1.0
            pts = self.exterior.forward(rr[:, 1:] * np.exp(1j * self.theta_e[idx, None]))
            z = self.curve.point_at(self.param[idx])
            pts = np.concatenate([z[:, None], pts], axis=1)
            ln = np.sum(np.abs(np.diff(pts, axis=1)), axis=1)
            worst = max(worst, float(np.max(np.abs(ln - lam) / lam)))
        return worst


def stable_reflect(refl: StableReflection, x) -> np.ndarray | complex:
    x = np.asarray(as_complex(x), dtype=complex)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    I = refl.interior
    on = refl.curve.distance(x) <= refl.curve.snap_tol
    inside = I.in_domain(x)
    if np.any(~on & ~inside):
        raise OutsideCollar("point is not in the interior collar")
    out = x.copy()
    m = ~on
    if np.any(m):
        zeta = I.inverse(x[m])
        t = np.abs(zeta)
        if np.any(t < 0.5 - 1e-12):
            raise OutsideCollar("point lies in the inner core")
        t = np.minimum(t, 1.0)
        R, te = refl.reflect_polar(t, np.angle(zeta), x=x[m])
        out[m] = refl.point(R, te)
    return complex(out[0]) if scalar else out


# partition ----------------------------------------------------------------

def reflect_partition(refl: StableReflection, qtilde, n_edge: int = 17) -> list[PartitionRect]:
    """Images of the Qt rectangles under h, edge by edge (family Q)."""
    qtilde = list(qtilde)
    u = np.linspace(0.0, 1.0, n_edge)
    ts, ths = [], []
    for q in qtilde:
        c = q.meta["cell"]
        th = c.th_lo + u * (c.th_hi - c.th_lo)
        r = c.r_hi + u * (c.r_lo - c.r_hi)
        ts.append(np.concatenate([np.full(n_edge, c.r_hi), np.full(n_edge, c.r_lo), r, r]))
        ths.append(np.concatenate([th, th, np.full(n_edge, c.th_lo), np.full(n_edge, c.th_hi)]))
    if not qtilde:
        return []
    R, te = refl.reflect_polar(np.concatenate(ts), np.concatenate(ths))
    pts = refl.point(R, te)
    out = []
    n = n_edge
    for i, q in enumerate(qtilde):
        c = q.meta["cell"]
        b = pts[i * 4 * n:(i + 1) * 4 * n]
        rr = R[i * 4 * n:(i + 1) * 4 * n]
        ee = te[i * 4 * n:(i + 1) * 4 * n]
        rect = PartitionRect(
            id=rect_id("Q", c.k, c.j), family="Q", level=c.k, index=c.j,
            he=b[:n], he_flat=b[n:2 * n], left=b[2 * n:3 * n], right=b[3 * n:],
            shadow=BoundaryArc(q.shadow.curve, q.shadow.start_param, q.shadow.end_param),
            parent=rect_id("Q", c.k - 1, c.j // 2) if c.k > 1 else None,
            partner=q.id,
            meta={"cell": c, "R_he": rr[:n], "R_he_flat": rr[n:2 * n], "theta_e": ee[:n]},
        )
        out.append(rect)
    return out


# audits -------------------------------------------------------------------

def _loglog_slope(x, y) -> float:
    A = np.column_stack([np.log(x), np.ones(len(x))])
    return float(np.linalg.lstsq(A, np.log(y), rcond=None)[0][0])


def audit_ray_comparability(refl: StableReflection, n_samples: int = 200, seed: int = 0) -> dict:
    """Extreme ratios for: exterior/interior ray length, exterior ray length
    over distance of h(x) to the curve, and dist(x)/dist(h(x))."""
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, TWO_PI, n_samples)
    t = rng.uniform(0.5, 1 - 2.0 ** -8, n_samples)
    idx = refl.rays(th)
    x = refl.interior.forward(t * np.exp(1j * th))
    R, te = refl.reflect_polar(t, th, x=x)
    hx = refl.point(R, te)
    lin = _interior_tail_length(refl, idx, t, x)
    lext = refl.exterior_length(idx, R)
    dx = refl.curve.distance(x)
    dh = refl.curve.distance(hx)
    r1 = lext / lin
    r2 = lext / dh
    r3 = dx / dh
    return {
        "length_ratio": [float(r1.min()), float(r1.max())],
        "length_over_dist": [float(r2.min()), float(r2.max())],
        "dist_ratio_max": float(r3.max()),
        "L": float(max(r1.max(), 1 / r1.min(), r2.max(), 1 / r2.min(), r3.max(), 1.0)),
    }


def _interior_tail_length(refl, idx, t, x):
    T = refl.t_grid
    i = np.clip(np.searchsorted(T, t, side="right") - 1, 0, T.size - 2)
    return refl.Lint[idx, i + 1] + np.abs(refl.Pint[idx, i + 1] - x)


def audit_power_law(refl: StableReflection, n_rays: int = 16, n_bands: int = 24, seed: int = 0) -> dict:
    """Power-law check along rays: bands of fixed weighted mass placed at
    growing depth; log of image length against log of image distance should
    have slope p - 1."""
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, TWO_PI, n_rays)
    idx = refl.rays(th)
    slopes = []
    for i in idx:
        W = refl.W[i]
        Lint = refl.Lint[i]
        # scale: the outermost Whitney-sized mass, d^(2-p) at interior depth d
        k = refl.level_index(8)
        d0 = Lint[k]
        mass = d0 ** (2 - refl.p)
        w_lo = np.geomspace(4 * mass, W[0] - mass, n_bands)
        lam1 = refl.target_length(w_lo)
        lam2 = refl.target_length(w_lo + mass)
        ell = lam2 - lam1
        slopes.append(_loglog_slope(lam1 / d0, ell / d0))
    s = np.array(slopes)
    return {"slope_mean": float(s.mean()), "slope_min": float(s.min()), "slope_max": float(s.max()),
            "target": refl.p - 1}


def audit_width(refl: StableReflection, qrects, n_rays: int = 5) -> dict:
    """Length of ray pieces inside Q against dist(Qt, curve) and against their own distance."""
    q_len, w_len, widths = [], [], []
    for q in qrects:
        c = q.meta["cell"]
        dt = float(q.meta.get("dist_qt", 2.0 ** -(c.k + 1)))
        th = c.th_lo + (np.arange(n_rays) + 0.5) / n_rays * (c.th_hi - c.th_lo)
        t = np.linspace(c.r_hi, c.r_lo, 9)
        R, te = refl.reflect_polar(np.tile(t, n_rays), np.repeat(th, t.size))
        pts = refl.point(R, te).reshape(n_rays, t.size)
        ln = np.sum(np.abs(np.diff(pts, axis=1)), axis=1)
        dist = refl.curve.distance(pts).min(axis=1)
        q_len.extend(ln / dt)
        w_len.extend(ln / dist)
        widths.append(ln.min() / dt)
    q_len, w_len, widths = map(np.asarray, (q_len, w_len, widths))
    return {"Q_length_min": float(q_len.min()), "width_over_dist_max": float(w_len.max()),
            "min_width_band": [float(widths.min()), float(widths.max())]}
