"""Pipeline driver, distortion certification, reports and plots."""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import edges, refine, reflect, whitney
from .conformal import build_exterior_map, build_interior_map
from .curve_core import JordanCurve
from .errors import (
    BadEpsilon,
    BadExponent,
    BadLevel,
    GlueViolation,
    IOFailure,
    PreflectError,
    SubhyperbolicityWarning,
    TooCoarse,
)
from .metrics import classify_subhyperbolic
from .tukia_assembly import (
    PiecewiseReflection,
    assemble_reflection,
    boundary_trace,
    foldover_audit,
    image_grids,
    inner_core_extend,
)

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
RAY_GROWTH_LIMIT = 1.05  # screen: allowed growth of the ray ratio over the probed depths


@dataclass
class PipelineConfig:
    p: float = 1.5
    r: float = 1.25
    k_max: int = 4
    mesh_h: float = 0.05  # metrics graph spacing, relative to the curve diameter
    eps: float = 0.1
    tol_conformal: float = 1e-3  # relative to the curve diameter
    tol_root: float = 1e-11  # relative to the ray length
    tol_glue: float = 2.0  # multiple of the chart accuracy
    grid: int = 8  # distortion samples per rectangle side
    n_pairs: int = 48
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if not 1 < self.r < self.p < 2:
            raise BadExponent(f"need 1 < r < p < 2, got r={self.r}, p={self.p}")
        if not 0 < self.eps < 1 / 9:
            raise BadEpsilon(f"eps must lie in (0, 1/9), got {self.eps}")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise BadLevel(f"k_max must be a positive integer, got {self.k_max}")
        self.k_max = int(self.k_max)

    @property
    def q(self) -> float:
        return self.r / (self.r - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out_dir")
        return d


@dataclass
class DistortionReport:
    r: float
    q: float
    quantiles: dict
    inverse_quantiles: dict
    double_bound: dict
    two_sided: dict
    per_level: dict
    flagged: int
    samples: int
    boundary_sup_error: float = float("nan")
    glue_sup_error: float = float("nan")
    core: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Artifacts:
    config: PipelineConfig
    curve: JordanCurve
    refl: reflect.StableReflection
    mesh: edges.CollarMesh
    reflection: PiecewiseReflection
    report: dict
    warnings: list


# distortion --------------------------------------------------------------------

def fd_jacobian(fn, X, Y, hX, hY) -> np.ndarray:
    """Central-difference Jacobians of a complex-valued map of (X, Y)."""
    zx = (fn(X + hX, Y) - fn(X - hX, Y)) / (2 * hX)
    zy = (fn(X, Y + hY) - fn(X, Y - hY)) / (2 * hY)
    D = np.empty(np.shape(X) + (2, 2))
    D[..., 0, 0], D[..., 1, 0] = zx.real, zx.imag
    D[..., 0, 1], D[..., 1, 1] = zy.real, zy.imag
    return D


def distortion_ratios(Df: np.ndarray, r: float, q: float):
    """Forward |Df|^r/|J|, inverse |Df^-1|^q/|J^-1|, and |J|."""
    s = np.linalg.svd(Df, compute_uv=False)
    J = np.abs(s[..., 0] * s[..., 1])
    fwd = s[..., 0] ** r / J
    inv = s[..., 1] ** -q * J
    return fwd, inv, J


QS = (50, 90, 99)


def _quantiles(v) -> dict:
    v = np.asarray(v)
    if v.size == 0:
        return {"q50": float("nan"), "q90": float("nan"), "q99": float("nan"), "max": float("nan")}
    out = {f"q{k}": float(np.percentile(v, k)) for k in QS}
    out["max"] = float(v.max())
    return out


def chart_samples(f: PiecewiseReflection, grid: int):
    """Cell-centre samples of every Rect(Rt), and the chain-rule Jacobian of f there."""
    if grid * grid < 8:
        raise TooCoarse(f"grid {grid} gives fewer than 8 cells per rectangle")
    T = f.tab
    N = len(f.children)
    u = (np.arange(grid) + 0.5) / grid
    gx, gy = np.meshgrid(u, u)
    ci = np.repeat(np.arange(N), grid * grid)
    X = np.tile(gx.ravel(), N) * T["wt"][ci]
    Y = np.tile(gy.ravel(), N) * T["dt"][ci]
    hX, hY = T["wt"][ci] / 64, T["dt"][ci] / 64
    Dsrc = fd_jacobian(lambda a, b: f.source_point(ci, a, b), X, Y, hX, hY)
    Dimg = fd_jacobian(lambda a, b: f.eval_chart(ci, a, b), X, Y, hX, hY)
    return ci, Dimg @ np.linalg.inv(Dsrc), Dsrc


def core_samples(f: PiecewiseReflection, n_t: int = 8, n_th: int = 64):
    """Chain-rule Jacobians of the radial core filler on t in [0.1, 0.45]."""
    t = np.linspace(0.1, 0.45, n_t)
    th = (np.arange(n_th) + 0.5) * TWO_PI / n_th
    T, TH = np.meshgrid(t, th)
    T, TH = T.ravel(), TH.ravel()
    I = f.refl.interior
    ht, hth = 0.35 / n_t / 64, TWO_PI / n_th / 64
    Dsrc = fd_jacobian(lambda a, b: I.forward(a * np.exp(1j * b)), T, TH, ht, hth)
    Dimg = fd_jacobian(lambda a, b: f.core(a, b), T, TH, ht, hth)
    return Dimg @ np.linalg.inv(Dsrc)


def distortion_report(f: PiecewiseReflection, grid: int = 8, r: float | None = None,
                      samples=None) -> tuple[DistortionReport, dict]:
    """Statistics of |Df|^r/|J| and of the inverse with q = r/(r-1)."""
    r = f.mesh.r if r is None else float(r)
    q = r / (r - 1)
    if samples is None:
        ci, Df, Dsrc = chart_samples(f, grid)
    else:
        ci, Df, Dsrc = samples
    fwd, inv, J = distortion_ratios(Df, r, q)
    T = f.tab
    # local scale: image area over source area of the rectangle pair
    scale = np.array([w.diameter / rt.diameter for rt, _, w in f.children]) ** 2
    flag = ~np.isfinite(fwd) | (J < 1e-12 * scale[ci]) | (np.abs(np.linalg.det(Dsrc)) == 0)
    ok = ~flag
    per_rect_valid = np.bincount(ci[ok], minlength=len(f.children))
    if per_rect_valid.min() < 8:
        raise TooCoarse(f"a rectangle has only {per_rect_valid.min()} valid cells")
    s = np.linalg.svd(Df[ok], compute_uv=False)
    Jok = J[ok]
    dbl = np.minimum(s[:, 0] ** r / Jok, s[:, 0] ** q / Jok)
    two = np.maximum(fwd[ok], 1 / fwd[ok])
    levels = T["k"][ci]
    per_level = {int(k): _quantiles(fwd[ok & (levels == k)]) for k in np.unique(levels)}
    rep = DistortionReport(
        r=r, q=q,
        quantiles=_quantiles(fwd[ok]),
        inverse_quantiles=_quantiles(inv[ok]),
        double_bound={"q1": float(np.percentile(dbl, 1)), "q99": float(np.percentile(dbl, 99))},
        two_sided=_quantiles(two),
        per_level=per_level,
        flagged=int(flag.sum()),
        samples=int(ci.size),
    )
    Dc = core_samples(f)
    cf, ci_inv, _ = distortion_ratios(Dc, r, q)
    rep.core = {"forward": _quantiles(cf), "inverse": _quantiles(ci_inv)}
    per_cell = np.zeros(len(f.children))
    np.maximum.at(per_cell, ci[ok], fwd[ok])
    return rep, {"per_rect_max": per_cell}


# the metrics screen ---------------------------------------------------------------

def ray_probe(refl: reflect.StableReflection, n_rays: int = 256) -> list[float]:
    """Max over rays of (weighted tail from depth m) / |x_m - z|^(2-p), per depth m.

    The tail is an upper bound for the subhyperbolic distance between the ray
    point and its landing point, with alpha = 2 - p.
    """
    I, c = refl.interior, refl.curve
    s = np.linspace(0.0, c.length, n_rays, endpoint=False)
    idx = refl.rays(np.mod(I.angle_of_param(s), TWO_PI))
    z = refl.Pint[idx, -1]
    out = []
    for m in range(2, refl.layers):
        i = refl.level_index(m)
        out.append(float(np.max(refl.W[idx, i] / np.abs(refl.Pint[idx, i] - z) ** (2 - refl.p))))
    return out


def subhyperbolicity_screen(curve, refl, cfg: PipelineConfig) -> dict:
    alpha = 2 - cfg.p
    rep = classify_subhyperbolic(curve, "interior", alpha, cfg.n_pairs, cfg.mesh_h * curve.diameter, seed=cfg.seed)
    probe = ray_probe(refl)
    growth = probe[-1] / probe[0]
    rising = probe[-1] > probe[-2]
    unstable = bool(growth > RAY_GROWTH_LIMIT and rising)
    return {"alpha": alpha, "C_est": rep.C_est, "go_ratio": rep.go_ratio, "pairs": rep.pair_samples,
            "ray_ratio": probe, "ray_growth": float(growth), "unstable": unstable}


# pipeline ---------------------------------------------------------------------------

@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except PreflectError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


def _band(v):
    v = np.asarray(list(v), dtype=float)
    return [float(v.min()), float(v.max())]


def run_pipeline(cfg: PipelineConfig, curve: JordanCurve, name: str = "curve", full_audits: bool = True) -> Artifacts:
    """conformal -> screen -> whitney -> reflect -> refine -> edges -> assembly -> report."""
    report: dict = {"config": cfg.to_dict(), "curve": {"name": name, "vertices": int(curve.n),
                                                       "length": curve.length, "diameter": curve.diameter}}
    caught = []
    with warnings.catch_warnings(record=True) as wlist:
        warnings.simplefilter("always")
        with _stage("conformal"):
            tol = cfg.tol_conformal * curve.diameter
            I = build_interior_map(curve, tol=tol)
            E = build_exterior_map(curve, tol=tol)
            report["conformal"] = {"interior_error": I.accuracy, "exterior_error": E.accuracy,
                                   "interior_points": I.n_boundary, "exterior_points": E.n_boundary}
        refl = reflect.StableReflection(I, E, cfg.p)
        refl.root_tol = cfg.tol_root
        with _stage("metrics"):
            scr = subhyperbolicity_screen(curve, refl, cfg)
            report["screen"] = scr
            if scr["unstable"]:
                warnings.warn(f"ray ratio grows by {scr['ray_growth']:.3f} with depth; the bounded side may not "
                              f"be {scr['alpha']:g}-subhyperbolic", SubhyperbolicityWarning)
        with _stage("whitney"):
            mesh = edges.build_mesh(refl, cfg.k_max, cfg.r)
            qts = [mesh.qt[k] for k in sorted(mesh.qt) if k[0] <= cfg.k_max]
            report["whitney"] = whitney.whitney_audit(qts, curve)
            report["whitney"]["cells"] = len(qts)
        with _stage("reflect"):
            report["reflect"] = {"length_residual": refl.length_residual(np.arange(0, refl.n_rays, max(1, refl.n_rays // 32))),
                                 "comparability": reflect.audit_ray_comparability(refl, seed=cfg.seed),
                                 "power_law": reflect.audit_power_law(refl, seed=cfg.seed)}
        with _stage("refine"):
            kids = [r for k in sorted(mesh.qref) if k[0] <= cfg.k_max for r in mesh.qref[k]]
            qs = [mesh.q[k] for k in sorted(mesh.q) if k[0] <= cfg.k_max]
            dist_ids = {mesh.qt[k].id: v for k, v in mesh.dist_qt.items()}
            rr = {"children": len(kids)}
            if full_audits:
                bal = refine.balance_audit(refl, kids)
                rr["balance_band"] = [min(b.min_ratio for b in bal), max(b.max_ratio for b in bal)]
                cen = [refine.k_large_census(mesh.qref[(q.level, q.index)], q, mesh.dist_qt[(q.level, q.index)])
                       for q in qs]
                rr["census_max"] = max(c.max_count for c in cen)
                adj = refine.polar_neighbor_graph(kids)
                rr["neighbors"] = refine.neighbor_audit(kids, adj)
                per: dict = {}
                for r, b in zip(kids, bal):
                    d = per.setdefault(str(r.level), {"balance_band": [np.inf, 0.0], "census_max": 0, "max_degree": 0})
                    d["balance_band"] = [min(d["balance_band"][0], b.min_ratio), max(d["balance_band"][1], b.max_ratio)]
                    d["max_degree"] = max(d["max_degree"], len(adj[r.id]))
                for q, c in zip(qs, cen):
                    d = per[str(q.level)]
                    d["census_max"] = max(d["census_max"], c.max_count)
                rr["per_level"] = per
                rr["size"] = refine.size_audit(refl, kids, dist_ids)
            report["refine"] = rr
        with _stage("edges"):
            edges.lipschitz_partition(mesh, cfg.eps)
            er = {"level_curves": mesh.audits["level_curves"]}
            if full_audits:
                er["lipschitz"] = edges.lipschitz_audit(mesh, cfg.eps)
                er["chart_bilip"] = chart_bilip_audit(mesh)
            report["edges"] = er
        with _stage("tukia_assembly"):
            f = assemble_reflection(mesh)
            inner_core_extend(f)
            g = f.audits["glue"]
            if g["residual"] > cfg.tol_glue / 2 * g["tolerance"]:
                raise GlueViolation(f"glue residual {g['residual']:.3g} at {g['worst_edge']}")
            report["assembly"] = {"glue": g, "core_interface": f.audits["core_interface"],
                                  "boundary_trace": boundary_trace(f), "foldover": foldover_audit(f),
                                  "orientation": f.meta["orientation"], "core_radius_cap": f.meta["core_radius_cap"]}
        with _stage("report"):
            dr, extra = distortion_report(f, cfg.grid)
            dr.boundary_sup_error = report["assembly"]["boundary_trace"]["sup_error"]
            dr.glue_sup_error = g["residual"]
            report["distortion"] = dr.to_dict()
        for w in wlist:
            caught.append(f"{w.category.__name__}: {w.message}")
    report["warnings"] = caught
    report["per_rect"] = extra
    return Artifacts(cfg, curve, refl, mesh, f, report, caught)


def chart_bilip_audit(mesh: edges.CollarMesh, stride: int = 5) -> dict:
    """Bilipschitz estimates of source and target charts on every stride-th rectangle, per level."""
    out: dict = {}
    for (k, j) in sorted(mesh.qtref):
        for i, (rt, w) in enumerate(zip(mesh.qtref[(k, j)], mesh.wref[(k, j)])):
            if (j + i) % stride:
                continue
            a = edges.rect_chart(rt, mesh).bilip_estimate
            b = edges.rect_chart(w, mesh).bilip_estimate
            lv = out.setdefault(str(k), [0.0, 0.0])
            lv[0], lv[1] = max(lv[0], a), max(lv[1], b)
    return {"per_level_max": out}


# output ---------------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1)


def write_reports(art: Artifacts, out_dir: str) -> dict:
    """report.json, cells.csv, mesh.json and the input curve; returns the paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        rep = dict(art.report)
        per = rep.pop("per_rect")
        paths = {k: os.path.join(out_dir, v) for k, v in
                 (("report", "report.json"), ("cells", "cells.csv"), ("mesh", "mesh.json"), ("curve", "curve.json"))}
        with open(paths["report"], "w") as fh:
            fh.write(dumps(rep) + "\n")
        f = art.reflection
        T = f.tab
        with open(paths["cells"], "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["source", "target", "level", "index", "child", "dist_qt", "dist_r", "width_src",
                         "height_tgt", "max_ratio"])
            for i, (rt, R, W) in enumerate(f.children):
                wr.writerow([rt.id, W.id, int(T["k"][i]), int(T["j"][i]), rt.meta["child"], repr(float(T["dt"][i])),
                             repr(float(T["d"][i])), repr(float(T["wt"][i])), repr(float(T["H"][i])),
                             repr(float(per["per_rect_max"][i]))])
        m = art.mesh
        fam = {"Qt": [m.qt[k] for k in sorted(m.qt) if k[0] <= m.k_max],
               "Q": [m.q[k] for k in sorted(m.q) if k[0] <= m.k_max],
               "Qref": [r for k in sorted(m.qref) if k[0] <= m.k_max for r in m.qref[k]],
               "Qtref": [r for k in sorted(m.qtref) for r in m.qtref[k]],
               "Wref": [r for k in sorted(m.wref) for r in m.wref[k]]}
        mesh_rec = {"families": {k: [r.to_record() for r in v] for k, v in fam.items()},
                    "image_grids": image_grids(f)}
        with open(paths["mesh"], "w") as fh:
            fh.write(dumps(mesh_rec) + "\n")
        with open(paths["curve"], "w") as fh:
            fh.write(dumps({"name": art.report["curve"]["name"], "vertices": art.curve.vertices}) + "\n")
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            fh.write(dumps(art.config.to_dict()) + "\n")
    except OSError as exc:
        raise IOFailure(str(exc)) from exc
    return paths


# plots ------------------------------------------------------------------------------------

PLOTS = ("curve.svg", "interior_partition.svg", "exterior_partition.svg", "image_grid.svg", "distortion.svg")


def emit_plots(out_dir: str) -> list[str]:
    """Five layered SVGs from the files written by write_reports."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.collections import LineCollection, PolyCollection

    plt.rcParams["svg.hashsalt"] = "preflect"
    try:
        with open(os.path.join(out_dir, "curve.json")) as fh:
            curve = np.asarray(json.load(fh)["vertices"], float)
        with open(os.path.join(out_dir, "mesh.json")) as fh:
            mesh = json.load(fh)
        with open(os.path.join(out_dir, "report.json")) as fh:
            report = json.load(fh)
        cells = []
        with open(os.path.join(out_dir, "cells.csv")) as fh:
            cells = list(csv.DictReader(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise IOFailure(f"cannot read run artifacts: {exc}") from exc
    fams = mesh.get("families", {})
    cmap = plt.get_cmap("viridis")

    def loops(fam):
        out, lev = [], []
        for r in fams.get(fam, []):
            e = r["edges"]
            z = e["HE"][:-1] + e["right"][:-1] + e["HE_flat"][::-1][:-1] + e["left"][::-1]
            out.append(np.asarray(z))
            lev.append(r["level"])
        return out, np.asarray(lev, float)

    def base(ax):
        c = np.vstack([curve, curve[:1]])
        ax.plot(c[:, 0], c[:, 1], color="k", lw=0.8, gid="curve")
        ax.set_aspect("equal")
        ax.axis("off")

    def layer(ax, fam, alpha=1.0):
        ls, lev = loops(fam)
        if not ls:
            return
        top = max(lev.max(), 1.0)
        lc = LineCollection(ls, colors=cmap(lev / top), linewidths=0.4, alpha=alpha)
        lc.set_gid(fam)
        ax.add_collection(lc)

    paths = []
    try:
        specs = [("curve.svg", []), ("interior_partition.svg", ["Qt", "Qtref"]),
                 ("exterior_partition.svg", ["Q", "Qref", "Wref"])]
        for fname, layers in specs:
            fig, ax = plt.subplots(figsize=(6, 6))
            base(ax)
            for i, fam in enumerate(layers):
                layer(ax, fam, 0.5 if i == 0 else 1.0)
            ax.autoscale_view()
            fig.savefig(os.path.join(out_dir, fname), metadata={"Date": None})
            plt.close(fig)
            paths.append(os.path.join(out_dir, fname))
        fig, ax = plt.subplots(figsize=(6, 6))
        base(ax)
        segs = []
        for g in mesh.get("image_grids", []):
            a = np.asarray(g["grid"])
            segs.extend(list(a))
            segs.extend(list(a.transpose(1, 0, 2)))
        if segs:
            lc = LineCollection(segs, colors="tab:blue", linewidths=0.3)
            lc.set_gid("image_grid")
            ax.add_collection(lc)
        ax.autoscale_view()
        fig.savefig(os.path.join(out_dir, "image_grid.svg"), metadata={"Date": None})
        plt.close(fig)
        paths.append(os.path.join(out_dir, "image_grid.svg"))
        fig, ax = plt.subplots(figsize=(6.6, 6))
        base(ax)
        ls, _ = loops("Qtref")
        q = report.get("distortion", {}).get("quantiles", {})
        lo, hi = float(q.get("q50", 1.0)), float(q.get("q99", 2.0))
        if ls and cells:
            vals = np.array([float(c["max_ratio"]) for c in cells])
            pc = PolyCollection(ls, array=np.clip(vals, lo, hi), cmap="magma", edgecolors="none")
            pc.set_clim(lo, hi)
            pc.set_gid("distortion")
            ax.add_collection(pc)
            fig.colorbar(pc, ax=ax, label="max |Df|^r/|J| per rectangle")
        ax.autoscale_view()
        fig.savefig(os.path.join(out_dir, "distortion.svg"), metadata={"Date": None})
        plt.close(fig)
        paths.append(os.path.join(out_dir, "distortion.svg"))
    except OSError as exc:
        raise IOFailure(str(exc)) from exc
    return paths
