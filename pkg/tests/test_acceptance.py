"""Acceptance criteria 1-7 at their stated tolerances."""

import filecmp
import os
import time

import numpy as np
import pytest

from preflect import curves
from preflect.conformal import build_exterior_map, build_interior_map, uniform_weighted_length, weighted_length
from preflect.curve_core import three_point_constant
from preflect.metrics import quasihyperbolic_distance, subhyperbolic_distance
from preflect.reflect import StableReflection, stable_reflect
from preflect.tukia_assembly import (boundary_bilip, distortion_ratio, linear_boundary, random_boundary_map,
                                     tukia_extend)
from preflect.verify import PipelineConfig, run_pipeline, write_reports

P = 1.5


# 1 -----------------------------------------------------------------------------

def test_1_disk_stable_reflection(verdict):
    t0 = time.perf_counter()
    c = curves.circle(512)
    refl = StableReflection(build_interior_map(c), build_exterior_map(c), P)
    t = np.linspace(0.5, 0.99, 100)
    th = np.random.default_rng(1).uniform(0, 2 * np.pi, 100)
    w = stable_reflect(refl, t * np.exp(1j * th))
    dt = time.perf_counter() - t0
    want = 1 + 4 * (1 - t)
    err = float(np.max(np.abs(np.abs(w) - want) / want))
    ok = verdict(1, err <= 1e-3 and dt <= 10, f"max rel error {err:.2e} (<= 1e-3), {dt:.1f} s (<= 10 s)")
    assert ok


# 2 -----------------------------------------------------------------------------

def test_2_weighted_length_quadrature(verdict):
    c = curves.circle(512)
    seg = np.array([0.75, 1.0], dtype=complex)
    depth = 40
    err = abs(weighted_length(c, seg, -0.5, depth=depth) - 1.0)
    n = 16 * depth + 1  # samples used by the dyadic rule
    err_u = abs(uniform_weighted_length(c, seg, -0.5, n) - 1.0)
    ok = verdict(2, err <= 1e-3 and err_u >= 10 * err,
                 f"dyadic error {err:.2e} (<= 1e-3), uniform error {err_u:.2e} at {n} samples "
                 f"({err_u / err:.0f}x, >= 10x)")
    assert ok


# 3 -----------------------------------------------------------------------------

def test_3_metric_oracles(verdict):
    t0 = time.perf_counter()
    c = curves.circle(512)
    qh = quasihyperbolic_distance(c, "interior", 0, 0.9, 0.05)
    sh = subhyperbolic_distance(c, "interior", 0.5, 0, 0.99, 0.05)
    tp = three_point_constant(c, 128)
    dt = time.perf_counter() - t0
    rel = [abs(qh / np.log(10) - 1), abs(sh / 1.8 - 1), abs(tp / np.sqrt(2) - 1)]
    ok = verdict(3, max(rel) <= 0.02 and dt <= 60,
                 f"qh {qh:.4f}, sub {sh:.4f}, three-point {tp:.4f}; max rel error {max(rel):.1e} (<= 2%), "
                 f"{dt:.1f} s (<= 60 s)")
    assert ok


# 4 -----------------------------------------------------------------------------

def test_4_tukia_suite(verdict):
    u = np.linspace(0, 1, 33)
    X, Y = np.meshgrid(u, u)
    C, L, folds = {}, 0.0, 0
    for a in (1.0, 4.0, 16.0):
        rng = np.random.default_rng(int(a))
        worst = 0.0
        for _ in range(200):
            bm = random_boundary_map(a, rng, P)
            L = max(L, boundary_bilip(bm, P, 200))
            F = tukia_extend(bm)
            r, _ = distortion_ratio(F.jacobian(X, Y), P)
            worst = max(worst, float(np.max(np.maximum(r, 1 / r))))
            folds += F.foldovers(33)
        C[a] = worst
    spread = max(C.values()) / min(C.values()) - 1
    exact = 0.0
    for a in (1.0, 4.0, 16.0):
        F = tukia_extend(linear_boundary(1, 1, a, a ** (P - 1)))
        x, y = F(X, Y)
        exact = max(exact, float(np.max(np.abs(x - a * X))), float(np.max(np.abs(y - a ** (P - 1) * Y))))
    ok = verdict(4, L <= 2 and spread <= 0.2 and folds == 0 and exact <= 1e-12,
                 f"L {L:.3f} (<= 2), C per a {', '.join(f'{v:.3f}' for v in C.values())}, spread {spread:.1%} "
                 f"(<= 20%), fold-over quads {folds}, linear error {exact:.1e} (<= 1e-12)")
    assert ok


# 5 and 6: full pipeline runs at k_max 4 and 5 -------------------------------------

@pytest.fixture(scope="module")
def runs():
    out = {}
    for name in ("circle", "square"):
        curve = curves.CURVES[name]()
        for k in (4, 5):
            t0 = time.perf_counter()
            art = run_pipeline(PipelineConfig(k_max=k), curve, name)
            out[(name, k)] = (art.report, time.perf_counter() - t0)
    return out


@pytest.mark.slow
@pytest.mark.parametrize("name", ["circle", "square"])
def test_5_partition_invariants(runs, name, verdict):
    r4, _ = runs[(name, 4)]
    r5, _ = runs[(name, 5)]
    f4, f5 = r4["refine"], r5["refine"]
    wh = r5["whitney"]["ratio"]
    (lo4, hi4), (lo5, hi5) = f4["balance_band"], f5["balance_band"]
    # adding a level leaves the audits of the shared levels untouched (the top level
    # has no upper neighbours, so its degree is excluded)
    shared = [str(k) for k in range(1, 5)]
    same = all(f4["per_level"][k]["balance_band"] == f5["per_level"][k]["balance_band"]
               and f4["per_level"][k]["census_max"] == f5["per_level"][k]["census_max"] for k in shared)
    same = same and all(f4["per_level"][k]["max_degree"] == f5["per_level"][k]["max_degree"] for k in shared[:-1])
    c4, c5 = f4["census_max"], f5["census_max"]
    d4, d5 = f4["neighbors"]["max_degree"], f5["neighbors"]["max_degree"]
    checks = [wh <= 2, same, lo5 >= 0.9 * lo4 and hi5 <= 1.1 * hi4, c5 <= 6, d5 <= d4,
              f5["neighbors"]["symmetric"]]
    detail = (f"{name}: lambda level ratio {wh:.3f} (<= 2), balance band [{lo4:.3f}, {hi4:.3f}] -> "
              f"[{lo5:.3f}, {hi5:.3f}] (within 10%), census max {c4} -> {c5} (<= 6), degree {d4} -> {d5}, "
              f"shared levels {'identical' if same else 'differ'}")
    if name == "circle":
        s = r5["reflect"]["power_law"]["slope_mean"]
        checks.append(abs(s - (P - 1)) <= 0.1)
        detail += f", power-law slope {s:.3f} (0.5 +- 0.1)"
    ok = verdict(5, all(checks), detail)
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("name", ["circle", "square"])
def test_6_distortion_stability(runs, name, verdict):
    (r4, t4), (r5, t5) = runs[(name, 4)], runs[(name, 5)]
    k4, k5 = r4["distortion"]["quantiles"]["q99"], r5["distortion"]["quantiles"]["q99"]
    inv = [r["distortion"]["inverse_quantiles"]["q99"] for r in (r4, r5)]
    drift = abs(k5 / k4 - 1)
    trace = max(r["assembly"]["boundary_trace"]["ratio"] for r in (r4, r5))
    glue = max(r["assembly"]["glue"]["residual"] / r["assembly"]["glue"]["tolerance"] for r in (r4, r5))
    q = r5["distortion"]["q"]
    checks = [np.isfinite([k4, k5]).all(), drift <= 0.2, trace <= 2, glue <= 1, np.isfinite(inv).all(),
              q == pytest.approx(5.0), t4 + t5 <= 300]
    ok = verdict(6, all(checks),
                 f"{name}: K99 {k4:.3f} -> {k5:.3f} ({drift:.1%}, <= 20%), inverse K99 {inv[0]:.3g} -> {inv[1]:.3g} "
                 f"(q = {q:g}), trace ratio {trace:.3f} (<= 2), glue/tolerance {glue:.2f} (<= 1), "
                 f"{t4 + t5:.0f} s (<= 300 s)")
    assert ok


# 7 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_7_determinism(tmp_path, verdict):
    dirs = []
    for i in range(2):
        art = run_pipeline(PipelineConfig(k_max=3), curves.square(), "square")
        d = tmp_path / f"run{i}"
        write_reports(art, str(d))
        dirs.append(str(d))
    names = sorted(os.listdir(dirs[0]))
    _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
    ok = verdict(7, not mismatch and not errors, f"{len(names)} files compared, {len(mismatch)} differ")
    assert ok
