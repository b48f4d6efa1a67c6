"""Dyadic partition of the annulus, its conformal image and Whitney audits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely

from .conformal import ConformalMap
from .curve_core import BoundaryArc, JordanCurve, point_set_diameter
from .errors import BadLevel, TouchesBoundary

EDGE_SAMPLES = 17


@dataclass(frozen=True)
class AnnulusCell:
    k: int
    j: int

    @property
    def r_lo(self) -> float:
        return 1.0 - 2.0 ** -self.k

    @property
    def r_hi(self) -> float:
        return 1.0 - 2.0 ** -(self.k + 1)

    @property
    def th_lo(self) -> float:
        return self.j * 2.0 ** -self.k * np.pi

    @property
    def th_hi(self) -> float:
        return (self.j + 1) * 2.0 ** -self.k * np.pi

    def upper_neighbors(self):
        return AnnulusCell(self.k + 1, 2 * self.j), AnnulusCell(self.k + 1, 2 * self.j + 1)

    def lower_neighbor(self):
        return AnnulusCell(self.k - 1, self.j // 2) if self.k > 1 else None


def cell_count(k_max: int) -> int:
    return 2 ** (k_max + 2) - 4


def dyadic_annulus(k_max: int) -> list[AnnulusCell]:
    if int(k_max) != k_max or k_max < 1:
        raise BadLevel(f"k_max must be an integer >= 1, got {k_max}")
    return [AnnulusCell(k, j) for k in range(1, int(k_max) + 1) for j in range(2 ** (k + 1))]


@dataclass
class PartitionRect:
    """Topological rectangle with two vertical edges on rays and two horizontal edges.

    `he` is the horizontal edge nearer the curve, `he_flat` the other one. All
    four polylines run in the direction of increasing angle (horizontal) or
    away from the curve (vertical).
    """

    id: str
    family: str
    level: int
    index: int
    he: np.ndarray
    he_flat: np.ndarray
    left: np.ndarray
    right: np.ndarray
    shadow: BoundaryArc | None = None
    parent: str | None = None
    grandparent: str | None = None
    children: list = field(default_factory=list)
    partner: str | None = None
    meta: dict = field(default_factory=dict)

    def loop(self) -> np.ndarray:
        """Closed boundary, without the repeated first point."""
        return np.concatenate([self.he[:-1], self.right[:-1], self.he_flat[::-1][:-1], self.left[::-1][:-1]])

    def polygon(self):
        z = self.loop()
        return shapely.Polygon(np.column_stack([z.real, z.imag]))

    @property
    def diameter(self) -> float:
        return point_set_diameter(self.loop())

    def dist_to(self, curve: JordanCurve) -> float:
        return float(shapely.distance(self.polygon(), curve.ring))

    def to_record(self) -> dict:
        def pl(z):
            return [[float(a), float(b)] for a, b in zip(np.real(z), np.imag(z))]

        rec = {
            "id": self.id,
            "family": self.family,
            "level": self.level,
            "index": self.index,
            "edges": {"HE": pl(self.he), "HE_flat": pl(self.he_flat), "left": pl(self.left), "right": pl(self.right)},
            "lineage": {"parent": self.parent, "grandparent": self.grandparent, "children": list(self.children)},
            "partner": self.partner,
        }
        if self.shadow is not None:
            rec["shadow"] = [self.shadow.start_param, self.shadow.end_param]
        return rec


def rect_id(family: str, k: int, j: int, *rest) -> str:
    return ":".join([family, str(k), str(j), *map(str, rest)])


def image_partition(cm: ConformalMap, cells, n_edge: int = EDGE_SAMPLES) -> list[PartitionRect]:
    """Images of the annulus cells under the interior map (family Qt)."""
    cells = list(cells)
    n = max(int(n_edge), 2)
    u = np.linspace(0.0, 1.0, n)
    blocks = []
    for c in cells:
        th = c.th_lo + u * (c.th_hi - c.th_lo)
        r = c.r_hi + u * (c.r_lo - c.r_hi)  # from the curve side inward
        blocks.append(np.concatenate([
            c.r_hi * np.exp(1j * th),
            c.r_lo * np.exp(1j * th),
            r * np.exp(1j * c.th_lo),
            r * np.exp(1j * c.th_hi),
        ]))
    pts = cm.forward(np.concatenate(blocks)) if blocks else np.zeros(0, complex)
    out = []
    for i, c in enumerate(cells):
        b = pts[i * 4 * n:(i + 1) * 4 * n]
        s0 = float(cm.param_of_angle(c.th_lo))
        s1 = float(cm.param_of_angle(c.th_hi))
        rect = PartitionRect(
            id=rect_id("Qt", c.k, c.j), family="Qt", level=c.k, index=c.j,
            he=b[:n], he_flat=b[n:2 * n], left=b[2 * n:3 * n], right=b[3 * n:],
            shadow=BoundaryArc(cm.curve, s0, s1),
            meta={"cell": c},
        )
        if c.k > 1:
            rect.parent = rect_id("Qt", c.k - 1, c.j // 2)
        out.append(rect)
    return out


def annulus_rect(c: AnnulusCell, n_edge: int = EDGE_SAMPLES) -> PartitionRect:
    """The cell itself as a rectangle (family P), edges in the disk."""
    u = np.linspace(0.0, 1.0, n_edge)
    th = c.th_lo + u * (c.th_hi - c.th_lo)
    r = c.r_hi + u * (c.r_lo - c.r_hi)
    return PartitionRect(rect_id("P", c.k, c.j), "P", c.k, c.j,
                         he=c.r_hi * np.exp(1j * th), he_flat=c.r_lo * np.exp(1j * th),
                         left=r * np.exp(1j * c.th_lo), right=r * np.exp(1j * c.th_hi), meta={"cell": c})


@dataclass
class WhitneyReport:
    lam: float
    diam: float
    dist_to_curve: float
    inradius: float


def set_whitney(poly, curve: JordanCurve) -> WhitneyReport:
    """Whitney constant of a polygonal set inside the curve's complement."""
    dist = float(shapely.distance(poly, curve.ring))
    if dist <= curve.snap_tol:
        raise TouchesBoundary("set touches the curve")
    xy = shapely.get_coordinates(poly.exterior)
    diam = point_set_diameter(xy[:, 0] + 1j * xy[:, 1])
    circ = shapely.maximum_inscribed_circle(poly, tolerance=1e-4 * diam)
    inr = float(circ.length)
    lam = max(diam / dist, dist / diam, diam / inr)
    return WhitneyReport(lam, diam, dist, inr)


def whitney_lambda(rect: PartitionRect, curve: JordanCurve) -> WhitneyReport:
    return set_whitney(rect.polygon(), curve)


def whitney_audit(rects, curve: JordanCurve) -> dict:
    """Per-level maximum of lambda and the ratio of the extreme per-level maxima."""
    per = {}
    for r in rects:
        lam = whitney_lambda(r, curve).lam
        per[r.level] = max(per.get(r.level, 0.0), lam)
    vals = np.array(list(per.values()))
    return {"per_level_max": {int(k): float(v) for k, v in sorted(per.items())},
            "ratio": float(vals.max() / vals.min()) if vals.size else float("nan")}


def intersection_length_audit(cm: ConformalMap, rects, n_rays: int = 5) -> dict:
    """Ray-segment length inside each rectangle over its diameter, and
    dist(Qt, shadow)/diam(Qt); both reported as [min, max] bands."""
    ratios, shadow_ratios = [], []
    for r in rects:
        c = r.meta["cell"]
        th = c.th_lo + (np.arange(n_rays) + 0.5) / n_rays * (c.th_hi - c.th_lo)
        t = np.linspace(c.r_hi, c.r_lo, 17)
        seg = cm.forward(t[None, :] * np.exp(1j * th[:, None]))
        lens = np.sum(np.abs(np.diff(seg, axis=1)), axis=1)
        d = r.diameter
        ratios.extend(lens / d)
        sh = r.shadow.polyline(8)
        line = shapely.LineString(np.column_stack([sh.real, sh.imag]))
        shadow_ratios.append(float(shapely.distance(r.polygon(), line)) / d)
    ratios = np.array(ratios)
    shadow_ratios = np.array(shadow_ratios)
    return {"intersection_band": [float(ratios.min()), float(ratios.max())],
            "shadow_dist_over_diam_max": float(shadow_ratios.max()) if shadow_ratios.size else float("nan")}
