"""Deterministic SVG pictures of balls, IDLA clusters and sandpiles."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.spatial import ConvexHull

from .errors import DomainError, ResourceError
from .gasket import ORIGIN, Ball, GraphFamily, ball
from .idla import Cluster, StoppedState, radii
from .sandpile import SandState

DEFAULT_COLORS = {
    "occupied": "#1f4e79",
    "ball_only": "#f4b183",
    "outside_ball": "#c00000",
    "paused": "#70ad47",
    "outline": "#404040",
}


@dataclass
class RenderSpec:
    width: int = 800
    height: int = 800
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLORS))
    stroke_width: float = 1.0
    outlines: tuple = ("r_in", "n", "r_out")
    margin: float = 10.0
    min_spacing: float = 0.5  # pixels between adjacent vertices

    def color(self, key: str) -> str:
        return self.colors.get(key, DEFAULT_COLORS[key])


def _num(x: float) -> str:
    # shortest round-trip repr of a value pinned to 1/1000 pixel
    v = round(float(x), 3)
    if v == 0:
        v = 0.0
    s = repr(v)
    return s[:-2] if s.endswith(".0") else s


class _Canvas:
    def __init__(self, points: np.ndarray, spec: RenderSpec):
        if len(points) == 0:
            raise DomainError("nothing to render")
        lo = points.min(axis=0) - 0.5
        hi = points.max(axis=0) + 0.5
        span = np.maximum(hi - lo, 1.0)
        avail = np.array([spec.width, spec.height], dtype=float) - 2 * spec.margin
        if (avail <= 0).any():
            raise ResourceError("viewport smaller than its margins")
        self.scale = float(min(avail / span))
        if self.scale < spec.min_spacing:
            raise ResourceError(
                f"viewport {spec.width}x{spec.height} too small: vertex spacing would be {self.scale:.3g}px"
            )
        self.lo, self.hi, self.spec = lo, hi, spec
        self.items: list[str] = []

    def xy(self, p) -> tuple[str, str]:
        x = self.spec.margin + (p[0] - self.lo[0]) * self.scale
        y = self.spec.margin + (self.hi[1] - p[1]) * self.scale  # svg y points down
        return _num(x), _num(y)

    def marker(self, p, color: str, opacity: float | None = None) -> None:
        x, y = self.xy(p)
        r = _num(max(0.35 * self.scale, 0.25))
        extra = f' fill-opacity="{_num(opacity)}"' if opacity is not None else ""
        self.items.append(f'<circle class="v" cx="{x}" cy="{y}" r="{r}" fill="{color}"{extra}/>')

    def outline(self, pts: np.ndarray, label: str) -> None:
        if len(pts) >= 3:
            try:
                hull = pts[ConvexHull(pts).vertices]
            except Exception:  # collinear sets
                hull = pts
        else:
            hull = pts
        coords = " ".join(",".join(self.xy(p)) for p in hull)
        sw = _num(self.spec.stroke_width)
        color = self.spec.color("outline")
        self.items.append(
            f'<polygon class="outline" data-label="{label}" points="{coords}" fill="none" stroke="{color}" stroke-width="{sw}"/>'
        )

    def document(self, title: str) -> str:
        w, h = self.spec.width, self.spec.height
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">\n'
            f"<title>{title}</title>\n"
            f'<rect width="{w}" height="{h}" fill="white"/>\n'
        )
        return head + "\n".join(self.items) + "\n</svg>\n"


def _points(vs: Iterable) -> np.ndarray:
    return np.array([v.euclid() for v in vs], dtype=float).reshape(-1, 2)


def _ball_points(family: GraphFamily, r: int) -> np.ndarray:
    return _points(ball(family, ORIGIN, max(r, 0)).dist)


def render_ball(b: Ball, spec: RenderSpec | None = None) -> str:
    spec = spec or RenderSpec()
    members = list(b.dist)
    canvas = _Canvas(_points(members), spec)
    for v in members:
        canvas.marker(v.euclid(), spec.color("occupied"))
    return canvas.document(f"ball radius {b.radius}")


def render_cluster(cluster: Cluster, spec: RenderSpec | None = None, paused: Iterable = ()) -> str:
    """Cluster sites coloured by membership of ``B_o(n)``, ``B_o(n)`` holes, paused
    particles, and the outlines of ``B_o(r)`` for ``r`` in ``spec.outlines``."""
    spec = spec or RenderSpec()
    fam = cluster.family
    stats = radii(cluster)
    nominal = ball(fam, ORIGIN, stats.n)
    occ = cluster.occupied
    paused = list(paused)
    holes = [v for v in nominal.dist if v not in occ]
    pts = _points(list(occ) + holes + paused)
    canvas = _Canvas(pts, spec)
    for v in cluster.settle_order():
        canvas.marker(v.euclid(), spec.color("occupied" if v in nominal else "outside_ball"))
    for v in holes:
        canvas.marker(v.euclid(), spec.color("ball_only"))
    for v in paused:
        canvas.marker(v.euclid(), spec.color("paused"))
    radius_of = {"r_in": stats.r_in, "n": stats.n, "r_out": stats.r_out}
    for label in spec.outlines:
        canvas.outline(_ball_points(fam, radius_of[label]), label)
    return canvas.document(f"IDLA cluster, {cluster.particle_count} particles")


def render_sandpile(state: SandState, spec: RenderSpec | None = None, tol: float = 1e-12) -> str:
    """Sites with positive mass, opacity proportional to mass (capped at 1)."""
    spec = spec or RenderSpec()
    mass = state.mass
    idx = np.nonzero(mass > tol)[0]
    verts = [state.table.vertices[i] for i in idx]
    canvas = _Canvas(_points(verts), spec)
    for i, v in zip(idx, verts):
        canvas.marker(v.euclid(), spec.color("occupied"), min(1.0, float(mass[i])))
    return canvas.document(f"divisible sandpile, total mass {_num(state.total_mass)}")


def render(obj, spec: RenderSpec | None = None) -> str:
    if isinstance(obj, Ball):
        return render_ball(obj, spec)
    if isinstance(obj, StoppedState):
        return render_cluster(obj.cluster, spec, obj.paused)
    if isinstance(obj, Cluster):
        return render_cluster(obj, spec)
    if isinstance(obj, SandState):
        return render_sandpile(obj, spec)
    raise DomainError(f"cannot render {type(obj).__name__}")
