"""Doubled Sierpinski gasket graph on exact triangular-lattice addresses.

A lattice point ``(a, b)`` sits at ``a*(1, 0) + b*(1/2, sqrt(3)/2)``.  The
one-sided gasket is the union of the retained upward unit cells, where the
cell with lower corner ``(a, b)`` is retained iff every base-``scale`` digit
pair of ``(a, b)`` is one of the family's copy shifts.  For the ordinary
gasket (scale 2, shifts (0,0), (1,0), (0,1)) this is ``a & b == 0``.  Each
lattice edge lies in exactly one upward cell, so adjacency is a constant-time
test.

The doubled graph glues the mirror image of the one-sided gasket at the
origin.  A vertex carries a side tag instead of mirrored coordinates; the
origin is the only shared vertex and is always stored with ``Side.RIGHT``.
"""
from __future__ import annotations

import enum
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, NamedTuple

import numpy as np

from .errors import AddressError, DomainError, ResourceError

ALPHA = math.log(3) / math.log(2)  # volume growth exponent
BETA = math.log(5) / math.log(2)  # exit time exponent
SQRT3 = math.sqrt(3.0)


class Side(enum.IntEnum):
    LEFT = -1
    RIGHT = 1


_SIDES = {-1: Side.LEFT, 1: Side.RIGHT}


class LatticePoint(NamedTuple):
    a: int
    b: int

    def euclid(self) -> tuple[float, float]:
        return (self.a + self.b / 2, self.b * SQRT3 / 2)


class _VertexTuple(NamedTuple):
    side: Side
    a: int
    b: int


class Vertex(_VertexTuple):
    __slots__ = ()

    def __new__(cls, side, a: int, b: int):
        if a == 0 and b == 0:
            side = Side.RIGHT
        elif type(side) is not Side:
            try:
                side = _SIDES[side]
            except KeyError:
                side = Side[str(side).upper()]
        return super().__new__(cls, side, a, b)

    @property
    def point(self) -> LatticePoint:
        return LatticePoint(self.a, self.b)

    @property
    def is_origin(self) -> bool:
        return self.a == 0 and self.b == 0

    def euclid(self) -> tuple[float, float]:
        return (self.side * (self.a + self.b / 2), self.b * SQRT3 / 2)

    def swapped(self) -> "Vertex":
        return Vertex(-self.side, self.a, self.b)

    def __str__(self) -> str:
        if self.is_origin:
            return "o"
        return f"{'L' if self.side < 0 else 'R'}:{self.a},{self.b}"

    def __repr__(self) -> str:
        return f"Vertex({self})"

    @classmethod
    def parse(cls, text: str) -> "Vertex":
        """Parse ``o``, ``R:a,b`` or ``L:a,b``."""
        text = text.strip()
        if text in ("o", "origin", "0"):
            return ORIGIN
        try:
            side, coords = text.split(":")
            a, b = (int(c) for c in coords.split(","))
            return cls({"L": Side.LEFT, "R": Side.RIGHT}[side.strip().upper()], a, b)
        except (ValueError, KeyError):
            raise AddressError(f"cannot parse vertex address {text!r}") from None


ORIGIN = Vertex(Side.RIGHT, 0, 0)


def Right(a: int, b: int) -> Vertex:
    return Vertex(Side.RIGHT, a, b)


def Left(a: int, b: int) -> Vertex:
    return Vertex(Side.LEFT, a, b)


class Variant(str, enum.Enum):
    DOUBLED = "doubled"
    ONE_SIDED = "one-sided"
    NINE_COPY = "nine-copy"


SG_SHIFTS = ((0, 0), (1, 0), (0, 1))
# the six upward cells of a side-3 subdivision
SUBDIV3_SHIFTS = ((0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2))
# the nine upward cells of a side-4 subdivision with the centre cell removed;
# this placement generates the ordinary gasket again
SUBDIV4_NINE_SHIFTS = ((0, 0), (1, 0), (2, 0), (3, 0), (0, 1), (2, 1), (0, 2), (1, 2), (0, 3))

# (step a, step b, cell offset a, cell offset b): the upward cell containing each edge
_STEPS = (
    (1, 0, 0, 0),
    (0, 1, 0, 0),
    (-1, 1, -1, 0),
    (-1, 0, -1, 0),
    (0, -1, 0, -1),
    (1, -1, 0, -1),
)


@dataclass(frozen=True)
class GraphFamily:
    variant: Variant = Variant.DOUBLED
    scale: int = 2
    shifts: tuple[tuple[int, int], ...] = SG_SHIFTS

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "shifts", tuple(sorted(tuple(s) for s in self.shifts)))
        s = self.scale
        if s < 2:
            raise DomainError("scale must be at least 2")
        for i, j in self.shifts:
            if i < 0 or j < 0 or i + j > s - 1:
                raise DomainError(f"shift {(i, j)} does not fit in a side-{s} triangle")
        for corner in ((0, 0), (s - 1, 0), (0, s - 1)):
            if corner not in self.shifts:
                raise DomainError("copy shifts must include the three corner cells")

    @classmethod
    def doubled_sg(cls) -> "GraphFamily":
        return cls(Variant.DOUBLED)

    @classmethod
    def one_sided_sg(cls) -> "GraphFamily":
        return cls(Variant.ONE_SIDED)

    @classmethod
    def nine_copy(cls, scale: int = 3, shifts=SUBDIV3_SHIFTS) -> "GraphFamily":
        return cls(Variant.NINE_COPY, scale, shifts)

    @classmethod
    def from_name(cls, name: str) -> "GraphFamily":
        name = {"doubled": "doubled", "one-sided": "one-sided", "nine-copy": "nine-copy"}.get(name, name)
        try:
            variant = Variant(name)
        except ValueError:
            raise DomainError(f"unknown graph family {name!r}") from None
        if variant is Variant.NINE_COPY:
            return cls.nine_copy()
        return cls(variant)

    @property
    def doubled(self) -> bool:
        return self.variant is not Variant.ONE_SIDED

    @cached_property
    def _is_binary_sg(self) -> bool:
        return self.scale == 2 and self.shifts == tuple(sorted(SG_SHIFTS))

    @cached_property
    def _shift_set(self) -> frozenset:
        return frozenset(self.shifts)

    def cell_retained(self, a: int, b: int) -> bool:
        if a < 0 or b < 0:
            return False
        if self._is_binary_sg:
            return a & b == 0
        s, allowed = self.scale, self._shift_set
        while a or b:
            a, da = divmod(a, s)
            b, db = divmod(b, s)
            if (da, db) not in allowed:
                return False
        return True

    def is_point(self, a: int, b: int) -> bool:
        return self.cell_retained(a, b) or self.cell_retained(a - 1, b) or self.cell_retained(a, b - 1)

    def contains(self, v: Vertex) -> bool:
        if v.side is Side.LEFT and not self.doubled:
            return False
        return self.is_point(v.a, v.b)

    def half_neighbors(self, a: int, b: int) -> list[tuple[int, int]]:
        """Neighbours of ``(a, b)`` inside the one-sided gasket."""
        cell = self.cell_retained
        return [(a + da, b + db) for da, db, ca, cb in _STEPS if cell(a + ca, b + cb)]

    def neighbors(self, v: Vertex) -> list[Vertex]:
        if not self.contains(v):
            raise AddressError(f"{v} is not a vertex of the {self.variant.value} graph")
        if v.a == 0 and v.b == 0:
            out = [Vertex(Side.RIGHT, a, b) for a, b in self.half_neighbors(0, 0)]
            if self.doubled:
                out += [Vertex(Side.LEFT, a, b) for a, b in self.half_neighbors(0, 0)]
            return out
        side = v.side
        return [Vertex(side, a, b) for a, b in self.half_neighbors(v.a, v.b)]

    def max_degree(self) -> int:
        return 6 if not self._is_binary_sg else 4


DOUBLED_SG = GraphFamily.doubled_sg()
ONE_SIDED_SG = GraphFamily.one_sided_sg()


def neighbors(family: GraphFamily, v: Vertex) -> list[Vertex]:
    return family.neighbors(v)


def edge_exists(family: GraphFamily, u: Vertex, v: Vertex) -> bool:
    if not (family.contains(u) and family.contains(v)):
        return False
    return v in family.neighbors(u)


MAX_CONSTRUCT_LEVEL = 12


def recursive_construct(level: int, max_level: int = MAX_CONSTRUCT_LEVEL):
    """Materialise ``(V_level, E_level)`` of the one-sided gasket by the
    three-copy union recursion.

    Points are :class:`LatticePoint`; edges are sorted point pairs.  The
    upward copy shift ``(2^(n-1), 2^(n-1) sqrt 3)`` is the lattice shift
    ``(0, 2^n)``.
    """
    if level < 0:
        raise DomainError("level must be non-negative")
    if level > max_level:
        raise ResourceError(f"level {level} exceeds the construction cap {max_level}")
    p0, p1, p2 = LatticePoint(0, 0), LatticePoint(1, 0), LatticePoint(0, 1)
    verts = {p0, p1, p2}
    edges = {(p0, p1), (p1, p2), (p0, p2)}
    edges = {tuple(sorted(e)) for e in edges}
    for n in range(level):
        s = 1 << n
        new_v = set(verts)
        new_e = set(edges)
        for da, db in ((s, 0), (0, s)):
            new_v.update(LatticePoint(p.a + da, p.b + db) for p in verts)
            new_e.update(
                (LatticePoint(p.a + da, p.b + db), LatticePoint(q.a + da, q.b + db)) for p, q in edges
            )
        verts, edges = new_v, new_e
    return frozenset(verts), frozenset(edges)


@dataclass
class OracleAudit:
    level: int
    vertices: int
    edges: int
    vertex_mismatches: list
    edge_mismatches: list

    @property
    def mismatches(self) -> int:
        return len(self.vertex_mismatches) + len(self.edge_mismatches)


def oracle_audit(level: int, family: GraphFamily = ONE_SIDED_SG) -> OracleAudit:
    """Compare the closed-form oracle with :func:`recursive_construct` on ``V_level``.

    ``V_level`` is the oracle's vertex set inside the triangle ``a + b <= 2^level``
    and ``E_level`` its edges with both ends there.
    """
    verts, edges = recursive_construct(level)
    side = 1 << level
    oracle_v = {
        LatticePoint(a, b) for a in range(side + 1) for b in range(side + 1 - a) if family.is_point(a, b)
    }
    oracle_e = set()
    for p in oracle_v:
        for a, b in family.half_neighbors(p.a, p.b):
            q = LatticePoint(a, b)
            if q in oracle_v:
                oracle_e.add(tuple(sorted((p, q))))
    return OracleAudit(
        level,
        len(verts),
        len(edges),
        sorted(oracle_v ^ verts),
        sorted(oracle_e ^ set(edges)),
    )


@dataclass(frozen=True, eq=False)
class Ball:
    family: GraphFamily
    center: Vertex
    radius: int
    dist: dict = field(repr=False)  # member -> distance from center
    inner_boundary: frozenset = field(repr=False)

    @cached_property
    def members(self) -> frozenset:
        return frozenset(self.dist)

    def __contains__(self, v) -> bool:
        return v in self.dist

    def __len__(self) -> int:
        return len(self.dist)

    @cached_property
    def boundary_distance(self) -> dict:
        """Distance of every member to the inner boundary.

        A shortest path to the nearest inner boundary point never leaves the
        ball, so a multi-source BFS inside the members is exact.
        """
        out = {y: 0 for y in self.inner_boundary}
        queue = deque(self.inner_boundary)
        nb = self.family.neighbors
        while queue:
            x = queue.popleft()
            d = out[x] + 1
            for y in nb(x):
                if y in self.dist and y not in out:
                    out[y] = d
                    queue.append(y)
        return out

    def interior(self) -> list[Vertex]:
        return [v for v in self.dist if v not in self.inner_boundary]


def _bfs_ball(family: GraphFamily, center: Vertex, n: int) -> Ball:
    nb = family.neighbors
    dist = {center: 0}
    frontier = [center]
    for d in range(1, n + 1):
        nxt = []
        for x in frontier:
            for y in nb(x):
                if y not in dist:
                    dist[y] = d
                    nxt.append(y)
        frontier = nxt
    inner = frozenset(y for y in frontier if any(z not in dist for z in nb(y)))
    return Ball(family, center, n, dist, inner)


def ball(family: GraphFamily, center: Vertex, n: int) -> Ball:
    if n < 0:
        raise DomainError("radius must be non-negative")
    if not family.contains(center):
        raise AddressError(f"{center} is not a vertex of the {family.variant.value} graph")
    if center == ORIGIN:
        return _origin_ball(family, n)
    return _bfs_ball(family, center, n)


@lru_cache(maxsize=128)
def _origin_ball(family: GraphFamily, n: int) -> Ball:
    table = origin_table(family, n + 1)
    m = table.volume(n)
    verts = table.vertices[:m]
    dist = dict(zip(verts, table.dist[:m].tolist()))
    mask = table.inner_boundary_mask(n)
    inner = frozenset(table.vertices[i] for i in np.flatnonzero(mask))
    return Ball(family, ORIGIN, n, dist, inner)


def distance(family: GraphFamily, x: Vertex, y: Vertex) -> int:
    """Graph distance by bidirectional BFS."""
    for v in (x, y):
        if not family.contains(v):
            raise AddressError(f"{v} is not a vertex of the {family.variant.value} graph")
    if x == y:
        return 0
    nb = family.neighbors
    seen = ({x: 0}, {y: 0})
    fronts = ([x], [y])
    while fronts[0] and fronts[1]:
        side = 0 if len(fronts[0]) <= len(fronts[1]) else 1
        mine, other = seen[side], seen[1 - side]
        nxt = []
        best = None
        for u in fronts[side]:
            du = mine[u] + 1
            for w in nb(u):
                if w in other:
                    cand = du + other[w]
                    best = cand if best is None else min(best, cand)
                if w not in mine:
                    mine[w] = du
                    nxt.append(w)
        if best is not None:
            return best
        fronts = (nxt, fronts[1]) if side == 0 else (fronts[0], nxt)
    raise AddressError("vertices are not connected")  # unreachable on connected families


def ball_volume(family: GraphFamily, n: int) -> int:
    if n < 0:
        raise DomainError("radius must be non-negative")
    origin_table(family, n)
    return int(_TABLES[family].volumes[n])


def distance_to_inner_boundary(ball_obj: Ball, z: Vertex) -> int:
    if z not in ball_obj:
        raise DomainError(f"{z} lies outside the ball")
    return ball_obj.boundary_distance[z]


def inverse_volume(family: GraphFamily, count: int) -> tuple[int, bool]:
    """Largest ``n`` with ``b_n <= count`` and whether ``b_n == count``."""
    if count < 1:
        raise DomainError("count must be positive")
    r = 1
    while ball_volume(family, r) <= count:
        r *= 2
    table = origin_table(family, r)
    n = int(np.searchsorted(table.volumes, count, side="right")) - 1
    return n, int(table.volumes[n]) == count


# --- indexed origin tables -------------------------------------------------


@dataclass(frozen=True, eq=False)
class OriginTable:
    """BFS-ordered array form of ``B_o(radius)`` used by the numeric kernels.

    Row ``i`` of ``nbr`` lists the neighbours of ``vertices[i]`` in the fixed
    oracle order, padded with -1; neighbours beyond ``radius`` are also -1
    while ``deg`` keeps the true degree.  Because BFS order sorts vertices by
    distance, the table of a smaller radius is a prefix of a larger one and
    indices agree between them.
    """

    family: GraphFamily
    radius: int
    vertices: list
    nbr: np.ndarray
    deg: np.ndarray
    dist: np.ndarray
    volumes: np.ndarray  # volumes[r] = |B_o(r)| for r <= radius

    @cached_property
    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.vertices)}

    def __len__(self) -> int:
        return len(self.vertices)

    def volume(self, n: int) -> int:
        if n > self.radius:
            raise DomainError(f"radius {n} exceeds table radius {self.radius}")
        return int(self.volumes[n])

    def prefix(self, radius: int) -> "OriginTable":
        if radius > self.radius:
            raise DomainError("prefix radius exceeds table radius")
        if radius == self.radius:
            return self
        m = int(self.volumes[radius])
        nbr = self.nbr[:m].copy()
        nbr[nbr >= m] = -1
        return OriginTable(
            self.family, radius, self.vertices[:m], nbr, self.deg[:m].copy(), self.dist[:m].copy(),
            self.volumes[: radius + 1].copy(),
        )

    def inner_boundary_mask(self, n: int) -> np.ndarray:
        """Boolean mask of ``inner boundary of B_o(n)``; needs ``radius > n``."""
        if n >= self.radius:
            raise DomainError("table must extend one layer beyond the ball")
        out = np.zeros(len(self), dtype=bool)
        m = self.volume(n)
        rows = self.nbr[:m]
        nd = np.where(rows >= 0, self.dist[np.maximum(rows, 0)], -1)
        out[:m] = (self.dist[:m] == n) & (nd == n + 1).any(axis=1)
        return out

    def stop_mask(self, n: int) -> np.ndarray:
        """Mask of ``inner boundary of B_o(n)`` together with the ball's complement."""
        return self.inner_boundary_mask(n) | (self.dist > n)

    def indices(self, vs: Iterable[Vertex]) -> np.ndarray:
        idx = self.index
        try:
            return np.array([idx[v] for v in vs], dtype=np.int64)
        except KeyError as exc:
            raise DomainError(f"{exc.args[0]} is outside the table of radius {self.radius}") from None


def _build_table(family: GraphFamily, radius: int) -> OriginTable:
    verts = [ORIGIN]
    dist = {ORIGIN: 0}
    rows = []
    counts = [1]
    nb = family.neighbors
    frontier = [ORIGIN]
    for d in range(1, radius + 2):
        nxt = []
        for x in frontier:
            for y in nb(x):
                if y not in dist:
                    dist[y] = d
                    nxt.append(y)
        if d <= radius:
            verts.extend(nxt)
            counts.append(counts[-1] + len(nxt))
        frontier = nxt
    index = {v: i for i, v in enumerate(verts)}
    width = family.max_degree()
    nbr = np.full((len(verts), width), -1, dtype=np.int64)
    deg = np.zeros(len(verts), dtype=np.int64)
    for i, v in enumerate(verts):
        ns = nb(v)
        deg[i] = len(ns)
        for j, w in enumerate(ns):
            nbr[i, j] = index.get(w, -1)
    darr = np.fromiter((dist[v] for v in verts), dtype=np.int64, count=len(verts))
    return OriginTable(family, radius, verts, nbr, deg, darr, np.array(counts, dtype=np.int64))


_TABLES: dict = {}
_TABLE_LOCK = threading.Lock()
MAX_TABLE_RADIUS = 1 << 13


def origin_table(family: GraphFamily, radius: int) -> OriginTable:
    """Cached table of ``B_o(radius)``; built once per family and sliced."""
    if radius < 0:
        raise DomainError("radius must be non-negative")
    if radius > MAX_TABLE_RADIUS:
        raise ResourceError(f"table radius {radius} exceeds cap {MAX_TABLE_RADIUS}")
    big = _TABLES.get(family)
    if big is None or big.radius < radius:
        with _TABLE_LOCK:
            big = _TABLES.get(family)
            if big is None or big.radius < radius:
                target = 16
                while target < radius:
                    target *= 2
                big = _build_table(family, target)
                _TABLES[family] = big
                _prefix.cache_clear()
    return _prefix(family, radius)


@lru_cache(maxsize=32)
def _prefix(family: GraphFamily, radius: int) -> OriginTable:
    return _TABLES[family].prefix(radius)
