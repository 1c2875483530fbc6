"""Exact Dirichlet problems on graph balls.

Sign convention: the Laplacian is ``Lf(x) = mean_{y~x} f(y) - f(x)`` and the
stopped Green function satisfies ``L g_n(., z) = -delta_z`` on the interior,
which is what first-step analysis of the visit count gives.

Systems are assembled in the symmetric form ``(D - A_II) f_I = -D rhs +
A_IB f_B`` (``D`` the degree matrix), factorised once per ball, and reused
for every right-hand side.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, NumericError, ResourceError
from .gasket import ORIGIN, Ball, GraphFamily, Vertex, ball

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DIRECT_MAX = 200_000
DENSE_MAX = 8_000


@dataclass(eq=False)
class DirichletSystem:
    """Interior/boundary split of a ball with the assembled operator.

    Rows follow the ball's BFS order, interior vertices first.
    """

    ball: Ball
    interior: list
    boundary: list
    matrix: sp.csc_matrix = field(repr=False)  # D - A_II
    coupling: sp.csr_matrix = field(repr=False)  # A_IB
    deg: np.ndarray = field(repr=False)
    tol: float = DEFAULT_TOL

    @classmethod
    def from_ball(cls, b: Ball, tol: float = DEFAULT_TOL) -> "DirichletSystem":
        interior = [v for v in b.dist if v not in b.inner_boundary]
        boundary = [v for v in b.dist if v in b.inner_boundary]
        ii = {v: i for i, v in enumerate(interior)}
        bi = {v: i for i, v in enumerate(boundary)}
        rows_i, cols_i, rows_b, cols_b = [], [], [], []
        deg = np.empty(len(interior))
        nb = b.family.neighbors
        for i, v in enumerate(interior):
            ns = nb(v)
            deg[i] = len(ns)
            for w in ns:
                j = ii.get(w)
                if j is not None:
                    rows_i.append(i)
                    cols_i.append(j)
                else:
                    # interior vertices only touch the ball, so w is a boundary vertex
                    rows_b.append(i)
                    cols_b.append(bi[w])
        ni, nbd = len(interior), len(boundary)
        adj = sp.csr_matrix((np.ones(len(rows_i)), (rows_i, cols_i)), shape=(ni, ni))
        coupling = sp.csr_matrix((np.ones(len(rows_b)), (rows_b, cols_b)), shape=(ni, nbd))
        matrix = (sp.diags(deg) - adj).tocsc()
        return cls(b, interior, boundary, matrix, coupling, deg, tol)

    @property
    def vertices(self) -> list:
        return self.interior + self.boundary

    @cached_property
    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def _lu(self):
        return spla.splu(self.matrix)

    def _solve_interior(self, rhs: np.ndarray, method: str) -> np.ndarray:
        if rhs.shape[0] == 0:
            return rhs.copy()
        if method == "auto":
            method = "direct" if self.matrix.shape[0] <= DIRECT_MAX else "cg"
        if method == "direct":
            return self._lu.solve(rhs)
        if method != "cg":
            raise DomainError(f"unknown solver {method!r}")
        cols = rhs.reshape(rhs.shape[0], -1)
        out = np.empty_like(cols)
        for k in range(cols.shape[1]):
            x, info = spla.cg(self.matrix, cols[:, k], rtol=self.tol * 1e-3, atol=0.0, maxiter=100 * len(cols))
            if info != 0:
                raise NumericError(f"conjugate gradient did not converge (info={info})")
            out[:, k] = x
        return out.reshape(rhs.shape)

    def _vector(self, data, vs: list, what: str) -> np.ndarray:
        if data is None:
            return np.zeros(len(vs))
        if np.isscalar(data):
            return np.full(len(vs), float(data))
        if isinstance(data, Mapping):
            try:
                return np.array([float(data[v]) for v in vs])
            except KeyError as exc:
                raise DomainError(f"{what} missing value at {exc.args[0]}") from None
        arr = np.asarray(data, dtype=float)
        if arr.shape[0] != len(vs):
            raise DomainError(f"{what} has length {arr.shape[0]}, expected {len(vs)}")
        return arr

    def solve(self, rhs=None, boundary_values=None, method: str = "auto") -> "DirichletSolution":
        """Unique ``f`` with ``Lf = rhs`` on the interior, ``f = boundary_values`` on the boundary.

        Mappings, arrays (interior resp. boundary order) and scalars are accepted.
        """
        r = self._vector(rhs, self.interior, "rhs")
        fb = self._vector(boundary_values, self.boundary, "boundary data")
        fi = self._solve_interior(-self.deg * r + self.coupling @ fb, method)
        values = np.concatenate([fi, fb])
        residual = self.residual(values, r)
        scale = max(1.0, float(np.abs(values).max(initial=0.0)))
        if residual > self.tol * scale:
            raise NumericError(f"Dirichlet solve residual {residual:.3e} exceeds tolerance")
        return DirichletSolution(self, values, residual)

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        """``Lf`` on the interior for ``values`` in :attr:`vertices` order."""
        ni = len(self.interior)
        fi, fb = values[:ni], values[ni:]
        adj_sum = self.deg * fi - self.matrix @ fi + self.coupling @ fb
        return adj_sum / self.deg - fi

    def residual(self, values: np.ndarray, rhs: np.ndarray) -> float:
        if len(self.interior) == 0:
            return 0.0
        return float(np.abs(self.laplacian(values) - rhs).max())


@dataclass(eq=False)
class DirichletSolution:
    system: DirichletSystem
    values: np.ndarray = field(repr=False)
    residual: float

    def __getitem__(self, v: Vertex) -> float:
        return float(self.values[self.system.index[v]])

    def as_dict(self) -> dict:
        return dict(zip(self.system.vertices, self.values.tolist()))


@lru_cache(maxsize=32)
def dirichlet_system(family: GraphFamily, n: int, center: Vertex = ORIGIN) -> DirichletSystem:
    """Shared (cached) system of ``B_center(n)``; one factorisation serves all solves."""
    return DirichletSystem.from_ball(ball(family, center, n))


def solve_dirichlet(system: DirichletSystem, rhs=None, boundary_values=None) -> DirichletSolution:
    return system.solve(rhs, boundary_values)


@dataclass(eq=False)
class GreenTable:
    radius: int
    target: Vertex
    values: dict = field(repr=False)  # g_n(x, target) for every x in B_o(n)

    def __getitem__(self, x: Vertex) -> float:
        return self.values[x]


def green(family: GraphFamily, n: int, z: Vertex) -> GreenTable:
    """Stopped Green function ``g_n(., z)`` on ``B_o(n)``."""
    system = dirichlet_system(family, n)
    if z not in system.ball:
        raise DomainError(f"{z} lies outside B_o({n})")
    if z in system.ball.inner_boundary:
        return GreenTable(n, z, {v: 0.0 for v in system.vertices})
    rhs = np.zeros(len(system.interior))
    rhs[system.index[z]] = -1.0
    return GreenTable(n, z, system.solve(rhs, 0.0).as_dict())


def green_matrix(family: GraphFamily, n: int) -> tuple[DirichletSystem, np.ndarray]:
    """Dense ``G[x, z] = g_n(x, z)`` over the system's vertex order (boundary rows/columns zero)."""
    system = dirichlet_system(family, n)
    ni, nv = len(system.interior), len(system.vertices)
    if ni > DENSE_MAX:
        raise ResourceError(f"dense Green matrix of size {ni} exceeds cap {DENSE_MAX}")
    out = np.zeros((nv, nv))
    if ni:
        # M G = D for the interior block
        out[:ni, :ni] = system._lu.solve(np.diag(system.deg))
    return system, out


def expected_exit_time_exact(family: GraphFamily, n: int, center: Vertex = ORIGIN) -> DirichletSolution:
    """``E_x tau(n)`` for every ``x`` in the ball: ``Lf = -1`` inside, ``0`` on the boundary."""
    if n < 1:
        raise DomainError("n must be at least 1")
    return dirichlet_system(family, n, center).solve(-1.0, 0.0)


@dataclass
class HarnackResult:
    max_ratio: float
    ratios: np.ndarray = field(repr=False)
    excluded: int


def harnack_ratio(
    family: GraphFamily,
    x: Vertex,
    n: int,
    samples: int,
    seed: int = 0,
    law: str = "uniform",
    scale: float = 1.0,
) -> HarnackResult:
    """Worst ``sup/inf`` over ``B_x(n)`` of harmonic functions on ``B_x(2n)``.

    Boundary data are iid uniform on [0, 1] (``law="uniform"``) or sparse
    Dirichlet(0.05) weights (``law="dirichlet"``), times ``scale``.
    """
    if n < 1 or samples < 1:
        raise DomainError("n and samples must be positive")
    system = dirichlet_system(family, 2 * n, x)
    small = ball(family, x, n)
    idx = np.array([system.index[v] for v in small.dist])
    rng = np.random.default_rng(seed)
    m = len(system.boundary)
    if law == "uniform":
        data = rng.uniform(0.0, 1.0, size=(samples, m))
    elif law == "dirichlet":
        data = rng.dirichlet(np.full(m, 0.05), size=samples)
    elif law == "constant":
        data = np.ones((samples, m))
    else:
        raise DomainError(f"unknown boundary law {law!r}")
    data *= scale
    fi = system._solve_interior((system.coupling @ data.T), "auto")
    values = np.vstack([fi.reshape(len(system.interior), -1), data.T])
    sub = values[idx]
    lo, hi = sub.min(axis=0), sub.max(axis=0)
    ok = lo > 0
    if not ok.all():
        log.warning("excluded %d boundary samples with vanishing infimum", int((~ok).sum()))
    ratios = hi[ok] / lo[ok]
    return HarnackResult(float(ratios.max()) if len(ratios) else math.inf, ratios, int((~ok).sum()))


@dataclass
class DiagonalRow:
    z: Vertex
    g: float
    d: int


def diagonal_green_bound_check(family: GraphFamily, n: int) -> list[DiagonalRow]:
    """``(z, g_n(z, z), d(z, inner boundary))`` for every ``z`` in ``B_o(n)``."""
    system, G = green_matrix(family, n)
    bd = system.ball.boundary_distance
    diag = np.diag(G)
    return [DiagonalRow(v, float(diag[i]), bd[v]) for i, v in enumerate(system.vertices)]


def exit_distribution(family: GraphFamily, n: int, x: Vertex = ORIGIN) -> dict:
    """``P_x(X(sigma) = y)`` where ``sigma`` is the first time outside ``B_o(n)``.

    With ``w`` solving ``(D - A) w = e_x`` over the ball, the probability of
    leaving through ``y`` is ``sum_{v ~ y} w(v)``.
    """
    b = ball(family, ORIGIN, n)
    if x not in b:
        raise DomainError(f"{x} lies outside B_o({n})")
    inside = list(b.dist)
    ii = {v: i for i, v in enumerate(inside)}
    outer: dict = {}
    rows, cols, orow, ocol = [], [], [], []
    deg = np.empty(len(inside))
    for i, v in enumerate(inside):
        ns = family.neighbors(v)
        deg[i] = len(ns)
        for w in ns:
            j = ii.get(w)
            if j is None:
                orow.append(i)
                ocol.append(outer.setdefault(w, len(outer)))
            else:
                rows.append(i)
                cols.append(j)
    m = len(inside)
    matrix = (sp.diags(deg) - sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))).tocsc()
    rhs = np.zeros(m)
    rhs[ii[x]] = 1.0
    w = spla.spsolve(matrix, rhs)
    coupling = sp.csr_matrix((np.ones(len(orow)), (orow, ocol)), shape=(m, len(outer)))
    probs = coupling.T @ w
    return {v: float(probs[k]) for v, k in outer.items()}
