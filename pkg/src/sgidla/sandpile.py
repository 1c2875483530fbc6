"""Divisible sandpile: toppling, odometers and the closed-form checks.

States live on an :class:`~sgidla.gasket.OriginTable`.  When mass is about to
leave the table, the kernel stops before the offending round and the state is
copied into a table of twice the radius; BFS-prefix indexing makes that a
zero-padding.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from numba import njit
from scipy import stats

from .errors import ConvergenceError, DomainError, ResourceError
from .gasket import (
    BETA,
    DOUBLED_SG,
    MAX_TABLE_RADIUS,
    ORIGIN,
    GraphFamily,
    LatticePoint,
    OriginTable,
    Side,
    Vertex,
    ball_volume,
    inverse_volume,
    origin_table,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ROUNDS = 10**7

OK, ESCAPED, CAPPED = 0, 1, 2


class ScheduleKind(str, enum.Enum):
    PARALLEL = "parallel"
    PRIORITY = "priority"
    CYCLE = "cycle"


@dataclass(frozen=True)
class ToppleSchedule:
    """How unstable vertices are visited.

    ``parallel`` topples every unstable vertex simultaneously each round;
    ``priority`` topples sequentially in decreasing order of the excess seen
    at the start of the round; ``cycle`` topples sequentially along ``cycle``
    followed by every other vertex in BFS order.
    """

    kind: ScheduleKind = ScheduleKind.PARALLEL
    cycle: tuple = ()

    @classmethod
    def parallel(cls) -> "ToppleSchedule":
        return cls(ScheduleKind.PARALLEL)

    @classmethod
    def priority(cls) -> "ToppleSchedule":
        return cls(ScheduleKind.PRIORITY)

    @classmethod
    def fixed_cycle(cls, cycle=()) -> "ToppleSchedule":
        return cls(ScheduleKind.CYCLE, tuple(cycle))

    @classmethod
    def from_name(cls, name: str) -> "ToppleSchedule":
        try:
            return cls(ScheduleKind(name))
        except ValueError:
            raise DomainError(f"unknown schedule {name!r}") from None


@dataclass(eq=False)
class SandState:
    table: OriginTable
    mass: np.ndarray
    odometer: np.ndarray
    rounds: int = 0

    @property
    def family(self) -> GraphFamily:
        return self.table.family

    @classmethod
    def from_masses(cls, family: GraphFamily, masses: dict) -> "SandState":
        total = sum(masses.values())
        if total < 0 or any(m < 0 for m in masses.values()):
            raise DomainError("masses must be non-negative")
        n, _ = inverse_volume(family, max(1, math.ceil(total)))
        radius = n + 2
        table = origin_table(family, radius)
        while any(v not in table.index for v in masses):
            radius *= 2
            table = origin_table(family, radius)
        mass = np.zeros(len(table))
        for v, m in masses.items():
            mass[table.index[v]] += m
        return cls(table, mass, np.zeros(len(table)))

    @classmethod
    def point_mass(cls, family: GraphFamily, m: float, at: Vertex = ORIGIN) -> "SandState":
        return cls.from_masses(family, {at: float(m)})

    def copy(self) -> "SandState":
        return SandState(self.table, self.mass.copy(), self.odometer.copy(), self.rounds)

    def grown(self, radius: int) -> "SandState":
        if radius > MAX_TABLE_RADIUS:
            raise ResourceError("sandpile outgrew the largest supported table")
        table = origin_table(self.family, radius)
        mass = np.zeros(len(table))
        odo = np.zeros(len(table))
        mass[: len(self.mass)] = self.mass
        odo[: len(self.odometer)] = self.odometer
        return SandState(table, mass, odo, self.rounds)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def max_excess(self) -> float:
        return float(np.max(self.mass - 1.0, initial=0.0))

    def mass_at(self, v: Vertex) -> float:
        i = self.table.index.get(v)
        return 0.0 if i is None else float(self.mass[i])

    def odometer_at(self, v: Vertex) -> float:
        i = self.table.index.get(v)
        return 0.0 if i is None else float(self.odometer[i])

    def mass_map(self) -> dict:
        return {self.table.vertices[i]: float(self.mass[i]) for i in np.flatnonzero(self.mass)}

    def odometer_map(self) -> dict:
        return {self.table.vertices[i]: float(self.odometer[i]) for i in np.flatnonzero(self.odometer)}

    def occupied(self, tol: float = DEFAULT_TOL) -> set:
        """Sites counted as fully occupied: mass at least ``1 - 1000 tol``."""
        return {self.table.vertices[i] for i in np.flatnonzero(self.mass >= 1.0 - 1e3 * tol)}

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        """``mean over neighbours - value`` on table vertices; NaN where a neighbour is missing."""
        t = self.table
        nb = np.where(t.nbr >= 0, values[np.maximum(t.nbr, 0)], 0.0)
        valid = np.arange(t.nbr.shape[1])[None, :] < t.deg[:, None]
        complete = ((t.nbr >= 0) | ~valid).all(axis=1)
        out = (nb * valid).sum(axis=1) / t.deg - values
        out[~complete] = np.nan
        return out


def _edge_rows(table: OriginTable) -> np.ndarray:
    valid = np.arange(table.nbr.shape[1])[None, :] < table.deg[:, None]
    return ((table.nbr < 0) & valid).any(axis=1)


def topple(state: SandState, x: Vertex) -> SandState:
    """Apply the toppling operator at ``x``; returns a new state."""
    out = state.copy()
    i = out.table.index.get(x)
    if i is None:
        return out
    e = max(out.mass[i] - 1.0, 0.0)
    if e == 0.0:
        return out
    if _edge_rows(out.table)[i]:
        out = out.grown(out.table.radius * 2)
    t = out.table
    out.mass[i] -= e
    out.odometer[i] += e
    share = e / t.deg[i]
    for j in t.nbr[i, : t.deg[i]]:
        out.mass[j] += share
    return out


@njit(cache=True, nogil=True)
def _parallel_sweep(mass, odo, nbr, deg, edge, tol, max_rounds):
    n = mass.shape[0]
    excess = np.zeros(n)
    rounds = 0
    while True:
        worst = 0.0
        for i in range(n):
            e = mass[i] - 1.0
            if e > 0.0:
                excess[i] = e
                if e > worst:
                    worst = e
            else:
                excess[i] = 0.0
        if worst <= tol:
            return rounds, OK
        if rounds >= max_rounds:
            return rounds, CAPPED
        for i in range(n):
            if excess[i] > 0.0 and edge[i]:
                return rounds, ESCAPED
        for i in range(n):
            e = excess[i]
            if e > 0.0:
                mass[i] -= e
                odo[i] += e
                share = e / deg[i]
                for j in range(deg[i]):
                    mass[nbr[i, j]] += share
        rounds += 1


@njit(cache=True, nogil=True)
def _sequential_sweep(mass, odo, nbr, deg, edge, order, by_excess, tol, max_rounds):
    n = mass.shape[0]
    rounds = 0
    while True:
        worst = 0.0
        for i in range(n):
            if mass[i] - 1.0 > worst:
                worst = mass[i] - 1.0
        if worst <= tol:
            return rounds, OK
        if rounds >= max_rounds:
            return rounds, CAPPED
        if by_excess:
            order = np.argsort(-mass, kind="mergesort")
        for k in range(order.shape[0]):
            i = order[k]
            e = mass[i] - 1.0
            if e <= 0.0:
                if by_excess:
                    break
                continue
            if edge[i]:
                return rounds, ESCAPED
            mass[i] -= e
            odo[i] += e
            share = e / deg[i]
            for j in range(deg[i]):
                mass[nbr[i, j]] += share
        rounds += 1


def _cycle_order(table: OriginTable, cycle: tuple) -> np.ndarray:
    if not cycle:
        return np.arange(len(table), dtype=np.int64)
    head = [table.index[v] for v in cycle if v in table.index]
    seen = set(head)
    tail = [i for i in range(len(table)) if i not in seen]
    return np.array(head + tail, dtype=np.int64)


def stabilize(
    state: SandState,
    schedule: ToppleSchedule = ToppleSchedule(),
    tol: float = DEFAULT_TOL,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> SandState:
    """Topple until every excess is at most ``tol``; returns a new state."""
    if not np.isfinite(state.total_mass):
        raise DomainError("total mass must be finite")
    out = state.copy()
    while True:
        t = out.table
        edge = _edge_rows(t)
        budget = max_rounds - out.rounds
        if schedule.kind is ScheduleKind.PARALLEL:
            rounds, status = _parallel_sweep(out.mass, out.odometer, t.nbr, t.deg, edge, tol, budget)
        else:
            order = _cycle_order(t, schedule.cycle)
            by_excess = schedule.kind is ScheduleKind.PRIORITY
            rounds, status = _sequential_sweep(
                out.mass, out.odometer, t.nbr, t.deg, edge, order, by_excess, tol, budget
            )
        out.rounds += int(rounds)
        if status == OK:
            return out
        if status == CAPPED:
            raise ConvergenceError(
                f"sandpile did not stabilise within {max_rounds} rounds (max excess {out.max_excess():.3e})"
            )
        out = out.grown(t.radius * 2)


def ball_mass_state(family: GraphFamily, n: int) -> SandState:
    """Initial state ``b_n delta_o``."""
    return SandState.point_mass(family, ball_volume(family, n))


def abelian_check(
    mass0: SandState, schedules: list, tol: float = DEFAULT_TOL, max_rounds: int = DEFAULT_MAX_ROUNDS
) -> float:
    """Largest sup-norm distance between odometers of the given schedules."""
    if len(schedules) < 1:
        raise DomainError("at least one schedule is required")
    odos = [stabilize(mass0, s, tol, max_rounds).odometer for s in schedules]
    size = max(len(o) for o in odos)
    odos = [np.pad(o, (0, size - len(o))) for o in odos]
    return max((float(np.abs(a - b).max()) for a, b in combinations(odos, 2)), default=0.0)


# --- odometer lower bound --------------------------------------------------


@dataclass
class LowerBoundRow:
    delta: int
    min_odometer: float | None
    delta_beta: float


@dataclass
class LowerBoundAudit:
    n: int
    rows: list
    slope: float | None
    monotonicity_violations: list = field(repr=False)  # (inner vertex, outer vertex, u_in, u_out)
    sphere_minima: list = field(repr=False, default_factory=list)  # min of u over d(o, .) = r
    state: SandState = field(repr=False, default=None)

    @property
    def sphere_minima_nonincreasing(self) -> bool:
        m = self.sphere_minima
        return all(m[r + 1] <= m[r] + 1e-9 * max(1.0, m[r]) for r in range(len(m) - 1))


def odometer_lower_bound_audit(
    n: int, deltas, tol: float = DEFAULT_TOL, family: GraphFamily = DOUBLED_SG, state: SandState | None = None
) -> LowerBoundAudit:
    """Minimum of the ``b_n delta_o`` odometer over ``B_o(n - 3 delta)`` for each ``delta``."""
    deltas = list(deltas)
    for d in deltas:
        if d < 1 or d > n / 2:
            raise DomainError(f"delta={d} must satisfy 1 <= delta <= n/2")
    if state is None:
        state = stabilize(ball_mass_state(family, n), tol=tol)
    t = state.table
    rows = []
    for d in deltas:
        r = n - 3 * d
        if r < 0:
            rows.append(LowerBoundRow(d, None, d**BETA))
            continue
        m = t.volume(r)
        rows.append(LowerBoundRow(d, float(state.odometer[:m].min()), d**BETA))
    fit = [(math.log(r.delta), math.log(r.min_odometer)) for r in rows if r.min_odometer and r.min_odometer > 0]
    slope = None
    if len(fit) >= 2:
        xs, ys = zip(*fit)
        slope = float(stats.linregress(xs, ys).slope)
    # the lower-bound argument assumes u decreases with the distance to the origin;
    # pointwise along edges this fails, the sphere minima are what the argument needs
    violations = []
    u = state.odometer
    m = t.volume(n)
    spheres = [float(u[:m][t.dist[:m] == r].min()) for r in range(n + 1)]
    for i in range(m):
        for j in t.nbr[i, : t.deg[i]]:
            if 0 <= j < m and t.dist[j] == t.dist[i] + 1 and u[j] > u[i] + 10 * tol:
                violations.append((t.vertices[i], t.vertices[j], float(u[i]), float(u[j])))
    return LowerBoundAudit(n, rows, slope, violations, spheres, state)


# --- 120 degree rotation and the closed-form odometer ----------------------


@dataclass(frozen=True)
class RotationMap:
    """``psi_k(a, b) = (2^k - a - b, a)``: rotation of ``V_k`` by 120 degrees
    about its centre, applied ``power`` times (``power=2`` is the inverse)."""

    k: int
    power: int = 1

    @property
    def side(self) -> int:
        return 1 << self.k

    def inverse(self) -> "RotationMap":
        return RotationMap(self.k, (-self.power) % 3)


def rotation_apply(rot: RotationMap, p: LatticePoint) -> LatticePoint:
    s = rot.side
    a, b = p
    if a < 0 or b < 0 or a + b > s:
        raise DomainError(f"{tuple(p)} lies outside the level-{rot.k} triangle")
    for _ in range(rot.power % 3):
        a, b = s - a - b, a
    return LatticePoint(a, b)


@dataclass
class Check:
    passed: bool
    detail: str


@dataclass
class ClosedFormReport:
    k: int
    origin_odometer: float
    expected_origin: int
    rotation_power: int
    checks: dict
    state: SandState = field(repr=False, default=None)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list:
        return [name for name, c in self.checks.items() if not c.passed]

    def lines(self) -> list:
        out = [
            f"k={self.k}",
            # rounded to the audit's relative tolerance scale; the raw value is in the origin check
            f"u(origin)={round(self.origin_odometer, 6):.12g}",
            f"expected={self.expected_origin}",
            f"rotation=psi_k^{self.rotation_power}",
        ]
        out += [f"{name}: {'PASS' if c.passed else 'FAIL'} ({c.detail})" for name, c in self.checks.items()]
        return out


def _pin_errors(state: SandState, k: int, power: int) -> tuple[float, float]:
    rot = RotationMap(k, power)
    s = 1 << k
    t = state.table
    zero_err = two_err = 0.0
    for v in t.vertices[: t.volume(s)]:
        if v.side is Side.LEFT:
            continue
        a, b = v.a, v.b
        if a + b > s:
            continue
        image = rotation_apply(rot, LatticePoint(a, b))
        u = state.odometer[t.index[v]]
        if image.b == 0:
            zero_err = max(zero_err, abs(u))
        elif image.b == 1:
            two_err = max(two_err, abs(u - 2.0))
    return zero_err, two_err


def closed_form_audit(
    k: int, tol: float = DEFAULT_TOL, rtol: float = 1e-6, family: GraphFamily = DOUBLED_SG
) -> ClosedFormReport:
    """Compare the toppled odometer of ``3^(k+1) delta_o`` with its closed form."""
    if k < 0 or k > 6:
        raise DomainError("k must be between 0 and 6")
    state = stabilize(SandState.point_mass(family, 3 ** (k + 1)), tol=tol)
    t = state.table
    u = state.odometer
    s = 1 << k
    expected = 2 * 5**k
    checks = {}
    u0 = float(u[0])
    checks["origin"] = Check(abs(u0 - expected) <= rtol * expected, f"raw {u0:.15g} vs {expected}")

    mirror = 0.0
    for i, v in enumerate(t.vertices):
        if v.side is Side.RIGHT and not v.is_origin:
            j = t.index.get(v.swapped())
            other = u[j] if j is not None else 0.0
            mirror = max(mirror, abs(u[i] - other))
    checks["mirror"] = Check(mirror <= rtol * expected, f"max |u(L p) - u(R p)| = {mirror:.3e}")

    m = t.volume(s)
    outside = float(np.abs(u[m:]).max(initial=0.0))
    checks["support"] = Check(outside <= 10 * tol, f"max u outside B_o({s}) = {outside:.3e}")

    mu0 = np.zeros(len(t))
    mu0[0] = 3 ** (k + 1)
    lap = state.laplacian(u)
    resid = float(np.nanmax(np.abs(lap - (state.mass - mu0))))
    checks["laplacian"] = Check(resid <= rtol * expected, f"max |Lu - (mu - mu0)| = {resid:.3e}")

    errs = {p: _pin_errors(state, k, p) for p in (0, 1, 2)}
    power = min(errs, key=lambda p: max(errs[p]))
    zero_err, two_err = errs[power]
    pin_tol = max(1e-6, 10 * tol)
    detail = ", ".join(f"psi^{p}: zero-row {e[0]:.2e}, two-row {e[1]:.2e}" for p, e in errs.items())
    checks["rotation_pins"] = Check(zero_err <= pin_tol and two_err <= pin_tol, detail)
    return ClosedFormReport(k, u0, expected, power, checks, state)
