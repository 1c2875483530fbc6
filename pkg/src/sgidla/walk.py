"""Simple random walks with reproducible per-particle random streams.

Randomness is counter based: draw ``t`` of stream ``(seed, stream)`` is
``mix64(key + (t + 1) * GOLDEN)`` with ``key = stream_key(seed, stream)``,
i.e. the SplitMix64 output sequence started from a hashed key.  Any walk can
therefore be replayed from ``(seed, stream, counter)`` alone, which the
stopped/resumed IDLA machinery relies on.  One draw is consumed per step and
mapped to a neighbour slot by a multiply-shift on its top 32 bits (exact for
degree 4).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .errors import DomainError, NonTerminationError, ResourceError
from .gasket import (
    DOUBLED_SG,
    MAX_TABLE_RADIUS,
    ORIGIN,
    Ball,
    GraphFamily,
    OriginTable,
    Vertex,
    ball,
    origin_table,
)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
DEFAULT_STEP_CAP = 10**9

# kernel status codes
OK, ESCAPED, CAPPED = 0, 1, 2


@njit(cache=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def stream_key(seed, stream):
    return mix64(mix64(np.uint64(seed)) ^ mix64(np.uint64(stream) + np.uint64(0x632BE59BD9B4E019)))


@njit(cache=True)
def draw(key, counter):
    return mix64(np.uint64(key) + (np.uint64(counter) + np.uint64(1)) * np.uint64(GOLDEN))


@njit(cache=True)
def pick(r, deg):
    return np.int64(((np.uint64(r) >> np.uint64(32)) * np.uint64(deg)) >> np.uint64(32))


def particle_stream(run: int, particle: int) -> int:
    """Stream index of particle ``particle`` inside run ``run``."""
    return ((run << 32) | particle) & MASK64


@dataclass
class RngStream:
    master_seed: int
    stream_index: int = 0
    counter: int = 0

    def __post_init__(self):
        self.master_seed &= MASK64
        self.stream_index &= MASK64

    @property
    def key(self) -> int:
        return int(stream_key(np.uint64(self.master_seed), np.uint64(self.stream_index)))

    def next_u64(self) -> int:
        r = int(draw(np.uint64(self.key), np.uint64(self.counter)))
        self.counter += 1
        return r

    def child(self, i: int) -> "RngStream":
        return RngStream(self.master_seed, particle_stream(self.stream_index, i))


def step(family: GraphFamily, v: Vertex, rng: RngStream) -> Vertex:
    nbrs = family.neighbors(v)
    return nbrs[int(pick(np.uint64(rng.next_u64()), len(nbrs)))]


# --- stop rules ------------------------------------------------------------


class StopRule:
    def leaves(self) -> list["StopRule"]:
        return [self]


@dataclass(frozen=True, eq=False)
class HitBoundary(StopRule):
    """Fires on the inner boundary of ``ball`` or anywhere outside it."""

    ball: Ball


@dataclass(frozen=True)
class HitVertex(StopRule):
    z: Vertex


@dataclass(frozen=True, eq=False)
class ExitSet(StopRule):
    members: frozenset


@dataclass(frozen=True, eq=False)
class FirstOf(StopRule):
    rules: tuple

    def __init__(self, *rules):
        if len(rules) == 1 and not isinstance(rules[0], StopRule):
            rules = tuple(rules[0])
        object.__setattr__(self, "rules", tuple(rules))

    def leaves(self) -> list[StopRule]:
        return [leaf for r in self.rules for leaf in r.leaves()]


def hit_boundary(family: GraphFamily, n: int, center: Vertex = ORIGIN) -> HitBoundary:
    return HitBoundary(ball(family, center, n))


class WalkResult(NamedTuple):
    final: Vertex
    steps: int
    rule: StopRule
    tag: int


def _needs_radius(family: GraphFamily, rule: StopRule) -> int:
    from .gasket import distance

    need = 0
    for leaf in rule.leaves():
        if isinstance(leaf, HitBoundary):
            b = leaf.ball
            base = b.radius if b.center == ORIGIN else distance(family, ORIGIN, b.center) + b.radius
            need = max(need, base + 1)
        elif isinstance(leaf, HitVertex):
            need = max(need, distance(family, ORIGIN, leaf.z) + 1)
        elif isinstance(leaf, ExitSet):
            need = max(need, max((distance(family, ORIGIN, v) for v in leaf.members), default=0) + 1)
    return max(need, 1)


def _leaf_mask(table: OriginTable, leaf: StopRule) -> np.ndarray:
    if isinstance(leaf, HitBoundary):
        b = leaf.ball
        if b.center == ORIGIN and b.radius < table.radius:
            return table.stop_mask(b.radius)
        inside = np.zeros(len(table), dtype=bool)
        inside[table.indices(b.members)] = True
        mask = ~inside
        mask[table.indices(b.inner_boundary)] = True
        return mask
    if isinstance(leaf, HitVertex):
        mask = np.zeros(len(table), dtype=bool)
        mask[table.index[leaf.z]] = True
        return mask
    if isinstance(leaf, ExitSet):
        mask = np.ones(len(table), dtype=bool)
        mask[table.indices(leaf.members)] = False
        return mask
    raise DomainError(f"unsupported stop rule {leaf!r}")


def tag_array(table: OriginTable, rule: StopRule) -> np.ndarray:
    """``tag[i]`` = index of the first leaf rule firing at vertex ``i``, else -1."""
    tag = np.full(len(table), -1, dtype=np.int64)
    for k, leaf in enumerate(rule.leaves()):
        mask = _leaf_mask(table, leaf) & (tag < 0)
        tag[mask] = k
    return tag


@njit(cache=True, nogil=True)
def _run_tagged(nbr, deg, tag, start, key, counter, cap):
    pos = start
    steps = 0
    while tag[pos] < 0:
        if steps >= cap:
            return pos, steps, counter, CAPPED
        r = draw(key, counter)
        counter += 1
        nxt = nbr[pos, pick(r, deg[pos])]
        if nxt < 0:
            return pos, steps, counter, ESCAPED
        pos = nxt
        steps += 1
    return pos, steps, counter, OK


def run_until(
    family: GraphFamily, start: Vertex, rule: StopRule, rng: RngStream, cap: int = DEFAULT_STEP_CAP
) -> WalkResult:
    """Walk from ``start`` until ``rule`` fires; advances ``rng.counter``."""
    leaves = rule.leaves()
    radius = _needs_radius(family, rule)
    if family.contains(start) is False:
        raise DomainError(f"{start} is not a vertex of the graph")
    while True:
        table = origin_table(family, radius)
        if start not in table.index:
            radius *= 2
            continue
        tag = tag_array(table, rule)
        pos, steps, counter, status = _run_tagged(
            table.nbr, table.deg, tag, table.index[start], np.uint64(rng.key), np.uint64(rng.counter), cap
        )
        if status == ESCAPED:
            if radius * 2 > MAX_TABLE_RADIUS:
                raise ResourceError("walk left the largest supported table")
            radius *= 2
            continue
        if status == CAPPED:
            raise NonTerminationError(f"walk exceeded the step cap of {cap}")
        rng.counter = int(counter)
        k = int(tag[pos])
        return WalkResult(table.vertices[pos], int(steps), leaves[k], k)


def hit_before_boundary(family: GraphFamily, start: Vertex, z: Vertex, n: int, rng: RngStream) -> bool:
    """Indicator of ``tau_z < tau(n)`` for a walk from ``start``.

    ``start == z`` counts as ``tau_z = 0``; a target on the inner boundary is
    never hit strictly first.
    """
    b = ball(family, ORIGIN, n)
    if start not in b or z not in b:
        raise DomainError("start and z must lie in the ball")
    if z in b.inner_boundary:
        return False
    if start == z:
        return True
    res = run_until(family, start, FirstOf(HitBoundary(b), HitVertex(z)), rng)
    return res.tag == 1


# --- batched Monte Carlo ---------------------------------------------------


@njit(cache=True, nogil=True)
def _exit_batch(nbr, deg, stop, start, seed, base, cap, out):
    for i in range(out.shape[0]):
        key = stream_key(seed, np.uint64(base) + np.uint64(i))
        pos = start
        steps = 0
        counter = 0
        while not stop[pos]:
            if steps >= cap:
                return CAPPED
            nxt = nbr[pos, pick(draw(key, counter), deg[pos])]
            counter += 1
            if nxt < 0:
                return ESCAPED
            pos = nxt
            steps += 1
        out[i] = steps
    return OK


@njit(cache=True, nogil=True)
def _hit_batch(nbr, deg, stop, start, z, seed, base, cap, out):
    for i in range(out.shape[0]):
        key = stream_key(seed, np.uint64(base) + np.uint64(i))
        pos = start
        steps = 0
        counter = 0
        hit = pos == z
        while not hit and not stop[pos]:
            if steps >= cap:
                return CAPPED
            nxt = nbr[pos, pick(draw(key, counter), deg[pos])]
            counter += 1
            if nxt < 0:
                return ESCAPED
            pos = nxt
            steps += 1
            hit = pos == z
        # strict: reaching z together with tau(n) is not a hit
        out[i] = hit and not stop[pos]
    return OK


def _check(status: int, cap: int) -> None:
    if status == CAPPED:
        raise NonTerminationError(f"walk exceeded the step cap of {cap}")
    if status == ESCAPED:
        raise ResourceError("walk left the precomputed table")


def run_batches(kernel, trials: int, threads: int, dtype, *args) -> np.ndarray:
    """Run ``kernel(*args_before_base, base, cap, out)`` over trial chunks.

    Chunks are merged in stream order, so the thread count never changes the
    result.
    """
    out = np.zeros(trials, dtype=dtype)
    threads = max(1, min(threads, trials))
    bounds = np.linspace(0, trials, threads + 1).astype(int)
    *head, base, cap = args

    def job(j):
        lo, hi = int(bounds[j]), int(bounds[j + 1])
        return kernel(*head, np.uint64((base + lo) & MASK64), cap, out[lo:hi])

    if threads == 1:
        statuses = [job(0)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            statuses = list(pool.map(job, range(threads)))
    for s in statuses:
        _check(s, cap)
    return out


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def exit_time_samples(
    family: GraphFamily,
    x: Vertex,
    n: int,
    trials: int,
    rng: RngStream,
    cap: int = DEFAULT_STEP_CAP,
    threads: int = 1,
) -> np.ndarray:
    if trials < 1:
        raise DomainError("trials must be at least 1")
    table = origin_table(family, n + 1)
    if x not in table.index or table.dist[table.index[x]] > n:
        raise DomainError(f"{x} lies outside B_o({n})")
    stop = table.stop_mask(n)
    base = particle_stream(rng.stream_index, 0)
    return run_batches(
        _exit_batch, trials, threads, np.int64,
        table.nbr, table.deg, stop, table.index[x], np.uint64(rng.master_seed), base, cap,
    )


def estimate_exit_time(
    family: GraphFamily,
    x: Vertex,
    n: int,
    trials: int,
    rng: RngStream,
    cap: int = DEFAULT_STEP_CAP,
    threads: int = 1,
) -> tuple[float, float]:
    """Mean and standard error of ``tau(n)`` for walks from ``x``."""
    return _mean_stderr(exit_time_samples(family, x, n, trials, rng, cap, threads))


def estimate_hit_probability(
    family: GraphFamily,
    start: Vertex,
    z: Vertex,
    n: int,
    trials: int,
    rng: RngStream,
    cap: int = DEFAULT_STEP_CAP,
    threads: int = 1,
) -> tuple[float, float]:
    """Monte Carlo ``P_start(tau_z < tau(n))`` with standard error."""
    table = origin_table(family, n + 1)
    for v in (start, z):
        if v not in table.index or table.dist[table.index[v]] > n:
            raise DomainError(f"{v} lies outside B_o({n})")
    stop = table.stop_mask(n)
    hits = run_batches(
        _hit_batch, trials, threads, np.bool_,
        table.nbr, table.deg, stop, table.index[start], table.index[z],
        np.uint64(rng.master_seed), particle_stream(rng.stream_index, 0), cap,
    )
    return _mean_stderr(hits)
