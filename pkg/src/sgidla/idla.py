"""Internal DLA from the origin: direct, stopped and resumed growth, and the
visit counters behind the inner bound.

Particle ``i`` of run ``r`` always walks on stream ``(seed, (r << 32) | i)``
and a paused particle keeps its stream position, so a stopped/resumed
construction replays exactly the walks it would have made unpaused.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit
from scipy import stats

from .errors import DomainError, NonTerminationError, ResourceError
from .gasket import (
    ALPHA,
    DOUBLED_SG,
    MAX_TABLE_RADIUS,
    ORIGIN,
    GraphFamily,
    OriginTable,
    Vertex,
    ball_volume,
    inverse_volume,
    origin_table,
)
from .walk import CAPPED, DEFAULT_STEP_CAP, ESCAPED, OK, MASK64, RngStream, draw, pick, stream_key

INF = math.inf


@dataclass(eq=False)
class Cluster:
    table: OriginTable
    order: np.ndarray  # table indices in settlement order
    origin: Vertex = ORIGIN

    @classmethod
    def from_vertices(cls, family: GraphFamily, vertices) -> "Cluster":
        vs = list(vertices)
        table = origin_table(family, 16)
        while any(v not in table.index for v in vs):
            table = _bigger(table)
        return cls(table, table.indices(vs))

    @property
    def family(self) -> GraphFamily:
        return self.table.family

    @property
    def particle_count(self) -> int:
        return len(self.order)

    @cached_property
    def occupied(self) -> frozenset:
        verts = self.table.vertices
        return frozenset(verts[i] for i in self.order)

    def mask(self, table: OriginTable | None = None) -> np.ndarray:
        table = table or self.table
        out = np.zeros(len(table), dtype=bool)
        out[self.order] = True
        return out

    def settle_order(self) -> list:
        verts = self.table.vertices
        return [verts[i] for i in self.order]

    def is_connected(self) -> bool:
        if not len(self.order):
            return True
        occ = self.mask()
        t = self.table
        seen = {int(self.order[0])}
        stack = [int(self.order[0])]
        while stack:
            i = stack.pop()
            for j in t.nbr[i, : t.deg[i]]:
                if j >= 0 and occ[j] and j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        return len(seen) == len(self.order)


@dataclass
class RadiusStats:
    n: int
    r_in: int
    r_out: int
    exact_volume: bool  # particle count equals b_n

    @property
    def inner_defect(self) -> int:
        return self.n - self.r_in

    @property
    def outer_excess(self) -> int:
        return self.r_out - self.n


def radii(cluster: Cluster) -> RadiusStats:
    """Largest ``r`` with ``B_o(r)`` inside the cluster and smallest with the cluster inside ``B_o(r)``."""
    if cluster.particle_count == 0:
        raise DomainError("empty cluster has no radii")
    t = cluster.table
    r_out = int(t.dist[cluster.order].max())
    if t.radius <= r_out:
        t = origin_table(cluster.family, r_out + 1)
    occ = cluster.mask(t)
    r_in = int(t.dist[~occ].min()) - 1
    n, exact = inverse_volume(cluster.family, cluster.particle_count)
    return RadiusStats(n, r_in, r_out, exact)


# --- kernels ---------------------------------------------------------------


@njit(cache=True, nogil=True)
def _grow_kernel(nbr, deg, occupied, order, start, seed, base, first, cap):
    """Launch particles ``first..len(order)-1`` from ``start``; returns (status, done)."""
    for i in range(first, order.shape[0]):
        key = stream_key(seed, base + np.uint64(i))
        pos = start
        counter = 0
        while occupied[pos]:
            if counter >= cap:
                return CAPPED, i
            nxt = nbr[pos, pick(draw(key, counter), deg[pos])]
            counter += 1
            if nxt < 0:
                return ESCAPED, i
            pos = nxt
        occupied[pos] = True
        order[i] = pos
    return OK, order.shape[0]


@njit(cache=True, nogil=True)
def _stopped_kernel(nbr, deg, dist, occupied, src, streams, counters, absorb, seed, first, cap, out_pos, out_settled):
    """Each particle settles on first leaving the cluster or pauses on first leaving
    ``B_o(absorb)`` (``absorb < 0`` means no absorption); pausing wins ties."""
    for k in range(first, src.shape[0]):
        key = stream_key(seed, streams[k])
        pos = src[k]
        counter = counters[k]
        steps = 0
        while True:
            if absorb >= 0 and dist[pos] > absorb:
                out_settled[k] = False
                break
            if not occupied[pos]:
                occupied[pos] = True
                out_settled[k] = True
                break
            if steps >= cap:
                return CAPPED, k
            nxt = nbr[pos, pick(draw(key, counter), deg[pos])]
            counter += 1
            steps += 1
            if nxt < 0:
                return ESCAPED, k
            pos = nxt
        out_pos[k] = pos
        counters[k] = counter
    return OK, src.shape[0]


@njit(cache=True, nogil=True)
def _ml_kernel(nbr, deg, stop, z, seed, run_base, runs, particles, cap, occupied, out_m, out_l, out_zin):
    """Full IDLA runs with every walk continued until ``tau(n)`` for the counters."""
    order = np.empty(particles, dtype=np.int64)
    for r in range(runs):
        base = (run_base + np.uint64(r)) << np.uint64(32)
        m_count = 0
        l_count = 0
        for i in range(particles):
            key = stream_key(seed, base + np.uint64(i))
            pos = 0
            t = 0
            sigma = -1
            tau_z = -1
            tau_n = -1
            while True:
                if sigma < 0 and not occupied[pos]:
                    sigma = t
                    occupied[pos] = True
                    order[i] = pos
                if tau_n < 0:
                    if tau_z < 0 and pos == z:
                        tau_z = t
                    if stop[pos]:
                        tau_n = t
                if sigma >= 0 and tau_n >= 0:
                    break
                if t >= cap:
                    return CAPPED, r
                nxt = nbr[pos, pick(draw(key, t), deg[pos])]
                if nxt < 0:
                    return ESCAPED, r
                pos = nxt
                t += 1
            if tau_z >= 0 and tau_z < tau_n:
                m_count += 1
                if sigma < tau_z:
                    l_count += 1
        out_m[r] = m_count
        out_l[r] = l_count
        out_zin[r] = occupied[z]
        for i in range(particles):
            occupied[order[i]] = False
    return OK, runs


@njit(cache=True, nogil=True)
def _ltilde_kernel(nbr, deg, stop, z, starts, seed, base, cap, out):
    """``out[t]`` = number of starts ``y`` whose walk hits ``z`` before ``tau(n)``."""
    for t in range(out.shape[0]):
        trial_key = stream_key(seed, base + np.uint64(t))
        total = 0
        for j in range(starts.shape[0]):
            key = stream_key(trial_key, np.uint64(j))
            pos = starts[j]
            counter = 0
            while pos != z and not stop[pos]:
                if counter >= cap:
                    return CAPPED
                nxt = nbr[pos, pick(draw(key, counter), deg[pos])]
                if nxt < 0:
                    return ESCAPED
                pos = nxt
                counter += 1
            if pos == z:
                total += 1
        out[t] = total
    return OK


def _raise_for(status: int, cap: int) -> None:
    if status == CAPPED:
        raise NonTerminationError(f"walk exceeded the step cap of {cap}")


def _bigger(table: OriginTable) -> OriginTable:
    radius = table.radius * 2
    if radius > MAX_TABLE_RADIUS:
        raise ResourceError("cluster outgrew the largest supported table")
    return origin_table(table.family, radius)


def _pad(mask: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size, dtype=mask.dtype)
    out[: len(mask)] = mask
    return out


def _start_radius(family: GraphFamily, particles: int) -> int:
    n, _ = inverse_volume(family, max(1, particles))
    return 2 * n + 4


# --- direct growth ---------------------------------------------------------


def grow(family: GraphFamily, particles: int, rng: RngStream, cap: int = DEFAULT_STEP_CAP) -> Cluster:
    """IDLA cluster of ``particles`` walkers launched one by one from the origin."""
    if particles < 0:
        raise DomainError("particles must be non-negative")
    table = origin_table(family, _start_radius(family, particles))
    occupied = np.zeros(len(table), dtype=bool)
    order = np.zeros(particles, dtype=np.int64)
    base = np.uint64((rng.stream_index << 32) & MASK64)
    done = 0
    while True:
        status, done = _grow_kernel(
            table.nbr, table.deg, occupied, order, 0, np.uint64(rng.master_seed), base, done, cap
        )
        if status == OK:
            return Cluster(table, order)
        _raise_for(status, cap)
        table = _bigger(table)
        occupied = _pad(occupied, len(table))


# --- stopped growth --------------------------------------------------------


@dataclass(eq=False)
class StoppedState:
    cluster: Cluster
    paused: list = field(default_factory=list)  # positions of paused particles
    absorb_radius: float = 0
    launched: int = 0
    seed: int = 0
    run: int = 0
    # stream index and counter of each paused particle, aligned with ``paused``
    paused_streams: list = field(default_factory=list, repr=False)

    @property
    def settled(self) -> int:
        return self.cluster.particle_count

    @classmethod
    def empty(cls, family: GraphFamily, rng: RngStream, absorb_radius: float = 0) -> "StoppedState":
        table = origin_table(family, 16)
        return cls(Cluster(table, np.zeros(0, dtype=np.int64)), [], absorb_radius, 0, rng.master_seed, rng.stream_index)


def _run_stopped(
    family: GraphFamily,
    state: StoppedState,
    positions: Sequence[Vertex],
    streams: list,
    counters: list,
    absorb: float,
    cap: int,
) -> tuple[StoppedState, int]:
    cl = state.cluster
    need = max([cl.table.radius] + ([absorb + 2] if absorb != INF else []))
    table = origin_table(family, int(need))
    far = max((table.dist[table.index[v]] if v in table.index else 2 * table.radius for v in positions), default=0)
    if absorb == INF:
        r_out = int(cl.table.dist[cl.order].max()) if cl.particle_count else 0
        want = 2 * max(r_out, far) + 4
        if want > table.radius:
            table = origin_table(family, want)
    while any(v not in table.index for v in positions):
        table = _bigger(table)
    occupied = cl.mask(table)
    k = len(positions)
    src = table.indices(positions)
    s_arr = np.array(streams, dtype=np.uint64)
    c_arr = np.array(counters, dtype=np.uint64)
    out_pos = np.zeros(k, dtype=np.int64)
    out_settled = np.zeros(k, dtype=bool)
    absorb_i = -1 if absorb == INF else int(absorb)
    done = 0
    while True:
        status, done = _stopped_kernel(
            table.nbr, table.deg, table.dist, occupied, src, s_arr, c_arr, absorb_i,
            np.uint64(state.seed), done, cap, out_pos, out_settled,
        )
        if status == OK:
            break
        _raise_for(status, cap)
        table = _bigger(table)
        occupied = _pad(occupied, len(table))
    new_order = out_pos[out_settled]
    order = np.concatenate([cl.order, new_order])
    paused = [table.vertices[i] for i in out_pos[~out_settled]]
    pstreams = [(int(s), int(c)) for s, c, ok in zip(s_arr, c_arr, out_settled) if not ok]
    out = StoppedState(Cluster(table, order), paused, absorb, state.launched, state.seed, state.run, pstreams)
    return out, int(out_settled.sum())


def grow_stopped(
    family: GraphFamily,
    state: StoppedState | None,
    sources: Sequence[Vertex],
    absorb_radius: float,
    rng: RngStream | None = None,
    cap: int = DEFAULT_STEP_CAP,
) -> StoppedState:
    """Launch ``sources`` in order; each settles on first leaving the cluster
    inside ``B_o(absorb_radius)`` or pauses where it first leaves that ball.

    A new particle settles at ``X(sigma_S)`` when ``sigma_S < sigma_A`` and
    otherwise pauses at ``X(sigma_A)``.
    """
    if state is None:
        if rng is None:
            raise DomainError("an rng is required to start a new stopped construction")
        state = StoppedState.empty(family, rng, absorb_radius)
    if absorb_radius != INF:
        cl = state.cluster
        if cl.particle_count and int(cl.table.dist[cl.order].max()) > absorb_radius:
            raise DomainError("cluster is not contained in the absorbing ball")
    base = (state.run << 32) & MASK64
    ids = range(state.launched, state.launched + len(sources))
    streams = [(base | i) & MASK64 for i in ids]
    out, _ = _run_stopped(family, state, list(sources), streams, [0] * len(sources), absorb_radius, cap)
    out.paused = state.paused + out.paused
    out.paused_streams = state.paused_streams + out.paused_streams
    out.launched = state.launched + len(sources)
    return out


def resume(
    family: GraphFamily, state: StoppedState, new_absorb_radius: float = INF, cap: int = DEFAULT_STEP_CAP
) -> StoppedState:
    """Relaunch every paused particle from where it stopped under a larger absorbing ball."""
    if new_absorb_radius < state.absorb_radius:
        raise DomainError("the absorbing radius can only grow")
    if not state.paused:
        return StoppedState(
            state.cluster, [], new_absorb_radius, state.launched, state.seed, state.run, []
        )
    streams = [s for s, _ in state.paused_streams]
    counters = [c for _, c in state.paused_streams]
    out, _ = _run_stopped(family, state, state.paused, streams, counters, new_absorb_radius, cap)
    return out


@dataclass
class StagedGrowth:
    radii: list  # n_j
    paused_counts: list  # k_j
    final: StoppedState


def staged_growth(family: GraphFamily, n: int, rng: RngStream, cap: int = DEFAULT_STEP_CAP) -> StagedGrowth:
    """Stop at ``B_o(n)``, then repeatedly release paused particles to radius
    ``n_j + ceil(k_j^(1/alpha))`` until at most ``n_j^(1/(alpha+1))`` remain,
    and finally let the rest settle freely."""
    b = ball_volume(family, n)
    state = grow_stopped(family, None, [ORIGIN] * b, n, rng, cap)
    radii_seq, counts = [n], [len(state.paused)]
    while state.paused and len(state.paused) > radii_seq[-1] ** (1 / (ALPHA + 1)):
        nxt = radii_seq[-1] + math.ceil(len(state.paused) ** (1 / ALPHA))
        state = resume(family, state, nxt, cap)
        radii_seq.append(nxt)
        counts.append(len(state.paused))
    state = resume(family, state, INF, cap)
    return StagedGrowth(radii_seq, counts, state)


# --- counters --------------------------------------------------------------


class MLCounts(NamedTuple):
    M: np.ndarray
    L: np.ndarray
    z_occupied: np.ndarray


def _interior_check(table: OriginTable, n: int, z: Vertex) -> int:
    if z not in table.index or table.dist[table.index[z]] > n:
        raise DomainError(f"{z} lies outside B_o({n})")
    return table.index[z]


def ml_counters_batch(
    family: GraphFamily, n: int, z: Vertex, runs: int, rng: RngStream, cap: int = DEFAULT_STEP_CAP
) -> MLCounts:
    """``runs`` independent IDLA constructions with ``b_n`` particles, recording
    ``M`` (walks with ``tau_z < tau(n)``), ``L`` (those with
    ``sigma < tau_z < tau(n)``) and whether ``z`` ended up occupied."""
    b = ball_volume(family, n)
    table = origin_table(family, max(_start_radius(family, b), n + 1))
    zi = _interior_check(table, n, z)
    out_m = np.zeros(runs, dtype=np.int64)
    out_l = np.zeros(runs, dtype=np.int64)
    out_z = np.zeros(runs, dtype=bool)
    done = 0
    run_base = rng.stream_index
    while done < runs:
        stop = table.stop_mask(n)
        occupied = np.zeros(len(table), dtype=bool)
        status, r = _ml_kernel(
            table.nbr, table.deg, stop, zi, np.uint64(rng.master_seed), np.uint64(run_base + done),
            runs - done, b, cap, occupied, out_m[done:], out_l[done:], out_z[done:],
        )
        if status == OK:
            break
        _raise_for(status, cap)
        done += int(r)
        table = _bigger(table)
    return MLCounts(out_m, out_l, out_z)


def ml_counters(family: GraphFamily, n: int, z: Vertex, rng: RngStream, cap: int = DEFAULT_STEP_CAP) -> tuple[int, int]:
    counts = ml_counters_batch(family, n, z, 1, rng, cap)
    return int(counts.M[0]), int(counts.L[0])


def ltilde_samples(
    family: GraphFamily, n: int, z: Vertex, trials: int, rng: RngStream, cap: int = DEFAULT_STEP_CAP
) -> np.ndarray:
    """Samples of ``sum over y in B_o(n)`` of the indicator that an
    independent walk from ``y`` hits ``z`` before ``tau(n)``."""
    table = origin_table(family, n + 1)
    zi = _interior_check(table, n, z)
    stop = table.stop_mask(n)
    if stop[zi]:
        raise DomainError(f"{z} lies on the inner boundary, where g_n(z, z) = 0")
    starts = np.arange(table.volume(n), dtype=np.int64)
    out = np.zeros(trials, dtype=np.int64)
    base = (rng.stream_index << 32) & MASK64
    status = _ltilde_kernel(table.nbr, table.deg, stop, zi, starts, np.uint64(rng.master_seed), np.uint64(base), cap, out)
    _raise_for(status, cap)
    return out


def ltilde_estimate(
    family: GraphFamily, n: int, z: Vertex, trials: int, rng: RngStream, cap: int = DEFAULT_STEP_CAP
) -> tuple[float, float]:
    x = ltilde_samples(family, n, z, trials, rng, cap).astype(float)
    se = x.std(ddof=1) / math.sqrt(trials) if trials > 1 else 0.0
    return float(x.mean()), float(se)


@dataclass
class ExactCounters:
    expected_m: float
    expected_ltilde: float
    green_origin: float  # g_n(o, z)
    green_diag: float  # g_n(z, z)
    green_column_sum: float  # sum_y g_n(y, z)


def exact_counters(family: GraphFamily, n: int, z: Vertex) -> ExactCounters:
    """``E(M) = b_n g_n(o,z)/g_n(z,z)`` and ``E(L~) = E_z tau(n)/g_n(z,z)`` from exact solves."""
    from .green import expected_exit_time_exact, green

    g = green(family, n, z)
    gzz = g[z]
    if gzz == 0:
        raise DomainError(f"{z} lies on the inner boundary, where g_n(z, z) = 0")
    col = sum(g.values.values())  # symmetric walk: sum_y g(y,z) = sum_y g(z,y)
    exit_z = expected_exit_time_exact(family, n)[z]
    b = ball_volume(family, n)
    return ExactCounters(b * g[ORIGIN] / gzz, exit_z / gzz, g[ORIGIN], gzz, col)


# --- abelian property ------------------------------------------------------


@dataclass
class AbelianTest:
    statistic: float
    pvalue: float
    dof: int
    categories: list
    direct_counts: np.ndarray
    stopped_counts: np.ndarray


def _summary(cluster: Cluster) -> tuple[int, int]:
    r = radii(cluster)
    return r.inner_defect, r.outer_excess


def abelian_samples(family: GraphFamily, n: int, runs: int, seed: int, mode: str) -> list:
    b = ball_volume(family, n)
    out = []
    for r in range(runs):
        rng = RngStream(seed, r)
        if mode == "direct":
            cl = grow(family, b, rng)
        else:
            st = grow_stopped(family, None, [ORIGIN] * b, n, rng)
            cl = resume(family, st, INF).cluster
        out.append(_summary(cl))
    return out


def chi2_two_sample(a: list, b: list, min_expected: float = 5.0) -> AbelianTest:
    """Chi-square homogeneity test on categorical samples; sparse categories are pooled."""
    cats = sorted(set(a) | set(b))
    ca = np.array([a.count(c) for c in cats], dtype=float)
    cb = np.array([b.count(c) for c in cats], dtype=float)
    total = ca + cb
    expected_min = np.minimum(ca.sum(), cb.sum()) * total / total.sum()
    keep = expected_min >= min_expected
    labels = [c for c, k in zip(cats, keep) if k]
    if (~keep).any():
        ca = np.append(ca[keep], ca[~keep].sum())
        cb = np.append(cb[keep], cb[~keep].sum())
        labels.append("pooled")
    if len(ca) < 2:
        return AbelianTest(0.0, 1.0, 0, labels, ca, cb)
    chi2, p, dof, _ = stats.chi2_contingency(np.vstack([ca, cb]), correction=False)
    return AbelianTest(float(chi2), float(p), int(dof), labels, ca, cb)


def abelian_test(family: GraphFamily, n: int, runs: int, seed: int) -> AbelianTest:
    """Compare ``(inner_defect, outer_excess)`` of direct and stopped-then-resumed
    clusters of ``b_n`` particles using independent seeds for the two samples."""
    direct = abelian_samples(family, n, runs, seed, "direct")
    stopped = abelian_samples(family, n, runs, seed + 1, "stopped")
    return chi2_two_sample(direct, stopped)
