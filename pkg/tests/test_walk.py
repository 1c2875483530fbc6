import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from sgidla.errors import DomainError, NonTerminationError
from sgidla.gasket import BETA, DOUBLED_SG, ORIGIN, Left, Right, ball, neighbors, origin_table
from sgidla.green import expected_exit_time_exact, green
from sgidla.walk import (
    ExitSet,
    FirstOf,
    HitVertex,
    RngStream,
    draw,
    estimate_exit_time,
    estimate_hit_probability,
    exit_time_samples,
    hit_before_boundary,
    hit_boundary,
    pick,
    run_until,
    step,
)


def test_stream_is_reproducible():
    a, b = RngStream(5, 3), RngStream(5, 3)
    assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]
    assert RngStream(5, 4).next_u64() != RngStream(5, 3).next_u64()
    assert RngStream(6, 3).next_u64() != RngStream(5, 3).next_u64()


@given(st.integers(0, 2**64 - 1), st.integers(1, 6))
def test_pick_range(r, deg):
    assert 0 <= pick(np.uint64(r), deg) < deg


def test_pick_is_exact_for_degree_four():
    # the top two bits decide the slot
    for slot in range(4):
        assert pick(np.uint64(slot << 62), 4) == slot


def test_step_goes_to_a_neighbour():
    rng = RngStream(0)
    v = ORIGIN
    for _ in range(200):
        w = step(DOUBLED_SG, v, rng)
        assert w in neighbors(DOUBLED_SG, v)
        v = w


def test_one_step_uniformity():
    t = origin_table(DOUBLED_SG, 64)
    picks = np.random.default_rng(1).choice(len(t), size=100, replace=False)
    chi2 = 0.0
    for j, i in enumerate(picks):
        v = t.vertices[i]
        nb = neighbors(DOUBLED_SG, v)
        rng = RngStream(11, j)
        counts = np.zeros(len(nb))
        for _ in range(800):
            counts[nb.index(step(DOUBLED_SG, v, rng))] += 1
        chi2 += stats.chisquare(counts).statistic
    assert stats.chi2.sf(chi2, 100 * 3) > 1e-4


def test_run_until_boundary():
    res = run_until(DOUBLED_SG, ORIGIN, hit_boundary(DOUBLED_SG, 4), RngStream(2))
    assert res.final in ball(DOUBLED_SG, ORIGIN, 4).inner_boundary
    assert res.steps >= 4


def test_run_until_counter_advances():
    rng = RngStream(2)
    res = run_until(DOUBLED_SG, ORIGIN, hit_boundary(DOUBLED_SG, 4), rng)
    assert rng.counter == res.steps


def test_run_until_start_on_target():
    res = run_until(DOUBLED_SG, Right(1, 0), HitVertex(Right(1, 0)), RngStream(0))
    assert res.steps == 0


def test_first_of_rules():
    rule = FirstOf(hit_boundary(DOUBLED_SG, 8), HitVertex(Right(3, 0)))
    res = run_until(DOUBLED_SG, ORIGIN, rule, RngStream(9))
    assert res.final == Right(3, 0) or res.final in ball(DOUBLED_SG, ORIGIN, 8).inner_boundary


def test_exit_set():
    members = set(ball(DOUBLED_SG, ORIGIN, 2).dist)
    res = run_until(DOUBLED_SG, ORIGIN, ExitSet(members), RngStream(3))
    assert res.final not in members


def test_step_cap():
    with pytest.raises(NonTerminationError):
        run_until(DOUBLED_SG, ORIGIN, hit_boundary(DOUBLED_SG, 64), RngStream(0), cap=10)


def test_batches_independent_of_threads():
    a = exit_time_samples(DOUBLED_SG, ORIGIN, 8, 500, RngStream(4), threads=1)
    b = exit_time_samples(DOUBLED_SG, ORIGIN, 8, 500, RngStream(4), threads=3)
    assert (a == b).all()


def test_exit_time_trivial_cases():
    # every neighbour of the origin is on the inner boundary of B_o(1)
    x = exit_time_samples(DOUBLED_SG, ORIGIN, 1, 100, RngStream(0))
    assert (x == 1).all()
    assert (exit_time_samples(DOUBLED_SG, Right(1, 0), 1, 10, RngStream(0)) == 0).all()


@pytest.mark.parametrize("n", [2, 4, 8])
def test_exit_time_matches_exact(n):
    mean, se = estimate_exit_time(DOUBLED_SG, ORIGIN, n, 20_000, RngStream(n))
    exact = expected_exit_time_exact(DOUBLED_SG, n)[ORIGIN]
    assert abs(mean - exact) < 3 * se


def test_exit_time_from_other_start():
    x = Right(2, 1)
    mean, se = estimate_exit_time(DOUBLED_SG, x, 8, 20_000, RngStream(17))
    assert abs(mean - expected_exit_time_exact(DOUBLED_SG, 8)[x]) < 3 * se


@pytest.mark.parametrize("z", [Right(2, 0), Left(3, 1), Right(0, 5)])
def test_hit_probability_matches_green(z):
    n = 8
    vs, G = oracles.green_dense(n)
    i, j = vs.index(ORIGIN), vs.index(z)
    exact = G[i, j] / G[j, j]
    p, se = estimate_hit_probability(DOUBLED_SG, ORIGIN, z, n, 20_000, RngStream(21))
    assert abs(p - exact) < 3 * max(se, 1e-12)
    assert exact == pytest.approx(green(DOUBLED_SG, n, z)[ORIGIN] / green(DOUBLED_SG, n, z)[z], rel=1e-9)


def test_hit_before_boundary_conventions():
    assert hit_before_boundary(DOUBLED_SG, Right(2, 0), Right(2, 0), 4, RngStream(0))
    # the strict inequality excludes targets on the inner boundary
    assert not hit_before_boundary(DOUBLED_SG, Right(4, 0), Right(4, 0), 4, RngStream(0))
    assert not hit_before_boundary(DOUBLED_SG, ORIGIN, Right(4, 0), 4, RngStream(0))
    p, _ = estimate_hit_probability(DOUBLED_SG, Right(4, 0), Right(4, 0), 4, 50, RngStream(0))
    assert p == 0


def test_hit_outside_ball_rejected():
    with pytest.raises(DomainError):
        estimate_hit_probability(DOUBLED_SG, ORIGIN, Right(16, 0), 8, 10, RngStream(0))


def test_exit_time_scaling():
    ns = [4, 8, 16, 32, 64, 128]
    means = [estimate_exit_time(DOUBLED_SG, ORIGIN, n, 400, RngStream(n))[0] for n in ns]
    slope = stats.linregress(np.log(ns), np.log(means)).slope
    assert BETA - 0.2 <= slope <= BETA + 0.2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63), st.integers(0, 1000))
def test_draw_is_a_pure_function(seed, counter):
    assert draw(np.uint64(seed), np.uint64(counter)) == draw(np.uint64(seed), np.uint64(counter))
