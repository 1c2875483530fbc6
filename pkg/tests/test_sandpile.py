import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sgidla.errors import ConvergenceError, DomainError
from sgidla.gasket import BETA, DOUBLED_SG, ORIGIN, LatticePoint, Left, Right, ball, ball_volume
from sgidla.green import green_matrix
from sgidla.sandpile import (
    RotationMap,
    SandState,
    ToppleSchedule,
    abelian_check,
    ball_mass_state,
    closed_form_audit,
    odometer_lower_bound_audit,
    rotation_apply,
    stabilize,
    topple,
)

SCHEDULES = [ToppleSchedule.parallel(), ToppleSchedule.priority(), ToppleSchedule.fixed_cycle([Right(1, 0), ORIGIN])]


def test_topple_stable_site_is_identity():
    s = SandState.point_mass(DOUBLED_SG, 0.5)
    t = topple(s, ORIGIN)
    assert t.mass_at(ORIGIN) == 0.5 and t.odometer_at(ORIGIN) == 0


def test_topple_spreads_excess_equally():
    s = SandState.point_mass(DOUBLED_SG, 5.0)
    t = topple(s, ORIGIN)
    assert t.mass_at(ORIGIN) == 1.0
    assert t.odometer_at(ORIGIN) == 4.0
    for v in (Right(1, 0), Right(0, 1), Left(1, 0), Left(0, 1)):
        assert t.mass_at(v) == 1.0
    assert s.mass_at(ORIGIN) == 5.0  # functional


def test_five_units_fill_the_unit_ball():
    out = stabilize(SandState.point_mass(DOUBLED_SG, 5.0))
    assert out.occupied() == set(ball(DOUBLED_SG, ORIGIN, 1).dist)
    assert out.odometer_at(ORIGIN) == pytest.approx(4.0)


@settings(max_examples=15, deadline=None)
@given(st.dictionaries(st.sampled_from(sorted(ball(DOUBLED_SG, ORIGIN, 3).dist, key=str)), st.floats(0, 6), min_size=1, max_size=5))
def test_mass_conservation(masses):
    s = SandState.from_masses(DOUBLED_SG, masses)
    out = stabilize(s, ToppleSchedule.priority(), tol=1e-10)
    assert out.total_mass == pytest.approx(sum(masses.values()), abs=1e-12 * max(1, sum(masses.values())))
    assert out.mass.max() <= 1 + 1e-10


def test_negative_mass_rejected():
    with pytest.raises(DomainError):
        SandState.from_masses(DOUBLED_SG, {ORIGIN: -1.0})


def test_round_cap():
    with pytest.raises(ConvergenceError):
        stabilize(ball_mass_state(DOUBLED_SG, 8), max_rounds=5)


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
def test_exact_ball(n):
    out = stabilize(ball_mass_state(DOUBLED_SG, n))
    t = out.table
    m = t.volume(n)
    assert np.abs(out.mass[:m] - 1).max() < 1e-6
    assert out.mass[m:].max(initial=0) < 1e-6
    b = ball(DOUBLED_SG, ORIGIN, n)
    assert max(out.odometer_at(v) for v in b.inner_boundary) < 1e-6


@pytest.mark.parametrize("n", [3, 5, 8])
def test_odometer_solves_dirichlet_problem(n):
    out = stabilize(ball_mass_state(DOUBLED_SG, n), tol=1e-11)
    ref = oracles.odometer_dirichlet(n)
    err = max(abs(out.odometer_at(v) - u) for v, u in ref.items())
    assert err <= 1e-6 * max(ref.values())


@pytest.mark.parametrize("n", [2, 4, 8])
def test_odometer_equals_green_combination(n):
    out = stabilize(ball_mass_state(DOUBLED_SG, n), tol=1e-11)
    system, G = green_matrix(DOUBLED_SG, n)
    bn = ball_volume(DOUBLED_SG, n)
    o = system.index[ORIGIN]
    h = bn * G[o] - G.sum(axis=0)
    for v, i in system.index.items():
        assert h[i] == pytest.approx(out.odometer_at(v), abs=1e-6)


def test_schedules_agree():
    assert abelian_check(ball_mass_state(DOUBLED_SG, 4), SCHEDULES, tol=1e-11) <= 10 * 1e-11 * 1e3


def test_schedule_independence_off_origin():
    s = SandState.from_masses(DOUBLED_SG, {Right(2, 0): 7.0, Left(1, 1): 4.5})
    assert abelian_check(s, SCHEDULES, tol=1e-11) <= 1e-7


@pytest.mark.parametrize("k", range(0, 6))
def test_closed_form_odometer(k):
    rep = closed_form_audit(k)
    assert rep.passed, rep.lines()
    assert abs(rep.origin_odometer - 2 * 5**k) <= 1e-6 * 2 * 5**k
    assert rep.rotation_power == 2


def test_closed_form_report_line():
    assert "u(origin)=10" in closed_form_audit(1).lines()


@given(st.integers(0, 6).flatmap(lambda k: st.tuples(st.just(k), st.integers(0, 2**k), st.integers(0, 2**k))))
def test_rotation_has_order_three(args):
    k, a, b = args
    if a + b > 2**k:
        with pytest.raises(DomainError):
            rotation_apply(RotationMap(k), LatticePoint(a, b))
        return
    p = LatticePoint(a, b)
    r = RotationMap(k)
    q = rotation_apply(r, rotation_apply(r, rotation_apply(r, p)))
    assert q == p
    assert rotation_apply(r.inverse(), rotation_apply(r, p)) == p


def test_rotation_corner_orbit():
    r = RotationMap(3)
    s = 8
    assert rotation_apply(r, LatticePoint(0, 0)) == LatticePoint(s, 0)
    assert rotation_apply(r, LatticePoint(s, 0)) == LatticePoint(0, s)
    assert rotation_apply(r, LatticePoint(0, s)) == LatticePoint(0, 0)


def test_odometer_lower_bound():
    audit = odometer_lower_bound_audit(32, [1, 2, 4, 8])
    assert audit.slope >= BETA - 0.3
    assert all(r.min_odometer > 0 for r in audit.rows)
    assert audit.sphere_minima_nonincreasing


def test_odometer_is_not_pointwise_radially_monotone():
    # recorded counterexample: u grows along some edges pointing away from the origin
    audit = odometer_lower_bound_audit(16, [1])
    assert audit.monotonicity_violations
    inner, outer, u_in, u_out = audit.monotonicity_violations[0]
    assert u_out > u_in
