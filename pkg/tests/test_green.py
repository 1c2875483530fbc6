import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sgidla.errors import DomainError
from sgidla.gasket import DOUBLED_SG, ORIGIN, Right, ball
from sgidla.green import (
    diagonal_green_bound_check,
    dirichlet_system,
    exit_distribution,
    expected_exit_time_exact,
    green,
    green_matrix,
    harnack_ratio,
)


@pytest.mark.parametrize("k", range(0, 9))
def test_exit_time_from_origin_is_power_of_five(k):
    assert expected_exit_time_exact(DOUBLED_SG, 2**k)[ORIGIN] == pytest.approx(5**k, rel=1e-9)


@pytest.mark.parametrize("n", [2, 4, 6, 8])
def test_green_matches_dense_inverse(n):
    vs, G = oracles.green_dense(n)
    system, M = green_matrix(DOUBLED_SG, n)
    perm = [system.index[v] for v in vs]
    np.testing.assert_allclose(M[np.ix_(perm, perm)], G, atol=1e-9)


@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_green_symmetry(n):
    _, G = green_matrix(DOUBLED_SG, n)
    assert np.abs(G - G.T).max() <= 1e-9


@pytest.mark.parametrize("n", [4, 8, 16])
def test_laplacian_identity(n):
    system = dirichlet_system(DOUBLED_SG, n)
    for z in [ORIGIN, system.interior[len(system.interior) // 2], system.interior[-1]]:
        g = green(DOUBLED_SG, n, z)
        values = np.array([g[v] for v in system.vertices])
        lap = system.laplacian(values)
        target = np.zeros(len(system.interior))
        target[system.index[z]] = -1.0
        assert np.abs(lap - target).max() <= 1e-10


@pytest.mark.parametrize("n", [4, 8, 16])
def test_row_sum_is_exit_time(n):
    system, G = green_matrix(DOUBLED_SG, n)
    tau = expected_exit_time_exact(DOUBLED_SG, n).values
    assert np.abs(G.sum(axis=1) - tau).max() <= 1e-9


def test_boundary_target_is_zero():
    g = green(DOUBLED_SG, 4, Right(4, 0))
    assert all(v == 0 for v in g.values.values())


def test_outside_target_rejected():
    with pytest.raises(DomainError):
        green(DOUBLED_SG, 4, Right(8, 0))


def test_dirichlet_inputs():
    system = dirichlet_system(DOUBLED_SG, 4)
    with pytest.raises(DomainError):
        system.solve(np.zeros(3))
    with pytest.raises(DomainError):
        system.solve(0.0, {ORIGIN: 1.0})
    with pytest.raises(DomainError):
        system.solve(0.0, 0.0, method="multigrid")


def test_direct_and_cg_agree():
    system = dirichlet_system(DOUBLED_SG, 16)
    a = system.solve(-1.0, 0.0, method="direct").values
    b = system.solve(-1.0, 0.0, method="cg").values
    assert np.abs(a - b).max() <= 1e-8 * np.abs(a).max()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_maximum_principle(data):
    system = dirichlet_system(DOUBLED_SG, 8)
    bdry = np.resize(np.array(data), len(system.boundary))
    sol = system.solve(0.0, bdry)
    inner = sol.values[: len(system.interior)]
    assert inner.max() <= bdry.max() + 1e-9
    assert inner.min() >= bdry.min() - 1e-9


def test_constant_boundary_gives_constant():
    sol = dirichlet_system(DOUBLED_SG, 8).solve(0.0, 3.0)
    assert np.allclose(sol.values, 3.0)


def test_harnack_bounded():
    r = harnack_ratio(DOUBLED_SG, ORIGIN, 8, 200, seed=1)
    assert 1 <= r.max_ratio < 50
    assert harnack_ratio(DOUBLED_SG, ORIGIN, 8, 3, law="constant").max_ratio == pytest.approx(1.0)


def test_harnack_off_origin():
    r = harnack_ratio(DOUBLED_SG, Right(16, 0), 4, 100, seed=2)
    assert np.isfinite(r.max_ratio)


def test_diagonal_rows():
    rows = diagonal_green_bound_check(DOUBLED_SG, 8)
    assert len(rows) == len(ball(DOUBLED_SG, ORIGIN, 8))
    for r in rows:
        assert (r.g == 0) == (r.d == 0)


def test_exit_distribution_sums_to_one():
    d = exit_distribution(DOUBLED_SG, 8)
    assert sum(d.values()) == pytest.approx(1.0)
    assert all(p >= 0 for p in d.values())


def test_exit_distribution_against_oracle():
    g = oracles.doubled_graph(4)
    members = frozenset(ball(DOUBLED_SG, ORIGIN, 5).dist)
    ref = oracles.exit_law(g, members, ORIGIN)
    d = exit_distribution(DOUBLED_SG, 5)
    assert set(d) == set(ref)
    for v in d:
        assert d[v] == pytest.approx(ref[v], abs=1e-12)
