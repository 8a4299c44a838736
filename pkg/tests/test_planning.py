import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import linear, random_topology
from htnet.errors import ConfigError, HeavyTrafficError
from htnet.model import NetworkTopology, TrafficProfile, classify_links
from htnet.planning import check_resource_pooling, min_ratio_xi, simplex, solve_static_lp


def traffic(rho):
    return TrafficProfile.markovian(rho, [1.0] * len(rho))


def scipy_xi(topo, tr):
    R = topo.n_routes
    A_ub = np.zeros((R + topo.n_links, 1 + R))
    A_ub[:R, 0] = tr.rho
    A_ub[:R, 1:] = -np.eye(R)
    A_ub[R:, 1:] = topo.incidence
    b_ub = np.concatenate([np.zeros(R), topo.c])
    c = np.zeros(1 + R)
    c[0] = -1
    return -linprog(c, A_ub=A_ub, b_ub=b_ub, method="highs").fun


def check_certificate(topo, tr, res, tol=1e-9):
    A, rho, c = topo.incidence, tr.rho, topo.c
    lam, p, pi = res.lambda_primal, res.p, res.pi
    assert np.all(rho * res.xi - lam <= tol)
    assert np.all(A @ lam <= c + tol)
    assert rho @ p >= 1 - tol
    assert np.all(A.T @ pi - p >= -tol)
    assert np.all(p >= 0) and np.all(pi >= 0)
    assert res.xi == pytest.approx(c @ pi, abs=tol)
    # complementary slackness on the capacity rows and the rate rows
    assert np.all(np.abs(pi * (c - A @ lam)) <= tol)
    assert np.all(np.abs(p * (lam - rho * res.xi)) <= tol)


def test_simplex_small():
    # max x + y st x + 2y <= 4, 3x + y <= 6
    sol = simplex([-1, -1], [[1, 2], [3, 1]], [4, 6])
    assert sol.x == pytest.approx([1.6, 1.2])
    assert sol.value == pytest.approx(-2.8)


def test_simplex_equality_rows():
    sol = simplex([1, 2, 0], A_eq=[[1, 1, 1]], b_eq=[1], A_ub=[[-1, 0, 0]], b_ub=[-0.25])
    # min x + 2y on the simplex with x >= 1/4: put the rest on z
    assert sol.value == pytest.approx(0.25)
    assert sol.x == pytest.approx([0.25, 0.0, 0.75])


def test_single_bottleneck_duals(linear2):
    tr = traffic([0.4, 0.6, 0.3])
    res = solve_static_lp(linear2, tr)
    assert res.xi == pytest.approx(1.0, abs=1e-9)
    assert res.lambda_primal == pytest.approx(tr.rho, abs=1e-9)
    assert res.pi == pytest.approx([1.0, 0.0], abs=1e-9)
    assert res.p == pytest.approx([1.0, 1.0, 0.0], abs=1e-9)
    assert res.bottleneck_set == (0,)
    assert res.pooling
    assert tr.rho @ res.p == pytest.approx(1.0, abs=1e-12)
    check_certificate(linear2, tr, res)


def test_bottleneck_capacity_two():
    topo = NetworkTopology.build([2.0], [[0], [0]])
    res = solve_static_lp(topo, traffic([1.2, 0.8]))
    assert res.pi == pytest.approx([0.5])
    assert res.p == pytest.approx([0.5, 0.5])


def test_underloaded_xi():
    topo = NetworkTopology.build([1.0], [[0]])
    res = solve_static_lp(topo, traffic([0.5]))
    assert res.xi == pytest.approx(2.0)
    assert res.bottleneck_set == (0,)  # bottleneck of the scaled-up LP, not of rho


def test_two_bottlenecks_not_pooled(linear2):
    tr = traffic([0.4, 0.6, 0.6])
    res = solve_static_lp(linear2, tr)
    assert res.xi == pytest.approx(1.0)
    assert not res.pooling
    a, b = res.witness
    assert not np.allclose(a, b)
    for p in (a, b):
        assert tr.rho @ p == pytest.approx(1.0)
    assert res.pi_free_links == 2
    check_certificate(linear2, tr, res)


def test_pooling_report(linear2):
    rep = check_resource_pooling(linear2, traffic([0.4, 0.6, 0.3]))
    assert rep.pooling and rep.bottleneck_set == (0,) and rep.witness is None
    rep = check_resource_pooling(linear2, traffic([0.4, 0.6, 0.6]))
    assert not rep.pooling and rep.bottleneck_set == (0, 1)


def test_pooling_witness_vertices(linear2):
    # dual face: p = (pi0 + pi1, pi0, pi1) with pi0 + pi1 = 1
    rep = check_resource_pooling(linear2, traffic([0.4, 0.6, 0.6]))
    got = sorted(tuple(np.round(w, 9)) for w in rep.witness)
    assert got == [(1.0, 0.0, 1.0), (1.0, 1.0, 0.0)]


def test_pooling_needs_heavy_traffic(linear2):
    with pytest.raises(HeavyTrafficError):
        check_resource_pooling(linear2, traffic([0.4, 0.5, 0.3]))
    with pytest.raises(HeavyTrafficError):
        check_resource_pooling(linear2, traffic([0.5, 0.6, 0.3]))


def test_dimension_mismatch(linear2):
    with pytest.raises(ConfigError):
        solve_static_lp(linear2, traffic([0.5]))


@pytest.mark.parametrize("seed", range(40))
def test_against_scipy_and_closed_form(seed):
    rng = np.random.default_rng(seed)
    topo = random_topology(rng)
    tr = traffic(rng.uniform(0.05, 1.0, topo.n_routes).tolist())
    res = solve_static_lp(topo, tr)
    assert res.xi == pytest.approx(scipy_xi(topo, tr), abs=1e-9)
    assert res.xi == pytest.approx(min_ratio_xi(topo, tr), abs=1e-9)
    check_certificate(topo, tr, res)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.data())
def test_heavy_traffic_dual_form(L, data):
    """Scale rho onto the boundary; the dual then lives on the bottleneck links only."""
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    topo = linear(L, rng.uniform(0.5, 2.0, L).tolist())
    raw = traffic(rng.uniform(0.1, 1.0, topo.n_routes).tolist())
    tr = traffic((raw.rho * min_ratio_xi(topo, raw)).tolist())
    res = solve_static_lp(topo, tr)
    cls = classify_links(topo, tr, 1e-9)
    assert res.xi == pytest.approx(1.0, abs=1e-9)
    assert res.lambda_primal == pytest.approx(tr.rho, abs=1e-9)
    star = list(cls.bottlenecks)
    off = np.setdiff1d(np.arange(L), star)
    assert np.all(res.pi[off] <= 1e-9)
    assert topo.c[star] @ res.pi[star] == pytest.approx(1.0, abs=1e-9)
    p_form = topo.incidence[star].T @ res.pi[star]
    assert res.p == pytest.approx(p_form, abs=1e-9)
    assert tr.rho @ res.p == pytest.approx(1.0, abs=1e-9)
    assert res.pooling == (len(star) == 1)
    check_certificate(topo, tr, res)
