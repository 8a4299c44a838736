import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear
from htnet.allocation import UtilitySpec
from htnet.costfix import CostModel, cost_value, fixed_point
from htnet.errors import ConfigError, HeavyTrafficError
from htnet.fluid import (
    attraction_time,
    distance_to_fixed_point,
    full_utilization_gap,
    integrate_fluid,
    lyapunov,
    monotonicity_violations,
    water_fill,
)
from htnet.model import NetworkTopology, TrafficProfile

PF = UtilitySpec(1.0, (1.0, 1.0))
LIN_TR = TrafficProfile.markovian([0.4, 0.6, 0.3], [1.0, 1.0, 1.0])
LIN_U = UtilitySpec(1.0, (1.0, 1.0, 1.0))


def test_empty_start_stays_empty(single_link, sym_traffic):
    tr = integrate_fluid(single_link, PF, sym_traffic, [0.0, 0.0], 2.0, 0.01)
    assert np.all(tr.N == 0.0)
    assert np.all(tr.L == 0.0)


def test_fixed_point_is_invariant(single_link, sym_traffic):
    cost = CostModel.from_utility(PF, sym_traffic)
    n0 = fixed_point(single_link, cost, [0], 2.0).n_star
    assert n0 == pytest.approx([1.0, 1.0])
    tr = integrate_fluid(single_link, PF, sym_traffic, n0, 2.0, 0.01)
    assert np.max(np.abs(tr.N - n0)) < 1e-9
    assert attraction_time(tr, 1e-6) == 0.0


def test_single_route_drain():
    topo = NetworkTopology.build([1.0], [[0]])
    tr_ = TrafficProfile.markovian([0.5], [1.0])
    h = 1e-3
    tr = integrate_fluid(topo, UtilitySpec(1.0, (1.0,)), tr_, [1.0], 4.0, h)
    expect = np.maximum(1 - 0.5 * tr.t, 0.0)
    assert np.max(np.abs(tr.N[:, 0] - expect)) <= 10 * h
    # no bottleneck, so the attractor is the empty state
    assert tr.bottlenecks == ()
    assert attraction_time(tr, 1e-3) == pytest.approx(2.0, abs=10 * h)


def test_lyapunov_example(single_link, sym_traffic):
    assert lyapunov(single_link, PF, sym_traffic, None, [2.0, 0.0]) == pytest.approx(2.0)
    assert lyapunov(single_link, PF, sym_traffic, [0], [1.0, 1.0]) == pytest.approx(0.0, abs=1e-12)


def test_lyapunov_needs_heavy_traffic(linear2):
    tr = TrafficProfile.markovian([0.4, 0.5, 0.3], [1.0] * 3)
    with pytest.raises(HeavyTrafficError):
        lyapunov(linear2, LIN_U, tr, None, [1.0, 1.0, 1.0])


def test_attraction_symmetric(single_link, sym_traffic):
    tr = integrate_fluid(single_link, PF, sym_traffic, [2.0, 0.0], 20.0, 1e-3)
    assert tr.n_star[-1] == pytest.approx([1.0, 1.0], abs=1e-9)
    times = [attraction_time(tr, e) for e in (1e-1, 1e-2, 1e-3)]
    assert all(t is not None for t in times)
    assert times[0] <= times[1] <= times[2] < 20.0
    assert tr.N[-1] == pytest.approx([1.0, 1.0], abs=1e-3)


def test_attraction_not_reached(single_link, sym_traffic):
    tr = integrate_fluid(single_link, PF, sym_traffic, [2.0, 0.0], 0.5, 1e-2)
    assert attraction_time(tr, 1e-3) is None
    with pytest.raises(ConfigError):
        attraction_time(tr, 0.0)


def test_linear_invariants(linear2):
    h = 5e-3
    tr = integrate_fluid(linear2, LIN_U, LIN_TR, [1.0, 2.0, 3.0], 25.0, h)
    assert np.all(tr.N >= 0)
    assert tr.bottlenecks == (0,)
    # workload identity and nondecreasing idleness
    assert np.max(np.abs(tr.W - tr.W[0] - tr.Y)) <= 10 * h
    v = monotonicity_violations(tr)
    for key in ("psi", "L", "psi_star", "W", "Y"):
        assert v[key] <= 10 * h, key
    assert v["dpsi"] <= 1e-9
    assert np.all(tr.L >= -1e-9)
    assert distance_to_fixed_point(tr)[-1] < 1e-2
    assert tr.n_star[-1] == pytest.approx([1.2, 1.8, 0.0], abs=1e-9)


def test_full_utilization_near_fixed_point(linear2):
    tr = integrate_fluid(linear2, LIN_U, LIN_TR, [1.0, 2.0, 3.0], 10.0, 1e-2)
    assert full_utilization_gap(tr, linear2, 0.5, 0.1) <= 1e-9


def test_water_fill():
    A = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    x = water_fill(A, np.array([1.0, 0.5]), np.array([1.0, 1.0, 1.0]), np.arange(3))
    assert x == pytest.approx([0.25, 0.75, 0.25])
    capped = water_fill(A, np.array([1.0, 1.0]), np.array([0.1, 0.2, 5.0]), np.arange(3))
    assert capped == pytest.approx([0.1, 0.2, 0.9])


def test_bad_inputs(single_link, sym_traffic):
    with pytest.raises(ConfigError):
        integrate_fluid(single_link, PF, sym_traffic, [-1.0, 0.0], 1.0)
    with pytest.raises(ConfigError):
        integrate_fluid(single_link, PF, sym_traffic, [1.0], 1.0)
    with pytest.raises(ConfigError):
        integrate_fluid(single_link, PF, sym_traffic, [1.0, 0.0], 1.0, 0.0)
    with pytest.raises(ConfigError):
        integrate_fluid(single_link, PF, sym_traffic, [1.0, 0.0], 0.001, 0.01)


def test_csv_columns(tmp_path, linear2):
    tr = integrate_fluid(linear2, LIN_U, LIN_TR, [1.0, 0.0, 0.5], 0.1, 0.05)
    path = tmp_path / "f.csv"
    tr.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "N_r0", "N_r1", "N_r2", "W_l0", "Y_l0", "psi", "psi_star", "L"]
    assert len(rows) == tr.t.size + 1
    assert float(rows[-1][0]) == pytest.approx(0.1)


def psi_ball_bound(utility, traffic, n0):
    cost = CostModel.from_utility(utility, traffic)
    psi0 = cost_value(cost, n0)
    a = utility.alpha
    coef = utility.beta_arr * traffic.nu_arr / ((1 + a) * traffic.rho**a)
    return np.max((psi0 / coef) ** (1 / (1 + a)))


@settings(max_examples=15, deadline=None)
@given(
    st.lists(st.floats(0.0, 5.0), min_size=3, max_size=3),
    st.sampled_from([0.5, 1.0, 2.0]),
)
def test_fluid_properties(n0, alpha):
    h = 5e-3
    topo = linear(2)
    u = UtilitySpec(alpha, (1.0, 2.0, 0.5))
    tr = integrate_fluid(topo, u, LIN_TR, n0, 3.0, h)
    assert np.all(tr.N >= 0)
    assert np.max(np.abs(tr.W - tr.W[0] - tr.Y)) <= 10 * h
    v = monotonicity_violations(tr)
    assert v["psi"] <= 10 * h and v["Y"] <= 10 * h and v["W"] <= 10 * h
    assert v["dpsi"] <= 1e-9
    assert np.all(tr.L >= -1e-9)
    if sum(n0) > 0:
        # Euler chatters at the boundary by O(h), even from a start next to zero
        assert tr.N.max() <= 10 * psi_ball_bound(u, LIN_TR, np.array(n0)) + 10 * h
