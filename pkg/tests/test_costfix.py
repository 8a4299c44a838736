import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from htnet.allocation import UtilitySpec, solve_allocation
from htnet.costfix import (
    CostModel,
    cost_value,
    duality_roundtrip,
    fixed_point,
    fixed_point_continuity_probe,
    fixed_point_residual,
    single_bottleneck_direction,
)
from htnet.errors import ConfigError, HeavyTrafficError
from htnet.model import NetworkTopology, TrafficProfile

from conftest import linear


def sym_cost(beta=(1.0, 1.0)):
    return CostModel.from_utility(UtilitySpec(1.0, beta), TrafficProfile.markovian([0.5, 0.5], [1.0, 1.0]))


def convex_oracle(top, cost, links, w, x0):
    A = top.incidence[links]
    cons = [{"type": "ineq", "fun": lambda n: A @ (cost.nu * n) - w, "jac": lambda n: A * cost.nu}]
    res = minimize(lambda n: cost_value(cost, n), x0, jac=cost.derivative, method="SLSQP",
                   bounds=[(0, None)] * top.n_routes, constraints=cons, options={"ftol": 1e-15, "maxiter": 500})
    return res.x


def test_cost_examples():
    c = sym_cost()
    assert cost_value(c, [0.0, 0.0]) == 0.0
    assert cost_value(c, [1.0, 1.0]) == pytest.approx(2.0)
    assert cost_value(c, [2.0, 1.0]) > cost_value(c, [1.0, 1.0])
    n = np.array([0.3, 2.0])
    assert np.allclose(c.inverse(c.route_cost(n)), n)


def test_cost_derivative_matches_finite_difference():
    c = CostModel.from_utility(UtilitySpec(2.0, (1.0, 3.0)), TrafficProfile.markovian([0.3, 0.4], [2.0, 0.5]))
    n = np.array([0.7, 1.3])
    h = 1e-6
    fd = (c.route_cost(n + h) - c.route_cost(n - h)) / (2 * h)
    assert np.allclose(c.derivative(n), fd, rtol=1e-7)


def test_fixed_point_examples(single_link):
    fp = fixed_point(single_link, sym_cost(), [0], 2.0)
    assert np.allclose(fp.n_star, [1.0, 1.0], atol=1e-10)
    assert fp.theta[0] == pytest.approx(2.0)
    fp = fixed_point(single_link, sym_cost((1.0, 4.0)), [0], 2.0)
    assert np.allclose(fp.n_star, [1.6, 0.4], atol=1e-10)
    assert fp.theta[0] == pytest.approx(3.2)
    fp = fixed_point(single_link, sym_cost(), [0], 0.0)
    assert fp.n_star.tolist() == [0.0, 0.0]
    assert fp.cost == 0.0


def test_fixed_point_matches_convex_oracle():
    rng = np.random.default_rng(8)
    for _ in range(15):
        top = linear(3)
        tr = TrafficProfile(tuple(rng.uniform(0.1, 0.5, 4)), tuple(rng.uniform(0.5, 2, 4)),
                            tuple(rng.uniform(0.5, 2, 4)), tuple(rng.uniform(0.5, 2, 4)))
        util = UtilitySpec(float(rng.choice([0.5, 1.0, 2.0])), tuple(rng.uniform(0.5, 2, 4)))
        cost = CostModel.from_utility(util, tr)
        links = sorted(rng.choice(3, size=int(rng.integers(1, 4)), replace=False).tolist())
        w = rng.uniform(0.2, 3, len(links))
        fp = fixed_point(top, cost, links, w)
        assert fp.kkt_residual <= 1e-8
        for x0 in (np.ones(4), rng.uniform(0, 5, 4)):
            ref = convex_oracle(top, cost, links, w, x0)
            assert cost_value(cost, fp.n_star) <= cost_value(cost, ref) + 1e-7
            assert np.allclose(fp.n_star, ref, atol=1e-4)


def test_zero_off_bottleneck_routes():
    top = linear(2)
    cost = CostModel.from_utility(UtilitySpec.proportional(3), TrafficProfile.markovian([0.4, 0.6, 0.3], [1, 1, 1]))
    fp = fixed_point(top, cost, [0], 3.0)
    assert fp.n_star[2] == 0.0
    assert fp.n_star[0] > 0 and fp.n_star[1] > 0


def test_single_bottleneck_homogeneity(single_link):
    unit = single_bottleneck_direction(single_link, sym_cost(), 0)
    for w in (0.5, 2.0, 7.0):
        assert np.allclose(fixed_point(single_link, sym_cost(), [0], w).n_star, w * unit, atol=1e-10)


def test_residual_detects_bad_point(single_link):
    c = sym_cost()
    assert fixed_point_residual(single_link, c, [0], [2.0], [1.0, 1.0], [2.0]) < 1e-14
    assert fixed_point_residual(single_link, c, [0], [2.0], [0.5, 0.5], [2.0]) > 0.5


def test_bad_inputs(single_link):
    with pytest.raises(ConfigError):
        fixed_point(single_link, sym_cost(), [], 1.0)
    with pytest.raises(ConfigError):
        fixed_point(single_link, sym_cost(), [0], -1.0)


def test_roundtrip_symmetric_and_asymmetric(single_link):
    tr = TrafficProfile.markovian([0.5, 0.5], [1.0, 1.0])
    rep = duality_roundtrip(single_link, UtilitySpec.proportional(2), tr, [0], 2.0)
    assert np.allclose(rep.allocation, [0.5, 0.5], atol=1e-9)
    assert rep.forward_residual < 1e-9 and rep.backward_residual < 1e-9
    rep = duality_roundtrip(single_link, UtilitySpec(1.0, (1.0, 4.0)), tr, [0], 2.0)
    assert np.allclose(rep.n_star, [1.6, 0.4])
    assert rep.forward_residual < 1e-9


def test_roundtrip_degenerate_and_precondition(single_link):
    tr = TrafficProfile.markovian([0.5, 0.5], [1.0, 1.0])
    rep = duality_roundtrip(single_link, UtilitySpec.proportional(2), tr, [0], 0.0)
    assert rep.degenerate and rep.allocation is None
    with pytest.raises(HeavyTrafficError):
        duality_roundtrip(single_link, UtilitySpec.proportional(2), TrafficProfile.markovian([0.2, 0.2], [1, 1]), None, 1.0)


def test_roundtrip_backward_from_supplied_state():
    # every state with n1 = n2 = n0 * (rho1 / rho0) allocates rho on a single link
    top = NetworkTopology.build([1.0], [[0], [0]])
    tr = TrafficProfile.markovian([0.25, 0.75], [1.0, 1.0])
    rep = duality_roundtrip(top, UtilitySpec.proportional(2), tr, [0], 1.0, n=[0.5, 1.5])
    assert rep.backward_residual < 1e-9


def test_continuity_probe(single_link):
    rows = fixed_point_continuity_probe(single_link, sym_cost(), [0], 2.0, [0.0, 0.1, 0.01, 0.001])
    assert rows[0][1] == 0.0
    assert rows[1][1] == pytest.approx(0.1)
    assert rows[2][1] / rows[3][1] == pytest.approx(10.0, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(w=st.lists(st.floats(0.0, 10.0), min_size=2, max_size=2), bump=st.floats(0.0, 3.0), which=st.integers(0, 1))
def test_value_monotone_in_workload(w, bump, which):
    top = linear(2)
    cost = CostModel.from_utility(UtilitySpec(2.0, (1.0, 2.0, 1.0)), TrafficProfile.markovian([0.4, 0.6, 0.6], [1, 1, 1]))
    lo = fixed_point(top, cost, [0, 1], w)
    w2 = list(w)
    w2[which] += bump
    hi = fixed_point(top, cost, [0, 1], w2)
    assert hi.cost >= lo.cost - 1e-9 * max(1.0, lo.cost)
    assert np.all(top.incidence @ (cost.nu * hi.n_star) >= np.asarray(w2) - 1e-8)


@settings(max_examples=30, deadline=None)
@given(w=st.floats(0.01, 20.0), alpha=st.sampled_from([0.5, 1.0, 2.0]))
def test_fixed_point_allocates_offered_load(w, alpha):
    top = linear(2)
    tr = TrafficProfile.markovian([0.4, 0.6, 0.3], [1.0, 1.0, 1.0])
    util = UtilitySpec(alpha, (1.0, 2.0, 1.0))
    fp = fixed_point(top, CostModel.from_utility(util, tr), [0], w)
    lam = solve_allocation(top, util, fp.n_star).lam
    assert np.allclose(lam[:2], tr.rho[:2], atol=1e-6)
