import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear
from htnet.errors import ConfigError
from htnet.model import (
    NetworkTopology,
    ScalingSequenceSpec,
    TrafficProfile,
    classify_links,
    link_load,
    traffic_at_scale,
)


def traffic(rho):
    return TrafficProfile.markovian(rho, [1.0] * len(rho))


def test_single_link_load(single_link, sym_traffic):
    assert link_load(single_link, sym_traffic) == pytest.approx([1.0])


def test_linear_loads():
    assert link_load(linear(2), traffic([0.4, 0.5, 0.3])) == pytest.approx([0.9, 0.7])


def test_unused_link_has_zero_load():
    topo = NetworkTopology.build([1.0, 1.0], [[0]])
    assert link_load(topo, traffic([0.3])).tolist() == [0.3, 0.0]


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        link_load(linear(2), traffic([0.1, 0.2]))


def test_classify_single_bottleneck(single_link, sym_traffic):
    cls = classify_links(single_link, sym_traffic, 1e-9)
    assert cls.bottlenecks == (0,)
    assert cls.heavy_traffic and cls.single_bottleneck


def test_classify_all_slack():
    cls = classify_links(linear(2), traffic([0.4, 0.5, 0.3]), 1e-9)
    assert cls.bottlenecks == () and cls.slack == (0, 1)
    assert cls.usual_traffic and not cls.heavy_traffic


def test_classify_two_bottlenecks():
    cls = classify_links(linear(2), traffic([0.4, 0.6, 0.6]), 1e-9)
    assert cls.bottlenecks == (0, 1)
    assert cls.heavy_traffic and not cls.single_bottleneck


def test_classify_overload():
    cls = classify_links(linear(2), traffic([0.5, 0.6, 0.3]), 1e-9)
    assert cls.overload == (0,) and not cls.usual_traffic


def test_relative_tolerance():
    topo = NetworkTopology.build([100.0], [[0]])
    tr = traffic([100.0 * (1 - 1e-7)])
    assert classify_links(topo, tr, 1e-9).bottlenecks == ()
    assert classify_links(topo, tr, 1e-9, rel_tol=1e-6).bottlenecks == (0,)


def test_negative_tolerance():
    with pytest.raises(ConfigError):
        classify_links(linear(1), traffic([0.5, 0.5]), -1.0)


def test_scaling_rule_examples():
    base = TrafficProfile((1.0, 0.2), (0.5, 0.5), (1.0, 1.0), (0.25, 0.25))
    spec = ScalingSequenceSpec(base, (-1.0, -1.0), (0.0, 0.0))
    with pytest.raises(ConfigError, match="route 1"):
        traffic_at_scale(spec, 4)
    ok = ScalingSequenceSpec(base, (-1.0, 0.0), (0.0, 0.0))
    t10 = traffic_at_scale(ok, 10)
    assert t10.lam[0] == pytest.approx(0.9)
    assert t10.nu == (0.5, 0.5)
    assert t10.a_sq == base.a_sq and t10.b_sq == base.b_sq


@pytest.mark.parametrize("k", [0, -1, 2.5])
def test_bad_scale_index(k):
    spec = ScalingSequenceSpec(traffic([0.5]), (0.0,), (0.0,))
    with pytest.raises(ConfigError):
        traffic_at_scale(spec, k)


def test_theta_rho_limit():
    base = TrafficProfile.markovian([0.4, 0.6], [2.0, 1.5])
    spec = ScalingSequenceSpec(base, (0.3, -0.2), (0.1, 0.05))
    errs = []
    for k in (10, 100, 1000):
        tk = spec.at(k)
        errs.append(np.max(np.abs(k * (tk.rho - base.rho) - spec.theta_rho)))
    # residual is theta_lam * theta_nu / k
    assert errs[1] == pytest.approx(errs[0] / 10) and errs[2] == pytest.approx(errs[0] / 100)


@pytest.mark.parametrize(
    "caps,routes",
    [([], [[0]]), ([1.0], []), ([0.0], [[0]]), ([1.0], [[]]), ([1.0], [[1]])],
)
def test_topology_validation(caps, routes):
    with pytest.raises(ConfigError):
        NetworkTopology.build(caps, routes)


def test_undeclared_link_name():
    with pytest.raises(ConfigError, match="undeclared"):
        NetworkTopology(("a",), (1.0,), (("a", "b"),))


@pytest.mark.parametrize("lam,nu", [([0.0], [1.0]), ([1.0], [-1.0])])
def test_traffic_validation(lam, nu):
    with pytest.raises(ConfigError):
        TrafficProfile.markovian(lam, nu)


def test_incidence():
    A = linear(2).incidence
    assert A.tolist() == [[1, 1, 0], [1, 0, 1]]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.05, 2.0), min_size=3, max_size=3),
    st.floats(0.1, 10.0),
    st.integers(1, 1000),
)
def test_classification_scale_invariant(rho, s, k):
    topo = linear(2)
    tr = traffic(rho)
    base = classify_links(topo, tr, 1e-9)
    scaled_topo = linear(2, [s, s])
    scaled_tr = TrafficProfile.markovian([s * x for x in rho], [1.0] * 3)
    other = classify_links(scaled_topo, scaled_tr, 1e-9 * s)
    assert (base.bottlenecks, base.slack, base.overload) == (other.bottlenecks, other.slack, other.overload)
    spec = ScalingSequenceSpec(tr, (0.5, -0.01, 0.25), (0.0, 0.0, 0.0))
    assert k * (spec.at(k).lam_arr - tr.lam_arr) == pytest.approx([0.5, -0.01, 0.25], rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 3.0), min_size=3, max_size=3), st.lists(st.booleans(), min_size=3, max_size=3))
def test_load_additive(rho, part):
    topo = linear(2)
    A = topo.incidence
    rho = np.array(rho)
    mask = np.array(part)
    total = link_load(topo, traffic(rho.tolist()))
    assert A @ (rho * mask) + A @ (rho * ~mask) == pytest.approx(total)
