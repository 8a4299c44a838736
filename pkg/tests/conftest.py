import numpy as np
import pytest

from htnet.model import NetworkTopology, TrafficProfile


def linear(n_links, caps=None):
    """Long route over every link, then one short route per link."""
    caps = caps if caps is not None else [1.0] * n_links
    return NetworkTopology.build(caps, [list(range(n_links))] + [[j] for j in range(n_links)])


def random_topology(rng, max_links=4, max_routes=6):
    L = int(rng.integers(1, max_links + 1))
    R = int(rng.integers(1, max_routes + 1))
    routes = []
    for _ in range(R):
        k = int(rng.integers(1, L + 1))
        routes.append(sorted(rng.choice(L, size=k, replace=False).tolist()))
    caps = rng.uniform(0.5, 2.0, size=L)
    return NetworkTopology.build(caps.tolist(), routes)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def single_link():
    return NetworkTopology.build([1.0], [[0], [0]])


@pytest.fixture
def linear2():
    return linear(2)


@pytest.fixture
def sym_traffic():
    return TrafficProfile.markovian([0.5, 0.5], [1.0, 1.0])
