"""Built-in scenarios.

The linear networks are small stand-ins for a generic multi-link topology:
one long route crossing every link plus one short route per link.
"""

from __future__ import annotations

import copy

from .errors import ConfigError
from .scenario import Scenario, build


def _links(caps):
    return [{"id": f"l{i}", "capacity": float(c)} for i, c in enumerate(caps)]


def _routes(paths):
    return [{"id": f"r{i}", "links": [f"l{j}" for j in p]} for i, p in enumerate(paths)]


def _markov(lam, nu):
    return {
        "lambda": list(lam),
        "nu": list(nu),
        "a_sq": [1.0 / x**2 for x in lam],
        "b_sq": [x**2 for x in nu],
    }


_PRESETS = {
    "single-link": {
        "name": "single-link",
        "description": "two routes sharing one saturated link",
        "topology": {"links": _links([1.0]), "routes": _routes([[0], [0]])},
        "traffic": _markov([0.5, 0.5], [1.0, 1.0]),
        "scaling": {"theta_lambda": [-0.5, -0.5], "theta_nu": [0.0, 0.0]},
        "utility": {"alpha": 1.0, "beta": [1.0, 1.0]},
        "distributions": {"interarrival": ["gamma"] * 2, "work": ["gamma"] * 2},
        "policies": [
            {"name": "prop-fair", "kind": "utility-max"},
            {"name": "fixed-share", "kind": "fixed-share", "shares": [0.5, 0.5]},
            {"name": "priority", "kind": "static-priority", "order": [1, 0]},
        ],
        "experiment": {"n0": [2.0, 0.0], "state": [2.0, 1.0]},
    },
    "linear-2": {
        "name": "linear-2",
        "description": "long route over l0 and l1; l0 is the only bottleneck",
        "topology": {"links": _links([1.0, 1.0]), "routes": _routes([[0, 1], [0], [1]])},
        "traffic": _markov([0.4, 0.6, 0.3], [1.0, 1.0, 1.0]),
        "scaling": {"theta_lambda": [-0.5, -0.5, 0.0], "theta_nu": [0.0, 0.0, 0.0]},
        "utility": {"alpha": 1.0, "beta": [1.0, 1.0, 1.0]},
        "distributions": {"interarrival": ["gamma"] * 3, "work": ["gamma"] * 3},
        "policies": [
            {"name": "prop-fair", "kind": "utility-max"},
            {"name": "priority", "kind": "static-priority", "order": [2, 1, 0]},
        ],
        "experiment": {
            "k": [10, 20, 40],
            "seeds": list(range(20)),
            "diffusion_horizon": 3.0,
            "compare_t": [0.5, 1.0],
            "n0": [1.0, 2.0, 3.0],
            "state": [1.0, 1.0, 1.0],
        },
    },
    "linear-3": {
        "name": "linear-3",
        "description": "long route over three links; l0 is the only bottleneck",
        "topology": {"links": _links([1.0, 1.0, 1.0]), "routes": _routes([[0, 1, 2], [0], [1], [2]])},
        "traffic": _markov([0.3, 0.7, 0.4, 0.5], [1.0, 1.0, 1.0, 1.0]),
        "scaling": {"theta_lambda": [-0.5, -0.5, 0.0, 0.0], "theta_nu": [0.0, 0.0, 0.0, 0.0]},
        "utility": {"alpha": 1.0, "beta": [1.0, 1.0, 1.0, 1.0]},
        "distributions": {"interarrival": ["gamma"] * 4, "work": ["gamma"] * 4},
        "policies": [
            {"name": "prop-fair", "kind": "utility-max"},
            {"name": "priority", "kind": "static-priority", "order": [3, 2, 1, 0]},
        ],
        "experiment": {"n0": [1.0, 1.0, 1.0, 1.0], "state": [1.0, 1.0, 1.0, 1.0]},
    },
    "linear-2-both": {
        "name": "linear-2-both",
        "description": "linear-2 with both links saturated (no resource pooling)",
        "topology": {"links": _links([1.0, 1.0]), "routes": _routes([[0, 1], [0], [1]])},
        "traffic": _markov([0.4, 0.6, 0.6], [1.0, 1.0, 1.0]),
        "utility": {"alpha": 1.0, "beta": [1.0, 1.0, 1.0]},
        "experiment": {"n0": [1.0, 1.0, 1.0], "state": [1.0, 1.0, 1.0]},
    },
    "mm1": {
        "name": "mm1",
        "description": "one route on one link, exponential interarrivals and work",
        "topology": {"links": _links([1.0]), "routes": _routes([[0]])},
        "traffic": _markov([0.8], [1.0]),
        "utility": {"alpha": 1.0, "beta": [1.0]},
        "distributions": {"interarrival": ["exponential"], "work": ["exponential"]},
        "experiment": {"horizon": 1e6, "seeds": list(range(10)), "state": [1.0], "n0": [1.0]},
    },
    "underloaded": {
        "name": "underloaded",
        "description": "one route at half the link capacity",
        "topology": {"links": _links([1.0]), "routes": _routes([[0]])},
        "traffic": _markov([0.5], [1.0]),
        "utility": {"alpha": 1.0, "beta": [1.0]},
        "experiment": {"n0": [1.0], "state": [1.0], "fluid_horizon": 5.0},
    },
}

HEAVY_TRAFFIC = ("single-link", "linear-2", "linear-3", "linear-2-both")
SINGLE_BOTTLENECK = ("single-link", "linear-2", "linear-3")


def names() -> list[str]:
    return sorted(_PRESETS)


def document(name: str) -> dict:
    try:
        return copy.deepcopy(_PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(names())}") from None


def preset(name: str) -> Scenario:
    return build(document(name))
