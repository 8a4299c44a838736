"""JSON scenario files: schema validation, cross-reference checks and model construction."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .allocation import UtilitySpec
from .desim import PolicySpec, distributions_for
from .errors import ConfigError
from .model import NetworkTopology, ScalingSequenceSpec, TrafficProfile

DEFAULTS = {
    "horizon": 1e4,
    "seeds": [0],
    "k": [10, 20, 40],
    "diffusion_horizon": 3.0,
    "increment_dt": 0.1,
    "window_length": 1.0,
    "compare_t": [0.5, 1.0],
    "fluid_horizon": 20.0,
    "fluid_step": 1e-3,
    "eps": 0.05,
    "attraction_eps": 1e-3,
    "workers": 1,
}
TOLERANCES = {"kkt": 1e-8, "feasibility": 1e-10, "lp": 1e-9, "load": 1e-9}


def schema() -> dict:
    text = resources.files("htnet").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def canonical(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class Scenario:
    doc: dict
    name: str
    topology: NetworkTopology
    traffic: TrafficProfile
    utility: UtilitySpec
    spec: ScalingSequenceSpec | None
    arrival_kinds: tuple[str, ...]
    work_kinds: tuple[str, ...]
    policies: tuple[PolicySpec, ...]
    experiment: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output_dir: str = "out"

    @property
    def sha256(self) -> str:
        return hashlib.sha256(canonical(self.doc)).hexdigest()

    def policy(self, name: str | None) -> PolicySpec:
        if name is None:
            return self.policies[0]
        for p in self.policies:
            if p.name == name:
                return p
        raise ConfigError(f"policies: no policy named {name!r}; have {[p.name for p in self.policies]}")

    def traffic_at(self, k: int | None) -> TrafficProfile:
        if k is None:
            return self.traffic
        if self.spec is None:
            raise ConfigError("scaling: --k needs a scaling section in the scenario")
        return self.spec.at(k)

    def distributions(self, k: int | None = None):
        return distributions_for(self.traffic_at(k), self.arrival_kinds, self.work_kinds)


def _path(err: jsonschema.ValidationError) -> str:
    out = "$"
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate(doc: Any) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_path(e)}: {e.message}")


def _vec(doc: dict, section: str, key: str, n: int, default=None) -> list[float]:
    v = doc.get(section, {}).get(key, default)
    if v is None:
        raise ConfigError(f"$.{section}.{key}: missing")
    if len(v) != n:
        raise ConfigError(f"$.{section}.{key}: expected {n} entries (one per route), got {len(v)}")
    return [float(x) for x in v]


def _default_kind(scv: float, scaled: bool) -> str:
    if scv == 0.0:
        return "deterministic"
    if abs(scv - 1.0) < 1e-12 and not scaled:
        return "exponential"
    return "gamma"


def build(doc: dict) -> Scenario:
    """Validate ``doc`` and construct the model objects it describes."""
    validate(doc)
    topo = doc["topology"]
    link_ids = [l["id"] for l in topo["links"]]
    if len(set(link_ids)) != len(link_ids):
        raise ConfigError("$.topology.links: duplicate link ids")
    route_ids = [r["id"] for r in topo["routes"]]
    if len(set(route_ids)) != len(route_ids):
        raise ConfigError("$.topology.routes: duplicate route ids")
    for i, r in enumerate(topo["routes"]):
        missing = [x for x in r["links"] if x not in link_ids]
        if missing:
            raise ConfigError(f"$.topology.routes[{i}].links: unknown links {missing}")
    topology = NetworkTopology(
        tuple(link_ids), tuple(l["capacity"] for l in topo["links"]), tuple(tuple(r["links"]) for r in topo["routes"]), tuple(route_ids)
    )
    R = topology.n_routes

    lam = _vec(doc, "traffic", "lambda", R)
    nu = _vec(doc, "traffic", "nu", R)
    a_sq = _vec(doc, "traffic", "a_sq", R, [1.0 / x**2 for x in lam])
    b_sq = _vec(doc, "traffic", "b_sq", R, [x**2 for x in nu])
    traffic = TrafficProfile(tuple(lam), tuple(nu), tuple(a_sq), tuple(b_sq))

    spec = None
    if "scaling" in doc:
        spec = ScalingSequenceSpec(
            traffic, tuple(_vec(doc, "scaling", "theta_lambda", R)), tuple(_vec(doc, "scaling", "theta_nu", R))
        )

    beta = _vec(doc, "utility", "beta", R, [1.0] * R)
    utility = UtilitySpec(doc["utility"]["alpha"], tuple(beta))

    dist = doc.get("distributions", {})
    scaled = spec is not None
    arr = dist.get("interarrival") or [_default_kind(a_sq[r] * lam[r] ** 2, scaled) for r in range(R)]
    wrk = dist.get("work") or [_default_kind(b_sq[r] / nu[r] ** 2, scaled) for r in range(R)]
    for key, kinds in (("interarrival", arr), ("work", wrk)):
        if len(kinds) != R:
            raise ConfigError(f"$.distributions.{key}: expected {R} entries (one per route), got {len(kinds)}")
    distributions_for(traffic, arr, wrk)  # moment checks

    policies = []
    for i, p in enumerate(doc.get("policies") or [{"kind": "utility-max", "name": "utility-max"}]):
        try:
            spec_p = PolicySpec(
                p["kind"],
                utility=utility if p["kind"] == "utility-max" else None,
                order=tuple(p["order"]) if "order" in p else None,
                shares=tuple(p["shares"]) if "shares" in p else None,
                name=p.get("name", p["kind"]),
            )
            spec_p.build(topology)
        except ConfigError as exc:
            raise ConfigError(f"$.policies[{i}]: {exc}") from None
        policies.append(spec_p)
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ConfigError("$.policies: policy names must be distinct")

    exp = {**DEFAULTS, **doc.get("experiment", {})}
    tol = {**TOLERANCES, **exp.pop("tolerances", {})}
    for key in ("n0", "state"):
        if key in exp and len(exp[key]) != R:
            raise ConfigError(f"$.experiment.{key}: expected {R} entries (one per route)")
    return Scenario(
        doc=doc,
        name=doc.get("name", "scenario"),
        topology=topology,
        traffic=traffic,
        utility=utility,
        spec=spec,
        arrival_kinds=tuple(arr),
        work_kinds=tuple(wrk),
        policies=tuple(policies),
        experiment=exp,
        tolerances=tol,
        output_dir=doc.get("output", {}).get("directory", "out"),
    )


def load(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return build(doc)
