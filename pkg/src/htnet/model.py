"""Network topology, traffic parameters and load classification."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError

DEFAULT_LOAD_TOL = 1e-9


@dataclass(frozen=True)
class NetworkTopology:
    """Links with capacities and routes given as link subsets.

    A job on route ``r`` occupies every link of ``r`` at the same time, so the
    rate allocated to the route is charged against each of those capacities.
    """

    link_ids: tuple[str, ...]
    capacities: tuple[float, ...]
    routes: tuple[tuple[str, ...], ...]
    route_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "link_ids", tuple(str(x) for x in self.link_ids))
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))
        object.__setattr__(self, "routes", tuple(tuple(str(x) for x in r) for r in self.routes))
        if not self.route_ids:
            object.__setattr__(self, "route_ids", tuple(f"r{i}" for i in range(len(self.routes))))
        else:
            object.__setattr__(self, "route_ids", tuple(str(x) for x in self.route_ids))

        if not self.link_ids or not self.routes:
            raise ConfigError("topology needs at least one link and one route")
        if len(self.capacities) != len(self.link_ids):
            raise ConfigError("one capacity per link is required")
        if len(set(self.link_ids)) != len(self.link_ids):
            raise ConfigError("duplicate link identifiers")
        if len(self.route_ids) != len(self.routes):
            raise ConfigError("one identifier per route is required")
        for lid, c in zip(self.link_ids, self.capacities):
            if not (c > 0 and np.isfinite(c)):
                raise ConfigError(f"link {lid!r}: capacity must be positive, got {c!r}")
        known = set(self.link_ids)
        for rid, r in zip(self.route_ids, self.routes):
            if not r:
                raise ConfigError(f"route {rid!r} uses no links")
            missing = [x for x in r if x not in known]
            if missing:
                raise ConfigError(f"route {rid!r} references undeclared links {missing}")

    @classmethod
    def build(cls, capacities: Sequence[float], routes: Sequence[Sequence[int]]) -> "NetworkTopology":
        """Shorthand with integer link indices (ids become ``"l0"``, ``"l1"``, ...)."""
        ids = tuple(f"l{i}" for i in range(len(capacities)))
        try:
            named = [tuple(ids[j] for j in r) for r in routes]
        except IndexError as exc:
            raise ConfigError(f"route references a link index out of range: {exc}") from None
        return cls(ids, tuple(capacities), tuple(named))

    @property
    def n_links(self) -> int:
        return len(self.link_ids)

    @property
    def n_routes(self) -> int:
        return len(self.routes)

    @cached_property
    def c(self) -> np.ndarray:
        return np.asarray(self.capacities, dtype=float)

    @cached_property
    def incidence(self) -> np.ndarray:
        """``A[l, r] = 1`` iff link ``l`` lies on route ``r``."""
        index = {lid: j for j, lid in enumerate(self.link_ids)}
        A = np.zeros((self.n_links, self.n_routes))
        for r, links in enumerate(self.routes):
            for lid in links:
                A[index[lid], r] = 1.0
        return A

    @cached_property
    def route_links(self) -> tuple[tuple[int, ...], ...]:
        index = {lid: j for j, lid in enumerate(self.link_ids)}
        return tuple(tuple(sorted({index[x] for x in r})) for r in self.routes)

    def link_index(self, link: str | int) -> int:
        if isinstance(link, (int, np.integer)):
            if not 0 <= link < self.n_links:
                raise ConfigError(f"link index {link} out of range")
            return int(link)
        try:
            return self.link_ids.index(link)
        except ValueError:
            raise ConfigError(f"unknown link {link!r}") from None

    def routes_through(self, links: Sequence[int]) -> np.ndarray:
        """Boolean mask of routes that touch at least one of ``links``."""
        if len(links) == 0:
            return np.zeros(self.n_routes, dtype=bool)
        return self.incidence[list(links)].sum(axis=0) > 0


@dataclass(frozen=True)
class TrafficProfile:
    """Per-route arrival and work moments.

    ``lam`` are arrival rates, ``nu`` mean work per job, ``a_sq`` and ``b_sq``
    the interarrival and work variances.
    """

    lam: tuple[float, ...]
    nu: tuple[float, ...]
    a_sq: tuple[float, ...]
    b_sq: tuple[float, ...]

    def __post_init__(self):
        for name in ("lam", "nu", "a_sq", "b_sq"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        n = len(self.lam)
        if n == 0 or any(len(getattr(self, f)) != n for f in ("nu", "a_sq", "b_sq")):
            raise ConfigError("traffic vectors must be nonempty and of equal length")
        for r in range(n):
            if not self.lam[r] > 0 or not self.nu[r] > 0:
                raise ConfigError(f"route {r}: arrival rate and mean work must be positive")
            if self.a_sq[r] < 0 or self.b_sq[r] < 0:
                raise ConfigError(f"route {r}: variances must be nonnegative")

    @classmethod
    def markovian(cls, lam: Sequence[float], nu: Sequence[float]) -> "TrafficProfile":
        """Exponential interarrivals and work: ``a^2 = 1/lam^2``, ``b^2 = nu^2``."""
        lam = [float(x) for x in lam]
        nu = [float(x) for x in nu]
        a_sq = [1.0 / x**2 if x > 0 else 0.0 for x in lam]  # nonpositive rates are rejected below
        return cls(tuple(lam), tuple(nu), tuple(a_sq), tuple(x**2 for x in nu))

    @property
    def n_routes(self) -> int:
        return len(self.lam)

    @cached_property
    def lam_arr(self) -> np.ndarray:
        return np.asarray(self.lam)

    @cached_property
    def nu_arr(self) -> np.ndarray:
        return np.asarray(self.nu)

    @cached_property
    def rho(self) -> np.ndarray:
        return self.lam_arr * self.nu_arr

    @cached_property
    def mu(self) -> np.ndarray:
        return 1.0 / self.nu_arr


@dataclass(frozen=True)
class ScalingSequenceSpec:
    """Heavy-traffic sequence ``lam^k = lam + theta_lam/k``, ``nu^k = nu + theta_nu/k``.

    Variances stay at their base values for every ``k``.
    """

    base: TrafficProfile
    theta_lambda: tuple[float, ...]
    theta_nu: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "theta_lambda", tuple(float(x) for x in self.theta_lambda))
        object.__setattr__(self, "theta_nu", tuple(float(x) for x in self.theta_nu))
        n = self.base.n_routes
        if len(self.theta_lambda) != n or len(self.theta_nu) != n:
            raise ConfigError("theta vectors must have one entry per route")

    @cached_property
    def theta_rho(self) -> np.ndarray:
        b = self.base
        return b.lam_arr * np.asarray(self.theta_nu) + b.nu_arr * np.asarray(self.theta_lambda)

    def at(self, k: int) -> TrafficProfile:
        return traffic_at_scale(self, k)


@dataclass(frozen=True)
class LinkClassification:
    loads: np.ndarray
    bottlenecks: tuple[int, ...]
    slack: tuple[int, ...]
    overload: tuple[int, ...]

    @property
    def usual_traffic(self) -> bool:
        return not self.overload

    @property
    def heavy_traffic(self) -> bool:
        return self.usual_traffic and bool(self.bottlenecks)

    @property
    def single_bottleneck(self) -> bool:
        return self.heavy_traffic and len(self.bottlenecks) == 1


def _check_dims(topology: NetworkTopology, traffic: TrafficProfile) -> None:
    if topology.n_routes != traffic.n_routes:
        raise ConfigError(
            f"topology has {topology.n_routes} routes but traffic has {traffic.n_routes}"
        )


def link_load(topology: NetworkTopology, traffic: TrafficProfile) -> np.ndarray:
    """Offered load ``sum_{r on l} rho_r`` for every link."""
    _check_dims(topology, traffic)
    return topology.incidence @ traffic.rho


def classify_links(
    topology: NetworkTopology,
    traffic: TrafficProfile,
    tol: float = DEFAULT_LOAD_TOL,
    rel_tol: float = 0.0,
) -> LinkClassification:
    """Split links into bottleneck, slack and overloaded sets.

    A link counts as a bottleneck when its load is within
    ``max(tol, rel_tol * c_l)`` of its capacity.
    """
    if tol < 0 or rel_tol < 0:
        raise ConfigError("tolerances must be nonnegative")
    loads = link_load(topology, traffic)
    band = np.maximum(tol, rel_tol * topology.c)
    gap = loads - topology.c
    bott = tuple(int(i) for i in np.flatnonzero(np.abs(gap) <= band))
    slack = tuple(int(i) for i in np.flatnonzero(gap < -band))
    over = tuple(int(i) for i in np.flatnonzero(gap > band))
    return LinkClassification(loads, bott, slack, over)


def traffic_at_scale(spec: ScalingSequenceSpec, k: int) -> TrafficProfile:
    """The ``k``-th traffic profile of the heavy-traffic sequence."""
    if int(k) != k or k < 1:
        raise ConfigError(f"scale index k must be a positive integer, got {k!r}")
    b = spec.base
    lam = [b.lam[r] + spec.theta_lambda[r] / k for r in range(b.n_routes)]
    nu = [b.nu[r] + spec.theta_nu[r] / k for r in range(b.n_routes)]
    for r in range(b.n_routes):
        if lam[r] <= 0:
            raise ConfigError(f"route {r}: lambda^k = {lam[r]!r} <= 0 at k={k}")
        if nu[r] <= 0:
            raise ConfigError(f"route {r}: nu^k = {nu[r]!r} <= 0 at k={k}")
    return TrafficProfile(tuple(lam), tuple(nu), b.a_sq, b.b_sq)
