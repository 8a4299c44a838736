"""Event-driven simulation of the bandwidth-sharing network.

Each route keeps a FIFO queue; only its head-of-line job is in service and it
works off its remaining requirement at the route's allocated rate. Rates are
piecewise constant between events, so completion times are exact.

Random streams: route ``r`` draws interarrival times from
``SeedSequence(seed, spawn_key=(r, 0))`` and work from ``spawn_key=(r, 1)``,
both through PCG64. Adding a route leaves the other routes' draws unchanged,
and two policies run with the same seed see the same jobs.
"""

from __future__ import annotations

import csv
import json
import math
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .allocation import FEAS_TOL, UtilitySpec, solve_allocation
from .errors import ConfigError, PolicyError, ResourceError
from .model import NetworkTopology, TrafficProfile

RATE_FLOOR = 1e-12
DEFAULT_MAX_EVENTS = 50_000_000
BATCH = 2048

INIT, ARRIVAL, COMPLETION, END = 0, 1, 2, 3
KIND_NAMES = {INIT: "init", ARRIVAL: "arrival", COMPLETION: "completion", END: "end"}

_KINDS = ("exponential", "deterministic", "uniform", "gamma", "none")


@dataclass(frozen=True)
class DistributionSpec:
    """A nonnegative distribution given by its mean and squared coefficient of variation.

    ``none`` never fires; it stands in for an empty arrival stream.
    """

    kind: str
    mean: float
    scv: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "scv", float(self.scv))
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown distribution kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "none":
            return
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise ConfigError(f"{self.kind}: mean must be positive, got {self.mean!r}")
        if self.scv < 0:
            raise ConfigError(f"{self.kind}: SCV must be nonnegative")
        if self.kind == "exponential" and not math.isclose(self.scv, 1.0, rel_tol=1e-9):
            raise ConfigError(f"exponential has SCV 1, requested {self.scv!r}")
        if self.kind == "deterministic" and self.scv != 0.0:
            raise ConfigError("deterministic requires SCV = 0")
        if self.kind == "uniform" and self.scv > 1.0 / 3.0 + 1e-12:
            raise ConfigError(f"uniform on [0, inf) supports SCV <= 1/3, requested {self.scv!r}")
        if self.kind == "gamma" and self.scv == 0.0:
            raise ConfigError("gamma requires SCV > 0; use deterministic")

    @property
    def variance(self) -> float:
        return self.scv * self.mean**2 if self.kind != "none" else 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        m, s = self.mean, self.scv
        if self.kind == "exponential":
            return rng.exponential(m, size)
        if self.kind == "deterministic":
            return np.full(size, m)
        if self.kind == "uniform":
            half = m * math.sqrt(3.0 * s)
            return rng.uniform(m - half, m + half, size)
        if self.kind == "gamma":
            return rng.gamma(1.0 / s, m * s, size)
        return np.full(size, np.inf)


def interarrival_spec(kind: str, lam: float, a_sq: float) -> DistributionSpec:
    """Interarrival law with mean ``1/lam`` and variance ``a_sq``."""
    if kind == "none":
        return DistributionSpec("none", 0.0, 0.0)
    return DistributionSpec(kind, 1.0 / lam, a_sq * lam**2)


def work_spec(kind: str, nu: float, b_sq: float) -> DistributionSpec:
    """Work law with mean ``nu`` and variance ``b_sq``."""
    return DistributionSpec(kind, nu, b_sq / nu**2)


def distributions_for(
    traffic: TrafficProfile, arrival_kinds: Sequence[str], work_kinds: Sequence[str]
) -> list[tuple[DistributionSpec, DistributionSpec]]:
    R = traffic.n_routes
    if len(arrival_kinds) != R or len(work_kinds) != R:
        raise ConfigError("one distribution kind per route is required")
    return [
        (
            interarrival_spec(arrival_kinds[r], traffic.lam[r], traffic.a_sq[r]),
            work_spec(work_kinds[r], traffic.nu[r], traffic.b_sq[r]),
        )
        for r in range(R)
    ]


class Stream:
    """Batched draws from one seeded PCG64 stream."""

    __slots__ = ("dist", "rng", "buf", "pos")

    def __init__(self, dist: DistributionSpec, seed: int, route: int, purpose: int):
        self.dist = dist
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(route), int(purpose)))
        self.rng = np.random.Generator(np.random.PCG64(ss))
        self.buf: list[float] = []
        self.pos = 0

    def next(self) -> float:
        if self.pos == len(self.buf):
            self.buf = self.dist.sample(self.rng, BATCH).tolist()
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return v


# policies ------------------------------------------------------------------

Policy = Callable[[tuple], Sequence[float]]


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    utility: UtilitySpec | None = None
    order: tuple[int, ...] | None = None
    shares: tuple[float, ...] | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("utility-max", "static-priority", "fixed-share"):
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.kind == "utility-max" and self.utility is None:
            raise ConfigError("utility-max policy needs a utility spec")
        if self.kind == "static-priority" and self.order is None:
            raise ConfigError("static-priority policy needs a route order")
        if self.kind == "fixed-share" and self.shares is None:
            raise ConfigError("fixed-share policy needs a rate vector")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def build(self, topology: NetworkTopology) -> Policy:
        R = topology.n_routes
        if self.kind == "utility-max":
            if len(self.utility.beta) != R:
                raise ConfigError("utility weights must have one entry per route")
            return _UtilityMax(topology, self.utility)
        if self.kind == "static-priority":
            order = [int(r) for r in self.order]
            if sorted(order) != list(range(R)):
                raise ConfigError(f"priority order must be a permutation of 0..{R - 1}")
            return _Priority(topology, order)
        shares = np.asarray(self.shares, dtype=float)
        if shares.shape != (R,) or np.any(shares < 0):
            raise ConfigError("fixed shares must be one nonnegative rate per route")
        if np.any(topology.incidence @ shares > topology.c + FEAS_TOL):
            raise ConfigError("fixed shares exceed a link capacity")
        return _FixedShare(shares)


class _UtilityMax:
    def __init__(self, topology, utility):
        self.topology = topology
        self.utility = utility
        self.eta = None

    def __call__(self, n: tuple) -> list[float]:
        if not any(n):
            return [0.0] * len(n)
        res = solve_allocation(self.topology, self.utility, np.asarray(n, dtype=float), eta0=self.eta)
        self.eta = res.eta
        return res.lam.tolist()


class _Priority:
    """Greedy water-filling: each backlogged route in turn takes all it can."""

    def __init__(self, topology, order):
        self.links = topology.route_links
        self.c = topology.c.tolist()
        self.order = order

    def __call__(self, n: tuple) -> list[float]:
        resid = list(self.c)
        out = [0.0] * len(n)
        for r in self.order:
            if n[r] > 0:
                x = max(min(resid[l] for l in self.links[r]), 0.0)
                out[r] = x
                for l in self.links[r]:
                    resid[l] -= x
        return out


class _FixedShare:
    def __init__(self, shares):
        self.shares = shares.tolist()

    def __call__(self, n: tuple) -> list[float]:
        return [s if k > 0 else 0.0 for s, k in zip(self.shares, n)]


# sample paths ----------------------------------------------------------------


@dataclass
class SamplePath:
    """Event log. Row ``i`` holds the state right after event ``i`` and the rates used until row ``i+1``."""

    t: np.ndarray
    kind: np.ndarray
    route: np.ndarray
    N: np.ndarray
    D: np.ndarray
    rates: np.ndarray
    horizon: float
    seed: int
    policy: str
    nu: np.ndarray
    capacities: np.ndarray
    incidence: np.ndarray
    n0: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_routes(self) -> int:
        return self.N.shape[1]

    @property
    def n_events(self) -> int:
        return int(np.count_nonzero((self.kind == ARRIVAL) | (self.kind == COMPLETION)))

    def arrivals(self) -> np.ndarray:
        """Cumulative arrival counts ``E_r`` at every row."""
        return self._counts(ARRIVAL)

    def completions(self) -> np.ndarray:
        return self._counts(COMPLETION)

    def _counts(self, which: int) -> np.ndarray:
        hit = np.zeros_like(self.N)
        rows = np.flatnonzero(self.kind == which)
        hit[rows, self.route[rows]] = 1
        return np.cumsum(hit, axis=0)

    def workload(self, links: Sequence[int]) -> np.ndarray:
        """``W_l = sum_{r on l} nu_r N_r`` at every row."""
        return (self.N * self.nu) @ self.incidence[list(links)].T

    def unused(self, links: Sequence[int]) -> np.ndarray:
        """``Y_l = c_l t - sum_{r on l} D_r``: capacity left idle up to each row."""
        links = list(links)
        return self.t[:, None] * self.capacities[links] - self.D @ self.incidence[links].T

    def time_average(self) -> np.ndarray:
        """Time-average of ``N`` over ``[0, horizon]``."""
        dt = np.diff(self.t)
        return (self.N[:-1] * dt[:, None]).sum(axis=0) / self.horizon

    def to_csv(self, path: str | Path, links: Sequence[int] = (), comment: str | None = None) -> None:
        R = self.n_routes
        links = list(links)
        ids = self.meta.get("route_ids") or [f"r{i}" for i in range(R)]
        lids = self.meta.get("link_ids") or [f"l{i}" for i in range(self.incidence.shape[0])]
        W = self.workload(links)
        Y = self.unused(links)
        header = ["t", "kind", "route"] + [f"N_{r}" for r in ids] + [f"D_{r}" for r in ids]
        header += [f"W_{lids[l]}" for l in links] + [f"Y_{lids[l]}" for l in links] + [f"rate_{r}" for r in ids]
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.t.size):
                w.writerow(
                    [repr(float(self.t[i])), KIND_NAMES[int(self.kind[i])], int(self.route[i])]
                    + [int(x) for x in self.N[i]]
                    + [repr(float(x)) for x in self.D[i]]
                    + [repr(float(x)) for x in W[i]]
                    + [repr(float(x)) for x in Y[i]]
                    + [repr(float(x)) for x in self.rates[i]]
                )


def simulate(
    topology: NetworkTopology,
    traffic: TrafficProfile,
    dists: Sequence[tuple[DistributionSpec, DistributionSpec]],
    policy: PolicySpec | Policy,
    horizon: float,
    seed: int,
    n0: Sequence[int] | None = None,
    max_events: int = DEFAULT_MAX_EVENTS,
    feas_tol: float = FEAS_TOL,
) -> SamplePath:
    """Run one replication on ``[0, horizon]``.

    Ties are broken by processing completions before arrivals and lower
    route indices first.
    """
    R = topology.n_routes
    if traffic.n_routes != R or len(dists) != R:
        raise ConfigError("topology, traffic and distributions disagree on the number of routes")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ConfigError("horizon must be positive and finite")
    if int(seed) < 0 or int(seed) >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    for r, (ua, vw) in enumerate(dists):
        _check_moments(r, ua, vw, traffic)
    if isinstance(policy, PolicySpec):
        name = policy.name
        rule = policy.build(topology)
    else:
        name = getattr(policy, "__name__", type(policy).__name__)
        rule = policy

    arr = [Stream(dists[r][0], seed, r, 0) for r in range(R)]
    wrk = [Stream(dists[r][1], seed, r, 1) for r in range(R)]
    N = [0] * R if n0 is None else [int(x) for x in n0]
    if len(N) != R or min(N) < 0:
        raise ConfigError("initial state must be one nonnegative integer per route")
    start = np.asarray(N, dtype=np.int64)
    rem = [wrk[r].next() if N[r] > 0 else 0.0 for r in range(R)]
    D = [0.0] * R
    nxt = [arr[r].next() for r in range(R)]

    A = topology.incidence
    c = topology.c
    cache: dict[tuple, list[float]] = {}

    log_t = array("d", [0.0])
    log_kind = array("b", [INIT])
    log_route = array("h", [-1])
    log_N = array("q", N)
    log_D = array("d", D)
    log_rate = array("d")

    t = 0.0
    events = 0
    routes = range(R)
    while True:
        key = tuple(N)
        rates = cache.get(key)
        if rates is None:
            raw = np.asarray(rule(key), dtype=float)
            if raw.shape != (R,) or not np.all(np.isfinite(raw)):
                raise PolicyError(f"policy returned malformed rates {raw!r} in state {key}")
            if np.any(raw < -feas_tol) or np.any(A @ raw > c + feas_tol):
                raise PolicyError(f"policy allocation {raw.tolist()} is infeasible in state {key}")
            rates = [max(x, 0.0) if k > 0 else 0.0 for x, k in zip(raw.tolist(), key)]
            cache[key] = rates
        log_rate.extend(rates)

        when = math.inf
        who = -1
        what = END
        for r in routes:
            if N[r] > 0 and rates[r] > RATE_FLOOR:
                tc = t + rem[r] / rates[r]
                if tc < when:
                    when, who, what = tc, r, COMPLETION
        for r in routes:
            if nxt[r] < when:
                when, who, what = nxt[r], r, ARRIVAL

        if when > horizon:
            dt = horizon - t
            for r in routes:
                if N[r] > 0:
                    D[r] += rates[r] * dt
            log_t.append(horizon)
            log_kind.append(END)
            log_route.append(-1)
            log_N.extend(N)
            log_D.extend(D)
            log_rate.extend(rates)
            break

        events += 1
        if events > max_events:
            raise ResourceError(f"event budget of {max_events} exhausted at t={t!r}")
        dt = when - t
        for r in routes:
            if N[r] > 0:
                x = rates[r] * dt
                D[r] += x
                rem[r] -= x
        t = when
        if what == COMPLETION:
            N[who] -= 1
            rem[who] = wrk[who].next() if N[who] > 0 else 0.0
        else:
            N[who] += 1
            nxt[who] = t + arr[who].next()
            if N[who] == 1:
                rem[who] = wrk[who].next()
        log_t.append(t)
        log_kind.append(what)
        log_route.append(who)
        log_N.extend(N)
        log_D.extend(D)

    rows = len(log_t)
    return SamplePath(
        t=np.frombuffer(log_t, dtype=np.float64).copy(),
        kind=np.frombuffer(log_kind, dtype=np.int8).copy(),
        route=np.frombuffer(log_route, dtype=np.int16).astype(np.int64),
        N=np.frombuffer(log_N, dtype=np.int64).reshape(rows, R).copy(),
        D=np.frombuffer(log_D, dtype=np.float64).reshape(rows, R).copy(),
        rates=np.frombuffer(log_rate, dtype=np.float64).reshape(rows, R).copy(),
        horizon=float(horizon),
        seed=int(seed),
        policy=name,
        nu=traffic.nu_arr.copy(),
        capacities=c.copy(),
        incidence=A.copy(),
        n0=start,
        meta={"route_ids": list(topology.route_ids), "link_ids": list(topology.link_ids)},
    )


def _check_moments(r: int, ua: DistributionSpec, vw: DistributionSpec, traffic: TrafficProfile) -> None:
    rel = 1e-9
    if ua.kind != "none":
        if not math.isclose(ua.mean, 1.0 / traffic.lam[r], rel_tol=rel):
            raise ConfigError(f"route {r}: interarrival mean {ua.mean!r} does not match 1/lambda")
        if not math.isclose(ua.variance, traffic.a_sq[r], rel_tol=rel, abs_tol=1e-15):
            raise ConfigError(f"route {r}: interarrival variance {ua.variance!r} does not match a^2")
    if vw.kind == "none":
        raise ConfigError(f"route {r}: work distribution cannot be 'none'")
    if not math.isclose(vw.mean, traffic.nu[r], rel_tol=rel):
        raise ConfigError(f"route {r}: work mean {vw.mean!r} does not match nu")
    if not math.isclose(vw.variance, traffic.b_sq[r], rel_tol=rel, abs_tol=1e-15):
        raise ConfigError(f"route {r}: work variance {vw.variance!r} does not match b^2")


def verify_flow_balance(path: SamplePath) -> int:
    """Max over rows of ``|N_r - (N_r(0) + E_r - S_r(D_r))|``, with ``E`` and ``S`` from the logged counts."""
    if path.t.size == 0:
        return 0
    expect = path.n0[None, :] + path.arrivals() - path.completions()
    return int(np.max(np.abs(path.N - expect)))


def verify_capacity(path: SamplePath, topology: NetworkTopology | None = None) -> float:
    """Max over rows and links of ``(sum_{r on l} Lambda_r - c_l)^+``."""
    A = path.incidence if topology is None else topology.incidence
    c = path.capacities if topology is None else topology.c
    if path.rates.size == 0:
        return 0.0
    over = path.rates @ A.T - c
    return float(max(over.max(), 0.0))


# binary log -------------------------------------------------------------------

MAGIC = b"HTNETLOG\x01"


def _record_dtype(R: int) -> np.dtype:
    return np.dtype(
        [("t", "<f8"), ("kind", "i1"), ("route", "<i2"), ("N", "<i8", (R,)), ("D", "<f8", (R,)), ("rate", "<f8", (R,))]
    )


def write_binary(path: SamplePath, dest: str | Path, header: dict | None = None) -> None:
    """Layout: magic, little-endian u64 header length, JSON header, packed records."""
    R = path.n_routes
    rec = np.zeros(path.t.size, dtype=_record_dtype(R))
    rec["t"], rec["kind"], rec["route"] = path.t, path.kind, path.route
    rec["N"], rec["D"], rec["rate"] = path.N, path.D, path.rates
    head = {
        "format": 1,
        "n_routes": R,
        "records": int(path.t.size),
        "seed": path.seed,
        "horizon": path.horizon,
        "policy": path.policy,
        "nu": path.nu.tolist(),
        "capacities": path.capacities.tolist(),
        "incidence": path.incidence.astype(int).tolist(),
        "n0": path.n0.tolist(),
        "meta": path.meta,
    }
    head.update(header or {})
    blob = json.dumps(head, sort_keys=True).encode()
    with open(dest, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(rec.tobytes())


def read_binary(src: str | Path) -> tuple[SamplePath, dict]:
    data = Path(src).read_bytes()
    if not data.startswith(MAGIC):
        raise ConfigError(f"{src}: not a sample-path log")
    off = len(MAGIC)
    size = int.from_bytes(data[off : off + 8], "little")
    head = json.loads(data[off + 8 : off + 8 + size])
    rec = np.frombuffer(data, dtype=_record_dtype(head["n_routes"]), offset=off + 8 + size)
    path = SamplePath(
        t=rec["t"].copy(),
        kind=rec["kind"].copy(),
        route=rec["route"].astype(np.int64),
        N=rec["N"].copy(),
        D=rec["D"].copy(),
        rates=rec["rate"].copy(),
        horizon=head["horizon"],
        seed=head["seed"],
        policy=head["policy"],
        nu=np.asarray(head["nu"]),
        capacities=np.asarray(head["capacities"]),
        incidence=np.asarray(head["incidence"], dtype=float),
        n0=np.asarray(head["n0"], dtype=np.int64),
        meta=head["meta"],
    )
    return path, head
