"""Fluid model under the utility-maximising allocation.

The state ``N`` follows ``dN_r/dt = lam_r - Lambda_r(N) / nu_r`` with explicit
Euler steps clamped at zero. Routes at level zero are served from whatever
capacity the backlogged routes leave over, up to their offered load ``rho_r``
(max-min water-filling when several of them share a link).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .allocation import TINY, UtilitySpec, solve_allocation
from .costfix import CostModel, cost_value, fixed_point
from .errors import ConfigError, HeavyTrafficError, IntegrationError, SolverError
from .model import NetworkTopology, TrafficProfile, classify_links

DEFAULT_STEP = 1e-3
WORKLOAD_CACHE_TOL = 1e-6


def water_fill(A: np.ndarray, capacity: np.ndarray, caps: np.ndarray, routes: np.ndarray) -> np.ndarray:
    """Max-min fair rates for ``routes`` on residual ``capacity``, each capped at ``caps[r]``."""
    x = np.zeros(A.shape[1])
    todo = [int(r) for r in routes if caps[r] > 0]
    resid = np.maximum(capacity, 0.0).astype(float)
    while todo:
        sub = A[:, todo]
        count = sub.sum(axis=1)
        used = count > 0
        step = min(
            float(np.min(resid[used] / count[used])) if used.any() else np.inf,
            float(min(caps[r] - x[r] for r in todo)),
        )
        step = max(step, 0.0)
        for r in todo:
            x[r] += step
        resid = resid - step * count
        full = used & (resid <= 1e-15 * np.maximum(capacity, 1.0))
        todo = [r for r in todo if x[r] < caps[r] - 1e-15 and not np.any(full & (A[:, r] > 0))]
    return x


def fluid_rates(
    topology: NetworkTopology,
    utility: UtilitySpec,
    traffic: TrafficProfile,
    n,
    eta0=None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Rates applied by the fluid model in state ``n`` and the link prices used."""
    n = np.asarray(n, dtype=float)
    rho = traffic.rho
    A = topology.incidence
    lam = np.zeros(topology.n_routes)
    eta = None
    pos = n >= TINY
    if pos.any():
        res = solve_allocation(topology, utility, n, eta0=eta0)
        lam[pos] = res.lam[pos]
        eta = res.eta
    zero = np.flatnonzero(~pos)
    if zero.size:
        slack = topology.c - A @ lam
        lam += water_fill(A, slack, rho, zero)
    return lam, eta


def psi_derivative(utility: UtilitySpec, traffic: TrafficProfile, n, lam) -> float:
    """Chain-rule ``d psi / dt = sum_{n_r > 0} dU_r/dLambda(n_r, rho_r) (rho_r - Lambda_r)``."""
    n = np.asarray(n, dtype=float)
    lam = np.asarray(lam, dtype=float)
    pos = n > 0
    rho = traffic.rho
    marg = utility.beta_arr[pos] * (n[pos] / rho[pos]) ** utility.alpha
    return float(np.sum(marg * (rho[pos] - lam[pos])))


@dataclass(frozen=True)
class FluidTrajectory:
    t: np.ndarray
    N: np.ndarray  # (steps + 1, routes)
    D: np.ndarray
    W: np.ndarray  # (steps + 1, bottlenecks)
    Y: np.ndarray
    psi: np.ndarray
    psi_star: np.ndarray
    L: np.ndarray
    n_star: np.ndarray | None
    rates: np.ndarray  # rates applied on [t_i, t_{i+1}); last row repeats
    dpsi: np.ndarray  # chain-rule derivative at each grid point
    bottlenecks: tuple[int, ...]
    route_ids: tuple[str, ...] = field(default=())
    link_ids: tuple[str, ...] = field(default=())

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    def regular(self) -> np.ndarray:
        """Mask over steps ``[t_i, t_{i+1}]`` where no route enters or leaves zero."""
        on = self.N > 0
        return np.all(on[1:] == on[:-1], axis=1)

    def to_csv(self, path: str | Path, comment: str | None = None) -> None:
        rids = self.route_ids or tuple(f"r{i}" for i in range(self.N.shape[1]))
        lids = self.link_ids
        bnames = [lids[l] if lids else f"l{l}" for l in self.bottlenecks]
        header = ["t"] + [f"N_{r}" for r in rids] + [f"W_{b}" for b in bnames] + [f"Y_{b}" for b in bnames]
        header += ["psi", "psi_star", "L"]
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.t.size):
                row = [self.t[i], *self.N[i], *self.W[i], *self.Y[i], self.psi[i], self.psi_star[i], self.L[i]]
                w.writerow([repr(float(v)) for v in row])


class _StarCache:
    """``n*(w)`` along a trajectory, reused while ``w`` moves by at most ``tol``."""

    def __init__(self, topology, cost, links, tol=WORKLOAD_CACHE_TOL):
        self.topology = topology
        self.cost = cost
        self.links = list(links)
        self.tol = tol
        self.w = None
        self.value = None
        self.unit = None
        if len(self.links) == 1:
            self.unit = fixed_point(topology, cost, self.links, 1.0).n_star

    def __call__(self, w: np.ndarray) -> np.ndarray:
        if self.unit is not None:
            # homogeneous of degree one in w for a single bottleneck
            return self.unit * float(w[0])
        if self.w is None or np.max(np.abs(w - self.w)) > self.tol:
            self.value = fixed_point(self.topology, self.cost, self.links, w).n_star
            self.w = w.copy()
        return self.value


def integrate_fluid(
    topology: NetworkTopology,
    utility: UtilitySpec,
    traffic: TrafficProfile,
    n0,
    horizon: float,
    step: float = DEFAULT_STEP,
    bottlenecks: Sequence[int] | None = None,
) -> FluidTrajectory:
    n = np.asarray(n0, dtype=float).copy()
    R = topology.n_routes
    if n.shape != (R,) or np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ConfigError(f"initial state must be {R} finite nonnegative entries")
    if not step > 0 or not horizon >= step:
        raise ConfigError("need step > 0 and horizon >= step")
    if traffic.n_routes != R or len(utility.beta) != R:
        raise ConfigError("topology, traffic and utility disagree on the number of routes")
    if bottlenecks is None:
        bottlenecks = classify_links(topology, traffic).bottlenecks
    links = [topology.link_index(l) for l in bottlenecks]

    m = int(round(horizon / step))
    t = step * np.arange(m + 1)
    lam_in = traffic.lam_arr
    nu = traffic.nu_arr
    c = topology.c
    A = topology.incidence
    cost = CostModel.from_utility(utility, traffic)
    star = _StarCache(topology, cost, links) if links else None

    N = np.empty((m + 1, R))
    D = np.zeros((m + 1, R))
    rates = np.empty((m + 1, R))
    dpsi = np.empty(m + 1)
    N[0] = n
    eta = None
    last_key, last = None, None
    for i in range(m + 1):
        key = N[i].tobytes()
        if key != last_key:
            try:
                lam, eta = fluid_rates(topology, utility, traffic, N[i], eta0=eta)
            except SolverError as exc:
                raise IntegrationError(f"allocation failed: {exc}", float(t[i])) from exc
            last_key, last = key, lam
        lam = last
        rates[i] = lam
        dpsi[i] = psi_derivative(utility, traffic, N[i], lam)
        if i == m:
            break
        nxt = np.maximum(N[i] + step * (lam_in - lam / nu), 0.0)
        # service is whatever the clamped update implies, so the balance identity is exact
        D[i + 1] = D[i] + nu * (N[i] + step * lam_in - nxt)
        N[i + 1] = nxt

    Al = A[links]
    W = N @ (Al * nu).T
    Y = t[:, None] * c[links] - D @ Al.T
    psi = np.einsum("ij->i", cost.route_cost(N))
    if star is not None:
        n_star = np.array([star(w) for w in W])
        psi_star = np.einsum("ij->i", cost.route_cost(n_star))
    else:
        n_star = np.zeros_like(N)
        psi_star = np.zeros(m + 1)
    return FluidTrajectory(
        t, N, D, W, Y, psi, psi_star, psi - psi_star, n_star, rates, dpsi,
        tuple(links), topology.route_ids, topology.link_ids,
    )


def lyapunov(
    topology: NetworkTopology,
    utility: UtilitySpec,
    traffic: TrafficProfile,
    bottlenecks: Sequence[int] | None,
    n,
) -> float:
    """``L(n) = psi(n) - psi(n*(w(n)))``."""
    cls = classify_links(topology, traffic)
    if not cls.heavy_traffic:
        raise HeavyTrafficError("Lyapunov function needs the heavy-traffic condition")
    links = list(cls.bottlenecks) if bottlenecks is None else [topology.link_index(l) for l in bottlenecks]
    cost = CostModel.from_utility(utility, traffic)
    n = np.asarray(n, dtype=float)
    w = topology.incidence[links] @ (traffic.nu_arr * n)
    return cost_value(cost, n) - fixed_point(topology, cost, links, w).cost


def distance_to_fixed_point(trajectory: FluidTrajectory) -> np.ndarray:
    """``|N(t) - n*(W(t))|_1`` at every grid point."""
    target = trajectory.n_star if trajectory.n_star is not None else np.zeros_like(trajectory.N)
    return np.abs(trajectory.N - target).sum(axis=1)


def attraction_time(trajectory: FluidTrajectory, eps: float) -> float | None:
    """Earliest grid time after which the state stays within ``eps`` of ``n*(W)``; ``None`` if never."""
    if not eps > 0:
        raise ConfigError("eps must be positive")
    far = np.flatnonzero(distance_to_fixed_point(trajectory) >= eps)
    if far.size == 0:
        return float(trajectory.t[0])
    if far[-1] == trajectory.t.size - 1:
        return None
    return float(trajectory.t[far[-1] + 1])


def monotonicity_violations(trajectory: FluidTrajectory) -> dict[str, float]:
    """Largest upward move of psi, L and downward move of psi*, W, Y over regular steps."""
    reg = trajectory.regular()

    def up(x):
        d = np.diff(x, axis=0)
        d = d[reg] if d.ndim == 1 else d[reg].max(axis=1, initial=-np.inf)
        return float(max(d.max(initial=0.0), 0.0))

    out = {"psi": up(trajectory.psi), "L": up(trajectory.L), "psi_star": up(-trajectory.psi_star)}
    if trajectory.W.shape[1]:
        out["W"] = up(-trajectory.W)
        out["Y"] = up(-trajectory.Y)
    out["dpsi"] = float(max(trajectory.dpsi.max(initial=0.0), 0.0))
    return out


def full_utilization_gap(trajectory: FluidTrajectory, topology: NetworkTopology, sigma: float, eps: float) -> float:
    """Max unused bottleneck capacity at grid points within ``sigma`` of ``n*(W)`` with ``W >= eps``."""
    if len(trajectory.bottlenecks) != 1:
        raise ConfigError("full-utilisation check applies to a single bottleneck")
    l = trajectory.bottlenecks[0]
    near = (distance_to_fixed_point(trajectory) <= sigma) & (trajectory.W[:, 0] >= eps)
    if not near.any():
        return 0.0
    used = trajectory.rates[near] @ topology.incidence[l]
    return float(np.max(topology.c[l] - used))
