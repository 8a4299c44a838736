"""Cost functions dual to the utilities, and the workload fixed point ``n*(w)``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._prices import PriceProblem
from .allocation import KKT_TOL, UtilitySpec, solve_allocation
from .errors import ConfigError, HeavyTrafficError, SolverError
from .model import NetworkTopology, TrafficProfile, classify_links

FIXED_POINT_TOL = 1e-10


@dataclass(frozen=True)
class CostModel:
    """Per-route costs ``C_r(n) = beta_r nu_r n^(1+alpha) / ((1+alpha) rho_r^alpha)``.

    This is the integral of ``nu_r * dU_r/dLambda_r`` in ``n`` with the rate
    frozen at the offered load ``rho_r``.
    """

    alpha: float
    beta: np.ndarray
    nu: np.ndarray
    rho: np.ndarray

    @classmethod
    def from_utility(cls, utility: UtilitySpec, traffic: TrafficProfile) -> "CostModel":
        if len(utility.beta) != traffic.n_routes:
            raise ConfigError("utility and traffic disagree on the number of routes")
        return cls(utility.alpha, utility.beta_arr.copy(), traffic.nu_arr.copy(), traffic.rho.copy())

    @property
    def n_routes(self) -> int:
        return self.beta.size

    def route_cost(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        a = self.alpha
        return self.beta * self.nu * n ** (1 + a) / ((1 + a) * self.rho**a)

    def derivative(self, n) -> np.ndarray:
        """``C_r'(n) = nu_r beta_r (n / rho_r)^alpha``."""
        n = np.asarray(n, dtype=float)
        return self.nu * self.beta * (n / self.rho) ** self.alpha

    def inverse(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        a = self.alpha
        return ((1 + a) * self.rho**a * value / (self.beta * self.nu)) ** (1 / (1 + a))

    def __call__(self, n) -> float:
        return cost_value(self, n)


@dataclass(frozen=True)
class FixedPointResult:
    n_star: np.ndarray
    theta: np.ndarray  # one multiplier per designated bottleneck, same order
    bottlenecks: tuple[int, ...]
    cost: float
    kkt_residual: float

    @property
    def multipliers(self) -> np.ndarray:
        return self.theta


def cost_value(cost: CostModel, n) -> float:
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ConfigError("state entries must be nonnegative")
    return float(np.sum(cost.route_cost(n)))


def _workload(topology: NetworkTopology, cost: CostModel, links: Sequence[int], n) -> np.ndarray:
    return topology.incidence[list(links)] @ (cost.nu * np.asarray(n, dtype=float))


def fixed_point_residual(
    topology: NetworkTopology, cost: CostModel, bottlenecks: Sequence[int], w, n, theta
) -> float:
    """Largest violation of the cost-minimisation optimality conditions."""
    links = list(bottlenecks)
    n = np.asarray(n, dtype=float)
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    A = topology.incidence[links]
    S = A.T @ theta
    terms = [0.0, float(np.max(np.maximum(-theta, 0.0))), float(np.max(np.maximum(-n, 0.0)))]
    gap = A @ (cost.nu * n) - w
    terms.append(float(np.max(np.maximum(-gap, 0.0))))
    terms.append(float(np.max(np.abs(theta * gap))))
    pos = n > 0
    if pos.any():
        terms.append(float(np.max(np.abs(cost.derivative(n)[pos] - cost.nu[pos] * S[pos]))))
    # routes held at zero must not want to grow
    zero = ~pos
    if zero.any():
        terms.append(float(np.max(np.maximum(-cost.nu[zero] * S[zero], 0.0))))
    return max(terms)


def fixed_point(
    topology: NetworkTopology,
    cost: CostModel,
    bottlenecks: Sequence[int],
    w,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = 100_000,
) -> FixedPointResult:
    """Minimise ``psi(n)`` subject to ``sum_{r on l} nu_r n_r >= w_l`` on the bottlenecks.

    Stationarity gives ``n_r = rho_r (S_r / beta_r)^(1/alpha)`` with
    ``S_r`` the sum of bottleneck multipliers along ``r``; routes that touch no
    bottleneck therefore sit at zero.
    """
    links = [topology.link_index(l) for l in bottlenecks]
    if not links:
        raise ConfigError("fixed point needs at least one bottleneck link")
    if len(set(links)) != len(links):
        raise ConfigError("duplicate bottleneck links")
    if cost.n_routes != topology.n_routes:
        raise ConfigError("cost model and topology disagree on the number of routes")
    w = np.broadcast_to(np.asarray(w, dtype=float), (len(links),)).copy()
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError("workload levels must be finite and nonnegative")

    n_star = np.zeros(topology.n_routes)
    theta = np.zeros(len(links))
    if not np.any(w > 0):
        return FixedPointResult(n_star, theta, tuple(links), 0.0, 0.0)

    A = topology.incidence[links]
    empty = (A.sum(axis=1) == 0) & (w > 0)
    if empty.any():
        raise ConfigError(f"no route crosses link(s) {[links[i] for i in np.flatnonzero(empty)]} with positive workload")
    touched = A.sum(axis=0) > 0
    As = A[:, touched]
    alpha = cost.alpha
    inv = 1.0 / alpha
    scale = float(w.max())
    coef = (cost.nu * cost.rho * cost.beta ** (-inv))[touched]

    # h = w - workload(theta) is decreasing in theta
    def q(S):
        return -coef * np.maximum(S, 0.0) ** inv

    def dq(S):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(S > 0, q(S) / (alpha * S), 0.0)

    wn = w / scale
    x0 = np.zeros(len(links))
    live = As @ coef
    pos = wn > 0
    x0[pos] = (wn[pos] / live[pos]) ** alpha
    problem = PriceProblem(As, -wn, q, dq)
    x, _, _ = problem.solve(x0, 1e-14, max_iter, warm=True)

    theta = x * scale**alpha
    S = A.T @ theta
    n_star = cost.rho * (np.maximum(S, 0.0) / cost.beta) ** inv
    n_star[~touched] = 0.0
    res = fixed_point_residual(topology, cost, links, w, n_star, theta)
    floor = 1e-13 * max(alpha, 1.0) * max(float(theta.max()), 1.0) * max(float(w.max()), 1.0)
    if res > max(tol, floor):
        raise SolverError("fixed-point optimality residual above tolerance", res)
    return FixedPointResult(n_star, theta, tuple(links), cost_value(cost, n_star), res)


def single_bottleneck_direction(topology: NetworkTopology, cost: CostModel, link: int) -> np.ndarray:
    """``n*(1)`` for a single bottleneck; ``n*(w) = w * n*(1)`` by homogeneity."""
    return fixed_point(topology, cost, [link], 1.0).n_star


@dataclass(frozen=True)
class RoundtripReport:
    n_star: np.ndarray
    allocation: np.ndarray | None
    forward_residual: float
    backward_residual: float
    degenerate: bool
    note: str = ""


def duality_roundtrip(
    topology: NetworkTopology,
    utility: UtilitySpec,
    traffic: TrafficProfile,
    bottlenecks: Sequence[int] | None,
    w,
    tol: float = KKT_TOL,
    n=None,
) -> RoundtripReport:
    """Check both directions of the utility/cost correspondence.

    Forward: the allocation in state ``n*(w)`` equals ``rho`` on the routes
    through a bottleneck. Backward: starting from a state whose allocation is
    ``rho`` on those routes (``n`` if given, else ``n*(w)``), the fixed point
    for its own workload is the state itself.
    """
    cls = classify_links(topology, traffic)
    if not cls.heavy_traffic:
        raise HeavyTrafficError("heavy-traffic condition fails: no bottleneck link or an overloaded link")
    links = list(cls.bottlenecks) if bottlenecks is None else [topology.link_index(l) for l in bottlenecks]
    cost = CostModel.from_utility(utility, traffic)
    fp = fixed_point(topology, cost, links, w)
    star_routes = topology.routes_through(links)
    if not np.any(fp.n_star > 0):
        return RoundtripReport(fp.n_star, None, 0.0, 0.0, True, "zero workload: n* = 0, allocation undefined")

    alloc = solve_allocation(topology, utility, fp.n_star, tol=tol * 1e-2)
    check = star_routes & (fp.n_star > 0)
    forward = float(np.max(np.abs(alloc.lam[check] - traffic.rho[check])))

    state = fp.n_star if n is None else np.asarray(n, dtype=float)
    if n is not None:
        lam_n = solve_allocation(topology, utility, state, tol=tol * 1e-2).lam
        on = star_routes & (state > 0)
        if np.max(np.abs(lam_n[on] - traffic.rho[on]), initial=0.0) > 1e3 * tol:
            raise ConfigError("supplied state does not allocate rho on the bottleneck routes")
    back = fixed_point(topology, cost, links, _workload(topology, cost, links, state))
    backward = float(np.max(np.abs(back.n_star[star_routes] - state[star_routes]), initial=0.0))
    return RoundtripReport(fp.n_star, alloc.lam, forward, backward, False)


def fixed_point_continuity_probe(
    topology: NetworkTopology,
    cost: CostModel,
    bottlenecks: Sequence[int],
    w,
    deltas: Sequence[float],
) -> list[tuple[float, float]]:
    """``(delta, |n*(w + delta) - n*(w)|_1)`` for each perturbation size."""
    base = fixed_point(topology, cost, bottlenecks, w).n_star
    w = np.asarray(w, dtype=float)
    rows = []
    for d in deltas:
        moved = fixed_point(topology, cost, bottlenecks, np.maximum(w + d, 0.0)).n_star
        rows.append((float(d), float(np.sum(np.abs(moved - base)))))
    return rows
