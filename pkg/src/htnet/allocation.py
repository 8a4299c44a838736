"""Per-state utility-maximising allocation for the alpha-fair family.

Given link prices ``eta``, route ``r`` maximises its own surplus in closed form,

    Lambda_r = n_r * (beta_r / S_r) ** (1 / alpha),   S_r = sum_{l in r} eta_l,

so the allocation problem is solved entirely in price space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._prices import PriceProblem
from .errors import ConfigError, DegenerateStateError, SolverError
from .model import NetworkTopology, TrafficProfile

KKT_TOL = 1e-8
FEAS_TOL = 1e-10
MAX_ITER = 100_000


@dataclass(frozen=True)
class UtilitySpec:
    """Alpha-fair utilities ``U_r(n, L) = beta_r n^alpha L^(1-alpha) / (1-alpha)``.

    ``alpha == 1`` is the weighted proportionally fair member
    ``beta_r n log L``.
    """

    alpha: float
    beta: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha!r}")
        if not self.beta or any(not b > 0 for b in self.beta):
            raise ConfigError("every beta_r must be positive")

    @classmethod
    def proportional(cls, n_routes: int) -> "UtilitySpec":
        return cls(1.0, (1.0,) * n_routes)

    @property
    def beta_arr(self) -> np.ndarray:
        return np.asarray(self.beta)

    def value(self, n: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Per-route utility; zero wherever ``n_r == 0``."""
        n = np.asarray(n, dtype=float)
        lam = np.asarray(lam, dtype=float)
        b = self.beta_arr
        out = np.zeros_like(n)
        on = n > 0
        with np.errstate(divide="ignore"):
            if self.alpha == 1.0:
                out[on] = b[on] * n[on] * np.log(lam[on])
            else:
                a = self.alpha
                out[on] = b[on] * n[on] ** a * lam[on] ** (1 - a) / (1 - a)
        return out

    def marginal(self, n: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """``d U_r / d Lambda_r = beta_r (n_r / Lambda_r)^alpha``."""
        n = np.asarray(n, dtype=float)
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.beta_arr * (n / lam) ** self.alpha


@dataclass(frozen=True)
class AllocationResult:
    lam: np.ndarray
    eta: np.ndarray
    kkt_residual: float
    iterations: int

    @property
    def lambda_alloc(self) -> np.ndarray:
        return self.lam


def objective(utility: UtilitySpec, n, lam) -> float:
    return float(np.sum(utility.value(n, lam)))


TINY = np.finfo(float).tiny


def _check(topology: NetworkTopology, utility: UtilitySpec, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape != (topology.n_routes,):
        raise ConfigError(f"state must have {topology.n_routes} entries, got shape {n.shape}")
    if len(utility.beta) != topology.n_routes:
        raise ConfigError("utility weights must have one entry per route")
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ConfigError("state entries must be finite and nonnegative")
    # subnormal levels cannot carry a representable rate; they count as empty
    return np.where(n < TINY, 0.0, n)


def kkt_residual(topology: NetworkTopology, utility: UtilitySpec, n, lam, eta) -> float:
    """Largest violation among stationarity, feasibility and complementary slackness.

    An active route (``n_r > 0``) with ``Lambda_r <= 0`` has infinite marginal
    utility and yields ``inf``.
    """
    n = np.asarray(n, dtype=float)
    lam = np.asarray(lam, dtype=float)
    eta = np.asarray(eta, dtype=float)
    A = topology.incidence
    if lam.shape != n.shape or eta.shape != (topology.n_links,):
        raise ConfigError("dimension mismatch in kkt_residual")
    terms = [0.0]
    on = n > 0
    if np.any(on & (lam <= 0)):
        return float("inf")
    if on.any():
        S = A.T @ eta
        terms.append(float(np.max(np.abs(utility.marginal(n, lam)[on] - S[on]))))
    load = A @ lam
    gap = load - topology.c
    terms.append(float(np.max(np.maximum(gap, 0.0))))
    terms.append(float(np.max(np.maximum(-lam, 0.0))))
    terms.append(float(np.max(np.maximum(-eta, 0.0))))
    terms.append(float(np.max(np.abs(eta * gap))))
    return max(terms)


def solve_allocation(
    topology: NetworkTopology,
    utility: UtilitySpec,
    n,
    tol: float = KKT_TOL,
    feas_tol: float = FEAS_TOL,
    max_iter: int = MAX_ITER,
    eta0=None,
    trace: list | None = None,
) -> AllocationResult:
    """Maximise ``sum_r U_r(n_r, Lambda_r)`` over the capacity region.

    Routes with ``n_r == 0`` are left out of the problem and receive
    ``Lambda_r = 0``. ``eta0`` warm-starts the link prices. When ``trace`` is a
    list, the dual objective after every coordinate sweep is appended to it;
    those values never increase.
    """
    if not tol > 0:
        raise ConfigError("tol must be positive")
    n = _check(topology, utility, n)
    active = n > 0
    if not active.any():
        raise DegenerateStateError("allocation is undefined in the empty state; use effective_rate")

    A = topology.incidence
    c = topology.c
    alpha = utility.alpha
    beta = utility.beta_arr
    lam = np.zeros(topology.n_routes)
    eta = np.zeros(topology.n_links)

    act = np.flatnonzero(active)
    if act.size == 1:
        r = int(act[0])
        links = list(topology.route_links[r])
        j = links[int(np.argmin(c[links]))]
        lam[r] = c[j]
        eta[j] = beta[r] * (n[r] / lam[r]) ** alpha
        return AllocationResult(lam, eta, kkt_residual(topology, utility, n, lam, eta), 0)

    live = np.flatnonzero(A[:, act].sum(axis=1) > 0)
    As = A[np.ix_(live, act)]
    cs = c[live]
    scale = float(n.max())
    nn = n[act] / scale
    bs = beta[act]
    inv = 1.0 / alpha
    price_scale = scale**alpha

    def q(S):
        return nn * (bs / S) ** inv

    def dq(S):
        return -q(S) / (alpha * S)

    if eta0 is not None:
        x0 = np.asarray(eta0, dtype=float)[live] / price_scale
    else:
        x0 = (As @ (nn * bs**inv) / cs) ** alpha

    def dual(x):
        S = As.T @ x
        L = q(S)
        if alpha == 1.0:
            u = bs * nn * np.log(L)
        else:
            u = bs * nn**alpha * L ** (1 - alpha) / (1 - alpha)
        return price_scale * float(np.sum(u - L * S) + cs @ x)

    inner_tol = 1e-14  # relative to capacity; the absolute KKT check below decides
    problem = PriceProblem(As, cs, q, dq)
    x, _, iters = problem.solve(
        x0, inner_tol, max_iter, dual=dual if trace is not None else None, trace=trace, warm=eta0 is not None
    )

    eta[live] = x * price_scale
    lam[act] = q(As.T @ x)
    res = kkt_residual(topology, utility, n, lam, eta)
    # absolute KKT terms carry the magnitude of the prices; roundoff in Lambda is amplified by alpha
    floor = 1e-13 * max(alpha, 1.0) * max(float(eta.max()), 1.0) * max(float(c.max()), 1.0)
    if res > max(tol, floor):
        raise SolverError("allocation KKT residual above tolerance", res)
    return AllocationResult(lam, eta, res, iters)


def effective_rate(
    topology: NetworkTopology,
    utility: UtilitySpec,
    traffic: TrafficProfile,
    n,
    tol: float = KKT_TOL,
) -> np.ndarray:
    """``Lambda_r(n)`` where ``n_r > 0`` and the offered load ``rho_r`` elsewhere."""
    n = _check(topology, utility, n)
    out = np.array(traffic.rho, dtype=float)
    if not np.any(n > 0):
        return out
    res = solve_allocation(topology, utility, n, tol=tol)
    on = n > 0
    out[on] = res.lam[on]
    return out


def check_radial_homogeneity(
    topology: NetworkTopology,
    utility: UtilitySpec,
    n,
    a: float,
    tol: float = KKT_TOL,
) -> float:
    """Max over active routes of ``|Lambda_r(a n) - Lambda_r(n)|``."""
    if not a > 0:
        raise ConfigError("scale factor must be positive")
    n = _check(topology, utility, n)
    on = n > 0
    base = solve_allocation(topology, utility, n, tol=tol).lam
    scaled = solve_allocation(topology, utility, a * n, tol=tol).lam
    return float(np.max(np.abs(scaled[on] - base[on])))


def feasible(topology: NetworkTopology, lam: Sequence[float], feas_tol: float = FEAS_TOL) -> bool:
    lam = np.asarray(lam, dtype=float)
    return bool(np.all(lam >= -feas_tol) and np.all(topology.incidence @ lam <= topology.c + feas_tol))
