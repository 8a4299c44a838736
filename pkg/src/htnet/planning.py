"""Static planning LP, its dual, and the resource-pooling test.

Primal (P):  max xi   s.t.  rho_r xi - Lambda_r <= 0,  sum_{r on l} Lambda_r <= c_l,  xi, Lambda >= 0.
Dual   (D):  min sum_l c_l pi_l   s.t.  sum_r rho_r p_r >= 1,  sum_{l in r} pi_l - p_r >= 0,  p, pi >= 0.

The LPs have at most a few dozen variables, so a dense-tableau simplex with
Bland's rule is plenty and keeps vertex selection deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, HeavyTrafficError, NumericalError, PoolingMismatchError
from .model import NetworkTopology, TrafficProfile, classify_links

LP_TOL = 1e-9
_PIVOT_TOL = 1e-12


class LPError(NumericalError):
    pass


@dataclass(frozen=True)
class LPSolution:
    x: np.ndarray
    value: float
    duals: np.ndarray  # one per constraint row, ub rows first, then eq rows
    basis: tuple[int, ...]


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * T[row]


def _run(T: np.ndarray, basis: list[int], allowed: int, max_pivots: int) -> None:
    """Bland-rule simplex on a tableau whose last row holds reduced costs."""
    m = T.shape[0] - 1
    for _ in range(max_pivots):
        cost = T[-1, :allowed]
        entering = np.flatnonzero(cost < -_PIVOT_TOL)
        if entering.size == 0:
            return
        col = int(entering[0])
        column = T[:m, col]
        ok = column > _PIVOT_TOL
        if not ok.any():
            raise LPError("linear program is unbounded")
        ratios = np.full(m, np.inf)
        ratios[ok] = T[:m, -1][ok] / column[ok]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + _PIVOT_TOL * max(1.0, abs(best)))
        row = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, row, col)
        basis[row] = col
    raise LPError("simplex pivot limit reached")


def simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, max_pivots: int = 10_000) -> LPSolution:
    """Minimise ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``."""
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # standard form: [x | slacks] with one slack per ub row
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    n_std = n + m_ub

    # slack columns can seed the basis on rows that were not flipped
    basis: list[int] = [-1] * m
    for i in range(m_ub):
        if sign[i] > 0:
            basis[i] = n + i
    need = [i for i in range(m) if basis[i] < 0]
    n_art = len(need)
    T = np.zeros((m + 1, n_std + n_art + 1))
    T[:m, :n_std] = A
    T[:m, -1] = b
    for j, i in enumerate(need):
        T[i, n_std + j] = 1.0
        basis[i] = n_std + j

    if n_art:
        T[-1, n_std : n_std + n_art] = 1.0
        for i in need:
            T[-1] -= T[i]
        _run(T, basis, n_std + n_art, max_pivots)
        if T[-1, -1] < -1e-9 * max(1.0, float(np.abs(b).max(initial=0.0))):
            raise LPError("linear program is infeasible")
        # drive zero-level artificials out of the basis, dropping redundant rows
        keep = []
        for i in range(m):
            if basis[i] >= n_std:
                cols = np.flatnonzero(np.abs(T[i, :n_std]) > 1e-9)
                if cols.size == 0:
                    continue
                _pivot(T, i, int(cols[0]))
                basis[i] = int(cols[0])
            keep.append(i)
        rows = keep + [m]
        T = np.delete(T[rows], np.s_[n_std : n_std + n_art], axis=1)
        basis = [basis[i] for i in keep]
    else:
        keep = list(range(m))
        T = np.delete(T, np.s_[n_std : n_std + n_art], axis=1)

    T[-1, :] = 0.0
    T[-1, :n] = c
    for i, j in enumerate(basis):
        if T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[i]
    _run(T, basis, n_std, max_pivots)

    xs = np.zeros(n_std)
    for i, j in enumerate(basis):
        xs[j] = T[i, -1]
    x = xs[:n]
    B = A[keep][:, basis]
    cB = np.concatenate([c, np.zeros(m_ub)])[basis]
    y = np.zeros(m)
    y[keep] = np.linalg.solve(B.T, cB) * sign[keep]
    return LPSolution(x, float(c @ x), y, tuple(basis))


@dataclass(frozen=True)
class PlanningResult:
    xi: float
    lambda_primal: np.ndarray
    p: np.ndarray
    pi: np.ndarray
    bottleneck_set: tuple[int, ...]
    pooling: bool
    p_min: np.ndarray = field(repr=False)
    p_max: np.ndarray = field(repr=False)
    witness: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    pi_free_links: int = 0  # links whose pi is not pinned down on the optimal face


def min_ratio_xi(topology: NetworkTopology, traffic: TrafficProfile) -> float:
    """``min_l c_l / sum_{r on l} rho_r`` over links carrying traffic."""
    loads = topology.incidence @ traffic.rho
    used = loads > 0
    return float(np.min(topology.c[used] / loads[used]))


def _dual_face(topology: NetworkTopology, traffic: TrafficProfile, xi: float):
    """Constraint data of the dual optimal face over ``(p, pi)``."""
    R, L = topology.n_routes, topology.n_links
    A = topology.incidence
    # -rho p <= -1 ; p - A^T pi <= 0 ; c pi = xi
    A_ub = np.zeros((1 + R, R + L))
    A_ub[0, :R] = -traffic.rho
    A_ub[1:, :R] = np.eye(R)
    A_ub[1:, R:] = -A.T
    b_ub = np.concatenate([[-1.0], np.zeros(R)])
    A_eq = np.concatenate([np.zeros(R), topology.c])[None, :]
    return A_ub, b_ub, A_eq, np.array([xi])


def _check_inputs(topology: NetworkTopology, traffic: TrafficProfile) -> None:
    if topology.n_routes != traffic.n_routes:
        raise ConfigError(f"topology has {topology.n_routes} routes but traffic has {traffic.n_routes}")
    for rid, r in zip(topology.route_ids, topology.routes):
        if not r:
            raise ConfigError(f"route {rid!r} uses no links")


def solve_static_lp(topology: NetworkTopology, traffic: TrafficProfile, tol: float = LP_TOL) -> PlanningResult:
    _check_inputs(topology, traffic)
    R, L = topology.n_routes, topology.n_links
    rho = traffic.rho
    A = topology.incidence

    # variables (xi, Lambda); minimise -xi
    A_ub = np.zeros((R + L, 1 + R))
    A_ub[:R, 0] = rho
    A_ub[:R, 1:] = -np.eye(R)
    A_ub[R:, 1:] = A
    b_ub = np.concatenate([np.zeros(R), topology.c])
    c = np.zeros(1 + R)
    c[0] = -1.0
    sol = simplex(c, A_ub, b_ub)
    xi = float(sol.x[0])
    # duals of <= rows in a minimisation are <= 0
    p = np.maximum(-sol.duals[:R], 0.0)
    pi = np.maximum(-sol.duals[R:], 0.0)
    # the LP leaves slack routes' rates free; report the minimal choice rho * xi
    lam = rho * xi

    loads = A @ rho
    used = loads > 0
    ratio = np.full(L, np.inf)
    ratio[used] = topology.c[used] / loads[used]
    bott = tuple(int(i) for i in np.flatnonzero(ratio <= xi * (1 + tol) + tol))

    p_min, p_max = _p_ranges(topology, traffic, xi)
    spread = p_max - p_min
    pooling = bool(np.all(spread <= max(tol, 1e-9)))
    witness = None
    if not pooling:
        witness = _witness(topology, traffic, xi, int(np.argmax(spread)))
    return PlanningResult(xi, lam, p, pi, bott, pooling, p_min, p_max, witness, _pi_free_links(topology, traffic, xi, tol))


def _p_ranges(topology, traffic, xi):
    R, L = topology.n_routes, topology.n_links
    A_ub, b_ub, A_eq, b_eq = _dual_face(topology, traffic, xi)
    lo = np.zeros(R)
    hi = np.zeros(R)
    for r in range(R):
        e = np.zeros(R + L)
        e[r] = 1.0
        lo[r] = simplex(e, A_ub, b_ub, A_eq, b_eq).x[r]
        hi[r] = simplex(-e, A_ub, b_ub, A_eq, b_eq).x[r]
    return lo, hi


def _witness(topology, traffic, xi, r):
    R, L = topology.n_routes, topology.n_links
    A_ub, b_ub, A_eq, b_eq = _dual_face(topology, traffic, xi)
    e = np.zeros(R + L)
    e[r] = 1.0
    a = simplex(e, A_ub, b_ub, A_eq, b_eq).x[:R]
    b = simplex(-e, A_ub, b_ub, A_eq, b_eq).x[:R]
    return a, b


def _pi_free_links(topology, traffic, xi, tol) -> int:
    R, L = topology.n_routes, topology.n_links
    A_ub, b_ub, A_eq, b_eq = _dual_face(topology, traffic, xi)
    free = 0
    for l in range(L):
        e = np.zeros(R + L)
        e[R + l] = 1.0
        lo = simplex(e, A_ub, b_ub, A_eq, b_eq).x[R + l]
        hi = simplex(-e, A_ub, b_ub, A_eq, b_eq).x[R + l]
        free += int(hi - lo > tol)
    return free


@dataclass(frozen=True)
class PoolingReport:
    pooling: bool
    bottleneck_set: tuple[int, ...]
    witness: tuple[np.ndarray, np.ndarray] | None


def check_resource_pooling(
    topology: NetworkTopology, traffic: TrafficProfile, tol: float = LP_TOL
) -> PoolingReport:
    """Dual-uniqueness verdict, cross-checked against the single-bottleneck criterion."""
    cls = classify_links(topology, traffic)
    if not cls.heavy_traffic:
        raise HeavyTrafficError("heavy-traffic condition fails: no bottleneck link or an overloaded link")
    res = solve_static_lp(topology, traffic, tol)
    single = len(cls.bottlenecks) == 1
    if res.pooling != single:
        raise PoolingMismatchError(
            f"dual uniqueness says pooling={res.pooling} but |L*|={len(cls.bottlenecks)}"
        )
    return PoolingReport(res.pooling, cls.bottlenecks, res.witness)
