"""Link-price solver shared by the allocation and fixed-point problems.

Both problems reduce to: find prices ``x >= 0`` on a set of links with

    h(x) = A @ q(A.T @ x) - b <= 0,    x * h(x) = 0,

where ``q_r`` is strictly decreasing in the route price ``S_r = sum_{l in r} x_l``.
Exact coordinate minimisation of the (convex) dual finds the active set;
Newton's method on that set then finishes to machine precision.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import SolverError

RouteMap = Callable[[np.ndarray], np.ndarray]


def complementarity_residual(x: np.ndarray, h: np.ndarray, scale: np.ndarray) -> float:
    """Scale-free natural residual: every link feasible, every priced link tight.

    ``h`` is measured relative to ``scale``. A tiny price is not treated as
    zero, because with a large exponent it can still carry a sizeable flow.
    """
    if x.size == 0:
        return 0.0
    with np.errstate(over="ignore"):
        rel = h / scale
    tight = np.where(x > 0, np.abs(rel), 0.0)
    return float(max(np.max(np.maximum(rel, 0.0)), np.max(tight), np.max(np.maximum(-x, 0.0))))


class PriceProblem:
    def __init__(self, A: np.ndarray, b: np.ndarray, q: RouteMap, dq: RouteMap):
        self.A = A
        self.b = b
        self.q = q
        self.dq = dq
        mag = np.abs(b)
        self.scale = np.where(mag > 0, mag, max(float(mag.max(initial=0.0)), 1.0))
        # Links crossed by exactly the same routes: only the smallest b can bind, and
        # shifting price onto it leaves every route price unchanged, so the others stay at 0.
        self.keeper = np.arange(b.size)
        groups: dict[bytes, int] = {}
        for l in range(b.size):
            key = (A[l] > 0).tobytes()
            k = groups.setdefault(key, l)
            if b[l] < b[k]:
                groups[key] = l
        for l in range(b.size):
            self.keeper[l] = groups[(A[l] > 0).tobytes()]
        self.fixed = self.keeper != np.arange(b.size)

    def h(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return self.A @ self.q(self.A.T @ x) - self.b

    def residual(self, x: np.ndarray) -> float:
        h = self.h(x)
        if not np.all(np.isfinite(h)):
            return float("inf")
        return complementarity_residual(x, h, self.scale)

    def _coord(self, x: np.ndarray, l: int) -> float:
        row = self.A[l]
        on = row > 0
        base = self.A.T @ x - row * x[l]
        s0 = base[on]
        bl = self.b[l]

        def f(t: float) -> float:
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                v = float(np.sum(self.q_sub(s0 + t, on)) - bl)
            return v if not np.isnan(v) else np.inf

        f0 = f(0.0)
        if f0 <= 0.0:
            return 0.0
        hi = max(x[l], 1.0)
        while f(hi) > 0.0:
            hi *= 2.0
            if hi > 1e300:
                raise SolverError("price bracket diverged", float("inf"))
        # halve down to a sign change so tiny prices are found to relative precision
        lo = 0.5 * hi
        while f(lo) <= 0.0:
            hi, lo = lo, 0.5 * lo
            if lo < 1e-300:
                return hi
        return brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)

    def q_sub(self, s: np.ndarray, mask: np.ndarray) -> np.ndarray:
        full = np.zeros(self.A.shape[1])
        full[mask] = s
        return self.q(full)[mask]

    def sweep(self, x: np.ndarray) -> np.ndarray:
        x = x.copy()
        for l in np.flatnonzero(~self.fixed):
            x[l] = self._coord(x, l)
        return x

    def _fold(self, x: np.ndarray) -> np.ndarray:
        if not self.fixed.any():
            return x
        x = x.copy()
        for l in np.flatnonzero(self.fixed):
            x[self.keeper[l]] += x[l]
            x[l] = 0.0
        return x

    def newton(self, x: np.ndarray, tol: float, max_steps: int = 60) -> np.ndarray | None:
        """Newton on ``log(load_P / b_P) = 0`` in log-prices over the support ``P`` of ``x``."""
        P = x > 0
        if not P.any() or np.any(self.b[P] == 0):
            return None
        A, q = self.A, self.q
        AP = self.A[P]
        bP = self.b[P]
        xt = x.copy()

        def F(z):
            xt[P] = np.exp(z)
            S = A.T @ xt
            load = AP @ q(S)
            ratio = load / bP
            if not (ratio > 0).all():
                return None, None, None
            return np.log(ratio), S, load

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            z0 = z = np.log(x[P])
            Fz, S, load = F(z)
            if Fz is None or not np.isfinite(Fz).all():
                return None
            merit = float(Fz @ Fz)
            goal = max(0.1 * tol, 2e-16) ** 2 * Fz.size
            for _ in range(max_steps):
                if merit <= goal:
                    break
                d = self.dq(S)
                d[~np.isfinite(d)] = 0.0
                J = ((AP * d) @ AP.T) * (np.exp(z) / load[:, None])
                try:
                    step = np.linalg.solve(J, -Fz)
                except np.linalg.LinAlgError:
                    step = np.linalg.lstsq(J, -Fz, rcond=None)[0]
                t = 1.0
                for _ in range(12):
                    trial, S_t, load_t = F(z + t * step)
                    if trial is not None and np.isfinite(trial).all():
                        mt = float(trial @ trial)
                        if mt <= (1.0 - 1e-4 * t) * merit or mt <= goal:
                            break
                    t *= 0.5
                else:
                    break
                z, Fz, S, load, merit = z + t * step, trial, S_t, load_t, mt
                if np.any(z < z0 - 35.0):
                    # a price is collapsing to zero: wrong support, let the sweep fix it
                    return None
        out = x.copy()
        out[P] = np.exp(z)
        return out

    def newton_linear(self, x: np.ndarray, tol: float, max_steps: int = 200) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Newton on ``h_P = 0`` in the prices themselves, kept positive by a fraction-to-boundary rule.

        Slower to start than the log form when prices span many decades, but it
        does not stall when the dual is nearly flat along some direction.
        Returns the iterate and, if some prices collapsed towards zero (wrong
        support), a mask of those links.
        """
        P = x > 0
        if not P.any() or np.any(self.b[P] == 0):
            return None, None
        AP = self.A[P]
        scale = np.abs(self.b[P])
        x = x.copy()
        x0 = x[P].copy()
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            h = self.h(x)[P] / scale
            if not np.isfinite(h).all():
                return None, None
            merit = float(h @ h)
            goal = max(0.1 * tol, 2e-16) ** 2 * h.size
            blocked = np.zeros(h.size, dtype=int)
            for _ in range(max_steps):
                if merit <= goal:
                    break
                d = self.dq(self.A.T @ x)
                d[~np.isfinite(d)] = 0.0
                J = ((AP * d) @ AP.T) / scale[:, None]
                try:
                    step = np.linalg.solve(J, -h)
                except np.linalg.LinAlgError:
                    step = np.linalg.lstsq(J, -h, rcond=None)[0]
                xp = x[P]
                # links the full step would push negative; persistent ones belong off the support
                over = xp + step <= 0
                blocked = np.where(over, blocked + 1, 0)
                if np.any(blocked >= 6):
                    mask = np.zeros(x.size, dtype=bool)
                    mask[np.flatnonzero(P)[blocked >= 6]] = True
                    return x, mask
                down = step < 0
                t = min(1.0, 0.9 * float(np.min(-xp[down] / step[down]))) if down.any() else 1.0
                for _ in range(30):
                    trial = x.copy()
                    trial[P] = xp + t * step
                    ht = self.h(trial)[P] / scale
                    if np.isfinite(ht).all():
                        mt = float(ht @ ht)
                        if mt <= (1.0 - 1e-4 * t) * merit or mt <= goal:
                            break
                    t *= 0.5
                else:
                    break
                x, h, merit = trial, ht, mt
                gone = x[P] < 1e-15 * x0
                if gone.any():
                    mask = np.zeros(x.size, dtype=bool)
                    mask[np.flatnonzero(P)[gone]] = True
                    return x, mask
        return x, None

    def _polish(self, x: np.ndarray, tol: float) -> tuple[np.ndarray | None, float]:
        y = self.newton(x, tol)
        r = float("inf") if y is None else self.residual(y)
        if r <= tol:
            return y, r
        # stalled, typically because the dual is nearly flat in some direction;
        # prices that collapse are dropped from the support and Newton restarts
        start = x if y is None else y
        for _ in range(x.size):
            y2, gone = self.newton_linear(start, tol)
            if y2 is None:
                break
            # small but genuine prices are better resolved in log form
            for cand in (y2, self.newton(y2, tol)):
                if cand is not None:
                    rc = self.residual(cand)
                    if rc < r:
                        y, r = cand, rc
            if r <= tol or gone is None:
                break
            start = y2.copy()
            start[gone] = 0.0
            if not np.any(start > 0):
                break
        return y, r

    def solve(
        self,
        x0: np.ndarray,
        tol: float,
        max_iter: int,
        dual: Callable[[np.ndarray], float] | None = None,
        trace: list | None = None,
        warm: bool = False,
    ) -> tuple[np.ndarray, float, int]:
        x = np.maximum(np.asarray(x0, dtype=float), 0.0)
        if x.size == 0:
            return x, 0.0, 0
        x = self._fold(x)
        best_x, best_res = x, self.residual(x)
        if trace is not None and dual is not None and np.isfinite(best_res):
            trace.append(dual(x))
        if best_res <= tol:
            return x, best_res, 0
        # warm starts are usually on the right active set already
        if warm:
            polished, pres = self._polish(x, tol)
            if polished is not None and pres <= tol:
                if trace is not None and dual is not None:
                    trace.append(dual(polished))
                return polished, pres, 0
        for it in range(1, max_iter + 1):
            prev = x
            x = self.sweep(x)
            res = self.residual(x)
            if trace is not None and dual is not None:
                trace.append(dual(x))
            if res < best_res:
                best_x, best_res = x, res
            if res <= tol:
                return x, res, it
            polished, pres = self._polish(x, tol)
            if polished is not None:
                if pres <= tol:
                    if trace is not None and dual is not None:
                        trace.append(dual(polished))
                    return polished, pres, it
                if pres < best_res:
                    best_x, best_res = polished, pres
            if np.all(np.abs(x - prev) <= 4 * np.finfo(float).eps * np.abs(x)):
                # a sweep that changes nothing: tol is below what rounding allows, the caller judges
                return best_x, best_res, it
        raise SolverError(f"price iteration did not converge in {max_iter} sweeps", best_res)
