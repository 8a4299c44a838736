"""Diffusion scaling of sample paths and the heavy-traffic diagnostics built on it.

Scaled paths are evaluated exactly at every event time, keeping both the
left limit and the post-event value. Between events ``N`` and ``W`` are
constant while ``X`` and ``Y`` are linear, so suprema, running minima and
integrals against ``dY`` computed on these points are exact.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .allocation import UtilitySpec, solve_allocation
from .costfix import CostModel, fixed_point
from .desim import PolicySpec, SamplePath, distributions_for, simulate
from .errors import ConfigError, RangeError, SingleBottleneckError
from .model import NetworkTopology, ScalingSequenceSpec, classify_links

DEFAULT_EPS = 0.05


@dataclass(frozen=True)
class ScaledPath:
    k: int
    t: np.ndarray  # diffusion time; event times appear twice (left limit, then value)
    X: np.ndarray  # (points, links)
    W: np.ndarray
    Y: np.ndarray
    N: np.ndarray  # (points, routes), N(k^2 t) / k
    links: tuple[int, ...]
    seed: int = -1
    policy: str = ""

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def at(self, times) -> dict[str, np.ndarray]:
        """Right-continuous evaluation at arbitrary diffusion times."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if times.size and (times.min() < self.t[0] - 1e-12 or times.max() > self.t[-1] + 1e-12):
            raise RangeError(f"times outside [{self.t[0]}, {self.t[-1]}]")
        i = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, self.t.size - 1)
        j = np.minimum(i + 1, self.t.size - 1)
        span = self.t[j] - self.t[i]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(span > 0, (times - self.t[i]) / span, 0.0)[:, None]
        lin = lambda a: a[i] + frac * (a[j] - a[i])
        return {"t": times, "X": lin(self.X), "Y": lin(self.Y), "W": self.W[i], "N": self.N[i]}

    def resample(self, dt: float) -> "ScaledPath":
        """The same path on a uniform grid of step ``dt``."""
        m = int(round(self.horizon / dt))
        grid = np.linspace(0.0, self.horizon, m + 1)
        v = self.at(grid)
        return ScaledPath(self.k, grid, v["X"], v["W"], v["Y"], v["N"], self.links, self.seed, self.policy)


def _state_at(path: SamplePath, s: np.ndarray, left: bool):
    """Counts and service of ``path`` at unscaled times ``s`` (left limits if ``left``)."""
    side = "left" if left else "right"
    i = np.searchsorted(path.t, s, side=side) - 1
    i = np.clip(i, 0, path.t.size - 1)
    dt = (s - path.t[i])[:, None]
    return i, path.D[i] + path.rates[i] * dt


def diffusion_scale(
    path: SamplePath,
    spec: ScalingSequenceSpec,
    k: int,
    horizon: float,
    links: Sequence[int] | None = None,
    dt: float | None = None,
) -> ScaledPath:
    """Centre and scale ``path`` (simulated under ``spec.at(k)``) on ``[0, horizon]`` in diffusion time.

    ``dt`` switches from the event-exact points to a uniform grid.
    """
    s_end = k * k * horizon
    if path.horizon < s_end * (1 - 1e-12):
        raise RangeError(f"path horizon {path.horizon} shorter than k^2 T = {s_end}")
    traffic = spec.at(k)
    base = spec.base
    if links is None:
        links = classify_links_for(path, base)
    links = tuple(int(l) for l in links)
    A = path.incidence[list(links)]

    if dt is None:
        ev = path.t[(path.t > 0) & (path.t <= s_end) & (path.kind != 3)]
        s = np.concatenate([[0.0], np.repeat(ev, 2), [s_end]])
        left = np.concatenate([[False], np.tile([True, False], ev.size), [False]])
    else:
        m = int(round(horizon / dt))
        s = np.linspace(0.0, s_end, m + 1)
        left = np.zeros(s.size, dtype=bool)

    rows = np.empty(s.size, dtype=np.int64)
    D = np.empty((s.size, path.n_routes))
    for flag in (False, True):
        sel = left == flag
        if sel.any():
            rows[sel], D[sel] = _state_at(path, s[sel], flag)
    E = path.arrivals()[rows]
    C = path.completions()[rows]
    N = path.N[rows]

    lam_k, nu_k = traffic.lam_arr, traffic.nu_arr
    rho_k, rho = traffic.rho, base.rho
    col = s[:, None]
    E_hat = (E - lam_k * col) / k
    S_hat = (C - D / nu_k) / k
    t = s / (k * k)
    X = ((nu_k * (path.n0 / k + E_hat - S_hat)) @ A.T) + (t[:, None] * (k * (rho_k - rho))) @ A.T
    W = (nu_k * N / k) @ A.T
    Y = ((rho * col - D) / k) @ A.T
    return ScaledPath(k, t, X, W, Y, N / k, links, path.seed, path.policy)


def classify_links_for(path: SamplePath, base) -> tuple[int, ...]:
    loads = path.incidence @ base.rho
    return tuple(int(l) for l in np.flatnonzero(np.abs(loads - path.capacities) <= 1e-9))


# reflection -------------------------------------------------------------------


def skorohod_1d(x, w0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """One-sided reflection at zero: ``y = max(0, running max of -(w0 + x))``, ``w = w0 + x + y``."""
    if w0 < 0:
        raise ConfigError("initial level must be nonnegative")
    z = np.asarray(x, dtype=float) + w0
    y = np.maximum.accumulate(np.maximum(-z, 0.0))
    return z + y, y


@dataclass(frozen=True)
class RbmParams:
    drift: float
    variance: float


def rbm_params(spec: ScalingSequenceSpec, link: int, incidence: np.ndarray, service_term: str = "corrected") -> RbmParams:
    """Drift and variance of the limiting free process at ``link``.

    The work term is ``lam_r b_r^2``, the variance rate of ``nu_r S_r(rho_r t)``.
    ``service_term="printed"`` uses ``b_r^2 / nu_r`` instead, which equals it
    only when ``rho_r = 1``.
    """
    on = np.asarray(incidence)[link] > 0
    b = spec.base
    lam, nu = b.lam_arr[on], b.nu_arr[on]
    a2, b2 = np.asarray(b.a_sq)[on], np.asarray(b.b_sq)[on]
    if service_term == "corrected":
        service = lam * b2
    elif service_term == "printed":
        service = b2 / nu
    else:
        raise ConfigError(f"unknown service_term {service_term!r}")
    var = float(np.sum(nu**2 * lam**3 * a2 + service))
    return RbmParams(float(np.sum(spec.theta_rho[on])), var)


# diagnostics ------------------------------------------------------------------


def _col(scaled: ScaledPath, link: int | None) -> int:
    if link is None:
        if len(scaled.links) != 1:
            raise SingleBottleneckError("diagnostic needs a single bottleneck link")
        return 0
    return scaled.links.index(link)


def rbm_gap(scaled: ScaledPath, link: int | None = None) -> float:
    """``sup_t |W(t) - Psi(X)(t)|``."""
    j = _col(scaled, link)
    w, _ = skorohod_1d(scaled.X[:, j])
    return float(np.max(np.abs(scaled.W[:, j] - w)))


def ssc_gap(scaled: ScaledPath, unit_state: np.ndarray, link: int | None = None) -> float:
    """``sup_t |N(t) - n*(W(t))|_1`` with ``n*(w) = w * unit_state``."""
    j = _col(scaled, link)
    return float(np.max(np.abs(scaled.N - scaled.W[:, j : j + 1] * unit_state).sum(axis=1)))


def complementarity_gap(scaled: ScaledPath, eps: float = DEFAULT_EPS, link: int | None = None) -> float:
    """Increase of ``Y`` over steps with ``W > eps`` at both ends.

    On event-exact points ``W`` is constant across each step, so this is the
    integral of ``1{W > eps} dY``; on a grid it credits a push that lands
    the workload on zero to the boundary, as the discrete reflection does.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    j = _col(scaled, link)
    dY = np.diff(scaled.Y[:, j])
    W = scaled.W[:, j]
    return float(np.sum(dY * ((W[:-1] > eps) & (W[1:] > eps))))


def unit_fixed_point(topology: NetworkTopology, utility: UtilitySpec, spec: ScalingSequenceSpec, link: int) -> np.ndarray:
    cost = CostModel.from_utility(utility, spec.base)
    return fixed_point(topology, cost, [link], 1.0).n_star


def increments(scaled: ScaledPath, dt: float, link: int | None = None) -> np.ndarray:
    """Increments of ``X`` over consecutive intervals of length ``dt``."""
    j = _col(scaled, link)
    m = int(math.floor(scaled.horizon / dt + 1e-9))
    v = scaled.at(dt * np.arange(m + 1))["X"][:, j]
    return np.diff(v)


def variance_check(incs: np.ndarray, dt: float, target: float, drift: float = 0.0) -> dict:
    """Compare the increment variance per unit time with ``target`` in standard errors."""
    x = np.asarray(incs, dtype=float)
    n = x.size
    if n < 3:
        raise ConfigError("need at least three increments")
    v = float(np.var(x, ddof=1))
    dev = (x - x.mean()) ** 2
    se = float(np.std(dev, ddof=1) / math.sqrt(n))
    return {
        "variance_rate": v / dt,
        "target": target,
        "se_rate": se / dt,
        "z": (v / dt - target) / (se / dt) if se > 0 else math.inf,
        "n": n,
    }


# windows ------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    j: int
    u: np.ndarray
    W: np.ndarray
    N: np.ndarray
    Y: np.ndarray


def magnify_window(scaled: ScaledPath, tau: float, delta: float, T: float, link: int | None = None) -> list[Window]:
    """Split ``[tau, tau + delta]`` into ``k delta / T`` windows of diffusion length ``T / k``.

    Window ``j`` is re-indexed by ``u = k (t - tau) - j T`` in ``[0, T]``; its
    points are the scaled path's own points in that span plus both ends.
    """
    if tau < 0 or not delta > 0 or not T > 0:
        raise RangeError("need tau >= 0, delta > 0, T > 0")
    if tau + delta > scaled.horizon + 1e-12:
        raise RangeError(f"[{tau}, {tau + delta}] exceeds the path horizon {scaled.horizon}")
    count = scaled.k * delta / T
    n_win = int(round(count))
    if abs(count - n_win) > 1e-9 or n_win < 1:
        raise RangeError(f"k delta / T = {count} is not a positive integer")
    c = _col(scaled, link)
    out = []
    for j in range(n_win):
        a = tau + j * T / scaled.k
        b = tau + (j + 1) * T / scaled.k
        inner = np.flatnonzero((scaled.t > a) & (scaled.t < b))
        ends = scaled.at([a, b])
        u = scaled.k * (np.concatenate([[a], scaled.t[inner], [b]]) - tau) - j * T
        W = np.concatenate([ends["W"][:1, c], scaled.W[inner, c], ends["W"][1:, c]])
        Y = np.concatenate([ends["Y"][:1, c], scaled.Y[inner, c], ends["Y"][1:, c]])
        N = np.concatenate([ends["N"][:1], scaled.N[inner], ends["N"][1:]])
        out.append(Window(j, u, W, N, Y))
    return out


def window_stats(windows: Iterable[Window], unit_state: np.ndarray, eps: float = DEFAULT_EPS, tol: float = 1e-12) -> dict:
    """Per-window attraction gap, peak workload and flat-regulator violations."""
    attract, peak, bad, total = [], [], 0, 0
    for w in windows:
        total += 1
        attract.append(float(np.max(np.abs(w.N - w.W[:, None] * unit_state).sum(axis=1))))
        peak.append(float(w.W.max()))
        if w.W.min() > eps and w.Y[-1] - w.Y[0] > tol:
            bad += 1
    return {
        "windows": total,
        "max_attraction_gap": max(attract, default=0.0),
        "mean_attraction_gap": float(np.mean(attract)) if attract else 0.0,
        "max_workload": max(peak, default=0.0),
        "violation_fraction": bad / total if total else 0.0,
    }


def estimate_sigma(
    topology: NetworkTopology,
    utility: UtilitySpec,
    link: int,
    unit_state: np.ndarray,
    w: float,
    radii: Sequence[float] = (0.5, 0.2, 0.1, 0.05, 0.02, 0.01),
    mesh: int = 5,
    tol: float = 1e-8,
) -> float:
    """Largest probed radius around ``n*(w)`` on which the bottleneck stays fully used (0 if none)."""
    center = w * unit_state
    R = center.size
    offsets = np.array(np.meshgrid(*[np.linspace(-1, 1, mesh)] * R)).reshape(R, -1).T
    norms = np.abs(offsets).sum(axis=1)
    offsets = offsets[norms > 0] / norms[norms > 0, None]
    row = topology.incidence[link]
    for s in sorted(radii, reverse=True):
        ok = True
        for off in offsets:
            n = np.maximum(center + s * off, 0.0)
            if not np.any(n > 0):
                continue
            lam = solve_allocation(topology, utility, n).lam
            if abs(row @ lam - topology.c[link]) > tol:
                ok = False
                break
        if ok:
            return float(s)
    return 0.0


# replications -----------------------------------------------------------------


def run_jobs(fn: Callable, jobs: Sequence, workers: int = 1) -> list:
    """Map ``fn`` over ``jobs``; results come back in job order regardless of ``workers``."""
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass(frozen=True)
class StudySetup:
    topology: NetworkTopology
    spec: ScalingSequenceSpec
    utility: UtilitySpec
    arrival_kinds: tuple[str, ...]
    work_kinds: tuple[str, ...]
    horizon: float = 3.0  # diffusion time
    eps: float = DEFAULT_EPS
    increment_dt: float = 0.1
    window_T: float = 1.0  # fluid-time length of one magnified window

    def bottleneck(self) -> int:
        cls = classify_links(self.topology, self.spec.base)
        if not cls.single_bottleneck:
            raise SingleBottleneckError(
                f"diffusion mode needs exactly one bottleneck link and no overload; found {len(cls.bottlenecks)}"
            )
        return cls.bottlenecks[0]

    def path(self, policy: PolicySpec, k: int, seed: int) -> SamplePath:
        traffic = self.spec.at(k)
        dists = distributions_for(traffic, self.arrival_kinds, self.work_kinds)
        return simulate(self.topology, traffic, dists, policy, k * k * self.horizon, seed)

    def scaled(self, policy: PolicySpec, k: int, seed: int) -> ScaledPath:
        return diffusion_scale(self.path(policy, k, seed), self.spec, k, self.horizon, [self.bottleneck()])


def _replicate(job):
    setup, policy, k, seed, unit = job
    sp = setup.scaled(policy, k, seed)
    out = {
        "k": k,
        "seed": seed,
        "policy": policy.name,
        "rbm_gap": rbm_gap(sp),
        "ssc_gap": ssc_gap(sp, unit),
        "complementarity_gap": complementarity_gap(sp, setup.eps),
        "increments": increments(sp, setup.increment_dt).tolist(),
    }
    ws = window_stats(magnify_window(sp, 0.0, setup.horizon, setup.window_T), unit, setup.eps)
    out["window_violation_fraction"] = ws["violation_fraction"]
    out["window_attraction_gap"] = ws["mean_attraction_gap"]
    return out


def sign_test(first: Sequence[float], last: Sequence[float]) -> float:
    """One-sided p-value that ``last < first`` more often than not (paired)."""
    d = np.asarray(last) - np.asarray(first)
    wins = int(np.sum(d < 0))
    n = int(np.sum(d != 0))
    if n == 0:
        return 1.0
    return float(stats.binomtest(wins, n, 0.5, alternative="greater").pvalue)


def trend(metric: dict[int, list[float]], alpha: float = 0.05) -> dict:
    """Means by ``k`` and whether they fall, with a paired sign test between the extreme ``k``."""
    ks = sorted(metric)
    means = {k: float(np.mean(metric[k])) for k in ks}
    if len(ks) < 2:
        return {"means": means, "verdict": "insufficient points"}
    falling = all(means[a] > means[b] for a, b in zip(ks, ks[1:]))
    p = sign_test(metric[ks[0]], metric[ks[-1]])
    return {
        "means": means,
        "monotone": falling,
        "sign_test_p": p,
        "verdict": "decreasing" if falling and p < alpha else "not established",
    }


def diffusion_study(
    setup: StudySetup,
    ks: Sequence[int],
    seeds: Sequence[int],
    policy: PolicySpec,
    workers: int = 1,
) -> dict:
    link = setup.bottleneck()
    unit = unit_fixed_point(setup.topology, setup.utility, setup.spec, link)
    jobs = [(setup, policy, int(k), int(s), unit) for k in sorted(ks) for s in seeds]
    rows = run_jobs(_replicate, jobs, workers)
    summary: dict = {"k": sorted(int(k) for k in ks), "seeds": [int(s) for s in seeds], "bottleneck": link}
    for name in ("rbm_gap", "ssc_gap", "complementarity_gap", "window_violation_fraction", "window_attraction_gap"):
        summary[name] = trend({k: [r[name] for r in rows if r["k"] == k] for k in sorted(ks)})
    rbm = rbm_params(setup.spec, link, setup.topology.incidence)
    kmax = max(ks)
    incs = np.concatenate([r["increments"] for r in rows if r["k"] == kmax])
    summary["variance"] = variance_check(incs, setup.increment_dt, rbm.variance)
    summary["rbm"] = {"drift": rbm.drift, "variance": rbm.variance}
    for r in rows:
        r.pop("increments")
    summary["rows"] = rows
    return summary


# policy comparison ------------------------------------------------------------


def _compare_one(job):
    setup, policy, k, seed, ts, cost = job
    sp = setup.scaled(policy, k, seed)
    v = sp.at(ts)
    c = np.array([float(np.sum(cost.route_cost(n))) for n in v["N"]])
    return {"policy": policy.name, "k": k, "seed": seed, "W": v["W"][:, 0].tolist(), "cost": c.tolist()}


def paired_ci(a: Sequence[float], b: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    """Mean of ``a - b`` and the t-interval half-width."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    n = d.size
    if n < 2:
        return float(d.mean()) if n else 0.0, math.inf
    sd = float(np.std(d, ddof=1))
    return float(d.mean()), float(stats.t.ppf(0.5 + level / 2, n - 1) * sd / math.sqrt(n))


def compare_policies(
    setup: StudySetup,
    ks: Sequence[int],
    policies: Sequence[PolicySpec],
    seeds: Sequence[int],
    ts: Sequence[float],
    workers: int = 1,
) -> dict:
    """Mean workload and cost at each ``t`` under each policy, with common random numbers.

    The first policy is the reference; every other one is compared against it
    by a paired t-interval on the per-seed differences.
    """
    setup.bottleneck()
    if not policies:
        raise ConfigError("no policies to compare")
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ConfigError("policy names must be distinct")
    ts = [float(t) for t in ts]
    if max(ts) > setup.horizon:
        raise RangeError("comparison times exceed the study horizon")
    cost = CostModel.from_utility(setup.utility, setup.spec.base)
    jobs = [(setup, p, int(k), int(s), ts, cost) for p in policies for k in sorted(ks) for s in seeds]
    rows = run_jobs(_compare_one, jobs, workers)
    table = []
    verdicts = []
    ref = names[0]
    for k in sorted(ks):
        by = {n: sorted((r for r in rows if r["policy"] == n and r["k"] == k), key=lambda r: r["seed"]) for n in names}
        for i, t in enumerate(ts):
            for metric in ("W", "cost"):
                base_vals = [r[metric][i] for r in by[ref]]
                for n in names:
                    vals = [r[metric][i] for r in by[n]]
                    diff, half = paired_ci(base_vals, vals)
                    table.append(
                        {"k": int(k), "t": t, "metric": metric, "policy": n, "mean": float(np.mean(vals)),
                         "diff_vs_ref": diff, "ci_half_width": half}
                    )
                    if n != ref:
                        ok = diff <= half
                        strict = diff + half < 0
                        verdicts.append(
                            {"k": int(k), "t": t, "metric": metric, "against": n,
                             "verdict": "reference better" if strict else ("consistent" if ok else "inconclusive"),
                             "holds": ok}
                        )
    return {"reference": ref, "table": table, "verdicts": verdicts, "rows": rows}
