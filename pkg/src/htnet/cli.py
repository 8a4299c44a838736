"""Command-line front end.

Exit codes: 0 success, 2 configuration, 3 numerical failure, 4 violated
model precondition (heavy traffic, single bottleneck).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .allocation import solve_allocation
from .costfix import CostModel
from .desim import simulate, verify_capacity, verify_flow_balance, write_binary
from .errors import ConfigError, HeavyTrafficError, HtnetError, SingleBottleneckError
from .fluid import attraction_time, integrate_fluid, monotonicity_violations
from .model import classify_links
from .planning import check_resource_pooling, solve_static_lp
from .presets import document, names
from .scaling import StudySetup, compare_policies, diffusion_study
from .scenario import Scenario, build, load


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _scenario(args) -> Scenario:
    if args.scenario and args.preset:
        raise ConfigError("give either --scenario or --preset, not both")
    if args.scenario:
        return load(args.scenario)
    if args.preset:
        return build(document(args.preset))
    raise ConfigError("a scenario is required: --scenario FILE or --preset NAME")


class Output:
    def __init__(self, args, scenario: Scenario, command: str):
        target = args.out or (scenario.output_dir if "output" in scenario.doc else None)
        self.dir = Path(target) if target else None
        self.json = args.json
        self.stamp = {"scenario_sha256": scenario.sha256, "version": __version__, "command": command}
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def report(self, name: str, payload: dict, lines: Sequence[str]) -> None:
        body = {**payload, **self.stamp}
        if self.dir:
            (self.dir / name).write_text(dumps(body))
        if self.json:
            sys.stdout.write(dumps(body))
        else:
            for line in lines:
                print(line)

    @property
    def comment(self) -> str:
        return f"scenario_sha256={self.stamp['scenario_sha256']} version={__version__}"

    def csv(self, name: str, header: Sequence[str], rows) -> Path | None:
        if not self.dir:
            return None
        p = self.dir / name
        with open(p, "w", newline="") as fh:
            fh.write(f"# {self.comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
        return p


def _fmt(v) -> str:
    return "(" + ", ".join(f"{x:.6g}" for x in np.asarray(v, dtype=float)) + ")"


def cmd_allocate(args) -> int:
    sc = _scenario(args)
    out = Output(args, sc, "allocate")
    state = _floats(args.state) if args.state else sc.experiment.get("state")
    if state is None:
        raise ConfigError("--state is required (or experiment.state in the scenario)")
    n = np.asarray(state, dtype=float)
    if n.shape != (sc.topology.n_routes,):
        raise ConfigError(f"--state: expected {sc.topology.n_routes} entries, got {n.size}")
    if np.any(n < 0):
        raise ConfigError("--state: entries must be nonnegative")
    if not np.any(n > 0):
        rho = sc.traffic.rho
        out.report(
            "allocate.json",
            {"state": n, "degenerate": True, "lambda": rho, "note": "empty state: allocation undefined, effective rate is rho"},
            ["empty state: allocation undefined; effective rate Lambda = rho = " + _fmt(rho)],
        )
        return 0
    res = solve_allocation(sc.topology, sc.utility, n, tol=sc.tolerances["kkt"], feas_tol=sc.tolerances["feasibility"])
    out.report(
        "allocate.json",
        {"state": n, "degenerate": False, "lambda": res.lam, "eta": res.eta, "kkt_residual": res.kkt_residual,
         "iterations": res.iterations, "route_ids": sc.topology.route_ids, "link_ids": sc.topology.link_ids},
        [f"Lambda = {_fmt(res.lam)}", f"eta    = {_fmt(res.eta)}", f"KKT residual = {res.kkt_residual:.3e}"],
    )
    return 0


def cmd_plan(args) -> int:
    sc = _scenario(args)
    out = Output(args, sc, "plan")
    cls = classify_links(sc.topology, sc.traffic, tol=sc.tolerances["load"])
    res = solve_static_lp(sc.topology, sc.traffic, tol=sc.tolerances["lp"])
    payload = {
        "xi": res.xi,
        "lambda": res.lambda_primal,
        "p": res.p,
        "pi": res.pi,
        "bottlenecks": [sc.topology.link_ids[l] for l in res.bottleneck_set],
        "heavy_traffic": cls.heavy_traffic,
        "pooling": res.pooling,
        "p_range": {"min": res.p_min, "max": res.p_max},
        "pi_free_links": res.pi_free_links,
    }
    if res.witness is not None:
        payload["witness"] = list(res.witness)
    lines = [f"xi = {res.xi!r}", f"p  = {_fmt(res.p)}", f"pi = {_fmt(res.pi)}",
             f"heavy traffic: {cls.heavy_traffic}", f"bottlenecks: {payload['bottlenecks']}"]
    if cls.heavy_traffic:
        rep = check_resource_pooling(sc.topology, sc.traffic, tol=sc.tolerances["lp"])
        payload["pooling_verified"] = rep.pooling
        lines.append(f"resource pooling: {rep.pooling}")
        if rep.witness is not None:
            lines.append(f"  distinct dual p: {_fmt(rep.witness[0])} and {_fmt(rep.witness[1])}")
    out.report("plan.json", payload, lines)
    return 0


def cmd_fluid(args) -> int:
    sc = _scenario(args)
    out = Output(args, sc, "fluid")
    n0 = _floats(args.n0) if args.n0 else sc.experiment.get("n0")
    if n0 is None:
        raise ConfigError("--n0 is required (or experiment.n0 in the scenario)")
    horizon = args.horizon or sc.experiment["fluid_horizon"]
    step = args.step or sc.experiment["fluid_step"]
    tr = integrate_fluid(sc.topology, sc.utility, sc.traffic, n0, horizon, step)
    eps = sc.experiment["attraction_eps"]
    t_att = attraction_time(tr, eps)
    viol = monotonicity_violations(tr)
    if out.dir:
        tr.to_csv(out.dir / "fluid.csv", out.comment)
    out.report(
        "fluid.json",
        {"n0": n0, "horizon": horizon, "step": step, "final_state": tr.N[-1], "fixed_point": tr.n_star[-1],
         "attraction_eps": eps, "attraction_time": t_att, "monotonicity_violations": viol,
         "bottlenecks": [sc.topology.link_ids[l] for l in tr.bottlenecks]},
        [f"N(T) = {_fmt(tr.N[-1])}", f"n*(W(T)) = {_fmt(tr.n_star[-1])}",
         f"attraction time (eps={eps:g}): {'not reached' if t_att is None else t_att}",
         f"max psi increase on regular steps: {viol['psi']:.3e}"],
    )
    return 0


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    out = Output(args, sc, "simulate")
    k = args.k[0] if args.k else None
    if args.k and len(args.k) > 1:
        raise ConfigError("simulate takes a single --k")
    traffic = sc.traffic_at(k)
    policy = sc.policy(args.policy)
    seed = args.seed if args.seed is not None else sc.experiment["seeds"][0]
    if args.horizon:
        horizon = args.horizon
    elif k is not None:
        horizon = k * k * sc.experiment["diffusion_horizon"]
    else:
        horizon = sc.experiment["horizon"]
    path = simulate(sc.topology, traffic, sc.distributions(k), policy, horizon, seed,
                    feas_tol=sc.tolerances["feasibility"])
    links = classify_links(sc.topology, sc.traffic, tol=sc.tolerances["load"]).bottlenecks
    fb = verify_flow_balance(path)
    cap = verify_capacity(path, sc.topology)
    ybar = path.unused(links)
    y_mono = float(max(-np.diff(ybar, axis=0).min(initial=0.0), 0.0)) if ybar.size else 0.0
    if out.dir:
        write_binary(path, out.dir / "path.bin", {"scenario_sha256": sc.sha256, "version": __version__, "k": k})
        path.to_csv(out.dir / "path.csv", links, out.comment)
    avg = path.time_average()
    out.report(
        "simulate.json",
        {"policy": policy.name, "seed": seed, "k": k, "horizon": horizon, "events": path.n_events,
         "time_average_N": avg, "flow_balance_residual": fb, "capacity_residual": cap,
         "regulator_max_decrease": y_mono, "bottlenecks": [sc.topology.link_ids[l] for l in links]},
        [f"policy {policy.name}, seed {seed}, horizon {horizon:g}: {path.n_events} events",
         f"time-average N = {_fmt(avg)}", f"flow balance residual = {fb}", f"capacity residual = {cap:.3e}"],
    )
    return 0


def cmd_diffusion_study(args) -> int:
    sc = _scenario(args)
    out = Output(args, sc, "diffusion-study")
    cls = classify_links(sc.topology, sc.traffic, tol=sc.tolerances["load"])
    if not cls.heavy_traffic:
        raise HeavyTrafficError("diffusion mode needs the heavy-traffic condition on the base traffic")
    if not cls.single_bottleneck:
        raise SingleBottleneckError(
            f"diffusion mode needs a single bottleneck link; found {len(cls.bottlenecks)}"
        )
    if sc.spec is None:
        raise ConfigError("diffusion study needs a scaling section")
    ks = args.k or sc.experiment["k"]
    seeds = [args.seed] if args.seed is not None else sc.experiment["seeds"]
    exp = sc.experiment
    setup = StudySetup(sc.topology, sc.spec, sc.utility, sc.arrival_kinds, sc.work_kinds,
                       horizon=args.horizon or exp["diffusion_horizon"], eps=exp["eps"], increment_dt=exp["increment_dt"],
                       window_T=exp["window_length"])
    policy = sc.policy(args.policy)
    summary = diffusion_study(setup, ks, seeds, policy, workers=exp["workers"])
    rows = summary.pop("rows")
    metrics = ("rbm_gap", "ssc_gap", "complementarity_gap", "window_violation_fraction", "window_attraction_gap")
    out.csv("diffusion_rows.csv", ["policy", "k", "seed", *metrics],
            [[r["policy"], r["k"], r["seed"], *(r[m] for m in metrics)] for r in rows])
    lines = [f"{m}: {summary[m]['verdict']} (means {summary[m]['means']})" for m in metrics]
    v = summary["variance"]
    lines.append(f"increment variance rate {v['variance_rate']:.4g} vs {v['target']:.4g} (z = {v['z']:.2f})")
    if len(sc.policies) > 1:
        cmp = compare_policies(setup, [max(ks)], sc.policies, seeds, exp["compare_t"], workers=exp["workers"])
        out.csv("comparison.csv", ["k", "t", "metric", "policy", "mean", "diff_vs_ref", "ci_half_width"],
                [[r["k"], r["t"], r["metric"], r["policy"], r["mean"], r["diff_vs_ref"], r["ci_half_width"]] for r in cmp["table"]])
        summary["comparison"] = {"reference": cmp["reference"], "verdicts": cmp["verdicts"]}
        for vd in cmp["verdicts"]:
            lines.append(f"k={vd['k']} t={vd['t']} {vd['metric']}: {cmp['reference']} vs {vd['against']}: {vd['verdict']}")
    out.report("diffusion.json", summary, lines)
    return 0


def cmd_preset(args) -> int:
    if args.name is None:
        for n in names():
            print(n)
        return 0
    text = dumps(document(args.name))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="htnet", description="Bandwidth-sharing network analysis in heavy traffic.")
    p.add_argument("--version", action="version", version=f"htnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", help="scenario JSON file")
        sp.add_argument("--preset", help="built-in scenario name")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--json", action="store_true", help="print the JSON report instead of a summary")
        return sp

    s = common(sub.add_parser("allocate", help="utility-maximising allocation in one state"))
    s.add_argument("--state", help="comma-separated per-route job counts")
    s.set_defaults(fn=cmd_allocate)

    s = common(sub.add_parser("plan", help="static planning LP and resource pooling"))
    s.set_defaults(fn=cmd_plan)

    s = common(sub.add_parser("fluid", help="integrate the fluid model"))
    s.add_argument("--n0", help="comma-separated initial fluid levels")
    s.add_argument("--horizon", type=float)
    s.add_argument("--step", type=float)
    s.set_defaults(fn=cmd_fluid)

    s = common(sub.add_parser("simulate", help="simulate one sample path"))
    s.add_argument("--policy")
    s.add_argument("--k", type=_ints, help="scale index of the heavy-traffic sequence")
    s.add_argument("--seed", type=int)
    s.add_argument("--horizon", type=float)
    s.set_defaults(fn=cmd_simulate)

    s = common(sub.add_parser("diffusion-study", help="diffusion-scale diagnostics over k and seeds"))
    s.add_argument("--policy")
    s.add_argument("--k", type=_ints, help="comma-separated scale indices")
    s.add_argument("--seed", type=int, help="run a single seed")
    s.add_argument("--horizon", type=float, help="diffusion-time horizon")
    s.set_defaults(fn=cmd_diffusion_study)

    s = sub.add_parser("preset", help="list presets or print one as JSON")
    s.add_argument("name", nargs="?")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_preset)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        return args.fn(args)
    except HtnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
