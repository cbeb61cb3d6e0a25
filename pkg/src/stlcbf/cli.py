"""Command line interface: synth, simulate, monitor, plot."""

from __future__ import annotations

import argparse
import math
import sys

from .io import TrajectoryFormatError, read_trajectory, summary_path, write_summary, write_trajectory
from .scenario import (
    ParameterMismatch,
    ScenarioError,
    build_task_groups,
    load_params,
    load_scenario,
    save_params,
    synthesize_group,
)
from .stl import HorizonError
from .synthesis import SynthesisError

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INVALID


def _fmt(v) -> str:
    return "inf" if isinstance(v, float) and math.isinf(v) else f"{v:.6g}"


def cmd_synth(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            for g in scenario.groups:
                g.synthesis["seed"] = args.seed
        results = {g.name: synthesize_group(scenario, g, args.feasibility) for g in scenario.groups}
    except (ScenarioError, SynthesisError) as exc:
        return _err(str(exc))
    save_params(args.out, scenario, results)
    ok = True
    for name, res in results.items():
        ok &= res.feasible
        print(f"[{name}] feasible={res.feasible} r={_fmt(res.r)} eta={_fmt(res.eta)} D={_fmt(res.D)}"
              + (f" kappa={_fmt(res.kappa)}" if res.kappa is not None else ""))
        for key, slack in sorted(res.constraint_report.items()):
            mark = "ok " if slack >= 0 else "VIOLATED"
            print(f"  {mark} {key}: {slack:+.3e}")
    print(f"wrote {args.out}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        scenario.check_horizon()
        results = load_params(args.params, scenario)
    except (ScenarioError, ParameterMismatch, OSError, ValueError) as exc:
        return _err(str(exc))
    from .sim import run_scenario, summarize

    groups = build_task_groups(scenario, results)
    traj = run_scenario(scenario, groups, seed=args.seed)
    write_trajectory(args.out, traj)
    summary = summarize(traj, results, None if traj.aborted else scenario)
    write_summary(summary_path(args.out), summary)
    for key in ("r", "rho_at_0", "b_at_0", "recovery_time", "min_b_after_recovery", "infeasible_steps", "min_slack"):
        v = summary[key]
        print(f"{key}: {v if v is None or isinstance(v, int) else _fmt(v)}")
    if traj.aborted:
        print(f"aborted: {traj.aborted}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_monitor(args) -> int:
    if (args.scenario is None) == (args.formula is None):
        return _err("give exactly one of --scenario and --formula")
    try:
        traj = read_trajectory(args.trajectory)
        if args.formula is not None:
            from .sim import formula_robustness

            rho = formula_robustness(traj, args.formula, args.at)
            print(f"rho: {rho:.6g}")
        else:
            from .sim import monitor_scenario

            scenario = load_scenario(args.scenario)
            per, rho = monitor_scenario(traj, scenario, args.at)
            for name, v in per.items():
                print(f"[{name}] rho: {v:.6g}")
            print(f"rho: {rho:.6g}")
    except (TrajectoryFormatError, ScenarioError, HorizonError, ValueError, KeyError) as exc:
        return _err(str(exc))
    return EXIT_OK if rho > 0 else EXIT_FAIL


def cmd_plot(args) -> int:
    from .plotting import plot_trajectory

    try:
        traj = read_trajectory(args.trajectory)
        switches = ()
        if args.scenario is not None:
            from .barrier import decompose, switching_times

            scenario = load_scenario(args.scenario)
            switches = sorted({s for g in scenario.groups for s in switching_times(decompose(g.formula))})
        plot_trajectory(traj, args.out, args.kind, switches)
    except (TrajectoryFormatError, ScenarioError, ValueError) as exc:
        return _err(str(exc))
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stlcbf", description="STL task synthesis and control with time-varying barriers")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize barrier parameters for a scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True, help="parameter file to write")
    s.add_argument("--seed", type=int, default=None, help="override the multistart seed")
    s.add_argument("--feasibility", type=float, metavar="R", default=None,
                   help="only check feasibility at the given robustness target")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="run the closed loop and write a trajectory CSV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--out", required=True, help="trajectory CSV; a .summary.json is written beside it")
    s.add_argument("--seed", type=int, default=None, help="override the disturbance seed")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("monitor", help="robustness of a trajectory")
    s.add_argument("trajectory")
    s.add_argument("--scenario", default=None)
    s.add_argument("--formula", default=None)
    s.add_argument("--at", type=float, default=0.0, help="evaluation time")
    s.set_defaults(func=cmd_monitor)

    s = sub.add_parser("plot", help="SVG figure of a trajectory")
    s.add_argument("trajectory")
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=("barrier", "paths", "inputs"), default="barrier")
    s.add_argument("--scenario", default=None, help="mark switching times of this scenario")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
