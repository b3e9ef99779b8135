"""Command line front end.

Subcommands: `run` executes a scenario file and writes metrics.csv plus
actions.log, `verify` prints the property report for a scenario, `sweep-cpu`
prints the processing-time/latency table, and `solve-once` solves a single
control problem from a JSON file (debugging aid). Exit codes: 0 ok, 1 an
invariant or property failed, 2 bad input. CLOUDMPC_OUT overrides the default
output directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .controller import CnmpcProblem, solve
from .scenario import ScenarioError, load_scenario
from .simulation import run_scenario
from .sweep import DEFAULT_BAND, sweep_cpu
from .verify import verify_scenario

OUT_ENV = "CLOUDMPC_OUT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudmpc",
        description="cloud-scheduled centralized MPC fleet simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario file")
    run_p.add_argument("scenario", help="path to a cloudmpc-scenario file")
    run_p.add_argument("--out", help="output directory (default out/<name>)")
    run_p.add_argument("--mode", choices=["scheduled", "baseline"],
                       help="override the scenario's mode")
    run_p.add_argument("--seed", type=int, help="override the scenario's seed")

    ver_p = sub.add_parser("verify", help="run the property report for a scenario")
    ver_p.add_argument("scenario", help="path to a cloudmpc-scenario file")

    sweep_p = sub.add_parser("sweep-cpu", help="processing time vs utilization table")
    sweep_p.add_argument("--points", required=True,
                         help="comma-separated utilization points in [0, 1]")
    sweep_p.add_argument("--band", default=None,
                         help="target utilization band lo,hi "
                              f"(default {DEFAULT_BAND[0]},{DEFAULT_BAND[1]})")
    sweep_p.add_argument("--tau-max", type=float, default=0.1,
                         help="round-trip deadline in seconds")

    solve_p = sub.add_parser("solve-once", help="solve one control problem from JSON")
    solve_p.add_argument("problem", help="path to a JSON problem file")

    return parser


def _out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env) / name
    return Path("out") / name


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.mode:
        scenario.mode = args.mode
    if args.seed is not None:
        scenario.seed = args.seed
    scenario.validate()
    result = run_scenario(scenario)
    metrics_path, actions_path = result.write(_out_dir(args, scenario.name))
    print(f"scenario {scenario.name}: {len(result.rows)} metric rows")
    print(f"metrics {metrics_path}")
    print(f"actions {actions_path}")
    print(f"solves {result.solve_count} "
          f"wall {result.solve_wall_total:.3f}s")
    for line in result.monitors:
        print(f"monitor {line}")
    return result.exit_code


def _cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    report = verify_scenario(scenario)
    sys.stdout.write(report.render())
    return 0 if report.ok else 1


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ScenarioError(f"{what}: expected comma-separated numbers") from exc


def _cmd_sweep(args) -> int:
    points = _parse_floats(args.points, "--points")
    if not points:
        raise ScenarioError("--points: at least one value required")
    band = DEFAULT_BAND
    if args.band:
        parts = _parse_floats(args.band, "--band")
        if len(parts) != 2:
            raise ScenarioError("--band: expected lo,hi")
        band = (parts[0], parts[1])
    try:
        report = sweep_cpu(points, band=band, tau_max=args.tau_max)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    sys.stdout.write(report.render())
    return 0 if report.ok_inside_band() else 1


def _problem_arrays(doc: dict):
    try:
        states = np.array(doc["states"], dtype=float)
        refs = np.array(doc["references"], dtype=float)
    except KeyError as exc:
        raise ScenarioError(f"problem file: missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"problem file: bad array: {exc}") from exc
    if states.ndim != 2 or states.shape[1] != 9:
        raise ScenarioError("problem file: states must be (agents, 9)")
    horizon = int(doc.get("horizon_steps", 20))
    if refs.ndim == 2:
        refs = np.repeat(refs[:, None, :], horizon + 1, axis=1)
    if refs.shape != (states.shape[0], horizon + 1, 9):
        raise ScenarioError(
            "problem file: references must be (agents, 9) or (agents, horizon+1, 9)")
    prev = doc.get("previous_inputs")
    if prev is not None:
        prev = np.array(prev, dtype=float)
        if prev.shape != (states.shape[0], 3):
            raise ScenarioError("problem file: previous_inputs must be (agents, 3)")
    return states, refs, prev, horizon


def _cmd_solve_once(args) -> int:
    try:
        doc = json.loads(Path(args.problem).read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read problem file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"problem file: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("problem file: expected a JSON object")
    states, refs, prev, horizon = _problem_arrays(doc)
    try:
        problem = CnmpcProblem(
            horizon_steps=horizon,
            sampling_time=float(doc.get("sampling_time", 0.05)),
            agent_count=states.shape[0],
            safe_radius=float(doc.get("safe_radius", 0.5)),
        )
        solution = solve(problem, states, refs, previous_input=prev)
    except ValueError as exc:
        raise ScenarioError(f"problem file: {exc}") from exc
    out = {
        "inputs": solution.inputs.tolist(),
        "first_inputs": [list(u.as_array()) for u in solution.first_inputs()],
        "cost": solution.cost,
        "converged": solution.converged,
        "inner_iterations": solution.inner_iterations,
        "penalty_rounds": solution.penalty_rounds,
        "max_constraint_violation": solution.max_constraint_violation,
        "solve_wall_time": solution.solve_wall_time,
    }
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "verify": _cmd_verify,
        "sweep-cpu": _cmd_sweep,
        "solve-once": _cmd_solve_once,
    }
    try:
        return handlers[args.command](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
