"""Cluster utilization with 15 agents: scheduled spread vs single-node pinning.

Runs the two bundled 15-agent scenarios (scheduler placement and the
single-node baseline), prints per-node CPU utilization in the steady window,
then prints a sizing table for fleets of 1..21 agents straight from the
scheduler arithmetic.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cloudmpc import scheduling as sched
from cloudmpc.scenario import load_scenario
from cloudmpc.simulation import run_scenario

ROOT = Path(__file__).resolve().parent.parent / "scenarios"
NODES = ("master", "worker-1", "worker-2", "worker-3")


def steady_utilization(result, t_lo):
    out = {}
    for node in NODES:
        col = f"util_cpu_{node}"
        vals = [r[col] for r in result.rows
                if r["time"] >= t_lo and r.get(col) is not None]
        out[node] = sum(vals) / len(vals) if vals else 0.0
    return out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steady-after", type=float, default=12.0,
                        help="start of the averaging window (s)")
    args = parser.parse_args()

    for label, fname in (("scheduled", "fig4_utilization.scn"),
                         ("baseline", "fig4_baseline.scn")):
        result = run_scenario(load_scenario(ROOT / fname))
        util = steady_utilization(result, args.steady_after)
        peak = max(util.values())
        cells = "  ".join(f"{n}={util[n]:.3f}" for n in NODES)
        print(f"{label:9s} peak={peak:.3f}  {cells}")
        if result.monitors:
            for line in result.monitors:
                print(f"  monitor: {line}")

    print()
    print("fleet sizing (agent_max=8, defaults):")
    print(f"{'n':>3} {'cnmpcs':>6} {'groups':>12} {'cpu req/lim':>12} "
          f"{'mem req/lim':>12} {'services':>8}")
    cargs = sched.CnmpcArgs()
    model = sched.ResourceModel()
    for n in range(1, 22):
        count = sched.required_cnmpcs(n, 8)
        groups = sched.partition_agents(n, count)
        env = sched.compute_resources(max(groups), cargs, model)
        print(f"{n:>3} {count:>6} {str(groups):>12} "
              f"{env.cpu_min:>5.1f}/{env.cpu_max:<5.1f} "
              f"{env.mem_min:>5.0f}/{env.mem_max:<5.0f} "
              f"{sched.required_services(n):>8}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
