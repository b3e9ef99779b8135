"""Round-trip latency vs background CPU load, plus the deadline scenario.

Sweeps controller-node background utilization and reports the measured mean
round-trip time at each point against the deadline, then runs the bundled
six-agent deadline scenario and prints its tail latency summary.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cloudmpc.scenario import load_scenario
from cloudmpc.simulation import run_scenario
from cloudmpc.sweep import DEFAULT_BAND, sweep_cpu

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "latency_deadline.scn"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", default="0,0.25,0.5,0.75,0.9,0.99",
                        help="comma-separated utilization points")
    parser.add_argument("--tau-max", type=float, default=0.1)
    parser.add_argument("--skip-scenario", action="store_true",
                        help="only run the sweep")
    args = parser.parse_args()

    points = [float(p) for p in args.points.split(",")]
    report = sweep_cpu(points, band=DEFAULT_BAND, tau_max=args.tau_max)
    print(report.render(), end="")

    if not args.skip_scenario:
        print()
        result = run_scenario(load_scenario(SCENARIO))
        rtts = [r["tau_rrt_mean"] for r in result.rows
                if r.get("tau_rrt_mean") is not None and r["time"] >= 2.0]
        ok = [r["deadline_ok"] for r in result.rows
              if r.get("deadline_ok") is not None and r["time"] >= 2.0]
        print(f"deadline scenario: mean rtt {sum(rtts) / len(rtts):.4f} s, "
              f"worst {max(rtts):.4f} s, deadline held {sum(ok):.0f}/{len(ok)} windows")
    return 0 if report.ok_inside_band() else 1


if __name__ == "__main__":
    sys.exit(main())
