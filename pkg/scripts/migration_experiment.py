"""Fleet-growth experiment: 4 -> 7 -> 10 agents, one controller becoming two.

Runs the bundled migration scenario and summarizes what the scheduler did:
the deployment trace, which agents were re-homed at the 10-agent transition,
how fast their tracking error spike decayed, and how the untouched agents
held their steady band.
"""
from __future__ import annotations

import argparse
import math
import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cloudmpc.scenario import load_scenario
from cloudmpc.simulation import run_scenario

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "fig5_migration.scn"


def steady_band(rows, col, lo, hi):
    vals = [r[col] for r in rows if lo <= r["time"] <= hi and r.get(col) is not None]
    return max(vals) if vals else math.inf


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=None, help="directory for metrics/actions")
    args = parser.parse_args()

    scenario = load_scenario(SCENARIO)
    result = run_scenario(scenario, out_dir=args.out)

    print("deployment trace:")
    for line in result.actions_text.splitlines():
        if re.search(r"(Create|Update|Delete)Deployment", line):
            print(f"  {line}")

    rehomed = sorted({aid for _, aid, _, _ in result.migration_events})
    print(f"re-homed agents at t=125: {rehomed}")

    for aid in rehomed:
        col = f"err_agent_{aid}"
        spike = max(r[col] for r in result.rows
                    if 125 <= r["time"] <= 130 and r.get(col) is not None)
        pre = steady_band(result.rows, col, 100, 124)
        decayed = [r["time"] for r in result.rows
                   if r["time"] > 130 and r.get(col) is not None and r[col] < pre]
        when = decayed[0] if decayed else None
        print(f"  agent {aid}: spike {spike:.3f} m, pre-event band {pre:.3f} m, "
              f"back below band at t={when}")

    steady = [a for a in range(7) if a not in rehomed]
    worst = 0.0
    for aid in steady:
        col = f"err_agent_{aid}"
        pre = steady_band(result.rows, col, 100, 124)
        post = steady_band(result.rows, col, 125, 165)
        if pre > 0:
            worst = max(worst, post / pre)
    print(f"non-re-homed agents: worst post/pre error ratio {worst:.2f}")
    print(f"monitors: {result.monitors or 'none'}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
