"""Plot a metrics.csv produced by `cloudmpc run`.

Three panels: per-node CPU utilization, per-agent tracking error, and the
round-trip latency with the deadline line. Needs matplotlib; everything else
in the package runs without it.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cloudmpc.metrics import read_metrics


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("metrics", help="path to a metrics.csv")
    parser.add_argument("--out", default=None, help="save as PNG instead of showing")
    parser.add_argument("--tau-max", type=float, default=0.1)
    args = parser.parse_args()

    try:
        import matplotlib
        if args.out:
            matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is not installed; pip install matplotlib", file=sys.stderr)
        return 2

    table = read_metrics(Path(args.metrics).read_text())
    t = [r["time"] for r in table.rows]

    def series(col):
        return [r.get(col) for r in table.rows]

    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(9, 9))

    for col in table.columns:
        if col.startswith("util_cpu_"):
            axes[0].plot(t, series(col), label=col.removeprefix("util_cpu_"))
    axes[0].set_ylabel("cpu utilization")
    axes[0].set_ylim(0, 1.05)
    axes[0].legend(loc="upper right", fontsize=8)

    for col in table.columns:
        if col.startswith("err_agent_"):
            axes[1].plot(t, series(col), label=col.removeprefix("err_agent_"))
    axes[1].set_ylabel("tracking error [m]")
    axes[1].legend(loc="upper right", fontsize=8, ncol=2)

    axes[2].plot(t, series("tau_rrt_mean"), label="rtt mean")
    axes[2].axhline(args.tau_max, color="red", linestyle="--", label="deadline")
    axes[2].set_ylabel("round trip [s]")
    axes[2].set_xlabel("time [s]")
    axes[2].legend(loc="upper right", fontsize=8)

    fig.tight_layout()
    if args.out:
        fig.savefig(args.out, dpi=150)
        print(f"wrote {args.out}")
    else:
        plt.show()
    return 0


if __name__ == "__main__":
    sys.exit(main())
