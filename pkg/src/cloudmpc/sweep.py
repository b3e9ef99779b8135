"""CPU-load sweep: the processing-time curve with closed-loop latency checks.

For each requested utilization point the sweep reports the model's processing
time and then actually runs a short closed loop with a background workload pod
pinning the controller node near that utilization, measuring the windowed
round-trip mean and the deadline verdict. The configured target band is marked
on every row; the sweep as a whole is OK when the deadline holds at every
point inside the band.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import cluster as cl
from .cluster import LoadModel, processing_time
from .scenario import Scenario, TimelineEvent
from .simulation import Simulation

DEFAULT_BAND = (0.0, 0.75)
SWEEP_NODE = "worker-2"


@dataclass(frozen=True)
class SweepPoint:
    utilization: float
    tau_p_model: float
    tau_rrt: float
    deadline_ok: bool
    in_band: bool


@dataclass
class SweepReport:
    band: tuple[float, float]
    tau_max: float
    points: list[SweepPoint] = field(default_factory=list)

    def ok_inside_band(self) -> bool:
        return all(p.deadline_ok for p in self.points if p.in_band)

    def render(self) -> str:
        lines = [
            "# cloudmpc-sweep v1",
            f"# band {self.band[0]:.6f} {self.band[1]:.6f} tau_max {self.tau_max:.6f}",
            "utilization tau_p_model tau_rrt in_band deadline",
        ]
        for p in self.points:
            lines.append(
                f"{p.utilization:.6f} {p.tau_p_model:.6f} {p.tau_rrt:.6f} "
                f"{'yes' if p.in_band else 'no'} "
                f"{'ok' if p.deadline_ok else 'violation'}"
            )
        verdict = "ok" if self.ok_inside_band() else "violation"
        lines.append(f"# inside-band deadline {verdict}")
        return "\n".join(lines) + "\n"


def _sweep_scenario(tau_max: float, load: LoadModel, duration: float) -> Scenario:
    sc = Scenario(
        name="cpu-sweep",
        duration=duration,
        mode="baseline",
        baseline_node=SWEEP_NODE,
        tau_max=tau_max,
        load_model=load,
        timeline=[
            TimelineEvent(0.0, "join", (0,)),
            TimelineEvent(0.5, "takeoff"),
        ],
    )
    sc.validate()
    return sc


def _predicted_controller_usage(u: float, sc: Scenario) -> float:
    # mirror of the accounting fixed point for a single baseline agent so the
    # background pod tops the node up to exactly the requested utilization
    tau_p = processing_time(u, sc.load_model)
    duty = min(1.0, sc.cnmpc_args.control_rate * tau_p)
    demand = sc.resource_model.cpu_base_min * duty
    return max(cl.IDLE_FLOOR, demand)


def measure_point(
    u: float,
    tau_max: float = 0.1,
    load: LoadModel | None = None,
    duration: float = 6.0,
) -> tuple[float, bool]:
    """Closed-loop (tau_rrt, deadline ok) with the node pinned near u."""
    if not 0.0 <= u <= 1.0:
        raise ValueError("load points must lie within [0, 1]")
    load = load or LoadModel()
    sc = _sweep_scenario(tau_max, load, duration)
    sim = Simulation(sc)
    capacity = sim.cluster.nodes[SWEEP_NODE].cpu_capacity
    filler = max(0.0, u * capacity - _predicted_controller_usage(u, sc))
    if filler > 0.0:
        pod = cl.Pod(
            id="background-0", deployment_name="background",
            role=cl.PodRole.MASTER,
            cpu_request=0.0, cpu_limit=filler,
            mem_request=0.0, mem_limit=1.0,
            node_name=SWEEP_NODE, phase=cl.PodPhase.RUNNING,
            cpu_usage=filler,
        )
        sim.cluster.pods[pod.id] = pod
    result = sim.run()
    tail = [r for r in result.rows
            if r.get("tau_rrt_mean") not in (None, "") and r["time"] >= duration / 2]
    if not tail:
        raise RuntimeError("sweep run produced no latency samples")
    tau_rrt = tail[-1]["tau_rrt_mean"]
    deadline_ok = all(r["deadline_ok"] for r in tail)
    return tau_rrt, deadline_ok


def sweep_cpu(
    points,
    band: tuple[float, float] = DEFAULT_BAND,
    tau_max: float = 0.1,
    load: LoadModel | None = None,
    duration: float = 6.0,
) -> SweepReport:
    pts = sorted(points)
    if not pts:
        raise ValueError("at least one load point is required")
    for u in pts:
        if not 0.0 <= u <= 1.0:
            raise ValueError("load points must lie within [0, 1]")
    if not 0.0 <= band[0] <= band[1] <= 1.0:
        raise ValueError("band must be an ordered pair within [0, 1]")
    load = load or LoadModel()
    report = SweepReport(band=band, tau_max=tau_max)
    for u in pts:
        tau_rrt, ok = measure_point(u, tau_max=tau_max, load=load, duration=duration)
        report.points.append(SweepPoint(
            utilization=u,
            tau_p_model=processing_time(u, load),
            tau_rrt=tau_rrt,
            deadline_ok=ok,
            in_band=band[0] <= u <= band[1],
        ))
    return report
