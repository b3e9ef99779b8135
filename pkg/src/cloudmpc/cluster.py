"""Simulated orchestration substrate.

Nodes, deployments, pods, and services, plus the placement, healing, and
resource-accounting rules the scheduler's actions flow through. Also owns the
load model mapping node CPU utilization to controller processing time, which
is what couples cluster congestion back into the control loop.

Placement is best-fit: among feasible nodes pick the one with the least CPU
remaining after placement, breaking ties by most remaining memory, then by
name. Controller pods avoid the node hosting infrastructure pods (scheduler,
planner, tunnel) whenever another feasible node exists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .scheduling import (
    Action,
    CnmpcArgs,
    CreateDeployment,
    CreateService,
    DeleteDeployment,
    DeleteService,
    DeploymentSpec,
    ResourceModel,
    UpdateDeployment,
    compute_resources,
)


class PodPhase(Enum):
    PENDING = "Pending"
    RUNNING = "Running"
    FAILED = "Failed"
    TERMINATED = "Terminated"


class PodRole(Enum):
    CONTROLLER = "Controller"
    PLANNER = "Planner"
    SCHEDULER = "Scheduler"
    TUNNEL = "Tunnel"
    MASTER = "Master"


INFRA_ROLES = frozenset({PodRole.PLANNER, PodRole.SCHEDULER, PodRole.TUNNEL})
IDLE_FLOOR = 0.05


@dataclass(frozen=True)
class NodeSpec:
    name: str
    cpu_capacity: float
    mem_capacity: float
    schedulable: bool = True

    def __post_init__(self):
        if self.cpu_capacity <= 0 or self.mem_capacity <= 0:
            raise ValueError("node capacities must be positive")


@dataclass
class Pod:
    id: str
    deployment_name: str
    role: PodRole
    cpu_request: float
    cpu_limit: float
    mem_request: float
    mem_limit: float
    node_name: str | None = None
    phase: PodPhase = PodPhase.PENDING
    cpu_usage: float = 0.0
    node_selector: str | None = None

    def alive(self) -> bool:
        return self.phase in (PodPhase.PENDING, PodPhase.RUNNING)


@dataclass(frozen=True)
class LoadModel:
    """Node utilization to controller processing time, knee-and-saturation shape."""

    tau_p_base: float = 0.01
    knee: float = 0.5
    saturation_cap: float = 0.5

    def __post_init__(self):
        if self.tau_p_base <= 0:
            raise ValueError("tau_p_base must be positive")
        if not 0.0 <= self.knee < 1.0:
            raise ValueError("knee must be in [0, 1)")
        if self.saturation_cap < self.tau_p_base:
            raise ValueError("saturation_cap must be at least tau_p_base")


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    message: str


@dataclass
class DeploymentRecord:
    spec: DeploymentSpec
    pod_ids: list[str] = field(default_factory=list)

    def live_pods(self, state: "ClusterState") -> list[Pod]:
        return [state.pods[i] for i in self.pod_ids if state.pods[i].alive()]


@dataclass
class ClusterState:
    nodes: dict[str, NodeSpec] = field(default_factory=dict)
    pods: dict[str, Pod] = field(default_factory=dict)
    deployments: dict[str, DeploymentRecord] = field(default_factory=dict)
    services: set[str] = field(default_factory=set)
    events: list[EventRecord] = field(default_factory=list)
    now: float = 0.0
    _incarnations: dict[str, int] = field(default_factory=dict)

    def log(self, kind: str, message: str) -> None:
        self.events.append(EventRecord(self.now, kind, message))

    def node_free(self, node_name: str) -> tuple[float, float]:
        node = self.nodes[node_name]
        cpu = node.cpu_capacity
        mem = node.mem_capacity
        for pod in self.pods.values():
            if pod.node_name == node_name and pod.alive():
                cpu -= pod.cpu_request
                mem -= pod.mem_request
        return cpu, mem

    def infra_nodes(self) -> set[str]:
        return {
            p.node_name
            for p in self.pods.values()
            if p.role in INFRA_ROLES and p.alive() and p.node_name
        }

    def pods_of(self, deployment_name: str) -> list[Pod]:
        rec = self.deployments.get(deployment_name)
        if rec is None:
            return []
        return [self.pods[i] for i in rec.pod_ids]

    def new_pod_id(self, deployment_name: str) -> str:
        k = self._incarnations.get(deployment_name, 0)
        self._incarnations[deployment_name] = k + 1
        return f"{deployment_name}-{k}"

    def view(self):
        """Snapshot consumed by the scheduler's reconcile."""
        from .scheduling import ClusterView

        return ClusterView(
            deployments={n: r.spec for n, r in self.deployments.items()},
            services=frozenset(self.services),
        )


def default_cluster(include_infra: bool = True) -> ClusterState:
    """One master plus three workers; infrastructure pods pinned to worker-3."""
    state = ClusterState(
        nodes={
            "master": NodeSpec("master", 3.0, 2048.0, schedulable=False),
            "worker-1": NodeSpec("worker-1", 32.0, 471040.0),
            "worker-2": NodeSpec("worker-2", 16.0, 32768.0),
            "worker-3": NodeSpec("worker-3", 4.0, 8192.0),
        }
    )
    if include_infra:
        for name, role in (
            ("planner", PodRole.PLANNER),
            ("scheduler", PodRole.SCHEDULER),
            ("tunnel", PodRole.TUNNEL),
        ):
            pod = Pod(
                id=f"{name}-0",
                deployment_name=name,
                role=role,
                cpu_request=0.5,
                cpu_limit=1.0,
                mem_request=512.0,
                mem_limit=1024.0,
                node_name="worker-3",
                phase=PodPhase.RUNNING,
            )
            state.pods[pod.id] = pod
    return state


UNSCHEDULABLE = None


def place_pod(pod: Pod, state: ClusterState) -> str | None:
    """Best-fit node name, or None when no node can take the pod."""
    if pod.phase is not PodPhase.PENDING:
        raise ValueError("only Pending pods are placed")
    feasible = []
    for node in state.nodes.values():
        if not node.schedulable:
            continue
        if pod.node_selector is not None and node.name != pod.node_selector:
            continue
        free_cpu, free_mem = state.node_free(node.name)
        if free_cpu >= pod.cpu_request - 1e-9 and free_mem >= pod.mem_request - 1e-9:
            feasible.append((free_cpu - pod.cpu_request, free_mem - pod.mem_request, node.name))
    if not feasible:
        return UNSCHEDULABLE
    if pod.role is PodRole.CONTROLLER:
        infra = state.infra_nodes()
        away = [f for f in feasible if f[2] not in infra]
        if away:
            feasible = away
    feasible.sort(key=lambda f: (f[0], -f[1], f[2]))
    return feasible[0][2]


def _spawn_pod(state: ClusterState, spec: DeploymentSpec) -> Pod:
    pod = Pod(
        id=state.new_pod_id(spec.name),
        deployment_name=spec.name,
        role=PodRole.CONTROLLER,
        cpu_request=spec.cpu_request,
        cpu_limit=spec.cpu_limit,
        mem_request=spec.mem_request,
        mem_limit=spec.mem_limit,
        node_selector=spec.node_selector,
    )
    state.pods[pod.id] = pod
    state.deployments[spec.name].pod_ids.append(pod.id)
    return pod


def _refit_in_place(state: ClusterState, pod: Pod, spec: DeploymentSpec) -> bool:
    """True if the pod's node can absorb the new requests without a restart."""
    if pod.node_name is None:
        return False
    free_cpu, free_mem = state.node_free(pod.node_name)
    free_cpu += pod.cpu_request
    free_mem += pod.mem_request
    return free_cpu >= spec.cpu_request - 1e-9 and free_mem >= spec.mem_request - 1e-9


def apply(state: ClusterState, actions: list[Action]) -> ClusterState:
    """Executes scheduler actions in order; bad actions land in the event log."""
    for action in actions:
        if isinstance(action, CreateDeployment):
            spec = action.spec
            if spec.name in state.deployments:
                state.log("reject", f"create for existing deployment {spec.name}")
                continue
            state.deployments[spec.name] = DeploymentRecord(spec=spec)
            for _ in range(spec.replicas):
                _spawn_pod(state, spec)
            state.log("apply", action.describe())
        elif isinstance(action, UpdateDeployment):
            spec = action.spec
            rec = state.deployments.get(spec.name)
            if rec is None:
                state.log("reject", f"update for unknown deployment {spec.name}")
                continue
            rec.spec = spec
            for pod in list(rec.live_pods(state)):
                if _refit_in_place(state, pod, spec):
                    pod.cpu_request = spec.cpu_request
                    pod.cpu_limit = spec.cpu_limit
                    pod.mem_request = spec.mem_request
                    pod.mem_limit = spec.mem_limit
                else:
                    pod.phase = PodPhase.TERMINATED
                    _spawn_pod(state, spec)
                    state.log("restart", f"pod {pod.id} restarted for resize")
            state.log("apply", action.describe())
        elif isinstance(action, DeleteDeployment):
            rec = state.deployments.pop(action.name, None)
            if rec is None:
                state.log("reject", f"delete for unknown deployment {action.name}")
                continue
            for pid in rec.pod_ids:
                if state.pods[pid].alive():
                    state.pods[pid].phase = PodPhase.TERMINATED
            state.log("apply", action.describe())
        elif isinstance(action, CreateService):
            if action.name in state.services:
                state.log("reject", f"create for existing service {action.name}")
                continue
            state.services.add(action.name)
            state.log("apply", action.describe())
        elif isinstance(action, DeleteService):
            if action.name not in state.services:
                state.log("reject", f"delete for unknown service {action.name}")
                continue
            state.services.discard(action.name)
            state.log("apply", action.describe())
        else:
            state.log("reject", f"unknown action {action!r}")
    return state


def heal(state: ClusterState) -> ClusterState:
    """Tops up every deployment to its replica count with Pending pods."""
    for rec in state.deployments.values():
        alive = len(rec.live_pods(state))
        for _ in range(rec.spec.replicas - alive):
            pod = _spawn_pod(state, rec.spec)
            state.log("heal", f"replacement pod {pod.id} for {rec.spec.name}")
    return state


def schedule_pending(state: ClusterState) -> ClusterState:
    """Places unassigned Pending pods; infeasible ones stay Pending for retry."""
    pending = sorted(
        (p for p in state.pods.values() if p.phase is PodPhase.PENDING and p.node_name is None),
        key=lambda p: p.id,
    )
    for pod in pending:
        node = place_pod(pod, state)
        if node is UNSCHEDULABLE:
            state.log("unschedulable", f"no feasible node for pod {pod.id}")
            continue
        pod.node_name = node
        pod.phase = PodPhase.RUNNING
        state.log("place", f"pod {pod.id} on {node}")
    return state


def fail_pod(state: ClusterState, pod_id: str) -> None:
    pod = state.pods.get(pod_id)
    if pod is None or not pod.alive():
        state.log("reject", f"fail for unknown or dead pod {pod_id}")
        return
    pod.phase = PodPhase.FAILED
    pod.cpu_usage = 0.0
    state.log("fail", f"pod {pod_id} failed")


def cordon_node(state: ClusterState, node_name: str) -> None:
    """Marks the node unschedulable and fails every pod it hosts."""
    node = state.nodes.get(node_name)
    if node is None:
        state.log("reject", f"cordon for unknown node {node_name}")
        return
    state.nodes[node_name] = NodeSpec(
        node.name, node.cpu_capacity, node.mem_capacity, schedulable=False
    )
    for pod in state.pods.values():
        if pod.node_name == node_name and pod.alive():
            pod.phase = PodPhase.FAILED
            pod.cpu_usage = 0.0
            state.log("fail", f"pod {pod.id} lost to cordoned node {node_name}")


def processing_time(u: float, model: LoadModel) -> float:
    """Controller processing time at node utilization u.

    Flat at tau_p_base up to the knee, then hyperbolic growth clipped at the
    saturation cap; continuous and non-decreasing on [0, 1].
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError("utilization must be within [0, 1]")
    if u <= model.knee:
        return model.tau_p_base
    margin = 1.0 - (u - model.knee) / (1.0 - model.knee)
    if margin <= model.tau_p_base / model.saturation_cap:
        return model.saturation_cap
    return model.tau_p_base / margin


def controller_duty(
    node_utilization: float,
    agent_count: int,
    args: CnmpcArgs,
    load: LoadModel,
    activity: float = 1.0,
) -> float:
    """Fraction of a control period the solver occupies, per owned core.

    Per-solve time grows with the agent count (joint problem) and with node
    congestion through the load model; duty saturates at 1.
    """
    if agent_count < 1:
        return 0.0
    per_solve = processing_time(node_utilization, load) * (1.0 + 0.25 * (agent_count - 1))
    return min(1.0, args.control_rate * per_solve) * min(1.0, max(0.0, activity))


def account(
    state: ClusterState,
    duty_by_deployment: dict[str, float],
    resource_model: ResourceModel | None = None,
) -> ClusterState:
    """Writes instantaneous CPU usage into every Running pod.

    Controller demand is the deployment's cpu_min envelope scaled by its duty
    cycle, floored at the idle draw and capped at the pod's limit (no cap in
    baseline mode where the limit is infinite).
    """
    model = resource_model or ResourceModel()
    for rec in state.deployments.values():
        duty = duty_by_deployment.get(rec.spec.name, 0.0)
        x = len(rec.spec.assigned_agents)
        env = compute_resources(x, rec.spec.cnmpc_args, model)
        demand = env.cpu_min * duty
        for pod in rec.live_pods(state):
            if pod.phase is PodPhase.RUNNING:
                pod.cpu_usage = min(pod.cpu_limit, max(IDLE_FLOOR, demand))
    for pod in state.pods.values():
        if pod.role in INFRA_ROLES and pod.phase is PodPhase.RUNNING:
            pod.cpu_usage = min(pod.cpu_limit, IDLE_FLOOR)
    return state


def node_utilization(state: ClusterState) -> dict[str, float]:
    """Per-node CPU utilization in [0, 1]; demand beyond capacity saturates."""
    out = {}
    for name, node in state.nodes.items():
        used = math.fsum(
            p.cpu_usage
            for p in state.pods.values()
            if p.node_name == name and p.phase is PodPhase.RUNNING
        )
        out[name] = min(1.0, used / node.cpu_capacity)
    return out


def request_conservation_ok(state: ClusterState) -> bool:
    """True when no node is oversubscribed on requests by live pods."""
    for name, node in state.nodes.items():
        cpu = math.fsum(
            p.cpu_request for p in state.pods.values() if p.node_name == name and p.alive()
        )
        mem = math.fsum(
            p.mem_request for p in state.pods.values() if p.node_name == name and p.alive()
        )
        if cpu > node.cpu_capacity + 1e-9 or mem > node.mem_capacity + 1e-9:
            return False
    return True
