"""Mission planner and the 1 Hz scheduler.

The scheduler turns a desired agent count plus controller parameters into
deployment and service actions: how many controller instances to run, which
agents each one owns, and the resource envelope each deployment requests. The
mission planner side owns reference generation, including the takeoff and
safety-land overrides.

Group sizing follows the ceiling rule with a balanced split (group sizes differ
by at most one, agents assigned contiguously in id order so growth and
shrinkage re-home as few agents as possible). Resource envelopes are affine in
the normalized agent count:

    cpu = a * (x - 1) / (1 - load_factor) + cpu_base
    mem = b * (x - 1) / (1 - load_factor) + mem_base

rounded up to 0.1 core and 1 MiB.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class MissionCommand(Enum):
    TAKEOFF = "TakeOff"
    TRACK = "Track"
    SAFETY_LAND = "SafetyLand"


@dataclass(frozen=True)
class CnmpcArgs:
    """Controller parameters the scheduler sizes deployments for."""

    horizon_steps: int = 20
    sampling_time: float = 0.05
    control_rate: float = 20.0
    load_factor: float = 0.5

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be at least 1")
        if not 0.0 <= self.load_factor < 1.0:
            raise ValueError("load_factor must be in [0, 1)")


@dataclass(frozen=True)
class ResourceModel:
    a: float = 0.5
    b: float = 64.0
    cpu_base_min: float = 1.0
    cpu_base_max: float = 2.0
    mem_base_min: float = 256.0
    mem_base_max: float = 512.0

    def __post_init__(self):
        if self.a <= 0.0 or self.b <= 0.0:
            raise ValueError("slopes must be positive")
        if self.cpu_base_min > self.cpu_base_max or self.mem_base_min > self.mem_base_max:
            raise ValueError("base minima must not exceed maxima")


@dataclass(frozen=True)
class ResourceEnvelope:
    cpu_min: float
    cpu_max: float
    mem_min: float
    mem_max: float


@dataclass(frozen=True)
class DeploymentSpec:
    name: str
    assigned_agents: tuple[int, ...]
    cnmpc_args: CnmpcArgs
    cpu_request: float
    cpu_limit: float
    mem_request: float
    mem_limit: float
    replicas: int = 1
    node_selector: str | None = None

    def __post_init__(self):
        if not self.assigned_agents:
            raise ValueError("assigned_agents must be non-empty")
        if self.cpu_request > self.cpu_limit or self.mem_request > self.mem_limit:
            raise ValueError("requests must not exceed limits")
        if self.replicas < 1:
            raise ValueError("replicas must be positive")


@dataclass
class SchedulerState:
    """Reconcile-loop bookkeeping; previous_args backs the no-op guard."""

    previous_agents: int = 0
    previous_cnmpcs: int = 0
    agent_max: int = 8
    tick_period: float = 1.0
    previous_args: CnmpcArgs | None = None

    def __post_init__(self):
        if self.agent_max < 1:
            raise ValueError("agent_max must be at least 1")


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class CreateDeployment:
    spec: DeploymentSpec

    def describe(self) -> str:
        return _describe_deployment("CreateDeployment", self.spec)


@dataclass(frozen=True)
class UpdateDeployment:
    spec: DeploymentSpec

    def describe(self) -> str:
        return _describe_deployment("UpdateDeployment", self.spec)


@dataclass(frozen=True)
class DeleteDeployment:
    name: str

    def describe(self) -> str:
        return f"DeleteDeployment name={self.name}"


@dataclass(frozen=True)
class CreateService:
    name: str

    def describe(self) -> str:
        return f"CreateService name={self.name}"


@dataclass(frozen=True)
class DeleteService:
    name: str

    def describe(self) -> str:
        return f"DeleteService name={self.name}"


Action = CreateDeployment | UpdateDeployment | DeleteDeployment | CreateService | DeleteService


def _describe_deployment(kind: str, spec: DeploymentSpec) -> str:
    agents = ",".join(str(a) for a in spec.assigned_agents)
    cpu_limit = "none" if math.isinf(spec.cpu_limit) else f"{spec.cpu_limit:.1f}"
    mem_limit = "none" if math.isinf(spec.mem_limit) else f"{spec.mem_limit:.0f}"
    return (
        f"{kind} name={spec.name} agents=[{agents}] "
        f"cpu={spec.cpu_request:.1f}/{cpu_limit} mem={spec.mem_request:.0f}/{mem_limit} "
        f"replicas={spec.replicas}"
    )


@dataclass(frozen=True)
class ClusterView:
    """What reconcile reads back from the orchestration substrate."""

    deployments: dict[str, DeploymentSpec]
    services: frozenset[str]


# ---------------------------------------------------------------------------
# sizing


def required_cnmpcs(n: int, agent_max: int) -> int:
    """Number of controller deployments for n agents; 0 when the fleet is empty."""
    if n < 0 or agent_max < 1:
        raise ValueError("need n >= 0 and agent_max >= 1")
    if n == 0:
        return 0
    return -(-n // agent_max)


def partition_agents(n: int, cnmpc_count: int) -> list[int]:
    """Balanced group sizes: first n mod count groups get the extra agent."""
    if n == 0 and cnmpc_count == 0:
        return []
    if cnmpc_count <= 0:
        raise ValueError("cnmpc_count must be positive when agents exist")
    base, extra = divmod(n, cnmpc_count)
    return [base + 1 if k < extra else base for k in range(cnmpc_count)]


def literal_distribution(n: int, cnmpc_count: int) -> list[int]:
    """Reference transcription of the published distribution loop.

    Kept for study only: it under-allocates for some inputs (15 agents over 2
    groups yields [7, 7], dropping an agent), which is why the scheduler uses
    partition_agents instead.
    """
    if cnmpc_count <= 0:
        raise ValueError("cnmpc_count must be positive")
    agent = (n - 1) // cnmpc_count
    agent_float = (n - 1) / cnmpc_count
    counter = 0
    sizes = []
    for _ in range(cnmpc_count):
        if agent == agent_float:
            agent = (n - 1) // cnmpc_count
            sizes.append(agent)
        else:
            counter += 1
            agent = (n - 1) // cnmpc_count + 1
            agent_float = (n - counter) / cnmpc_count
            sizes.append(agent)
            agent -= 1
    return sizes


def resource_formula(x: int, load_factor: float, model: ResourceModel):
    """Raw affine envelope values before rounding."""
    if x < 1:
        raise ValueError("x must be at least 1")
    if not 0.0 <= load_factor < 1.0:
        raise ValueError("load_factor must be in [0, 1)")
    scale = (x - 1) / (1.0 - load_factor)
    return (
        model.a * scale + model.cpu_base_min,
        model.a * scale + model.cpu_base_max,
        model.b * scale + model.mem_base_min,
        model.b * scale + model.mem_base_max,
    )


def _ceil_grain(value: float, grain: float) -> float:
    return math.ceil(value / grain - 1e-9) * grain


def compute_resources(x: int, args: CnmpcArgs, model: ResourceModel) -> ResourceEnvelope:
    """Envelope for a deployment owning x agents, rounded up to 0.1 core / 1 MiB."""
    cpu_min, cpu_max, mem_min, mem_max = resource_formula(x, args.load_factor, model)
    return ResourceEnvelope(
        cpu_min=round(_ceil_grain(cpu_min, 0.1), 6),
        cpu_max=round(_ceil_grain(cpu_max, 0.1), 6),
        mem_min=_ceil_grain(mem_min, 1.0),
        mem_max=_ceil_grain(mem_max, 1.0),
    )


def required_services(n: int) -> int:
    """One uplink and one downlink service per agent plus the shared one."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return 2 * n + 1


SHARED_SERVICE = "svc-shared"


def service_names(agent_ids) -> list[str]:
    names = [SHARED_SERVICE]
    for aid in sorted(agent_ids):
        names.append(f"svc-agent-{aid}-up")
        names.append(f"svc-agent-{aid}-down")
    return names


def deployment_name(index: int) -> str:
    return f"cnmpc-{index}"


# ---------------------------------------------------------------------------
# references


@dataclass(frozen=True)
class WaypointReference:
    """Piecewise-linear position reference through (t, x, y, z) knots."""

    points: tuple[tuple[float, float, float, float], ...]

    def sample(self, t: float) -> np.ndarray:
        ref = np.zeros(9)
        pts = self.points
        if t <= pts[0][0]:
            ref[0:3] = pts[0][1:4]
            return ref
        for (t0, *p0), (t1, *p1) in zip(pts, pts[1:]):
            if t <= t1:
                frac = (t - t0) / (t1 - t0) if t1 > t0 else 1.0
                p0 = np.array(p0)
                p1 = np.array(p1)
                ref[0:3] = p0 + frac * (p1 - p0)
                ref[3:6] = (p1 - p0) / (t1 - t0) if t1 > t0 else 0.0
                return ref
        ref[0:3] = pts[-1][1:4]
        return ref


@dataclass(frozen=True)
class FormationCircle:
    """Circles around per-(deployment, slot) formation centers.

    Center of deployment d, slot s is origin + (spacing*s, -row_gap*d). A
    re-homed agent changes slot and therefore jumps set points; agents that
    keep their slot keep their reference.
    """

    radius: float = 0.75
    period: float = 15.0
    altitude: float = 2.0
    spacing: float = 3.0
    row_gap: float = 8.0
    origin: tuple[float, float] = (0.0, 0.0)

    def sample(self, t: float, dep: int, slot: int) -> np.ndarray:
        omega = 2.0 * math.pi / self.period
        ref = np.zeros(9)
        cx = self.origin[0] + self.spacing * slot
        cy = self.origin[1] - self.row_gap * dep
        ref[0] = cx + self.radius * math.cos(omega * t)
        ref[1] = cy + self.radius * math.sin(omega * t)
        ref[2] = self.altitude
        ref[3] = -self.radius * omega * math.sin(omega * t)
        ref[4] = self.radius * omega * math.cos(omega * t)
        return ref


@dataclass
class ReferencePlan:
    """Per-agent waypoint references with a formation fallback."""

    formation: FormationCircle = field(default_factory=FormationCircle)
    waypoints: dict[int, WaypointReference] = field(default_factory=dict)

    def sample(self, agent_id: int, t: float, dep: int, slot: int) -> np.ndarray:
        wp = self.waypoints.get(agent_id)
        if wp is not None:
            return wp.sample(t)
        return self.formation.sample(t, dep, slot)


@dataclass
class MissionState:
    """Desired fleet plus the reference generators and controller args."""

    desired_agents: int = 0
    command: MissionCommand = MissionCommand.TRACK
    references: ReferencePlan = field(default_factory=ReferencePlan)
    cnmpc_args: CnmpcArgs = field(default_factory=CnmpcArgs)
    agent_ids: tuple[int, ...] = ()
    agent_max: int = 8
    command_time: float = 0.0
    command_altitude: dict[int, float] = field(default_factory=dict)
    takeoff_altitude: float = 2.0
    climb_rate: float = 1.0
    descent_rate: float = 0.5

    def set_command(self, command: MissionCommand, now: float, altitudes=None):
        self.command = command
        self.command_time = now
        self.command_altitude = dict(altitudes or {})

    def set_agents(self, agent_ids) -> None:
        self.agent_ids = tuple(sorted(agent_ids))
        self.desired_agents = len(self.agent_ids)

    def assignment(self) -> dict[int, tuple[int, int]]:
        """agent id -> (deployment index, slot) under the current partition."""
        ids = sorted(self.agent_ids)
        count = required_cnmpcs(len(ids), self.agent_max)
        sizes = partition_agents(len(ids), count) if ids else []
        out = {}
        offset = 0
        for dep, size in enumerate(sizes):
            for slot, aid in enumerate(ids[offset:offset + size]):
                out[aid] = (dep, slot)
            offset += size
        return out


def reference_window(
    mission: MissionState,
    agent_id: int,
    now: float,
    horizon_steps: int,
    sampling_time: float,
) -> np.ndarray:
    """Reference states (horizon_steps+1, 9) sampled at now + j*T.

    TakeOff replaces the z channel with a climb ramp toward the takeoff
    altitude; SafetyLand with a descent ramp from the altitude recorded when
    the command was issued.
    """
    assignment = mission.assignment()
    if agent_id not in assignment:
        raise ValueError(f"unknown agent {agent_id}")
    dep, slot = assignment[agent_id]
    out = np.empty((horizon_steps + 1, 9))
    for j in range(horizon_steps + 1):
        t = now + j * sampling_time
        ref = mission.references.sample(agent_id, t, dep, slot)
        if mission.command is MissionCommand.TAKEOFF:
            since = max(0.0, t - mission.command_time)
            z = min(mission.takeoff_altitude, mission.climb_rate * since)
            ref[2] = z
            ref[5] = mission.climb_rate if z < mission.takeoff_altitude else 0.0
        elif mission.command is MissionCommand.SAFETY_LAND:
            z0 = mission.command_altitude.get(agent_id, mission.takeoff_altitude)
            since = max(0.0, t - mission.command_time)
            z = max(0.0, z0 - mission.descent_rate * since)
            ref[2] = z
            ref[5] = -mission.descent_rate if z > 0.0 else 0.0
        out[j] = ref
    return out


# ---------------------------------------------------------------------------
# reconcile


def target_deployments(
    mission: MissionState,
    agent_max: int,
    resource_model: ResourceModel,
) -> dict[str, DeploymentSpec]:
    """Desired deployment set for the mission's current agent list."""
    ids = sorted(mission.agent_ids)
    n = len(ids)
    count = required_cnmpcs(n, agent_max)
    sizes = partition_agents(n, count) if n else []
    target: dict[str, DeploymentSpec] = {}
    offset = 0
    for k, size in enumerate(sizes):
        env = compute_resources(size, mission.cnmpc_args, resource_model)
        target[deployment_name(k)] = DeploymentSpec(
            name=deployment_name(k),
            assigned_agents=tuple(ids[offset:offset + size]),
            cnmpc_args=mission.cnmpc_args,
            cpu_request=env.cpu_min,
            cpu_limit=env.cpu_max,
            mem_request=env.mem_min,
            mem_limit=env.mem_max,
        )
        offset += size
    return target


def reconcile(
    mission: MissionState,
    state: SchedulerState,
    live: ClusterView,
    resource_model: ResourceModel | None = None,
) -> list[Action]:
    """Actions closing the gap between mission and live cluster state.

    No-op when neither the desired agent count nor the controller args changed
    since the previous tick. Ordering: deployment deletes, service deletes,
    deployment updates, deployment creates, service creates.
    """
    model = resource_model or ResourceModel()
    n = mission.desired_agents
    if len(mission.agent_ids) != n:
        raise ValueError("mission agent_ids inconsistent with desired_agents")
    unchanged = (
        state.previous_args is not None
        and n == state.previous_agents
        and mission.cnmpc_args == state.previous_args
    )
    if unchanged:
        return []

    target = target_deployments(mission, state.agent_max, model)
    wanted_services = set(service_names(mission.agent_ids))
    actions: list[Action] = []

    live_cnmpc = sorted(
        name for name in live.deployments if name.startswith("cnmpc-")
    )
    for name in sorted(live_cnmpc, reverse=True):
        if name not in target:
            actions.append(DeleteDeployment(name))
    for name in sorted(live.services - wanted_services):
        actions.append(DeleteService(name))
    for name in sorted(target):
        if name in live.deployments:
            if live.deployments[name] != target[name]:
                actions.append(UpdateDeployment(target[name]))
    for name in sorted(target):
        if name not in live.deployments:
            actions.append(CreateDeployment(target[name]))
    for name in service_names(mission.agent_ids):
        if name not in live.services:
            actions.append(CreateService(name))

    state.previous_agents = n
    state.previous_cnmpcs = len(target)
    state.previous_args = mission.cnmpc_args
    return actions


def baseline_reconcile(
    mission: MissionState,
    state: SchedulerState,
    live: ClusterView,
    node_selector: str | None = None,
) -> list[Action]:
    """No-scheduling mode: one unbounded controller pod owning every agent."""
    n = mission.desired_agents
    unchanged = (
        state.previous_args is not None
        and n == state.previous_agents
        and mission.cnmpc_args == state.previous_args
    )
    if unchanged:
        return []
    actions: list[Action] = []
    wanted_services = set(service_names(mission.agent_ids))
    name = deployment_name(0)
    if n == 0:
        if name in live.deployments:
            actions.append(DeleteDeployment(name))
        for svc in sorted(live.services - wanted_services):
            actions.append(DeleteService(svc))
    else:
        spec = DeploymentSpec(
            name=name,
            assigned_agents=tuple(sorted(mission.agent_ids)),
            cnmpc_args=mission.cnmpc_args,
            cpu_request=0.1,
            cpu_limit=math.inf,
            mem_request=64.0,
            mem_limit=math.inf,
            node_selector=node_selector,
        )
        for svc in sorted(live.services - wanted_services):
            actions.append(DeleteService(svc))
        if name in live.deployments:
            if live.deployments[name] != spec:
                actions.append(UpdateDeployment(spec))
        else:
            actions.append(CreateDeployment(spec))
    for svc in service_names(mission.agent_ids):
        if svc not in live.services:
            actions.append(CreateService(svc))
    state.previous_agents = n
    state.previous_cnmpcs = 1 if n else 0
    state.previous_args = mission.cnmpc_args
    return actions
