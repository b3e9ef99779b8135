"""Simulated agent fleet closing the control loop.

Each agent integrates the vehicle model under zero-order hold of the latest
command, publishes odometry, and runs its own safety logic: loss of commands
for longer than command_timeout, or an explicit safety directive, drops the
agent into a fallback that hovers briefly and then descends to the ground.

Take-off and landing are kinematic ramps (the onboard autopilot abstracted to
its effect); only Tracking agents fly the full model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .dynamics import (
    AgentState,
    ControlInput,
    ModelDivergenceError,
    ModelParams,
    hover_input,
    step_batch,
)
from .transport import Command, HighLevel, HighLevelCode, Odometry


class AgentMode(Enum):
    GROUNDED = "Grounded"
    TAKE_OFF = "TakeOff"
    TRACKING = "Tracking"
    FALLBACK = "Fallback"
    LANDED = "Landed"
    FAILED = "Failed"


class ClockMode(Enum):
    VIRTUAL = "virtual"
    REALTIME = "realtime"


@dataclass
class SimClock:
    """Simulation time in integer microseconds; monotone by construction."""

    now_us: int = 0
    physics_dt: float = 0.01
    mode: ClockMode = ClockMode.VIRTUAL

    @property
    def now(self) -> float:
        return self.now_us * 1e-6

    def advance_to(self, t_us: int) -> None:
        if t_us < self.now_us:
            raise ValueError("clock cannot move backward")
        self.now_us = t_us


@dataclass
class FleetConfig:
    command_timeout: float = 0.5
    fallback_hover: float = 1.0
    descent_rate: float = 0.5
    odom_rate: float = 50.0
    takeoff_altitude: float = 2.0
    climb_rate: float = 1.0
    spawn_pitch: float = 2.0

    def __post_init__(self):
        if self.command_timeout <= 0 or self.odom_rate <= 0:
            raise ValueError("command_timeout and odom_rate must be positive")
        if self.descent_rate <= 0 or self.climb_rate <= 0:
            raise ValueError("ramp rates must be positive")


def spawn_position(agent_id: int, pitch: float = 2.0) -> tuple[float, float, float]:
    """Ground grid slot, 2 m pitch along x, deterministic by id."""
    return (pitch * agent_id, -4.0, 0.0)


@dataclass
class AgentSim:
    id: int
    state: AgentState
    params: ModelParams
    applied_command: ControlInput
    last_command_stamp: float = 0.0
    mode: AgentMode = AgentMode.GROUNDED
    applied_seq: int = -1
    odom_seq: int = 0
    stale_commands: int = 0
    fallback_entered_at: float | None = None
    failure: str | None = None


class Fleet:
    """Owns the agents; advanced only by the simulation loop."""

    def __init__(self, params: ModelParams | None = None,
                 config: FleetConfig | None = None, log=None):
        self.params = params or ModelParams()
        self.config = config or FleetConfig()
        self.agents: dict[int, AgentSim] = {}
        self._log = log or (lambda msg: None)

    def ids(self) -> list[int]:
        return sorted(self.agents)

    def join(self, agent_ids, now: float) -> None:
        """Adds Grounded agents at their spawn slots; duplicate ids rejected."""
        incoming = list(agent_ids)
        for aid in incoming:
            if aid in self.agents:
                raise ValueError(f"agent {aid} already in fleet")
        if len(set(incoming)) != len(incoming):
            raise ValueError("duplicate agent ids in join")
        for aid in incoming:
            state = AgentState(
                position=np.array(spawn_position(aid, self.config.spawn_pitch)),
                velocity=np.zeros(3),
                orientation=np.zeros(3),
                timestamp=now,
            )
            self.agents[aid] = AgentSim(
                id=aid,
                state=state,
                params=self.params,
                applied_command=hover_input(self.params),
                last_command_stamp=now,
            )
            self._log(f"agent {aid} joined at {spawn_position(aid, self.config.spawn_pitch)}")

    def leave(self, agent_ids, now: float) -> None:
        for aid in agent_ids:
            if aid not in self.agents:
                raise ValueError(f"agent {aid} not in fleet")
        for aid in agent_ids:
            del self.agents[aid]
            self._log(f"agent {aid} left")

    def ingest_command(self, agent_id: int, message, now: float) -> bool:
        """Applies a wire command if newer than anything already applied."""
        agent = self.agents.get(agent_id)
        if agent is None or agent.mode is AgentMode.FAILED:
            return False
        if isinstance(message, Command):
            if message.seq <= agent.applied_seq:
                agent.stale_commands += 1
                return False
            agent.applied_seq = message.seq
            if agent.mode is not AgentMode.TRACKING:
                return False
            agent.applied_command = ControlInput(
                roll_ref=message.roll_ref,
                pitch_ref=message.pitch_ref,
                thrust=message.thrust,
            )
            agent.last_command_stamp = now
            return True
        if isinstance(message, HighLevel):
            if message.code is HighLevelCode.TAKE_OFF:
                if agent.mode in (AgentMode.GROUNDED, AgentMode.LANDED):
                    agent.mode = AgentMode.TAKE_OFF
                    self._log(f"agent {agent_id} taking off")
                return True
            if message.code is HighLevelCode.SAFETY_LAND:
                self.direct_fallback(agent_id, now, reason="safety directive")
                return True
        return False

    def direct_fallback(self, agent_id: int, now: float, reason: str = "directive") -> None:
        agent = self.agents.get(agent_id)
        if agent is None:
            return
        if agent.mode in (AgentMode.TRACKING, AgentMode.TAKE_OFF):
            agent.mode = AgentMode.FALLBACK
            agent.fallback_entered_at = now
            agent.state.velocity[:] = 0.0
            self._log(f"agent {agent_id} fallback ({reason})")

    def emit_odometry(self, agent_id: int, now: float) -> Odometry:
        agent = self.agents[agent_id]
        msg = Odometry(
            agent_id=agent_id,
            seq=agent.odom_seq,
            stamp_us=round(now * 1e6),
            position=tuple(agent.state.position),
            velocity=tuple(agent.state.velocity),
            orientation=tuple(agent.state.orientation),
        )
        agent.odom_seq += 1
        return msg

    def sim_step(self, dt: float, now: float) -> None:
        """Advances every agent one physics step ending at time now + dt."""
        cfg = self.config
        end = now + dt

        for agent in self.agents.values():
            if agent.mode is AgentMode.TRACKING:
                if now - agent.last_command_stamp > cfg.command_timeout:
                    self.direct_fallback(agent.id, now, reason="command timeout")

        tracking = [a for a in self.agents.values() if a.mode is AgentMode.TRACKING]
        if tracking:
            states = np.stack([a.state.as_vector() for a in tracking])
            inputs = np.stack([a.applied_command.as_array() for a in tracking])
            after = step_batch(states, inputs, self.params, dt)
            for agent, row in zip(tracking, after):
                if not np.all(np.isfinite(row)):
                    agent.mode = AgentMode.FAILED
                    agent.failure = "model divergence"
                    self._log(f"agent {agent.id} failed: model divergence")
                    continue
                agent.state = AgentState.from_vector(row, timestamp=end)

        for agent in self.agents.values():
            state = agent.state
            if agent.mode is AgentMode.TAKE_OFF:
                z = state.position[2] + cfg.climb_rate * dt
                if z >= cfg.takeoff_altitude:
                    state.position[2] = cfg.takeoff_altitude
                    state.velocity[:] = 0.0
                    agent.mode = AgentMode.TRACKING
                    agent.applied_command = hover_input(self.params)
                    agent.last_command_stamp = end
                    self._log(f"agent {agent.id} tracking")
                else:
                    state.position[2] = z
                    state.velocity[:] = (0.0, 0.0, cfg.climb_rate)
            elif agent.mode is AgentMode.FALLBACK:
                held = end - (agent.fallback_entered_at or end)
                if held > cfg.fallback_hover:
                    z = state.position[2] - cfg.descent_rate * dt
                    if z <= 0.0:
                        state.position[2] = 0.0
                        state.velocity[:] = 0.0
                        agent.mode = AgentMode.LANDED
                        self._log(f"agent {agent.id} landed")
                    else:
                        state.position[2] = z
                        state.velocity[:] = (0.0, 0.0, -cfg.descent_rate)
                else:
                    state.velocity[:] = 0.0
            elif agent.mode in (AgentMode.GROUNDED, AgentMode.LANDED):
                state.velocity[:] = 0.0
            state.timestamp = end
