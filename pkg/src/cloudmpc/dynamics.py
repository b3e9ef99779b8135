"""Multirotor agent model: point-mass translation plus first-order attitude lags.

State per agent is (position, velocity, orientation) with orientation stored as
(roll, pitch, yaw) ZYX Euler angles. The continuous-time model is

    p_dd   = (1/m) R(q) [0, 0, F]^T + G - A p_d
    roll_d  = (k_phi  * roll_ref  - roll)  / alpha_phi
    pitch_d = (k_theta * pitch_ref - pitch) / alpha_theta
    yaw_d   = 0

with G = [0, 0, -9.81] and A a diagonal drag matrix. Commands are
(roll_ref, pitch_ref, thrust) applied with zero-order hold; `step` integrates
one interval with classical RK4. `estimate_present` is the delay-compensating
predictor used by the cloud controller: position extrapolated along the current
velocity, velocity advanced with an implicit (per-axis exact) drag solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import _kernels

GRAVITY_Z = -9.81


class ModelDivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, agent_id=None, detail=""):
        self.agent_id = agent_id
        label = f"agent {agent_id}" if agent_id is not None else "agent"
        super().__init__(f"model divergence for {label}: {detail}")


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of one agent.

    drag holds the diagonal of the drag matrix A (1/s). gravity is fixed at
    [0, 0, -9.81]; it is a field only so configurations display it.
    """

    mass: float = 1.0
    drag: tuple[float, float, float] = (0.01, 0.01, 0.0)
    k_phi: float = 1.0
    k_theta: float = 1.0
    alpha_phi: float = 0.2
    alpha_theta: float = 0.2
    gravity: tuple[float, float, float] = (0.0, 0.0, GRAVITY_Z)

    def __post_init__(self):
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if self.alpha_phi <= 0.0 or self.alpha_theta <= 0.0:
            raise ValueError("attitude time constants must be positive")
        if any(d < 0.0 for d in self.drag):
            raise ValueError("drag entries must be non-negative")
        if tuple(self.gravity) != (0.0, 0.0, GRAVITY_Z):
            raise ValueError("gravity is fixed at (0, 0, -9.81)")

    def packed(self) -> np.ndarray:
        """Parameter vector consumed by the numeric kernels."""
        return np.array(
            [
                self.mass,
                self.drag[0],
                self.drag[1],
                self.drag[2],
                self.k_phi,
                self.k_theta,
                self.alpha_phi,
                self.alpha_theta,
                self.gravity[0],
                self.gravity[1],
                self.gravity[2],
            ]
        )


@dataclass(frozen=True)
class ControlInput:
    """One command: attitude references in radians, collective thrust in newtons."""

    roll_ref: float = 0.0
    pitch_ref: float = 0.0
    thrust: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.roll_ref, self.pitch_ref, self.thrust])


@dataclass
class AgentState:
    """Kinematic state of one agent at `timestamp` seconds of simulation time."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)

    def as_vector(self) -> np.ndarray:
        """[px, py, pz, vx, vy, vz, roll, pitch, yaw]."""
        return np.concatenate([self.position, self.velocity, self.orientation])

    @classmethod
    def from_vector(cls, vec, timestamp: float = 0.0) -> "AgentState":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[0:3].copy(), vec[3:6].copy(), vec[6:9].copy(), timestamp)

    def copy(self) -> "AgentState":
        return AgentState(
            self.position.copy(),
            self.velocity.copy(),
            self.orientation.copy(),
            self.timestamp,
        )


@dataclass(frozen=True)
class DelaySpec:
    """Configured transport delays in seconds."""

    uplink: float = 0.0
    downlink: float = 0.0

    def __post_init__(self):
        if self.uplink < 0.0 or self.downlink < 0.0:
            raise ValueError("delays must be non-negative")

    @property
    def total(self) -> float:
        return self.uplink + self.downlink


def hover_input(params: ModelParams) -> ControlInput:
    """Gravity-compensating input: level attitude, thrust = m * 9.81."""
    return ControlInput(0.0, 0.0, params.mass * -GRAVITY_Z)


def thrust_direction(orientation) -> np.ndarray:
    """World-frame unit vector along body thrust for ZYX Euler angles."""
    phi, theta, psi = orientation
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    return np.array(
        [
            cpsi * sth * cphi + spsi * sphi,
            spsi * sth * cphi - cpsi * sphi,
            cth * cphi,
        ]
    )


def step(
    state: AgentState,
    applied_input: ControlInput,
    params: ModelParams,
    dt: float,
    agent_id=None,
) -> AgentState:
    """Advance one agent by dt with the currently held command (RK4).

    Raises ModelDivergenceError if the result is non-finite; agent_id only
    labels that error.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    s = state.as_vector().reshape(1, 9)
    u = applied_input.as_array().reshape(1, 3)
    out = np.empty((1, 9))
    _kernels.rk4_step_batch(s, u, params.packed(), float(dt), out)
    if not np.all(np.isfinite(out)):
        raise ModelDivergenceError(agent_id, f"state={out[0]!r} at t={state.timestamp}")
    return AgentState.from_vector(out[0], state.timestamp + dt)


def step_batch(states: np.ndarray, inputs: np.ndarray, params: ModelParams, dt: float) -> np.ndarray:
    """Vectorized `step` on raw state vectors (na, 9) and inputs (na, 3)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = np.empty_like(states)
    _kernels.rk4_step_batch(states, inputs, params.packed(), float(dt), out)
    return out


def estimate_present(
    delayed_state: AgentState,
    delayed_input: ControlInput,
    params: ModelParams,
    tau: float,
) -> AgentState:
    """Predict the state tau seconds past a delayed snapshot.

    Position moves along the snapshot velocity. Velocity uses the implicit
    drag relation v_new = v + ((1/m) u + G - A v_new) * tau solved exactly per
    axis, where u is the delayed input's thrust rotated into the world frame
    through the snapshot orientation. Roll and pitch follow the exact
    first-order lag response toward the delayed input's set points; feeding
    the controller the stale attitude instead makes it fight its own half
    tau-old commands and chatter. Yaw is not actuated and passes through.
    """
    if tau < 0.0:
        raise ValueError("tau must be non-negative")
    if tau == 0.0:
        return delayed_state
    force = delayed_input.thrust * thrust_direction(delayed_state.orientation)
    gravity = np.asarray(params.gravity)
    drag = np.asarray(params.drag)
    velocity = (delayed_state.velocity + (force / params.mass + gravity) * tau) / (
        1.0 + drag * tau
    )
    position = delayed_state.position + delayed_state.velocity * tau
    roll_goal = params.k_phi * delayed_input.roll_ref
    pitch_goal = params.k_theta * delayed_input.pitch_ref
    orientation = np.array([
        roll_goal + (delayed_state.orientation[0] - roll_goal)
        * math.exp(-tau / params.alpha_phi),
        pitch_goal + (delayed_state.orientation[1] - pitch_goal)
        * math.exp(-tau / params.alpha_theta),
        delayed_state.orientation[2],
    ])
    return AgentState(
        position,
        velocity,
        orientation,
        delayed_state.timestamp + tau,
    )
