"""Centralized NMPC over the shared agent model.

One solve covers every agent assigned to a controller: the objective sums, per
agent and horizon step, a quadratic tracking term, a consecutive-input
smoothness term (first step measured against the previously applied input) and
a hover-proximity term that penalizes distance from the gravity-compensating
input. Pairwise planar separation is enforced as hinge residuals

    max(0, r_safe^2 - dx^2 - dy^2)

turned into an escalating quadratic penalty.

The solver is single shooting: the decision vector is the stacked input
sequences, states are eliminated through the rollout, input boxes are handled
by projection. Each inner iteration computes a projected-gradient point with a
backtracking step-size search (guaranteeing monotone merit descent), then
tries an L-BFGS-accelerated candidate which is kept only if it beats the
projected-gradient point. Gradients are exact adjoints through the RK4 rollout.

Parameters
----------
Default weights and bounds live in CnmpcProblem; solver knobs in SolverConfig.
All are plain configuration, nothing is baked into the algorithms.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import AgentState, ControlInput, ModelParams, hover_input


@dataclass(frozen=True)
class CnmpcProblem:
    """Dimensions, weights, bounds and model for one controller instance."""

    horizon_steps: int = 20
    sampling_time: float = 0.05
    agent_count: int = 1
    state_weights: tuple = (5.0, 5.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0)
    input_smoothness_weights: tuple = (2.0, 2.0, 2.0)
    input_hover_weights: tuple = (1.0, 1.0, 1.0)
    input_lower: ControlInput = ControlInput(-0.35, -0.35, 0.0)
    input_upper: ControlInput | None = None
    safe_radius: float = 0.5
    model: ModelParams = ModelParams()

    def __post_init__(self):
        if self.horizon_steps < 0:
            raise ValueError("horizon_steps must be non-negative")
        if self.sampling_time <= 0.0:
            raise ValueError("sampling_time must be positive")
        if self.agent_count < 1:
            raise ValueError("agent_count must be positive")
        if len(self.state_weights) != 9:
            raise ValueError("state_weights must have 9 entries")
        if any(w < 0.0 for w in self.state_weights):
            raise ValueError("state weights must be non-negative")
        if any(w < 0.0 for w in self.input_smoothness_weights + self.input_hover_weights):
            raise ValueError("input weights must be non-negative")
        if self.safe_radius <= 0.0:
            raise ValueError("safe_radius must be positive")
        if self.input_upper is None:
            object.__setattr__(
                self,
                "input_upper",
                ControlInput(0.35, 0.35, 2.0 * self.model.mass * 9.81),
            )
        lo, hi = self.input_lower.as_array(), self.input_upper.as_array()
        if np.any(lo > hi):
            raise ValueError("input_lower must not exceed input_upper")

    def hover_target(self) -> np.ndarray:
        return hover_input(self.model).as_array()


@dataclass(frozen=True)
class SolverConfig:
    max_inner_iterations: int = 60
    gradient_tolerance: float = 1e-4
    lbfgs_memory: int = 10
    penalty_initial: float = 10.0
    penalty_multiplier: float = 10.0
    penalty_max: float = 1e6
    constraint_tolerance: float = 1e-4

    def __post_init__(self):
        if self.penalty_multiplier <= 1.0:
            raise ValueError("penalty_multiplier must exceed 1")
        if self.gradient_tolerance <= 0.0 or self.constraint_tolerance <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class ControlSolution:
    """Solver output: input plan, predicted trajectory and solve metadata."""

    inputs: np.ndarray
    predicted_states: np.ndarray
    cost: float
    inner_iterations: int
    penalty_rounds: int
    solve_wall_time: float
    converged: bool
    max_constraint_violation: float
    merit_trace: list | None = None

    def first_inputs(self) -> list[ControlInput]:
        return [ControlInput(*row) for row in self.inputs[:, 0]]


@dataclass
class GradientData:
    """Fixed data for cost_gradient: everything except the decision vector."""

    problem: CnmpcProblem
    initial: np.ndarray
    refs: np.ndarray
    previous_input: np.ndarray
    penalty_weight: float = 0.0


def _states_matrix(initial, agent_count: int) -> np.ndarray:
    """Accept a list of AgentState or a raw (na, 9) array."""
    if isinstance(initial, np.ndarray):
        mat = np.array(initial, dtype=float)
    else:
        mat = np.stack([s.as_vector() for s in initial])
    if mat.shape != (agent_count, 9):
        raise ValueError(f"expected {agent_count} agent states, got shape {mat.shape}")
    return mat


def _inputs_matrix(previous_input, problem: CnmpcProblem) -> np.ndarray:
    na = problem.agent_count
    if previous_input is None:
        return np.tile(problem.hover_target(), (na, 1))
    if isinstance(previous_input, np.ndarray):
        mat = np.array(previous_input, dtype=float)
    elif isinstance(previous_input, ControlInput):
        mat = np.tile(previous_input.as_array(), (na, 1))
    else:
        mat = np.stack([u.as_array() for u in previous_input])
    if mat.shape != (na, 3):
        raise ValueError(f"expected {na} previous inputs, got shape {mat.shape}")
    return mat


def _refs_array(refs, problem: CnmpcProblem) -> np.ndarray:
    arr = np.asarray(refs, dtype=float)
    want = (problem.agent_count, problem.horizon_steps + 1, 9)
    if arr.shape != want:
        raise ValueError(f"reference window must have shape {want}, got {arr.shape}")
    return arr


def rollout(initial, inputs, problem: CnmpcProblem) -> np.ndarray:
    """Predicted trajectories (na, N+1, 9) for stacked inputs (na, N, 3)."""
    x0 = _states_matrix(initial, problem.agent_count)
    u = np.asarray(inputs, dtype=float)
    if u.ndim != 3 or u.shape[0] != problem.agent_count or u.shape[2] != 3:
        raise ValueError(f"inputs must have shape (agents, steps, 3), got {u.shape}")
    states = np.empty((u.shape[0], u.shape[1] + 1, 9))
    _kernels.rollout_batch(x0, u, problem.model.packed(), problem.sampling_time, states)
    return states


def cost(trajectories, inputs, previous_input, refs, problem: CnmpcProblem) -> float:
    """Tracking + input-smoothness + hover-proximity objective value."""
    states = np.asarray(trajectories, dtype=float)
    u = np.asarray(inputs, dtype=float)
    uprev = _inputs_matrix(previous_input, problem)
    refs = _refs_array(refs, problem)
    value, _, _ = _kernels.merit_terms(
        states,
        u,
        uprev,
        refs,
        np.asarray(problem.state_weights, dtype=float),
        np.asarray(problem.input_smoothness_weights, dtype=float),
        np.asarray(problem.input_hover_weights, dtype=float),
        problem.hover_target(),
        problem.safe_radius,
    )
    return float(value)


def collision_residual(state_l: AgentState, state_i: AgentState, safe_radius: float) -> float:
    """Planar separation residual [r^2 - dx^2 - dy^2]_+ between two agents."""
    dx = state_l.position[0] - state_i.position[0]
    dy = state_l.position[1] - state_i.position[1]
    return max(0.0, safe_radius * safe_radius - dx * dx - dy * dy)


class _Evaluator:
    """Merit and gradient of the penalized objective on the flat decision vector."""

    def __init__(self, problem: CnmpcProblem, x0, refs, uprev):
        self.problem = problem
        self.x0 = x0
        self.refs = refs
        self.uprev = uprev
        self.na = problem.agent_count
        self.n = problem.horizon_steps
        self.prm = problem.model.packed()
        self.h = problem.sampling_time
        self.qx = np.asarray(problem.state_weights, dtype=float)
        self.qdu = np.asarray(problem.input_smoothness_weights, dtype=float)
        self.qu = np.asarray(problem.input_hover_weights, dtype=float)
        self.uhover = problem.hover_target()
        self.rsafe = problem.safe_radius
        self.evals = 0

    def shaped(self, z: np.ndarray) -> np.ndarray:
        return z.reshape(self.na, self.n, 3)

    def states_for(self, z: np.ndarray) -> np.ndarray:
        u = self.shaped(z)
        states = np.empty((self.na, self.n + 1, 9))
        _kernels.rollout_batch(self.x0, u, self.prm, self.h, states)
        return states

    def merit(self, z: np.ndarray, mu: float):
        """Returns (merit value, cost, max residual)."""
        self.evals += 1
        states = self.states_for(z)
        u = self.shaped(z)
        value, pen, maxv = _kernels.merit_terms(
            states, u, self.uprev, self.refs, self.qx, self.qdu, self.qu,
            self.uhover, self.rsafe,
        )
        return float(value) + 0.5 * mu * float(pen), float(value), float(maxv)

    def grad(self, z: np.ndarray, mu: float) -> np.ndarray:
        u = self.shaped(z)
        states = np.empty((self.na, self.n + 1, 9))
        stages = np.empty((self.n, 4, self.na, 9))
        _kernels.rollout_stages_batch(self.x0, u, self.prm, self.h, states, stages)
        g = np.empty_like(u)
        _kernels.total_gradient(
            states, stages, u, self.uprev, self.refs, self.qx, self.qdu,
            self.qu, self.uhover, self.rsafe, mu, self.prm, self.h, g,
        )
        return g.reshape(-1)


def cost_gradient(decision: np.ndarray, data: GradientData) -> np.ndarray:
    """Exact adjoint gradient of cost + (mu/2) * sum of squared collision residuals."""
    ev = _Evaluator(
        data.problem,
        _states_matrix(data.initial, data.problem.agent_count),
        _refs_array(data.refs, data.problem),
        _inputs_matrix(data.previous_input, data.problem),
    )
    return ev.grad(np.asarray(decision, dtype=float), data.penalty_weight)


def penalized_cost(decision: np.ndarray, data: GradientData) -> float:
    """Merit value matching cost_gradient; handy for finite-difference checks."""
    ev = _Evaluator(
        data.problem,
        _states_matrix(data.initial, data.problem.agent_count),
        _refs_array(data.refs, data.problem),
        _inputs_matrix(data.previous_input, data.problem),
    )
    value, _, _ = ev.merit(np.asarray(decision, dtype=float), data.penalty_weight)
    return value


class _LbfgsMemory:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.s: list[np.ndarray] = []
        self.y: list[np.ndarray] = []
        self.rho: list[float] = []

    def push(self, s: np.ndarray, y: np.ndarray):
        sy = float(s @ y)
        if sy <= 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            return
        self.s.append(s)
        self.y.append(y)
        self.rho.append(1.0 / sy)
        if len(self.s) > self.capacity:
            self.s.pop(0)
            self.y.pop(0)
            self.rho.pop(0)

    def direction(self, g: np.ndarray) -> np.ndarray:
        """Two-loop recursion for -H*g; falls back to -g with unit scaling."""
        if not self.s:
            return -g
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(self.s), reversed(self.y), reversed(self.rho)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        y_last = self.y[-1]
        scale = float(self.s[-1] @ y_last) / float(y_last @ y_last)
        q *= scale
        for (s, y, rho), a in zip(zip(self.s, self.y, self.rho), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q


def _inner_descent(z, mu, ev: _Evaluator, lo, hi, cfg: SolverConfig, trace):
    """One penalty round: monotone descent to the projected-gradient tolerance."""
    z = np.clip(z, lo, hi)
    phi, _, _ = ev.merit(z, mu)
    g = ev.grad(z, mu)
    if trace is not None:
        trace.append(phi)
    gamma = 1.0 / max(1.0, float(np.abs(g).max()))
    mem = _LbfgsMemory(cfg.lbfgs_memory)
    iters = 0
    converged = False
    for _ in range(cfg.max_inner_iterations):
        iters += 1
        # projected-gradient point under a backtracked quadratic bound
        phi_pg = phi
        z_pg = z
        while True:
            cand = np.clip(z - gamma * g, lo, hi)
            d = cand - z
            dn2 = float(d @ d)
            if dn2 == 0.0:
                z_pg = z
                phi_pg = phi
                break
            phi_c, _, _ = ev.merit(cand, mu)
            if phi_c <= phi + float(g @ d) + dn2 / (2.0 * gamma) + 1e-12 * abs(phi) + 1e-15:
                z_pg = cand
                phi_pg = phi_c
                break
            gamma *= 0.5
            if gamma < 1e-14:
                z_pg = z
                phi_pg = phi
                break
        residual = (z - z_pg) / gamma
        rinf = float(np.abs(residual).max())
        if rinf <= cfg.gradient_tolerance:
            if phi_pg < phi:
                z, phi = z_pg, phi_pg
                if trace is not None:
                    trace.append(phi)
            converged = True
            break
        # L-BFGS candidate; accepted only if it beats the projected-gradient point
        z_new, phi_new = z_pg, phi_pg
        direction = mem.direction(g)
        tau = 1.0
        for _ls in range(6):
            cand = np.clip(z + tau * direction, lo, hi)
            if not np.array_equal(cand, z):
                phi_c, _, _ = ev.merit(cand, mu)
                if phi_c < phi_pg:
                    z_new, phi_new = cand, phi_c
                    break
            tau *= 0.5
        g_new = ev.grad(z_new, mu)
        mem.push(z_new - z, g_new - g)
        z, phi, g = z_new, phi_new, g_new
        if trace is not None:
            trace.append(phi)
        gamma = min(gamma * 1.3, 1e3)
    return z, phi, g, iters, converged


def solve(
    problem: CnmpcProblem,
    current,
    refs,
    previous_input=None,
    config: SolverConfig | None = None,
    warm_start=None,
    collect_trace: bool = False,
) -> ControlSolution:
    """Solve one control step; see module docstring for the formulation.

    warm_start may be a previous ControlSolution or an (na, N, 3) input array;
    it is shifted one step with the last input repeated. Without it the plan
    initializes at previous_input held constant.
    """
    if problem.horizon_steps < 1:
        raise ValueError("solve requires at least one horizon step")
    if not any(w > 0.0 for w in problem.state_weights):
        raise ValueError("solve requires at least one positive state weight")
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    na, n = problem.agent_count, problem.horizon_steps
    x0 = _states_matrix(current, na)
    if not np.all(np.isfinite(x0)):
        raise ValueError("current states must be finite")
    refs = _refs_array(refs, problem)
    uprev = _inputs_matrix(previous_input, problem)

    # deterministic infinitesimal bias removes the zero-gradient stall when
    # two agents sit at exactly the same (x, y)
    if na >= 2:
        xy = x0[:, 0:2]
        coincident = False
        for a in range(na):
            for b in range(a + 1, na):
                if xy[a, 0] == xy[b, 0] and xy[a, 1] == xy[b, 1]:
                    coincident = True
        if coincident:
            x0 = x0.copy()
            x0[:, 0] += 1e-9 * np.arange(na)

    ev = _Evaluator(problem, x0, refs, uprev)
    lo = np.tile(problem.input_lower.as_array(), (na, n, 1)).reshape(-1)
    hi = np.tile(problem.input_upper.as_array(), (na, n, 1)).reshape(-1)

    if warm_start is not None:
        prev = warm_start.inputs if isinstance(warm_start, ControlSolution) else np.asarray(warm_start, dtype=float)
        if prev.shape != (na, n, 3):
            raise ValueError(f"warm start must have shape {(na, n, 3)}, got {prev.shape}")
        u0 = np.empty_like(prev)
        u0[:, :-1] = prev[:, 1:]
        u0[:, -1] = prev[:, -1]
    else:
        u0 = np.tile(uprev[:, None, :], (1, n, 1))
    z = np.clip(u0.reshape(-1), lo, hi)

    mu = cfg.penalty_initial
    rounds = 0
    total_iters = 0
    trace = [] if collect_trace else None
    round_traces = [] if collect_trace else None
    inner_converged = False
    maxv = 0.0
    while True:
        rounds += 1
        this_trace = [] if collect_trace else None
        z, phi, g, iters, inner_converged = _inner_descent(z, mu, ev, lo, hi, cfg, this_trace)
        total_iters += iters
        if collect_trace:
            round_traces.append(this_trace)
        _, _, maxv = ev.merit(z, mu)
        if na < 2:
            maxv = 0.0
            break
        if maxv <= cfg.constraint_tolerance:
            break
        if mu >= cfg.penalty_max:
            break
        mu = min(mu * cfg.penalty_multiplier, cfg.penalty_max)

    states = ev.states_for(z)
    u = ev.shaped(z).copy()
    final_cost = cost(states, u, uprev, refs, problem)
    converged = inner_converged and (na < 2 or maxv <= cfg.constraint_tolerance)
    return ControlSolution(
        inputs=u,
        predicted_states=states,
        cost=final_cost,
        inner_iterations=total_iters,
        penalty_rounds=rounds,
        solve_wall_time=time.perf_counter() - t0,
        converged=converged,
        max_constraint_violation=maxv,
        merit_trace=round_traces,
    )
