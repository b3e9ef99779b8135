"""Vehicle model tests against independent integrations of the same ODE."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from cloudmpc.dynamics import (
    AgentState,
    ControlInput,
    DelaySpec,
    ModelDivergenceError,
    ModelParams,
    estimate_present,
    hover_input,
    step,
    step_batch,
    thrust_direction,
)

PARAMS = ModelParams()


def ode_rhs(state, u, prm: ModelParams):
    """Plain transcription of the continuous model, independent of the kernels."""
    p, v, o = state[0:3], state[3:6], state[6:9]
    phi, theta, psi = o
    direction = np.array([
        math.cos(psi) * math.sin(theta) * math.cos(phi)
        + math.sin(psi) * math.sin(phi),
        math.sin(psi) * math.sin(theta) * math.cos(phi)
        - math.cos(psi) * math.sin(phi),
        math.cos(theta) * math.cos(phi),
    ])
    acc = (u.thrust / prm.mass) * direction + np.array(prm.gravity) - np.array(prm.drag) * v
    return np.concatenate([
        v,
        acc,
        [
            (prm.k_phi * u.roll_ref - phi) / prm.alpha_phi,
            (prm.k_theta * u.pitch_ref - theta) / prm.alpha_theta,
            0.0,
        ],
    ])


def rk4_reference(state_vec, u, prm, dt):
    k1 = ode_rhs(state_vec, u, prm)
    k2 = ode_rhs(state_vec + 0.5 * dt * k1, u, prm)
    k3 = ode_rhs(state_vec + 0.5 * dt * k2, u, prm)
    k4 = ode_rhs(state_vec + dt * k3, u, prm)
    return state_vec + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def test_step_matches_hand_rk4():
    state = AgentState(
        position=np.array([1.0, -2.0, 3.0]),
        velocity=np.array([0.5, 0.2, -0.1]),
        orientation=np.array([0.05, -0.1, 0.3]),
        timestamp=2.0,
    )
    u = ControlInput(0.1, -0.05, 10.5)
    got = step(state, u, PARAMS, 0.05)
    want = rk4_reference(state.as_vector(), u, PARAMS, 0.05)
    np.testing.assert_allclose(got.as_vector(), want, rtol=0, atol=1e-12)
    assert got.timestamp == pytest.approx(2.05)


def test_step_tracks_continuous_solution_over_held_input():
    state = AgentState(
        position=np.array([0.0, 0.0, 2.0]),
        velocity=np.array([1.0, -0.5, 0.0]),
        orientation=np.array([0.1, 0.05, -0.4]),
    )
    u = ControlInput(-0.08, 0.12, 9.5)
    horizon = 0.05
    sol = solve_ivp(
        lambda _, y: ode_rhs(y, u, PARAMS),
        (0.0, horizon),
        state.as_vector(),
        rtol=1e-12,
        atol=1e-12,
    )
    exact = sol.y[:, -1]

    # composed over fine steps the integrator must stay on the continuous
    # solution; one coarse pass only to discretization accuracy
    fine = state
    for _ in range(50):
        fine = step(fine, u, PARAMS, horizon / 50)
    np.testing.assert_allclose(fine.as_vector(), exact, rtol=0, atol=1e-9)

    coarse = step(state, u, PARAMS, horizon).as_vector()
    np.testing.assert_allclose(coarse, exact, rtol=0, atol=1e-4)

    # halving the step shrinks the end error about 16x: fourth order
    halved = step(state, u, PARAMS, horizon / 2)
    halved = step(halved, u, PARAMS, horizon / 2).as_vector()
    err_coarse = np.abs(coarse - exact).max()
    err_halved = np.abs(halved - exact).max()
    assert 8.0 < err_coarse / err_halved < 32.0


def test_hover_input_is_a_fixed_point_at_level_rest():
    state = AgentState(position=np.array([0.0, 0.0, 2.0]))
    u = hover_input(PARAMS)
    assert u.thrust == pytest.approx(9.81)
    out = state
    for _ in range(100):
        out = step(out, u, PARAMS, 0.05)
    np.testing.assert_allclose(out.position, [0.0, 0.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(out.velocity, 0.0, atol=1e-12)


def test_step_batch_agrees_with_single_steps():
    rng = np.random.default_rng(3)
    states = rng.normal(0, 1, (4, 9))
    inputs = rng.normal(0, 0.2, (4, 3))
    inputs[:, 2] += 9.81
    batched = step_batch(states, inputs, PARAMS, 0.02)
    for k in range(4):
        single = step(AgentState.from_vector(states[k]), ControlInput(*inputs[k]), PARAMS, 0.02)
        np.testing.assert_allclose(batched[k], single.as_vector(), atol=1e-14)


def test_step_rejects_nonpositive_dt_and_flags_divergence():
    state = AgentState()
    with pytest.raises(ValueError):
        step(state, ControlInput(), PARAMS, 0.0)
    with pytest.raises(ModelDivergenceError) as err:
        step(state, ControlInput(thrust=1e308), PARAMS, 1.0, agent_id=7)
    assert err.value.agent_id == 7


def test_thrust_direction_is_unit_and_level_points_up():
    np.testing.assert_allclose(thrust_direction([0, 0, 0]), [0, 0, 1], atol=1e-15)
    rng = np.random.default_rng(5)
    for _ in range(50):
        o = rng.uniform(-1.2, 1.2, 3)
        assert np.linalg.norm(thrust_direction(o)) == pytest.approx(1.0, abs=1e-12)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(mass=0.0)
    with pytest.raises(ValueError):
        ModelParams(alpha_phi=0.0)
    with pytest.raises(ValueError):
        ModelParams(drag=(-0.1, 0.0, 0.0))
    with pytest.raises(ValueError):
        ModelParams(gravity=(0.0, 0.0, -9.8))


def test_delay_spec():
    assert DelaySpec(0.02, 0.03).total == pytest.approx(0.05)
    with pytest.raises(ValueError):
        DelaySpec(uplink=-0.01)


# -- present-state prediction ------------------------------------------------


def test_estimate_present_zero_tau_is_identity():
    state = AgentState(position=np.array([1.0, 2.0, 3.0]))
    assert estimate_present(state, ControlInput(), PARAMS, 0.0) is state
    with pytest.raises(ValueError):
        estimate_present(state, ControlInput(), PARAMS, -0.1)


def test_estimate_present_closed_forms():
    state = AgentState(
        position=np.array([1.0, -1.0, 2.0]),
        velocity=np.array([0.4, -0.2, 0.1]),
        orientation=np.array([0.08, -0.06, 0.5]),
        timestamp=3.0,
    )
    u = ControlInput(0.1, -0.04, 10.0)
    tau = 0.11
    est = estimate_present(state, u, PARAMS, tau)

    np.testing.assert_allclose(est.position, state.position + state.velocity * tau)

    # velocity solves v' = v + (F/m + g - A v') tau per axis
    force = u.thrust * thrust_direction(state.orientation)
    lhs = est.velocity
    rhs = state.velocity + (force / PARAMS.mass + np.array(PARAMS.gravity)
                            - np.array(PARAMS.drag) * est.velocity) * tau
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    # roll and pitch follow the first-order lag exactly; yaw passes through
    for axis, (gain, alpha, ref) in enumerate(
        [(PARAMS.k_phi, PARAMS.alpha_phi, u.roll_ref),
         (PARAMS.k_theta, PARAMS.alpha_theta, u.pitch_ref)]
    ):
        goal = gain * ref
        want = goal + (state.orientation[axis] - goal) * math.exp(-tau / alpha)
        assert est.orientation[axis] == pytest.approx(want, abs=1e-15)
    assert est.orientation[2] == state.orientation[2]
    assert est.timestamp == pytest.approx(3.11)


def test_estimate_present_attitude_matches_integrated_lag():
    # the predicted roll equals actually integrating the attitude ODE under
    # the held command
    state = AgentState(orientation=np.array([0.2, -0.15, 0.0]))
    u = ControlInput(roll_ref=-0.1, pitch_ref=0.25, thrust=9.81)
    tau = 0.3
    est = estimate_present(state, u, PARAMS, tau)
    sol = solve_ivp(
        lambda _, y: ode_rhs(y, u, PARAMS),
        (0.0, tau),
        state.as_vector(),
        rtol=1e-12,
        atol=1e-12,
    )
    np.testing.assert_allclose(est.orientation[:2], sol.y[6:8, -1], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    vec=st.lists(st.floats(-5, 5), min_size=9, max_size=9),
    roll=st.floats(-0.3, 0.3),
    pitch=st.floats(-0.3, 0.3),
    thrust=st.floats(0, 19),
    dt=st.floats(0.001, 0.1),
)
def test_step_stays_finite_and_stamps_time(vec, roll, pitch, thrust, dt):
    state = AgentState.from_vector(np.array(vec), timestamp=1.0)
    out = step(state, ControlInput(roll, pitch, thrust), PARAMS, dt)
    assert np.all(np.isfinite(out.as_vector()))
    assert out.timestamp == pytest.approx(1.0 + dt)


@settings(max_examples=60, deadline=None)
@given(
    tau=st.floats(0.0, 0.5),
    vz=st.floats(-3, 3),
    thrust=st.floats(0, 19),
)
def test_estimate_present_implicit_velocity_relation(tau, vz, thrust):
    state = AgentState(velocity=np.array([0.5, -0.5, vz]),
                       orientation=np.array([0.1, 0.1, 0.0]))
    u = ControlInput(0.0, 0.0, thrust)
    est = estimate_present(state, u, PARAMS, tau)
    force = thrust * thrust_direction(state.orientation)
    rhs = state.velocity + (force / PARAMS.mass + np.array(PARAMS.gravity)
                            - np.array(PARAMS.drag) * est.velocity) * tau
    np.testing.assert_allclose(est.velocity, rhs, atol=1e-10)
