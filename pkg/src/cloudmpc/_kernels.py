"""Compiled numerical kernels shared by the dynamics model and the controller.

Array layouts (all float64):
  state  s[9]  = [px, py, pz, vx, vy, vz, roll, pitch, yaw]
  input  u[3]  = [roll_ref, pitch_ref, thrust]
  params prm[11] = [mass, ax, ay, az, k_phi, k_theta, alpha_phi, alpha_theta,
                    gx, gy, gz]

The translational channel is a point mass under rotated body thrust, gravity
and linear drag; the roll/pitch channels are first-order lags toward their
references; yaw is constant. Integration is classical RK4 with zero-order-hold
input. The adjoint kernels implement exact reverse-mode differentiation of the
RK4 step, which is what makes the solver gradient match finite differences.
"""
import math

import numpy as np

from ._jit import njit


@njit(cache=True)
def deriv(s, u, prm, out):
    """Time derivative of one agent state under a held input."""
    m = prm[0]
    cphi = math.cos(s[6])
    sphi = math.sin(s[6])
    cth = math.cos(s[7])
    sth = math.sin(s[7])
    cpsi = math.cos(s[8])
    spsi = math.sin(s[8])
    fom = u[2] / m
    # world-frame thrust direction: third column of Rz(yaw) Ry(pitch) Rx(roll)
    bx = cpsi * sth * cphi + spsi * sphi
    by = spsi * sth * cphi - cpsi * sphi
    bz = cth * cphi
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    out[3] = fom * bx + prm[8] - prm[1] * s[3]
    out[4] = fom * by + prm[9] - prm[2] * s[4]
    out[5] = fom * bz + prm[10] - prm[3] * s[5]
    out[6] = (prm[4] * u[0] - s[6]) / prm[6]
    out[7] = (prm[5] * u[1] - s[7]) / prm[7]
    out[8] = 0.0


@njit(cache=True)
def rk4_step_batch(states, inputs, prm, h, out):
    """One RK4 step for a batch of agents. states (na,9), inputs (na,3)."""
    na = states.shape[0]
    k1 = np.empty(9)
    k2 = np.empty(9)
    k3 = np.empty(9)
    k4 = np.empty(9)
    tmp = np.empty(9)
    for a in range(na):
        s = states[a]
        u = inputs[a]
        deriv(s, u, prm, k1)
        for i in range(9):
            tmp[i] = s[i] + 0.5 * h * k1[i]
        deriv(tmp, u, prm, k2)
        for i in range(9):
            tmp[i] = s[i] + 0.5 * h * k2[i]
        deriv(tmp, u, prm, k3)
        for i in range(9):
            tmp[i] = s[i] + h * k3[i]
        deriv(tmp, u, prm, k4)
        for i in range(9):
            out[a, i] = s[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def rollout_batch(x0, u, prm, h, states):
    """Propagate x0 (na,9) through u (na,n,3); states (na,n+1,9) is output."""
    n = u.shape[1]
    states[:, 0] = x0
    for j in range(n):
        rk4_step_batch(states[:, j], u[:, j], prm, h, states[:, j + 1])


@njit(cache=True)
def rollout_stages_batch(x0, u, prm, h, states, stages):
    """Rollout that also records the four RK4 stage states per step.

    stages (n, 4, na, 9): stages[j, 0] is the step's start state, stages[j, 1..3]
    the intermediate evaluation points. Needed by the adjoint pass.
    """
    na = x0.shape[0]
    n = u.shape[1]
    k1 = np.empty(9)
    k2 = np.empty(9)
    k3 = np.empty(9)
    k4 = np.empty(9)
    for a in range(na):
        for i in range(9):
            states[a, 0, i] = x0[a, i]
    for j in range(n):
        for a in range(na):
            s = states[a, j]
            ua = u[a, j]
            for i in range(9):
                stages[j, 0, a, i] = s[i]
            deriv(stages[j, 0, a], ua, prm, k1)
            for i in range(9):
                stages[j, 1, a, i] = s[i] + 0.5 * h * k1[i]
            deriv(stages[j, 1, a], ua, prm, k2)
            for i in range(9):
                stages[j, 2, a, i] = s[i] + 0.5 * h * k2[i]
            deriv(stages[j, 2, a], ua, prm, k3)
            for i in range(9):
                stages[j, 3, a, i] = s[i] + h * k3[i]
            deriv(stages[j, 3, a], ua, prm, k4)
            for i in range(9):
                states[a, j + 1, i] = s[i] + (h / 6.0) * (
                    k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]
                )


@njit(cache=True)
def jt_accumulate(s, u, prm, lam, out_s, out_u):
    """Accumulate Jx(s,u)^T lam into out_s and Ju(s,u)^T lam into out_u."""
    m = prm[0]
    cphi = math.cos(s[6])
    sphi = math.sin(s[6])
    cth = math.cos(s[7])
    sth = math.sin(s[7])
    cpsi = math.cos(s[8])
    spsi = math.sin(s[8])
    fom = u[2] / m
    bx = cpsi * sth * cphi + spsi * sphi
    by = spsi * sth * cphi - cpsi * sphi
    bz = cth * cphi
    # partials of the thrust direction wrt roll, pitch, yaw
    bx_phi = -cpsi * sth * sphi + spsi * cphi
    by_phi = -spsi * sth * sphi - cpsi * cphi
    bz_phi = -cth * sphi
    bx_th = cpsi * cth * cphi
    by_th = spsi * cth * cphi
    bz_th = -sth * cphi
    bx_psi = -spsi * sth * cphi + cpsi * sphi
    by_psi = cpsi * sth * cphi + spsi * sphi
    # d(pdot)/dv = I
    out_s[3] += lam[0]
    out_s[4] += lam[1]
    out_s[5] += lam[2]
    # d(vdot)/dv = -A
    out_s[3] += -prm[1] * lam[3]
    out_s[4] += -prm[2] * lam[4]
    out_s[5] += -prm[3] * lam[5]
    # d(vdot)/dangles
    out_s[6] += fom * (bx_phi * lam[3] + by_phi * lam[4] + bz_phi * lam[5])
    out_s[7] += fom * (bx_th * lam[3] + by_th * lam[4] + bz_th * lam[5])
    out_s[8] += fom * (bx_psi * lam[3] + by_psi * lam[4])
    # attitude lag self-terms
    out_s[6] += -lam[6] / prm[6]
    out_s[7] += -lam[7] / prm[7]
    # input partials
    out_u[0] += (prm[4] / prm[6]) * lam[6]
    out_u[1] += (prm[5] / prm[7]) * lam[7]
    out_u[2] += (bx * lam[3] + by * lam[4] + bz * lam[5]) / m


@njit(cache=True)
def rk4_adjoint_step(stage, u, prm, h, lam, gu):
    """Reverse one RK4 step: consumes lam = dPhi/dx_{j+1}, leaves dPhi/dx_j
    (dynamics contribution only) in lam and writes dPhi/du_j into gu."""
    na = u.shape[0]
    kb1 = np.empty(9)
    kb2 = np.empty(9)
    kb3 = np.empty(9)
    kb4 = np.empty(9)
    sbar = np.empty(9)
    newlam = np.empty(9)
    for a in range(na):
        ln = lam[a]
        for i in range(9):
            kb1[i] = (h / 6.0) * ln[i]
            kb2[i] = (h / 3.0) * ln[i]
            kb3[i] = (h / 3.0) * ln[i]
            kb4[i] = (h / 6.0) * ln[i]
            newlam[i] = ln[i]
        gu[a, 0] = 0.0
        gu[a, 1] = 0.0
        gu[a, 2] = 0.0
        # k4 = f(s4, u)
        for i in range(9):
            sbar[i] = 0.0
        jt_accumulate(stage[3, a], u[a], prm, kb4, sbar, gu[a])
        for i in range(9):
            newlam[i] += sbar[i]
            kb3[i] += h * sbar[i]
        # k3 = f(s3, u)
        for i in range(9):
            sbar[i] = 0.0
        jt_accumulate(stage[2, a], u[a], prm, kb3, sbar, gu[a])
        for i in range(9):
            newlam[i] += sbar[i]
            kb2[i] += 0.5 * h * sbar[i]
        # k2 = f(s2, u)
        for i in range(9):
            sbar[i] = 0.0
        jt_accumulate(stage[1, a], u[a], prm, kb2, sbar, gu[a])
        for i in range(9):
            newlam[i] += sbar[i]
            kb1[i] += 0.5 * h * sbar[i]
        # k1 = f(s1, u); s1 is the step's start state
        for i in range(9):
            sbar[i] = 0.0
        jt_accumulate(stage[0, a], u[a], prm, kb1, sbar, gu[a])
        for i in range(9):
            lam[a, i] = newlam[i] + sbar[i]


@njit(cache=True)
def merit_terms(states, u, uprev, refs, qx, qdu, qu, uhover, rsafe):
    """Objective pieces: (tracking+input cost, penalty sum of squares, max residual).

    Collision residuals are evaluated at steps 1..n; step 0 is the fixed
    initial condition, which no input can influence.
    """
    na = states.shape[0]
    nsteps = u.shape[1]
    cost = 0.0
    for a in range(na):
        for j in range(nsteps + 1):
            for i in range(9):
                e = refs[a, j, i] - states[a, j, i]
                cost += qx[i] * e * e
        for j in range(nsteps):
            for i in range(3):
                prev = uprev[a, i] if j == 0 else u[a, j - 1, i]
                du = u[a, j, i] - prev
                cost += qdu[i] * du * du
                dh = u[a, j, i] - uhover[i]
                cost += qu[i] * dh * dh
    pen = 0.0
    maxv = 0.0
    r2 = rsafe * rsafe
    for j in range(1, nsteps + 1):
        for l in range(na):
            for i in range(l + 1, na):
                dx = states[l, j, 0] - states[i, j, 0]
                dy = states[l, j, 1] - states[i, j, 1]
                c = r2 - dx * dx - dy * dy
                if c > 0.0:
                    pen += c * c
                    if c > maxv:
                        maxv = c
    return cost, pen, maxv


@njit(cache=True)
def stage_state_grads(states, refs, qx, rsafe, mu, cx):
    """dPhi/dx at every trajectory step: tracking plus active collision penalty."""
    na = states.shape[0]
    nsteps = states.shape[1] - 1
    for a in range(na):
        for j in range(nsteps + 1):
            for i in range(9):
                cx[a, j, i] = -2.0 * qx[i] * (refs[a, j, i] - states[a, j, i])
    r2 = rsafe * rsafe
    for j in range(1, nsteps + 1):
        for l in range(na):
            for i in range(l + 1, na):
                dx = states[l, j, 0] - states[i, j, 0]
                dy = states[l, j, 1] - states[i, j, 1]
                c = r2 - dx * dx - dy * dy
                if c > 0.0:
                    # d(mu/2 c^2)/dp = mu * c * dc/dp
                    gx = mu * c * (-2.0 * dx)
                    gy = mu * c * (-2.0 * dy)
                    cx[l, j, 0] += gx
                    cx[l, j, 1] += gy
                    cx[i, j, 0] -= gx
                    cx[i, j, 1] -= gy


@njit(cache=True)
def total_gradient(states, stages, u, uprev, refs, qx, qdu, qu, uhover,
                   rsafe, mu, prm, h, g):
    """Exact gradient of (cost + mu/2 * penalty) wrt inputs, adjoint sweep."""
    na = u.shape[0]
    nsteps = u.shape[1]
    cx = np.empty((na, nsteps + 1, 9))
    stage_state_grads(states, refs, qx, rsafe, mu, cx)
    lam = cx[:, nsteps].copy()
    gu = np.empty((na, 3))
    for j in range(nsteps - 1, -1, -1):
        rk4_adjoint_step(stages[j], u[:, j], prm, h, lam, gu)
        for a in range(na):
            for i in range(3):
                prev = uprev[a, i] if j == 0 else u[a, j - 1, i]
                gd = 2.0 * qdu[i] * (u[a, j, i] - prev)
                if j + 1 < nsteps:
                    gd -= 2.0 * qdu[i] * (u[a, j + 1, i] - u[a, j, i])
                gd += 2.0 * qu[i] * (u[a, j, i] - uhover[i])
                g[a, j, i] = gu[a, i] + gd
        if j > 0:
            for a in range(na):
                for i in range(9):
                    lam[a, i] += cx[a, j, i]
