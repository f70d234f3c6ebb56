"""Compiled scalar kernels for the three-state kite model.

Everything here works on plain floats and small arrays so it can be jitted.
The public wrappers live in :mod:`probcert.kite`, :mod:`probcert.ekf` and
:mod:`probcert.mpc`.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def glide(E0, u, c_tilde):
    return E0 - c_tilde * u * u


@njit(cache=True)
def rhs(th, ph, ps, u, E0, v0, L_T, c_tilde):
    E = E0 - c_tilde * u * u
    a = v0 / L_T
    sth = math.sin(th)
    cth = math.cos(th)
    dth = a * (E * cth * math.cos(ps) - sth)
    dph = -a * E * (cth / sth) * math.sin(ps)
    dps = a * E * cth * u + dph * cth
    return dth, dph, dps


@njit(cache=True)
def rhs_jac(th, ps, u, E0, v0, L_T, c_tilde):
    """Partials of the angle rates.

    Returns ``(J, f)`` with ``J`` of shape (3, 5) holding derivatives with
    respect to (theta, psi, u, E0, v0) and ``f`` the rates themselves. The
    rates do not depend on phi.
    """
    E = E0 - c_tilde * u * u
    dE_du = -2.0 * c_tilde * u
    a = v0 / L_T
    sth = math.sin(th)
    cth = math.cos(th)
    sps = math.sin(ps)
    cps = math.cos(ps)
    cot = cth / sth

    f = np.empty(3)
    J = np.zeros((3, 5))

    dth = a * (E * cth * cps - sth)
    dth_th = a * (-E * sth * cps - cth)
    dth_ps = -a * E * cth * sps
    dth_E = a * cth * cps
    dth_v0 = dth / v0

    dph = -a * E * cot * sps
    dph_th = a * E * sps / (sth * sth)
    dph_ps = -a * E * cot * cps
    dph_E = -a * cot * sps
    dph_v0 = dph / v0

    dps = a * E * cth * u + dph * cth
    dps_th = -a * E * sth * u + dph_th * cth - dph * sth
    dps_ps = dph_ps * cth
    dps_E = a * cth * u + dph_E * cth
    dps_u_direct = a * E * cth
    dps_v0 = dps / v0

    f[0] = dth
    f[1] = dph
    f[2] = dps

    J[0, 0] = dth_th
    J[0, 1] = dth_ps
    J[0, 2] = dth_E * dE_du
    J[0, 3] = dth_E
    J[0, 4] = dth_v0
    J[1, 0] = dph_th
    J[1, 1] = dph_ps
    J[1, 2] = dph_E * dE_du
    J[1, 3] = dph_E
    J[1, 4] = dph_v0
    J[2, 0] = dps_th
    J[2, 1] = dps_ps
    J[2, 2] = dps_u_direct + dps_E * dE_du
    J[2, 3] = dps_E
    J[2, 4] = dps_v0
    return J, f


@njit(cache=True)
def thrust(th, ph, u, E0, v0, area, rho, beta, c_tilde):
    E = E0 - c_tilde * u * u
    cth = math.cos(th)
    geom = cth * math.cos(beta) + math.sin(th) * math.sin(beta) * math.sin(ph)
    return 0.5 * rho * v0 * v0 * area * cth * cth * (E + 1.0) * math.sqrt(E * E + 1.0) * geom


@njit(cache=True)
def thrust_grad(th, ph, u, E0, v0, area, rho, beta, c_tilde):
    """Thrust and its partials with respect to (theta, phi, u)."""
    E = E0 - c_tilde * u * u
    sth = math.sin(th)
    cth = math.cos(th)
    sb = math.sin(beta)
    cb = math.cos(beta)
    sph = math.sin(ph)
    k = 0.5 * rho * v0 * v0 * area
    root = math.sqrt(E * E + 1.0)
    g = (E + 1.0) * root
    dg = root + (E + 1.0) * E / root
    geom = cth * cb + sth * sb * sph
    T = k * cth * cth * g * geom
    dT_th = k * g * (-2.0 * cth * sth * geom + cth * cth * (-sth * cb + cth * sb * sph))
    dT_ph = k * g * cth * cth * sth * sb * math.cos(ph)
    dT_u = k * cth * cth * geom * dg * (-2.0 * c_tilde * u)
    return T, dT_th, dT_ph, dT_u


@njit(cache=True)
def rk4_angles(th, ph, ps, u, E0, v0, h, L_T, c_tilde):
    """One RK4 step of the angle dynamics with constant wind speed."""
    k1 = rhs(th, ph, ps, u, E0, v0, L_T, c_tilde)
    k2 = rhs(th + 0.5 * h * k1[0], ph + 0.5 * h * k1[1], ps + 0.5 * h * k1[2], u, E0, v0, L_T, c_tilde)
    k3 = rhs(th + 0.5 * h * k2[0], ph + 0.5 * h * k2[1], ps + 0.5 * h * k2[2], u, E0, v0, L_T, c_tilde)
    k4 = rhs(th + h * k3[0], ph + h * k3[1], ps + h * k3[2], u, E0, v0, L_T, c_tilde)
    return (
        th + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        ph + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ps + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )


@njit(cache=True)
def _aug_rates(x, u, L_T, c_tilde):
    J, f = rhs_jac(x[0], x[2], u, x[3], x[4], L_T, c_tilde)
    # 3x5 Jacobian of the angle rates w.r.t. the augmented state
    A = np.zeros((3, 5))
    for i in range(3):
        A[i, 0] = J[i, 0]
        A[i, 2] = J[i, 1]
        A[i, 3] = J[i, 3]
        A[i, 4] = J[i, 4]
    return f, A


@njit(cache=True)
def rk4_aug_sens(x, u, h, L_T, c_tilde):
    """RK4 step of the augmented state [theta, phi, psi, E0, v0] with its
    5x5 discrete-time Jacobian (E0 and v0 have zero dynamics)."""
    n = 5
    I = np.eye(n)
    f1, A1 = _aug_rates(x, u, L_T, c_tilde)
    S1 = A1  # dk1/dx

    x2 = x.copy()
    x2[:3] += 0.5 * h * f1
    f2, A2 = _aug_rates(x2, u, L_T, c_tilde)
    D2 = I.copy()
    D2[:3, :] += 0.5 * h * S1
    S2 = A2 @ D2

    x3 = x.copy()
    x3[:3] += 0.5 * h * f2
    f3, A3 = _aug_rates(x3, u, L_T, c_tilde)
    D3 = I.copy()
    D3[:3, :] += 0.5 * h * S2
    S3 = A3 @ D3

    x4 = x.copy()
    x4[:3] += h * f3
    f4, A4 = _aug_rates(x4, u, L_T, c_tilde)
    D4 = I.copy()
    D4[:3, :] += h * S3
    S4 = A4 @ D4

    xn = x.copy()
    xn[:3] += h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
    F = I.copy()
    F[:3, :] += h / 6.0 * (S1 + 2.0 * S2 + 2.0 * S3 + S4)
    return xn, F


@njit(cache=True)
def _plant_rates(th, ph, ps, pv, u, E0, v_mean, v_bias, sig_cv, inv_tau, w_tb, L_T, c_tilde):
    v0 = v_mean + v_bias + sig_cv * pv
    d = rhs(th, ph, ps, u, E0, v0, L_T, c_tilde)
    return d[0], d[1], d[2], -pv * inv_tau + w_tb


@njit(cache=True)
def rk4_plant(x, u, E0, v_mean, v_bias, sig_cv, inv_tau, w_tb, h, L_T, c_tilde):
    """RK4 step of the coupled kite + turbulence state [theta, phi, psi, p_v]."""
    k1 = _plant_rates(x[0], x[1], x[2], x[3], u, E0, v_mean, v_bias, sig_cv, inv_tau, w_tb, L_T, c_tilde)
    k2 = _plant_rates(x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1], x[2] + 0.5 * h * k1[2],
                      x[3] + 0.5 * h * k1[3], u, E0, v_mean, v_bias, sig_cv, inv_tau, w_tb, L_T, c_tilde)
    k3 = _plant_rates(x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1], x[2] + 0.5 * h * k2[2],
                      x[3] + 0.5 * h * k2[3], u, E0, v_mean, v_bias, sig_cv, inv_tau, w_tb, L_T, c_tilde)
    k4 = _plant_rates(x[0] + h * k3[0], x[1] + h * k3[1], x[2] + h * k3[2],
                      x[3] + h * k3[3], u, E0, v_mean, v_bias, sig_cv, inv_tau, w_tb, L_T, c_tilde)
    out = np.empty(4)
    out[0] = x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    out[1] = x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    out[2] = x[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    out[3] = x[3] + h / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
    return out


# --- multi-stage OCP ---------------------------------------------------------


@njit(cache=True)
def _stage_vjp(th, ps, u, E0, v0, L_T, c_tilde, g0, g1, g2):
    """Cotangent of one rate evaluation: returns (theta_bar, psi_bar, u_bar)."""
    E = E0 - c_tilde * u * u
    dE_du = -2.0 * c_tilde * u
    a = v0 / L_T
    sth = math.sin(th)
    cth = math.cos(th)
    sps = math.sin(ps)
    cps = math.cos(ps)
    cot = cth / sth
    dph = -a * E * cot * sps
    dth_th = a * (-E * sth * cps - cth)
    dth_ps = -a * E * cth * sps
    dth_E = a * cth * cps
    dph_th = a * E * sps / (sth * sth)
    dph_ps = -a * E * cot * cps
    dph_E = -a * cot * sps
    dps_th = -a * E * sth * u + dph_th * cth - dph * sth
    dps_ps = dph_ps * cth
    dps_E = a * cth * u + dph_E * cth
    dps_u = a * E * cth + dps_E * dE_du
    tb = dth_th * g0 + dph_th * g1 + dps_th * g2
    pb = dth_ps * g0 + dph_ps * g1 + dps_ps * g2
    ub = dth_E * dE_du * g0 + dph_E * dE_du * g1 + dps_u * g2
    return tb, pb, ub


@njit(cache=True)
def _rk4_vjp(th, ph, ps, u, E0, v0, h, L_T, c_tilde, l0, l1, l2):
    """Vector-Jacobian product of one RK4 angle step.

    Returns (theta_bar, phi_bar, psi_bar, u_bar) for the output cotangent
    ``(l0, l1, l2)``.
    """
    k1 = rhs(th, ph, ps, u, E0, v0, L_T, c_tilde)
    t2, s2 = th + 0.5 * h * k1[0], ps + 0.5 * h * k1[2]
    k2 = rhs(t2, ph, s2, u, E0, v0, L_T, c_tilde)
    t3, s3 = th + 0.5 * h * k2[0], ps + 0.5 * h * k2[2]
    k3 = rhs(t3, ph, s3, u, E0, v0, L_T, c_tilde)
    t4, s4 = th + h * k3[0], ps + h * k3[2]

    c6 = h / 6.0
    c3 = h / 3.0
    tbar, pbar, sbar, ubar = l0, l1, l2, 0.0
    # stage 4
    tb, sb, ub = _stage_vjp(t4, s4, u, E0, v0, L_T, c_tilde, c6 * l0, c6 * l1, c6 * l2)
    tbar += tb
    sbar += sb
    ubar += ub
    g3_0, g3_1, g3_2 = c3 * l0 + h * tb, c3 * l1, c3 * l2 + h * sb
    # stage 3
    tb, sb, ub = _stage_vjp(t3, s3, u, E0, v0, L_T, c_tilde, g3_0, g3_1, g3_2)
    tbar += tb
    sbar += sb
    ubar += ub
    g2_0, g2_1, g2_2 = c3 * l0 + 0.5 * h * tb, c3 * l1, c3 * l2 + 0.5 * h * sb
    # stage 2
    tb, sb, ub = _stage_vjp(t2, s2, u, E0, v0, L_T, c_tilde, g2_0, g2_1, g2_2)
    tbar += tb
    sbar += sb
    ubar += ub
    g1_0, g1_1, g1_2 = c6 * l0 + 0.5 * h * tb, c6 * l1, c6 * l2 + 0.5 * h * sb
    # stage 1
    tb, sb, ub = _stage_vjp(th, ps, u, E0, v0, L_T, c_tilde, g1_0, g1_1, g1_2)
    tbar += tb
    sbar += sb
    ubar += ub
    return tbar, pbar, sbar, ubar


@njit(cache=True)
def ocp_states(z, x0, E0s, v0s, n_p, h, L_T, c_tilde):
    """Node states of every branch, shape (s, n_p + 1, 3)."""
    s = E0s.shape[0]
    X = np.empty((s, n_p + 1, 3))
    for j in range(s):
        X[j, 0, 0] = x0[0]
        X[j, 0, 1] = x0[1]
        X[j, 0, 2] = x0[2]
        for k in range(n_p):
            u = z[0] if k == 0 else z[1 + j * (n_p - 1) + k - 1]
            t, p, q = rk4_angles(X[j, k, 0], X[j, k, 1], X[j, k, 2], u, E0s[j], v0s[j], h, L_T, c_tilde)
            X[j, k + 1, 0] = t
            X[j, k + 1, 1] = p
            X[j, k + 1, 2] = q
    return X


@njit(cache=True)
def ocp_objective(z, x0, u_prev, E0s, v0s, n_p, h, L_T, c_tilde, area, rho, beta,
                  w_F, w_u, h_bound, pen_w, w_tail):
    """Penalized scenario-tree objective and its gradient (adjoint sweep).

    Decision layout: ``z[0]`` is the shared first input; branch ``j`` owns
    ``z[1 + j*(n_p-1) : 1 + (j+1)*(n_p-1)]`` for stages 1..n_p-1. The root
    stage cost is averaged over branches so each tree node counts once.
    The soft height penalty acts on nodes 1..n_p. ``w_tail`` > 0 adds the
    terminal cost ``-w_tail * w_F * T_F(x(n_p), u=0)`` on every leaf.
    """
    s = E0s.shape[0]
    X = ocp_states(z, x0, E0s, v0s, n_p, h, L_T, c_tilde)
    J = 0.0
    grad = np.zeros(z.shape[0])
    for j in range(s):
        base = 1 + j * (n_p - 1)
        l0 = 0.0
        l1 = 0.0
        l2 = 0.0
        th = X[j, n_p, 0]
        ph = X[j, n_p, 1]
        viol = h_bound - L_T * math.sin(th) * math.cos(ph)
        if viol > 0.0:
            J += pen_w * viol * viol
            dJ_dh = -2.0 * pen_w * viol
            l0 = dJ_dh * L_T * math.cos(th) * math.cos(ph)
            l1 = -dJ_dh * L_T * math.sin(th) * math.sin(ph)
        if w_tail > 0.0:
            T, dT_th, dT_ph, dT_u = thrust_grad(th, ph, 0.0, E0s[j], v0s[j], area, rho, beta, c_tilde)
            J -= w_tail * w_F * T
            l0 -= w_tail * w_F * dT_th
            l1 -= w_tail * w_F * dT_ph
        for k in range(n_p - 1, -1, -1):
            th = X[j, k, 0]
            ph = X[j, k, 1]
            ps = X[j, k, 2]
            if k == 0:
                u = z[0]
                up = u_prev
                wk = 1.0 / s
                iu = 0
                ip = -1
            else:
                iu = base + k - 1
                ip = 0 if k == 1 else iu - 1
                u = z[iu]
                up = z[ip]
                wk = 1.0
            b0, b1, b2, ubar = _rk4_vjp(th, ph, ps, u, E0s[j], v0s[j], h, L_T, c_tilde, l0, l1, l2)
            grad[iu] += ubar
            T, dT_th, dT_ph, dT_u = thrust_grad(th, ph, u, E0s[j], v0s[j], area, rho, beta, c_tilde)
            du = u - up
            J += wk * (-w_F * T + w_u * du * du)
            grad[iu] += wk * (-w_F * dT_u + 2.0 * w_u * du)
            if ip >= 0:
                grad[ip] -= wk * 2.0 * w_u * du
            b0 -= wk * w_F * dT_th
            b1 -= wk * w_F * dT_ph
            if k >= 1:
                viol = h_bound - L_T * math.sin(th) * math.cos(ph)
                if viol > 0.0:
                    J += pen_w * viol * viol
                    dJ_dh = -2.0 * pen_w * viol
                    b0 += dJ_dh * L_T * math.cos(th) * math.cos(ph)
                    b1 -= dJ_dh * L_T * math.sin(th) * math.sin(ph)
            l0, l1, l2 = b0, b1, b2
    return J, grad
