"""Compiled right-hand side and RK4 loop for :class:`CompositeSystem`.

Mirrors ``CompositeSystem.rhs`` scalar by scalar so the fixed-step
integration runs without Python overhead. Parameter rows:

* SG: ``J, K_D, R, L, psi_f, omega_base``
* IBR: ``L_f, R_f, C_dc, v_dc_ref, i_q_ref, omega_base, kp_pll, ki_pll,
  kp_i, ki_i, kp_dc, ki_dc``
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def rhs(x, t, sgp, sg_idx, sg_eps, sg_mech, ibrp, ibr_idx, ibr_eps, ibr_mech,
        app_bus, A_net, inj_gain, src_term, net_off, bus_off, v_dc_inj, v_ac_inj, w_inj):
    n = x.size
    dx = np.zeros(n)
    nsg = sgp.shape[0]
    nibr = ibrp.shape[0]
    nb = inj_gain.size
    inj = np.zeros(2 * nb)
    c_inj = math.cos(w_inj * t)
    for j in range(nsg):
        b = app_bus[j]
        vD = x[bus_off + 2 * b] + v_dc_inj[j, 0] + v_ac_inj[j, 0] * c_inj
        vQ = x[bus_off + 2 * b + 1] + v_dc_inj[j, 1] + v_ac_inj[j, 1] * c_inj
        eps = x[sg_eps[j]]
        c = math.cos(eps)
        s = math.sin(eps)
        v_d = c * vD + s * vQ
        v_q = -s * vD + c * vQ
        J, K_D, R, L, psi_f, wb = sgp[j, 0], sgp[j, 1], sgp[j, 2], sgp[j, 3], sgp[j, 4], sgp[j, 5]
        psi_d = x[sg_idx[0, j]]
        psi_q = x[sg_idx[1, j]]
        w = x[sg_idx[2, j]]
        i_d = -psi_d / L
        i_q = -(psi_q + psi_f) / L
        dx[sg_idx[0, j]] = wb * (v_d + R * i_d + w * psi_q)
        dx[sg_idx[1, j]] = wb * (v_q + R * i_q - w * psi_d)
        dx[sg_idx[2, j]] = (sg_mech[j] - psi_f * i_d - K_D * w) / J
        dx[sg_eps[j]] = wb * (w - 1.0)
        inj[2 * b] += c * i_d - s * i_q
        inj[2 * b + 1] += s * i_d + c * i_q
    for j in range(nibr):
        k = nsg + j
        b = app_bus[k]
        vD = x[bus_off + 2 * b] + v_dc_inj[k, 0] + v_ac_inj[k, 0] * c_inj
        vQ = x[bus_off + 2 * b + 1] + v_dc_inj[k, 1] + v_ac_inj[k, 1] * c_inj
        eps = x[ibr_eps[j]]
        c = math.cos(eps)
        s = math.sin(eps)
        v_d = c * vD + s * vQ
        v_q = -s * vD + c * vQ
        p = ibrp[j]
        L_f, R_f, C_dc, vref, iqref, wb = p[0], p[1], p[2], p[3], p[4], p[5]
        kp_pll, ki_pll, kp_i, ki_i, kp_dc, ki_dc = p[6], p[7], p[8], p[9], p[10], p[11]
        i_d = x[ibr_idx[0, j]]
        i_q = x[ibr_idx[1, j]]
        x_id = x[ibr_idx[2, j]]
        x_iq = x[ibr_idx[3, j]]
        x_pll = x[ibr_idx[4, j]]
        v_dc = x[ibr_idx[5, j]]
        x_dc = x[ibr_idx[6, j]]
        a = wb / L_f
        w = 1.0 + kp_pll * v_q + x_pll
        e_d = x_dc + kp_dc * (v_dc - vref) - i_d
        e_q = iqref - i_q
        dx[ibr_idx[0, j]] = a * (x_id + kp_i * e_d - v_d - R_f * i_d)
        dx[ibr_idx[1, j]] = a * (x_iq + kp_i * e_q - v_q - R_f * i_q)
        dx[ibr_idx[2, j]] = ki_i * e_d
        dx[ibr_idx[3, j]] = ki_i * e_q
        dx[ibr_idx[4, j]] = ki_pll * v_q
        dx[ibr_idx[5, j]] = (ibr_mech[j] - (v_d * i_d + v_q * i_q) / v_dc) / C_dc
        dx[ibr_idx[6, j]] = ki_dc * (v_dc - vref)
        dx[ibr_eps[j]] = wb * (w - 1.0)
        inj[2 * b] += c * i_d - s * i_q
        inj[2 * b + 1] += s * i_d + c * i_q
    m = A_net.shape[0]
    for r in range(m):
        acc = src_term[r]
        for q in range(m):
            acc += A_net[r, q] * x[net_off + q]
        dx[net_off + r] = acc
    for b in range(nb):
        dx[bus_off + 2 * b] += inj_gain[b] * inj[2 * b]
        dx[bus_off + 2 * b + 1] += inj_gain[b] * inj[2 * b + 1]
    return dx


@njit(cache=True)
def rk4_run(x0, t0, h, n_steps, limit, sgp, sg_idx, sg_eps, sg_mech, ibrp, ibr_idx,
            ibr_eps, ibr_mech, app_bus, A_net, inj_gain, src_term, net_off, bus_off,
            v_dc_inj, v_ac_inj, w_inj):
    """Integrate ``n_steps``; returns the state history and the number of
    completed steps (less than ``n_steps`` if the run diverged)."""
    n = x0.size
    X = np.empty((n, n_steps + 1))
    X[:, 0] = x0
    x = x0.copy()
    for k in range(n_steps):
        t = t0 + k * h
        k1 = rhs(x, t, sgp, sg_idx, sg_eps, sg_mech, ibrp, ibr_idx, ibr_eps, ibr_mech,
                 app_bus, A_net, inj_gain, src_term, net_off, bus_off, v_dc_inj, v_ac_inj, w_inj)
        k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h, sgp, sg_idx, sg_eps, sg_mech, ibrp, ibr_idx,
                 ibr_eps, ibr_mech, app_bus, A_net, inj_gain, src_term, net_off, bus_off,
                 v_dc_inj, v_ac_inj, w_inj)
        k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h, sgp, sg_idx, sg_eps, sg_mech, ibrp, ibr_idx,
                 ibr_eps, ibr_mech, app_bus, A_net, inj_gain, src_term, net_off, bus_off,
                 v_dc_inj, v_ac_inj, w_inj)
        k4 = rhs(x + h * k3, t + h, sgp, sg_idx, sg_eps, sg_mech, ibrp, ibr_idx, ibr_eps,
                 ibr_mech, app_bus, A_net, inj_gain, src_term, net_off, bus_off, v_dc_inj,
                 v_ac_inj, w_inj)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = False
        for i in range(n):
            if not (abs(x[i]) <= limit):
                bad = True
                break
        # the dc link cannot reverse polarity; treat it as divergence
        for j in range(ibrp.shape[0]):
            if x[ibr_idx[5, j]] <= 0.0:
                bad = True
        if bad:
            return X, k
        X[:, k + 1] = x
    return X, n_steps
