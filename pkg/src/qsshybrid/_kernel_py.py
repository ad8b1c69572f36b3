"""Pure numpy residual/Jacobian assembly (fallback for the compiled kernel)."""

import numpy as np

from .devices import (
    avr_derivatives,
    generator_derivatives,
    governor_dynamics,
    oxl_derivative,
    recovery_load_dynamics,
    static_load,
)


def _cols(par, names):
    return {n: par[:, i] for i, n in enumerate(names)}


_GEN = ("ra", "xd", "xq", "xd_p", "xq_p", "Td0_p", "Tq0_p", "H", "D", "pm0", "efd0")
_AVR = ("Tr", "Ka", "Ta", "Te", "vr_min", "vr_max", "efd_min", "efd_max", "Vref")
_OXL = ("i_lim", "K", "T_reset")
_GOV = ("R", "Ts", "Tt", "pref", "p_max")
_RL = ("P0", "Q0", "Tp", "Tq", "alpha_s", "alpha_t", "beta_s", "beta_t")
_SL = ("P0", "Q0", "alpha", "beta")


def evaluate(kd, U, oxl_active, want_jac=True):
    nx, nz, ny, nb = kd.nx, kd.nz, kd.ny, kd.nb
    N = nx + nz + ny
    R = np.zeros(N)
    J = np.zeros((N, N)) if want_jac else None
    oy = nx + nz
    ng, na, no = kd.gbus.size, kd.agen.size, kd.ogen.size
    nv, nr, ns = kd.vgen.size, kd.rbus.size, kd.sbus.size

    th = U[oy: oy + nb]
    V = U[oy + nb: oy + 2 * nb]
    rowP = oy + np.arange(nb)
    rowQ = oy + nb + np.arange(nb)
    colT = rowP
    colV = rowQ

    def put(rows, cols, vals):
        if want_jac:
            np.add.at(J, (rows, cols), vals)

    # generators
    gi = 4 * np.arange(ng)
    oa = 4 * ng
    oo = nx
    ov = nx + no
    orl = nx + no + 2 * nv
    cid = oy + 2 * nb + 2 * np.arange(ng)
    ciq = cid + 1
    gp = _cols(kd.gpar, _GEN)
    has_gov = kd.ggov >= 0
    has_avr = kd.gavr >= 0
    col_pm = ov + 2 * kd.ggov + 1
    col_efd = oa + 3 * kd.gavr + 2
    pm = np.where(has_gov, U[np.where(has_gov, col_pm, 0)], gp["pm0"])
    efd = np.where(has_avr, U[np.where(has_avr, col_efd, 0)], gp["efd0"])
    gb = kd.gbus
    val, d = generator_derivatives(
        gp, U[gi], U[gi + 1], U[gi + 2], U[gi + 3], V[gb], th[gb], U[cid], U[ciq], pm, efd,
        kd.omega_b,
    )
    R[gi] = val["delta"]
    R[gi + 1] = val["omega"]
    R[gi + 2] = val["eqp"]
    R[gi + 3] = val["edp"]
    R[cid] = val["s_d"]
    R[ciq] = val["s_q"]
    np.add.at(R, rowP[gb], val["P"])
    np.add.at(R, rowQ[gb], val["Q"])
    if want_jac:
        rows = {"delta": gi, "omega": gi + 1, "eqp": gi + 2, "edp": gi + 3,
                "s_d": cid, "s_q": ciq, "P": rowP[gb], "Q": rowQ[gb]}
        cols = {"delta": gi, "omega": gi + 1, "eqp": gi + 2, "edp": gi + 3,
                "theta": colT[gb], "V": colV[gb], "id": cid, "iq": ciq}
        for (r, c), v in d.items():
            if c == "pm":
                m = has_gov
                put(rows[r][m], col_pm[m], v[m])
            elif c == "efd":
                m = has_avr
                put(rows[r][m], col_efd[m], v[m])
            else:
                put(rows[r], cols[c], v)

    # avrs
    if na:
        ai = oa + 3 * np.arange(na)
        ap = _cols(kd.apar, _AVR)
        has_oxl = kd.aoxl >= 0
        col_ox = oo + kd.aoxl
        voxl = np.where(has_oxl, U[np.where(has_oxl, col_ox, 0)], 0.0)
        agb = gb[kd.agen]
        val, d = avr_derivatives(ap, V[agb], U[ai], U[ai + 1], U[ai + 2], voxl)
        R[ai] = val["vm"]
        R[ai + 1] = val["vr"]
        R[ai + 2] = val["efd"]
        if want_jac:
            rows = {"vm": ai, "vr": ai + 1, "efd": ai + 2}
            cols = {"vm": ai, "vr": ai + 1, "efd": ai + 2, "V": colV[agb]}
            for (r, c), v in d.items():
                v = np.broadcast_to(v, ai.shape)
                if c == "voxl":
                    put(rows[r][has_oxl], col_ox[has_oxl], v[has_oxl])
                else:
                    put(rows[r], cols[c], v)

    # oxls
    if no:
        oi = oo + np.arange(no)
        op = _cols(kd.opar, _OXL)
        og = kd.ogen
        xd_m = gp["xd"][og] - gp["xd_p"][og]
        i_f = U[gi[og] + 2] + xd_m * U[cid[og]]
        rate, d_v, d_if = oxl_derivative(op, U[oi], i_f, np.asarray(oxl_active, bool))
        R[oi] = rate
        put(oi, oi, d_v)
        put(oi, gi[og] + 2, d_if)
        put(oi, cid[og], d_if * xd_m)

    # governors
    if nv:
        vi = ov + 2 * np.arange(nv)
        vp = _cols(kd.vpar, _GOV)
        wcol = gi[kd.vgen] + 1
        val, d = governor_dynamics(vp, U[vi], U[vi + 1], U[wcol])
        R[vi] = val["g1"]
        R[vi + 1] = val["g2"]
        if want_jac:
            rows = {"g1": vi, "g2": vi + 1}
            cols = {"g1": vi, "g2": vi + 1, "omega": wcol}
            for (r, c), v in d.items():
                put(rows[r], cols[c], np.broadcast_to(v, vi.shape))

    # recovery loads
    if nr:
        ri = orl + 2 * np.arange(nr)
        rp = _cols(kd.rpar, _RL)
        rb = kd.rbus
        val, d = recovery_load_dynamics(rp, U[ri], U[ri + 1], V[rb])
        R[ri] = val["xp"]
        R[ri + 1] = val["xq"]
        np.add.at(R, rowP[rb], -val["P"])
        np.add.at(R, rowQ[rb], -val["Q"])
        if want_jac:
            rows = {"xp": ri, "xq": ri + 1, "P": rowP[rb], "Q": rowQ[rb]}
            cols = {"xp": ri, "xq": ri + 1, "V": colV[rb]}
            sign = {"xp": 1.0, "xq": 1.0, "P": -1.0, "Q": -1.0}
            for (r, c), v in d.items():
                put(rows[r], cols[c], sign[r] * np.broadcast_to(v, ri.shape))

    # static loads
    if ns:
        sp_ = _cols(kd.spar, _SL)
        sb = kd.sbus
        val, d = static_load(sp_, V[sb])
        np.add.at(R, rowP[sb], -val["P"])
        np.add.at(R, rowQ[sb], -val["Q"])
        put(rowP[sb], colV[sb], -d[("P", "V")])
        put(rowQ[sb], colV[sb], -d[("Q", "V")])

    # network
    Y = kd.Ydense
    Vc = V * np.exp(1j * th)
    I = Y @ Vc
    S = Vc * np.conj(I)
    R[rowP] -= S.real
    R[rowQ] -= S.imag
    if want_jac:
        dV = np.diag(Vc)
        dS_dth = 1j * dV @ np.conj(np.diag(I) - Y @ dV)
        dS_dV = dV @ np.conj(Y @ np.diag(Vc / V)) + np.conj(np.diag(I)) @ np.diag(Vc / V)
        J[oy: oy + nb, oy: oy + nb] -= dS_dth.real
        J[oy: oy + nb, oy + nb: oy + 2 * nb] -= dS_dV.real
        J[oy + nb: oy + 2 * nb, oy: oy + nb] -= dS_dth.imag
        J[oy + nb: oy + 2 * nb, oy + nb: oy + 2 * nb] -= dS_dV.imag

    # pinned buses: the slack and any bus cut off from it
    for s, th_s, v_s in zip(kd.pin, kd.pin_th, kd.pin_v):
        R[oy + s] = th[s] - th_s
        R[oy + nb + s] = V[s] - v_s
        if want_jac:
            J[oy + s, :] = 0.0
            J[oy + nb + s, :] = 0.0
            J[oy + s, oy + s] = 1.0
            J[oy + nb + s, oy + nb + s] = 1.0
    return R, J
