# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled residual/Jacobian assembly.

Same equations and layout as ``_kernel_py``; loops replace numpy
broadcasting so one call costs a few microseconds.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, pow, fmax, fmin

cnp.import_array()


cdef inline double _clip(double v, double lo, double hi, double* slope) noexcept nogil:
    if v < lo:
        slope[0] = 0.0
        return lo
    if v > hi:
        slope[0] = 0.0
        return hi
    slope[0] = 1.0
    return v


cdef inline double _powd(double V, double e, double* d) noexcept nogil:
    cdef double Vs = fmax(V, 1e-6)
    d[0] = e * pow(Vs, e - 1.0)
    return pow(Vs, e)


def evaluate(kd, double[::1] U, const signed char[::1] oxl_active, bint want_jac=True):
    cdef Py_ssize_t nx = kd.nx, nz = kd.nz, ny = kd.ny, nb = kd.nb
    cdef Py_ssize_t N = nx + nz + ny
    cdef cnp.ndarray[cnp.float64_t, ndim=1] R_arr = np.zeros(N)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] J_arr
    cdef double[::1] R = R_arr
    cdef double[:, ::1] J
    if want_jac:
        J_arr = np.zeros((N, N))
        J = J_arr
    else:
        J_arr = None

    cdef const Py_ssize_t[::1] gbus = kd.gbus
    cdef const double[:, ::1] gpar = kd.gpar
    cdef const Py_ssize_t[::1] gavr = kd.gavr
    cdef const Py_ssize_t[::1] ggov = kd.ggov
    cdef const Py_ssize_t[::1] agen = kd.agen
    cdef const double[:, ::1] apar = kd.apar
    cdef const Py_ssize_t[::1] aoxl = kd.aoxl
    cdef const Py_ssize_t[::1] ogen = kd.ogen
    cdef const double[:, ::1] opar = kd.opar
    cdef const Py_ssize_t[::1] vgen = kd.vgen
    cdef const double[:, ::1] vpar = kd.vpar
    cdef const Py_ssize_t[::1] rbus = kd.rbus
    cdef const double[:, ::1] rpar = kd.rpar
    cdef const Py_ssize_t[::1] sbus = kd.sbus
    cdef const double[:, ::1] spar = kd.spar
    cdef const Py_ssize_t[::1] indptr = kd.indptr
    cdef const Py_ssize_t[::1] indices = kd.indices
    cdef const double[::1] Gd = kd.Gd
    cdef const double[::1] Bd = kd.Bd
    cdef const Py_ssize_t[::1] pin = kd.pin
    cdef const double[::1] pin_th = kd.pin_th
    cdef const double[::1] pin_v = kd.pin_v
    cdef Py_ssize_t npin = pin.shape[0]
    cdef double wb = kd.omega_b

    cdef Py_ssize_t ng = gbus.shape[0], na = agen.shape[0], no = ogen.shape[0]
    cdef Py_ssize_t nv = vgen.shape[0], nr = rbus.shape[0], ns = sbus.shape[0]
    cdef Py_ssize_t oy = nx + nz, oa = 4 * ng, oo = nx, ov = nx + no, orl = nx + no + 2 * nv
    cdef Py_ssize_t i, j, k, b, r0, cd, cq, cth, cv, rp, rq, c_pm, c_efd, c_ox
    cdef double ra, xd, xq, xdp, xqp, Td0, Tq0, H, D, M
    cdef double delta, omega, eqp, edp, Vb, thb, idd, iqq, s, c, vd, vq, Te, pm, efd
    cdef double Tr, Ka, Ta, Te_, vm, vr, voxl, tgt, drv, sl1, sl2
    cdef double ilim, K, Trs, i_f, integ, decay, xdm
    cdef double Rg, Ts, Tt, g1, g2, w
    cdef double P0, Q0, Tp, Tq, xp, xq_, pas, das, pat, dat, pbs, dbs, pbt, dbt
    cdef double G, B, Vi, Vj, tij, cij, sij, Pi, Qi

    # generators
    for i in range(ng):
        r0 = 4 * i
        b = gbus[i]
        ra = gpar[i, 0]; xd = gpar[i, 1]; xq = gpar[i, 2]; xdp = gpar[i, 3]; xqp = gpar[i, 4]
        Td0 = gpar[i, 5]; Tq0 = gpar[i, 6]; H = gpar[i, 7]; D = gpar[i, 8]
        M = 2.0 * H
        delta = U[r0]; omega = U[r0 + 1]; eqp = U[r0 + 2]; edp = U[r0 + 3]
        cth = oy + b
        cv = oy + nb + b
        Vb = U[cv]; thb = U[cth]
        cd = oy + 2 * nb + 2 * i
        cq = cd + 1
        idd = U[cd]; iqq = U[cq]
        if ggov[i] >= 0:
            c_pm = ov + 2 * ggov[i] + 1
            pm = U[c_pm]
        else:
            c_pm = -1
            pm = gpar[i, 9]
        if gavr[i] >= 0:
            c_efd = oa + 3 * gavr[i] + 2
            efd = U[c_efd]
        else:
            c_efd = -1
            efd = gpar[i, 10]
        s = sin(delta - thb)
        c = cos(delta - thb)
        vd = Vb * s
        vq = Vb * c
        Te = edp * idd + eqp * iqq + (xqp - xdp) * idd * iqq
        rp = oy + b
        rq = oy + nb + b
        R[r0] = wb * omega
        R[r0 + 1] = (pm - Te - D * omega) / M
        R[r0 + 2] = (efd - eqp - (xd - xdp) * idd) / Td0
        R[r0 + 3] = (-edp + (xq - xqp) * iqq) / Tq0
        R[cd] = edp - vd - ra * idd + xqp * iqq
        R[cq] = eqp - vq - ra * iqq - xdp * idd
        R[rp] += vd * idd + vq * iqq
        R[rq] += vq * idd - vd * iqq
        if want_jac:
            J[r0, r0 + 1] += wb
            J[r0 + 1, r0 + 1] += -D / M
            J[r0 + 1, r0 + 2] += -iqq / M
            J[r0 + 1, r0 + 3] += -idd / M
            J[r0 + 1, cd] += -(edp + (xqp - xdp) * iqq) / M
            J[r0 + 1, cq] += -(eqp + (xqp - xdp) * idd) / M
            if c_pm >= 0:
                J[r0 + 1, c_pm] += 1.0 / M
            J[r0 + 2, r0 + 2] += -1.0 / Td0
            J[r0 + 2, cd] += -(xd - xdp) / Td0
            if c_efd >= 0:
                J[r0 + 2, c_efd] += 1.0 / Td0
            J[r0 + 3, r0 + 3] += -1.0 / Tq0
            J[r0 + 3, cq] += (xq - xqp) / Tq0
            J[cd, r0 + 3] += 1.0
            J[cd, r0] += -Vb * c
            J[cd, cth] += Vb * c
            J[cd, cv] += -s
            J[cd, cd] += -ra
            J[cd, cq] += xqp
            J[cq, r0 + 2] += 1.0
            J[cq, r0] += Vb * s
            J[cq, cth] += -Vb * s
            J[cq, cv] += -c
            J[cq, cq] += -ra
            J[cq, cd] += -xdp
            J[rp, r0] += Vb * (c * idd - s * iqq)
            J[rp, cth] += -Vb * (c * idd - s * iqq)
            J[rp, cv] += s * idd + c * iqq
            J[rp, cd] += Vb * s
            J[rp, cq] += Vb * c
            J[rq, r0] += -Vb * (s * idd + c * iqq)
            J[rq, cth] += Vb * (s * idd + c * iqq)
            J[rq, cv] += c * idd - s * iqq
            J[rq, cd] += Vb * c
            J[rq, cq] += -Vb * s

    # avrs
    for j in range(na):
        r0 = oa + 3 * j
        i = agen[j]
        cv = oy + nb + gbus[i]
        Tr = apar[j, 0]; Ka = apar[j, 1]; Ta = apar[j, 2]; Te_ = apar[j, 3]
        vm = U[r0]; vr = U[r0 + 1]; efd = U[r0 + 2]
        if aoxl[j] >= 0:
            c_ox = oo + aoxl[j]
            voxl = U[c_ox]
        else:
            c_ox = -1
            voxl = 0.0
        tgt = _clip(Ka * (apar[j, 8] - vm - voxl), apar[j, 4], apar[j, 5], &sl1)
        drv = _clip(vr, apar[j, 6], apar[j, 7], &sl2)
        R[r0] = (U[cv] - vm) / Tr
        R[r0 + 1] = (tgt - vr) / Ta
        R[r0 + 2] = (drv - efd) / Te_
        if want_jac:
            J[r0, cv] += 1.0 / Tr
            J[r0, r0] += -1.0 / Tr
            J[r0 + 1, r0 + 1] += -1.0 / Ta
            J[r0 + 1, r0] += -sl1 * Ka / Ta
            if c_ox >= 0:
                J[r0 + 1, c_ox] += -sl1 * Ka / Ta
            J[r0 + 2, r0 + 2] += -1.0 / Te_
            J[r0 + 2, r0 + 1] += sl2 / Te_

    # oxls
    for j in range(no):
        r0 = oo + j
        i = ogen[j]
        ilim = opar[j, 0]; K = opar[j, 1]; Trs = opar[j, 2]
        xdm = gpar[i, 1] - gpar[i, 3]
        cd = oy + 2 * nb + 2 * i
        i_f = U[4 * i + 2] + xdm * U[cd]
        integ = K * (i_f - ilim)
        decay = -U[r0] / Trs
        if oxl_active[j] and integ >= decay:
            R[r0] = integ
            if want_jac:
                J[r0, 4 * i + 2] += K
                J[r0, cd] += K * xdm
        else:
            R[r0] = decay
            if want_jac:
                J[r0, r0] += -1.0 / Trs

    # governors
    for j in range(nv):
        r0 = ov + 2 * j
        i = vgen[j]
        Rg = vpar[j, 0]; Ts = vpar[j, 1]; Tt = vpar[j, 2]
        g1 = U[r0]; g2 = U[r0 + 1]; w = U[4 * i + 1]
        tgt = _clip(vpar[j, 3] - w / Rg, 0.0, vpar[j, 4], &sl1)
        drv = _clip(g1, 0.0, vpar[j, 4], &sl2)
        R[r0] = (tgt - g1) / Ts
        R[r0 + 1] = (drv - g2) / Tt
        if want_jac:
            J[r0, r0] += -1.0 / Ts
            J[r0, 4 * i + 1] += -sl1 / (Rg * Ts)
            J[r0 + 1, r0 + 1] += -1.0 / Tt
            J[r0 + 1, r0] += sl2 / Tt

    # recovery loads
    for j in range(nr):
        r0 = orl + 2 * j
        b = rbus[j]
        cv = oy + nb + b
        rp = oy + b
        rq = oy + nb + b
        P0 = rpar[j, 0]; Q0 = rpar[j, 1]; Tp = rpar[j, 2]; Tq = rpar[j, 3]
        Vb = U[cv]
        pas = _powd(Vb, rpar[j, 4], &das)
        pat = _powd(Vb, rpar[j, 5], &dat)
        pbs = _powd(Vb, rpar[j, 6], &dbs)
        pbt = _powd(Vb, rpar[j, 7], &dbt)
        xp = U[r0]; xq_ = U[r0 + 1]
        R[r0] = -xp / Tp + P0 * (pas - pat)
        R[r0 + 1] = -xq_ / Tq + Q0 * (pbs - pbt)
        R[rp] -= xp / Tp + P0 * pat
        R[rq] -= xq_ / Tq + Q0 * pbt
        if want_jac:
            J[r0, r0] += -1.0 / Tp
            J[r0, cv] += P0 * (das - dat)
            J[r0 + 1, r0 + 1] += -1.0 / Tq
            J[r0 + 1, cv] += Q0 * (dbs - dbt)
            J[rp, r0] += -1.0 / Tp
            J[rp, cv] += -P0 * dat
            J[rq, r0 + 1] += -1.0 / Tq
            J[rq, cv] += -Q0 * dbt

    # static loads
    for j in range(ns):
        b = sbus[j]
        cv = oy + nb + b
        Vb = U[cv]
        pas = _powd(Vb, spar[j, 2], &das)
        pbs = _powd(Vb, spar[j, 3], &dbs)
        R[oy + b] -= spar[j, 0] * pas
        R[oy + nb + b] -= spar[j, 1] * pbs
        if want_jac:
            J[oy + b, cv] += -spar[j, 0] * das
            J[oy + nb + b, cv] += -spar[j, 1] * dbs

    # network: mismatch rows subtract the flows leaving each bus
    for i in range(nb):
        Vi = U[oy + nb + i]
        Pi = 0.0
        Qi = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            G = Gd[k]; B = Bd[k]
            Vj = U[oy + nb + j]
            tij = U[oy + i] - U[oy + j]
            cij = cos(tij); sij = sin(tij)
            Pi += Vi * Vj * (G * cij + B * sij)
            Qi += Vi * Vj * (G * sij - B * cij)
            if want_jac and j != i:
                J[oy + i, oy + j] -= Vi * Vj * (G * sij - B * cij)
                J[oy + i, oy + nb + j] -= Vi * (G * cij + B * sij)
                J[oy + nb + i, oy + j] -= -Vi * Vj * (G * cij + B * sij)
                J[oy + nb + i, oy + nb + j] -= Vi * (G * sij - B * cij)
        R[oy + i] -= Pi
        R[oy + nb + i] -= Qi
        if want_jac:
            G = 0.0
            B = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                if indices[k] == i:
                    G = Gd[k]
                    B = Bd[k]
            J[oy + i, oy + i] -= -Qi - B * Vi * Vi
            J[oy + i, oy + nb + i] -= Pi / Vi + G * Vi
            J[oy + nb + i, oy + i] -= Pi - G * Vi * Vi
            J[oy + nb + i, oy + nb + i] -= Qi / Vi - B * Vi

    # pinned buses: the slack and any bus cut off from it
    for j in range(npin):
        b = pin[j]
        R[oy + b] = U[oy + b] - pin_th[j]
        R[oy + nb + b] = U[oy + nb + b] - pin_v[j]
        if want_jac:
            for k in range(N):
                J[oy + b, k] = 0.0
                J[oy + nb + b, k] = 0.0
            J[oy + b, oy + b] = 1.0
            J[oy + nb + b, oy + nb + b] = 1.0
    return R_arr, J_arr
