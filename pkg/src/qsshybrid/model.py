"""Global model assembly: state partition, residuals, Jacobian blocks, discrete updates.

The unknown vector used by every solver is ``U = [x, z_c, y]`` and the
residual rows are ``[f, h_c, g]`` in the same order, so the Jacobian of a
model is square with its diagonal blocks aligned to the partition.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import kernel
from .devices import (
    LtcState,
    OxlTimer,
    field_current,
    ltc_due,
    ltc_monitor,
    ltc_transition,
    oxl_dynamics,
    time_constants,
)
from .errors import CaseValidationError
from .network import build_admittance, solve_power_flow

# ---------------------------------------------------------------------------
# Partition and state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatePartition:
    """Names of the four variable groups plus per-device slices into them."""

    x_names: tuple
    zc_names: tuple
    zd_names: tuple
    y_names: tuple
    devices: dict = field(default_factory=dict)
    oxl_index: tuple = ()

    @property
    def nx(self):
        return len(self.x_names)

    @property
    def nz(self):
        return len(self.zc_names)

    @property
    def ny(self):
        return len(self.y_names)

    @property
    def n(self):
        return self.nx + self.nz + self.ny

    @property
    def x_slice(self):
        return slice(0, self.nx)

    @property
    def zc_slice(self):
        return slice(self.nx, self.nx + self.nz)

    @property
    def y_slice(self):
        return slice(self.nx + self.nz, self.n)

    @property
    def names(self):
        """Column names of a trace row in deterministic order."""
        return self.x_names + self.zc_names + self.zd_names + self.y_names

    def gather(self, state):
        return np.concatenate([state.x, state.zc, state.y])

    def scatter(self, U, template):
        U = np.asarray(U, dtype=float)
        return replace(
            template,
            x=U[: self.nx].copy(),
            zc=U[self.nx: self.nx + self.nz].copy(),
            y=U[self.nx + self.nz:].copy(),
        )


@dataclass
class ControlState:
    """Discrete bookkeeping that is not part of ``z_d``: timers, topology, load scaling."""

    ltc: tuple = ()
    oxl: tuple = ()
    out: frozenset = frozenset()
    load_scale: tuple = ()
    k: int = 0

    def copy(self):
        return ControlState(
            tuple(s.copy() for s in self.ltc),
            tuple(s.copy() for s in self.oxl),
            self.out,
            self.load_scale,
            self.k,
        )

    def oxl_active(self):
        return np.array([s.active for s in self.oxl], dtype=np.int8)


@dataclass
class State:
    t: float
    x: np.ndarray
    zc: np.ndarray
    zd: np.ndarray
    y: np.ndarray
    ctrl: ControlState = field(default_factory=ControlState)

    def copy(self):
        return State(
            self.t, self.x.copy(), self.zc.copy(), self.zd.copy(), self.y.copy(), self.ctrl.copy()
        )

    def row(self):
        return np.concatenate([self.x, self.zc, self.zd, self.y])


@dataclass
class JacobianBlocks:
    """Dense Jacobian blocks; ``F*`` rows are ``f``, ``H*`` rows ``h_c``, ``G*`` rows ``g``."""

    Fx: np.ndarray
    Fz: np.ndarray
    Fy: np.ndarray
    Hx: np.ndarray
    Hz: np.ndarray
    Hy: np.ndarray
    Gx: np.ndarray
    Gz: np.ndarray
    Gy: np.ndarray

    @classmethod
    def split(cls, J, nx, nz):
        a, b = nx, nx + nz
        return cls(
            J[:a, :a], J[:a, a:b], J[:a, b:],
            J[a:b, :a], J[a:b, a:b], J[a:b, b:],
            J[b:, :a], J[b:, a:b], J[b:, b:],
        )

    def fast(self):
        """Bordered matrix ``[[Fx, Fy], [Gx, Gy]]`` of the transient model."""
        return np.block([[self.Fx, self.Fy], [self.Gx, self.Gy]])

    def reduced(self):
        """``Fx - Fy Gy^-1 Gx``."""
        if self.Gy.size == 0:
            return self.Fx.copy()
        return self.Fx - self.Fy @ np.linalg.solve(self.Gy, self.Gx)


class SystemModel:
    """Base interface used by the engines.

    Subclasses implement :meth:`evaluate`.  The discrete hooks default to a
    system without discrete dynamics.
    """

    partition: StatePartition
    eps: float = 1.0

    def evaluate(self, U, state, jac=True):
        """Return ``(R, J)`` with ``R = [f, h_c, g]`` at unknowns ``U``.

        ``state`` supplies ``z_d`` and the control bookkeeping.
        """
        raise NotImplementedError

    # -- convenience wrappers -------------------------------------------------

    def eval_residuals(self, state):
        """``(h_c, f, g)`` at ``state``."""
        p = self.partition
        R, _ = self.evaluate(p.gather(state), state, jac=False)
        return R[p.zc_slice].copy(), R[p.x_slice].copy(), R[p.y_slice].copy()

    def eval_jacobian_blocks(self, state):
        p = self.partition
        _, J = self.evaluate(p.gather(state), state, jac=True)
        return JacobianBlocks.split(J, p.nx, p.nz)

    # -- discrete hooks ---------------------------------------------------------

    def update_monitors(self, state):
        return state

    def eval_discrete(self, state):
        """Apply all transitions due at ``state.t``; return ``(state, jumped, k)``."""
        return state, False, state.ctrl.k

    def apply_event(self, state, event):
        raise NotImplementedError(f"{type(self).__name__} has no exogenous events")

    def check_bounds(self, state):
        """Name of the violated bound, or ``None`` inside the study region."""
        if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.y))):
            return "non-finite state"
        return None

    def oxl_values(self, state):
        return state.zc[list(self.partition.oxl_index)]

    def oxl_excited(self, state):
        """True when any limiter is over its limit or carries a non-zero state."""
        return False

    def timers_pending(self, state):
        """True while a discrete device could still act without new disturbances."""
        return False


class FunctionModel(SystemModel):
    """Model given by plain callables, used for toy systems and oracles.

    ``fun(x, zc, y, zd)`` returns ``(f, h, g)``; ``jac`` returns the full
    Jacobian in ``[x, zc, y]`` column order.  When ``jac`` is omitted central
    differences are used.
    """

    def __init__(self, nx, nz, ny, fun, jac=None, nzd=0, oxl_index=(), eps=1.0):
        self.partition = StatePartition(
            tuple(f"x{i}" for i in range(nx)),
            tuple(f"z{i}" for i in range(nz)),
            tuple(f"zd{i}" for i in range(nzd)),
            tuple(f"y{i}" for i in range(ny)),
            oxl_index=tuple(oxl_index),
        )
        self.fun = fun
        self.jac = jac
        self.eps = eps

    def _R(self, U, zd):
        p = self.partition
        f, h, g = self.fun(U[: p.nx], U[p.nx: p.nx + p.nz], U[p.nx + p.nz:], zd)
        return np.concatenate([np.atleast_1d(f), np.atleast_1d(h), np.atleast_1d(g)]).astype(float)

    def evaluate(self, U, state, jac=True):
        U = np.asarray(U, dtype=float)
        R = self._R(U, state.zd)
        if not jac:
            return R, None
        p = self.partition
        if self.jac is not None:
            J = np.asarray(
                self.jac(U[: p.nx], U[p.nx: p.nx + p.nz], U[p.nx + p.nz:], state.zd), dtype=float
            ).reshape(p.n, p.n)
        else:
            J = np.empty((p.n, p.n))
            for j in range(p.n):
                h = 1e-6 * max(1.0, abs(U[j]))
                e = np.zeros(p.n)
                e[j] = h
                J[:, j] = (self._R(U + e, state.zd) - self._R(U - e, state.zd)) / (2 * h)
        return R, J

    def state(self, x=(), zc=(), y=(), zd=(), t=0.0):
        return State(
            t,
            np.atleast_1d(np.asarray(x, float)),
            np.atleast_1d(np.asarray(zc, float)),
            np.atleast_1d(np.asarray(zd, float)),
            np.atleast_1d(np.asarray(y, float)),
        )


# ---------------------------------------------------------------------------
# Power system model
# ---------------------------------------------------------------------------

GEN_COLS = ("ra", "xd", "xq", "xd_p", "xq_p", "Td0_p", "Tq0_p", "H", "D", "pm0", "efd0")
AVR_COLS = ("Tr", "Ka", "Ta", "Te", "vr_min", "vr_max", "efd_min", "efd_max", "Vref")
OXL_COLS = ("i_lim", "K", "T_reset")
GOV_COLS = ("R", "Ts", "Tt", "pref", "p_max")
RL_COLS = ("P0", "Q0", "Tp", "Tq", "alpha_s", "alpha_t", "beta_s", "beta_t")
SL_COLS = ("P0", "Q0", "alpha", "beta")


class KernelData:
    """Flat arrays consumed by the assembly kernels (both backends)."""

    def __init__(self, **kw):
        self.__dict__.update(kw)


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.intp)


def _par(rows, ncols):
    arr = np.asarray(rows, dtype=float).reshape(-1, ncols)
    return np.ascontiguousarray(arr)


class PowerSystemModel(SystemModel):
    """Long-term stability model of a :class:`~qsshybrid.case.Case`.

    Built by :func:`build_model`, which also solves the initial power flow.
    """

    def __init__(self, case, init):
        self.case = case
        self.bus_ids = tuple(sorted(b.id for b in case.buses))
        self.bus_pos = {b: i for i, b in enumerate(self.bus_ids)}
        nb = len(self.bus_ids)
        gens = list(case.generators)
        gpos = {g.id: i for i, g in enumerate(gens)}
        avrs, oxls, govs = list(case.avrs), list(case.oxls), list(case.governors)
        rls, sls, ltcs = list(case.recovery_loads), list(case.static_loads), list(case.ltcs)
        ng, na, no, nv, nr = len(gens), len(avrs), len(oxls), len(govs), len(rls)
        self.gens, self.avrs, self.oxls, self.govs = gens, avrs, oxls, govs
        self.rloads, self.sloads, self.ltcs = rls, sls, ltcs

        x_names, zc_names, y_names = [], [], []
        devices = {}
        for g in gens:
            devices[f"gen:{g.id}"] = ("x", slice(len(x_names), len(x_names) + 4))
            x_names += [f"delta_{g.id}", f"omega_{g.id}", f"eqp_{g.id}", f"edp_{g.id}"]
        for a in avrs:
            devices[f"avr:{a.gen}"] = ("x", slice(len(x_names), len(x_names) + 3))
            x_names += [f"vm_{a.gen}", f"vr_{a.gen}", f"efd_{a.gen}"]
        for o in oxls:
            devices[f"oxl:{o.gen}"] = ("zc", slice(len(zc_names), len(zc_names) + 1))
            zc_names += [f"voxl_{o.gen}"]
        for v in govs:
            devices[f"gov:{v.gen}"] = ("zc", slice(len(zc_names), len(zc_names) + 2))
            zc_names += [f"gov1_{v.gen}", f"pm_{v.gen}"]
        for r in rls:
            devices[f"rload:{r.id}"] = ("zc", slice(len(zc_names), len(zc_names) + 2))
            zc_names += [f"xp_{r.id}", f"xq_{r.id}"]
        y_names += [f"theta_{b}" for b in self.bus_ids]
        y_names += [f"V_{b}" for b in self.bus_ids]
        for g in gens:
            y_names += [f"id_{g.id}", f"iq_{g.id}"]
        zd_names = [f"tap_{t.id}" for t in ltcs]
        self.partition = StatePartition(
            tuple(x_names), tuple(zc_names), tuple(zd_names), tuple(y_names),
            devices, tuple(range(no)),
        )
        self.nb = nb
        slack = [self.bus_pos[b.id] for b in case.buses if b.kind == "slack"][0]
        self.slack = slack
        self._vset, self._thset = float(init["vset"]), float(init["thset"])
        self.omega_b = 2.0 * np.pi * case.freq
        tc = time_constants(case)
        self.eps = 1.0 / max(tc) if tc else 1.0

        avr_of = {a.gen: j for j, a in enumerate(avrs)}
        gov_of = {v.gen: j for j, v in enumerate(govs)}
        oxl_of = {o.gen: j for j, o in enumerate(oxls)}
        self._static = dict(
            nb=nb, nx=len(x_names), nz=len(zc_names), ny=len(y_names),
            omega_b=self.omega_b,
            gbus=_idx([self.bus_pos[g.bus] for g in gens]),
            gpar=_par([[getattr(g, c) for c in GEN_COLS[:9]] + [init["pm0"][i], init["efd0"][i]]
                       for i, g in enumerate(gens)], len(GEN_COLS)),
            gavr=_idx([avr_of.get(g.id, -1) for g in gens]),
            ggov=_idx([gov_of.get(g.id, -1) for g in gens]),
            agen=_idx([gpos[a.gen] for a in avrs]),
            apar=_par([[getattr(a, c) for c in AVR_COLS[:8]] + [init["vref"][j]]
                       for j, a in enumerate(avrs)], len(AVR_COLS)),
            aoxl=_idx([oxl_of.get(a.gen, -1) for a in avrs]),
            ogen=_idx([gpos[o.gen] for o in oxls]),
            opar=_par([[o.i_lim, o.K, o.T_reset] for o in oxls], len(OXL_COLS)),
            vgen=_idx([gpos[v.gen] for v in govs]),
            vpar=_par([[v.R, v.Ts, v.Tt, init["pref"][j], v.p_max] for j, v in enumerate(govs)],
                      len(GOV_COLS)),
            rbus=_idx([self.bus_pos[r.bus] for r in rls]),
            sbus=_idx([self.bus_pos[s.bus] for s in sls]),
        )
        self._rl_base = _par([[init["rl_P0"][j], init["rl_Q0"][j], r.Tp, r.Tq, r.alpha_s,
                               r.alpha_t, r.beta_s, r.beta_t] for j, r in enumerate(rls)],
                             len(RL_COLS))
        self._sl_base = _par([[init["sl_P0"][j], init["sl_Q0"][j], s.alpha, s.beta]
                              for j, s in enumerate(sls)], len(SL_COLS))
        self.ltc_vref = tuple(init["ltc_vref"])
        self.ltc_branch_pos = tuple(t.branch for t in ltcs)
        self.ltc_bus = tuple(self.bus_pos[t.controlled_bus] for t in ltcs)
        self.load_ids = tuple(r.id for r in rls) + tuple(s.id for s in sls)
        self._kd_cache = {}
        self._y_cache = {}

    # -- network / kernel data ----------------------------------------------------

    def admittance(self, zd, out):
        key = (tuple(np.asarray(zd, float).tolist()), out)
        Y = self._y_cache.get(key)
        if Y is None:
            taps = {b: float(n) for b, n in zip(self.ltc_branch_pos, zd)}
            Y = build_admittance(self.case, taps=taps, out_of_service=out)
            self._y_cache[key] = Y
        return Y

    def kernel_data(self, state):
        ctrl = state.ctrl
        key = (tuple(np.asarray(state.zd, float).tolist()), ctrl.out, ctrl.load_scale)
        kd = self._kd_cache.get(key)
        if kd is None:
            Y = self.admittance(state.zd, ctrl.out).matrix
            nr = len(self.rloads)
            scale = np.asarray(ctrl.load_scale, dtype=float) if ctrl.load_scale else np.ones(
                nr + len(self.sloads))
            rpar = self._rl_base.copy()
            rpar[:, :2] *= scale[:nr, None]
            spar = self._sl_base.copy()
            spar[:, :2] *= scale[nr:, None]
            pin, pin_th, pin_v = self._pins(Y)
            kd = KernelData(
                **self._static, pin=pin, pin_th=pin_th, pin_v=pin_v,
                indptr=_idx(Y.indptr), indices=_idx(Y.indices),
                Gd=np.ascontiguousarray(Y.data.real), Bd=np.ascontiguousarray(Y.data.imag),
                Ydense=Y.toarray(), rpar=rpar, spar=spar,
            )
            self._kd_cache[key] = kd
        return kd

    def dead_buses(self, Y):
        """Bus positions with no path to the slack through in-service branches."""
        A = abs(Y).tocsr()
        A.data[A.data <= 1e-12 * A.data.max(initial=0.0)] = 0.0
        A.eliminate_zeros()
        _, label = connected_components(A, directed=False)
        return np.nonzero(label != label[self.slack])[0]

    def _pins(self, Y):
        # de-energised buses are held at 1 pu so their devices stay defined
        dead = self.dead_buses(Y)
        pin = np.concatenate([[self.slack], dead]).astype(np.intp)
        pin_th = np.full(pin.size, self._thset)
        pin_v = np.ones(pin.size)
        pin_v[0] = self._vset
        return pin, pin_th, pin_v

    def evaluate(self, U, state, jac=True):
        kd = self.kernel_data(state)
        return kernel.evaluate(kd, np.ascontiguousarray(U, dtype=float),
                               state.ctrl.oxl_active(), jac)

    # -- readouts ---------------------------------------------------------------------

    def V(self, state):
        return state.y[self.nb: 2 * self.nb]

    def theta(self, state):
        return state.y[: self.nb]

    def field_currents(self, state):
        ng = len(self.gens)
        gp = self._static["gpar"]
        par = {"xd": gp[:, 1], "xd_p": gp[:, 3]}
        eqp = state.x[2: 4 * ng: 4]
        i_d = state.y[2 * self.nb:: 2]
        return field_current(par, eqp, i_d)

    def oxl_field_currents(self, state):
        return self.field_currents(state)[self._static["ogen"]]

    def omegas(self, state):
        return state.x[1: 4 * len(self.gens): 4]

    def check_bounds(self, state):
        msg = super().check_bounds(state)
        if msg:
            return msg
        b = self.case.bounds
        w = self.omegas(state)
        if w.size and np.max(np.abs(w)) > b.omega_max:
            return "speed deviation out of bounds"
        V = self.V(state)
        if np.min(V) < b.v_min:
            return "bus voltage below bound"
        if np.max(V) > b.v_max:
            return "bus voltage above bound"
        return None

    def oxl_excited(self, state):
        if not self.oxls:
            return False
        i_f = self.oxl_field_currents(state)
        lim = self._static["opar"][:, 0]
        return bool(np.any(i_f > lim) or np.any(state.zc[list(self.partition.oxl_index)] > 1e-9)
                    or any(t.active for t in state.ctrl.oxl))

    def timers_pending(self, state):
        for lt, p in zip(state.ctrl.ltc, self.ltcs):
            if lt.next_action is not None and not lt.at_limit:
                return True
        for ot in state.ctrl.oxl:
            if ot.pickup_start is not None and not ot.active:
                return True
        return False

    # -- discrete dynamics --------------------------------------------------------------

    def update_monitors(self, state):
        """Deadband and pickup supervision at a sample (no tap moves)."""
        if not self.ltcs and not self.oxls:
            return state
        V = self.V(state)
        ltc = tuple(
            ltc_monitor(s, p, vref, V[bus], state.t)
            for s, p, vref, bus in zip(state.ctrl.ltc, self.ltcs, self.ltc_vref, self.ltc_bus)
        )
        i_f = self.oxl_field_currents(state) if self.oxls else ()
        oxl = tuple(oxl_dynamics(s, p, float(i), state.t)
                    for s, p, i in zip(state.ctrl.oxl, self.oxls, i_f))
        new = state.copy()
        new.ctrl.ltc = ltc
        new.ctrl.oxl = oxl
        return new

    def eval_discrete(self, state):
        """Apply every tap move due at ``state.t`` as one jump.

        Moves are applied in device order and counted as a single jump ``k``.
        """
        V = self.V(state)
        changed = False
        new = state.copy()
        ltc = list(new.ctrl.ltc)
        for i, (s, p, vref, bus) in enumerate(zip(ltc, self.ltcs, self.ltc_vref, self.ltc_bus)):
            if ltc_due(s, state.t):
                ns, moved = ltc_transition(s, p, vref, V[bus], state.t)
                ltc[i] = ns
                if moved:
                    new.zd[i] = ns.n
                    changed = True
        new.ctrl.ltc = tuple(ltc)
        if changed:
            new.ctrl.k += 1
        return new, changed, new.ctrl.k

    def apply_event(self, state, event):
        new = state.copy()
        if event.kind == "trip_branch":
            new.ctrl.out = new.ctrl.out | {event.target}
        elif event.kind == "load_step":
            scale = list(new.ctrl.load_scale or (1.0,) * len(self.load_ids))
            scale[self.load_ids.index(event.target)] = event.scale
            new.ctrl.load_scale = tuple(scale)
        else:
            raise ValueError(f"unknown event kind {event.kind}")
        return new


def _park(phasor, delta):
    """Rotate a network-frame phasor into machine ``(d, q)`` components."""
    r = phasor * np.exp(-1j * (delta - np.pi / 2.0))
    return r.real, r.imag


def build_model(case):
    """Solve the initial power flow and return ``(model, initial_state)``.

    Device set-points (mechanical power, field voltage, regulator and
    governor references, load constants) are chosen so that the initial
    state is an equilibrium.
    """
    case.validate()
    bus_ids = tuple(sorted(b.id for b in case.buses))
    pos = {b: i for i, b in enumerate(bus_ids)}
    nb = len(bus_ids)
    buses = {b.id: b for b in case.buses}
    kinds = [buses[b].kind for b in bus_ids]
    V0 = np.array([buses[b].V for b in bus_ids], dtype=float)
    th0 = np.array([buses[b].theta for b in bus_ids], dtype=float)
    p_spec = np.zeros(nb)
    q_spec = np.zeros(nb)
    for g in case.generators:
        p_spec[pos[g.bus]] += g.P
        if kinds[pos[g.bus]] != "pq":
            V0[pos[g.bus]] = g.V
    for ld in list(case.recovery_loads) + list(case.static_loads):
        p_spec[pos[ld.bus]] -= ld.P
        q_spec[pos[ld.bus]] -= ld.Q
    taps = {br.id: br.tap for br in case.branches}
    Y = build_admittance(case, taps=taps)
    pf = solve_power_flow(Y, kinds, V0, th0, p_spec, q_spec)
    V, th = pf.V, pf.theta
    load_p = np.zeros(nb)
    load_q = np.zeros(nb)
    for ld in list(case.recovery_loads) + list(case.static_loads):
        load_p[pos[ld.bus]] += ld.P
        load_q[pos[ld.bus]] += ld.Q

    ng = len(case.generators)
    x_gen = np.zeros(4 * ng)
    y_gen = np.zeros(2 * ng)
    pm0 = np.zeros(ng)
    efd0 = np.zeros(ng)
    for i, g in enumerate(case.generators):
        b = pos[g.bus]
        Pg = pf.P[b] + load_p[b]
        Qg = pf.Q[b] + load_q[b]
        Vc = V[b] * np.exp(1j * th[b])
        I = np.conj(complex(Pg, Qg) / Vc)
        E = Vc + complex(g.ra, g.xq) * I
        delta = np.angle(E)
        vd, vq = _park(Vc, delta)
        i_d, i_q = _park(I, delta)
        edp = vd + g.ra * i_d - g.xq_p * i_q
        eqp = vq + g.ra * i_q + g.xd_p * i_d
        efd0[i] = eqp + (g.xd - g.xd_p) * i_d
        pm0[i] = edp * i_d + eqp * i_q + (g.xq_p - g.xd_p) * i_d * i_q
        x_gen[4 * i: 4 * i + 4] = [delta, 0.0, eqp, edp]
        y_gen[2 * i: 2 * i + 2] = [i_d, i_q]
    gpos = {g.id: i for i, g in enumerate(case.generators)}
    x_avr = []
    vref = []
    for a in case.avrs:
        i = gpos[a.gen]
        Vg = V[pos[case.generators[i].bus]]
        e = efd0[i]
        if not (a.efd_min <= e <= a.efd_max and a.vr_min <= e <= a.vr_max):
            raise CaseValidationError([f"avr {a.gen}: initial field voltage {e:.4f} outside limits"])
        x_avr += [Vg, e, e]
        vref.append(Vg + e / a.Ka)
    z_oxl = [0.0] * len(case.oxls)
    z_gov = []
    pref = []
    for v in case.governors:
        pm = pm0[gpos[v.gen]]
        if not 0.0 <= pm <= v.p_max:
            raise CaseValidationError([f"governor {v.gen}: initial power outside [0, p_max]"])
        z_gov += [pm, pm]
        pref.append(pm)
    z_rl = []
    rl_P0, rl_Q0 = [], []
    for r in case.recovery_loads:
        Vb = V[pos[r.bus]]
        P0 = r.P / Vb**r.alpha_s
        Q0 = r.Q / Vb**r.beta_s
        rl_P0.append(P0)
        rl_Q0.append(Q0)
        z_rl += [r.Tp * P0 * (Vb**r.alpha_s - Vb**r.alpha_t),
                 r.Tq * Q0 * (Vb**r.beta_s - Vb**r.beta_t)]
    sl_P0 = [s.P / V[pos[s.bus]] ** s.alpha for s in case.static_loads]
    sl_Q0 = [s.Q / V[pos[s.bus]] ** s.beta for s in case.static_loads]
    slack = kinds.index("slack")
    ltc_vref = []
    branch_taps = []
    for t in case.ltcs:
        ltc_vref.append(V[pos[t.controlled_bus]] if t.v_ref is None else t.v_ref)
        branch_taps.append(case.branch(t.branch).tap)
    init = dict(
        vset=float(V[slack]), thset=float(th[slack]), pm0=pm0, efd0=efd0, vref=vref, pref=pref,
        rl_P0=rl_P0, rl_Q0=rl_Q0, sl_P0=sl_P0, sl_Q0=sl_Q0, ltc_vref=ltc_vref,
    )
    model = PowerSystemModel(case, init)
    zd = np.array(branch_taps, dtype=float)
    ctrl = ControlState(
        ltc=tuple(LtcState(n) for n in zd),
        oxl=tuple(OxlTimer() for _ in case.oxls),
        out=frozenset(br.id for br in case.branches if not br.in_service),
        load_scale=(1.0,) * len(model.load_ids),
    )
    state = State(
        0.0,
        np.concatenate([x_gen, np.asarray(x_avr, float)]),
        np.asarray(z_oxl + z_gov + z_rl, dtype=float),
        zd,
        np.concatenate([th, V, y_gen]),
        ctrl,
    )
    return model, state
