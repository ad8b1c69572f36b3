"""Dynamic device models.

Continuous devices are written as vectorised functions over all devices of
one type.  Each returns the right-hand sides plus a dict of partial
derivatives keyed by ``(row_name, column_name)``; the numpy assembly kernel
maps those names onto global Jacobian positions.

Limiters use a saturated-input lag, ``ds/dt = (clip(target) - s) / T``: a
state sitting on its limit with the drive pushing outward has zero
derivative, and the equilibrium condition ``ds/dt = 0`` still pins the state
(which the QSS constraint ``f = 0`` needs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# ---------------------------------------------------------------------------
# Parameter records (one per device, as read from the case file)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorParams:
    """Two-axis synchronous machine on the system base."""

    id: str
    bus: int
    P: float
    V: float
    ra: float = 0.0
    xd: float = 1.8
    xq: float = 1.7
    xd_p: float = 0.3
    xq_p: float = 0.55
    Td0_p: float = 6.0
    Tq0_p: float = 0.4
    H: float = 4.0
    D: float = 2.0

    def validate(self):
        errs = []
        if not (self.xd > self.xd_p > 0.0):
            errs.append(f"generator {self.id}: need xd > xd_p > 0")
        if not (self.xq >= self.xq_p > 0.0):
            errs.append(f"generator {self.id}: need xq >= xq_p > 0")
        for name in ("Td0_p", "Tq0_p", "H"):
            if getattr(self, name) <= 0.0:
                errs.append(f"generator {self.id}: {name} must be positive")
        return errs


@dataclass(frozen=True)
class AvrParams:
    """Three-state regulator: measurement lag, amplifier, exciter."""

    gen: str
    Tr: float = 0.02
    Ka: float = 50.0
    Ta: float = 0.1
    Te: float = 0.5
    vr_min: float = -5.0
    vr_max: float = 5.0
    efd_min: float = -5.0
    efd_max: float = 5.0

    def validate(self):
        errs = [
            f"avr {self.gen}: {n} must be positive"
            for n in ("Tr", "Ka", "Ta", "Te")
            if getattr(self, n) <= 0.0
        ]
        if self.vr_min >= self.vr_max or self.efd_min >= self.efd_max:
            errs.append(f"avr {self.gen}: empty limit band")
        return errs


@dataclass(frozen=True)
class OxlParams:
    """Integrating over-excitation limiter with pickup delay."""

    gen: str
    i_lim: float
    K: float = 1.0
    T_delay: float = 40.0
    T_reset: float = 1.0
    hysteresis: float = 0.02

    def validate(self):
        errs = [
            f"oxl {self.gen}: {n} must be positive"
            for n in ("i_lim", "K", "T_reset")
            if getattr(self, n) <= 0.0
        ]
        if self.T_delay < 0.0:
            errs.append(f"oxl {self.gen}: T_delay must be non-negative")
        return errs


@dataclass(frozen=True)
class GovernorParams:
    gen: str
    R: float = 0.05
    Ts: float = 2.0
    Tt: float = 5.0
    p_max: float = 5.0

    def validate(self):
        return [
            f"governor {self.gen}: {n} must be positive"
            for n in ("R", "Ts", "Tt", "p_max")
            if getattr(self, n) <= 0.0
        ]


@dataclass(frozen=True)
class RecoveryLoadParams:
    """Exponential recovery load; ``P``/``Q`` are the initial consumption."""

    id: str
    bus: int
    P: float
    Q: float
    Tp: float = 60.0
    Tq: float = 60.0
    alpha_s: float = 0.0
    alpha_t: float = 2.0
    beta_s: float = 0.0
    beta_t: float = 2.0

    def validate(self):
        return [
            f"recovery load {self.id}: {n} must be positive"
            for n in ("Tp", "Tq")
            if getattr(self, n) <= 0.0
        ]


@dataclass(frozen=True)
class StaticLoadParams:
    id: str
    bus: int
    P: float
    Q: float
    alpha: float = 2.0
    beta: float = 2.0

    def validate(self):
        return []


@dataclass(frozen=True)
class LtcParams:
    """Load tap changer acting on the tap of ``branch``."""

    id: str
    branch: int
    controlled_bus: int
    n_min: float = 0.8
    n_max: float = 1.1
    step: float = 0.01
    v_ref: float | None = None
    deadband: float = 0.01
    T_d0: float = 20.0
    dT: float = 10.0

    def validate(self):
        errs = []
        if not self.n_min < self.n_max:
            errs.append(f"ltc {self.id}: n_min must be below n_max")
        if self.step <= 0.0 or self.deadband < 0.0:
            errs.append(f"ltc {self.id}: step must be positive, deadband non-negative")
        if self.T_d0 < 0.0 or self.dT <= 0.0:
            errs.append(f"ltc {self.id}: delays must be positive")
        return errs


# ---------------------------------------------------------------------------
# Continuous device equations
# ---------------------------------------------------------------------------


def saturate(value, lo, hi):
    """Clip ``value`` to ``[lo, hi]``; also return d(clipped)/d(value)."""
    value = np.asarray(value, dtype=float)
    clipped = np.minimum(np.maximum(value, lo), hi)
    slope = ((value >= lo) & (value <= hi)).astype(float)
    return clipped, slope


def generator_derivatives(par, delta, omega, eqp, edp, V, theta, i_d, i_q, pm, efd, omega_b):
    """Two-axis machine: swing, field and damper-axis transients, stator.

    ``par`` maps parameter names to arrays.  Returns ``(values, partials)``
    where ``values`` holds ``f_delta, f_omega, f_eqp, f_edp`` (differential),
    ``s_d, s_q`` (stator algebraic) and ``P, Q`` (injection into the bus).
    """
    ra, xd, xq = par["ra"], par["xd"], par["xq"]
    xdp, xqp = par["xd_p"], par["xq_p"]
    Td0, Tq0, H, D = par["Td0_p"], par["Tq0_p"], par["H"], par["D"]
    s = np.sin(delta - theta)
    c = np.cos(delta - theta)
    vd, vq = V * s, V * c
    Te = edp * i_d + eqp * i_q + (xqp - xdp) * i_d * i_q
    M = 2.0 * H
    val = {
        "delta": omega_b * omega,
        "omega": (pm - Te - D * omega) / M,
        "eqp": (efd - eqp - (xd - xdp) * i_d) / Td0,
        "edp": (-edp + (xq - xqp) * i_q) / Tq0,
        "s_d": edp - vd - ra * i_d + xqp * i_q,
        "s_q": eqp - vq - ra * i_q - xdp * i_d,
        "P": vd * i_d + vq * i_q,
        "Q": vq * i_d - vd * i_q,
    }
    one = np.ones_like(delta)
    d = {
        ("delta", "omega"): omega_b * one,
        ("omega", "omega"): -D / M,
        ("omega", "eqp"): -i_q / M,
        ("omega", "edp"): -i_d / M,
        ("omega", "id"): -(edp + (xqp - xdp) * i_q) / M,
        ("omega", "iq"): -(eqp + (xqp - xdp) * i_d) / M,
        ("omega", "pm"): one / M,
        ("eqp", "eqp"): -one / Td0,
        ("eqp", "id"): -(xd - xdp) / Td0,
        ("eqp", "efd"): one / Td0,
        ("edp", "edp"): -one / Tq0,
        ("edp", "iq"): (xq - xqp) / Tq0,
        ("s_d", "edp"): one,
        ("s_d", "delta"): -V * c,
        ("s_d", "theta"): V * c,
        ("s_d", "V"): -s,
        ("s_d", "id"): -ra * one,
        ("s_d", "iq"): xqp * one,
        ("s_q", "eqp"): one,
        ("s_q", "delta"): V * s,
        ("s_q", "theta"): -V * s,
        ("s_q", "V"): -c,
        ("s_q", "iq"): -ra * one,
        ("s_q", "id"): -xdp * one,
        ("P", "delta"): V * (c * i_d - s * i_q),
        ("P", "theta"): -V * (c * i_d - s * i_q),
        ("P", "V"): s * i_d + c * i_q,
        ("P", "id"): V * s,
        ("P", "iq"): V * c,
        ("Q", "delta"): -V * (s * i_d + c * i_q),
        ("Q", "theta"): V * (s * i_d + c * i_q),
        ("Q", "V"): c * i_d - s * i_q,
        ("Q", "id"): V * c,
        ("Q", "iq"): -V * s,
    }
    return val, d


def field_current(par, eqp, i_d):
    """Field current readout (equals ``efd`` in steady state)."""
    return eqp + (par["xd"] - par["xd_p"]) * i_d


def avr_derivatives(par, V, vm, vr, efd, v_oxl):
    """Measurement lag, amplifier with input saturation, exciter with output clamp.

    The limiter signal ``v_oxl`` subtracts from the voltage error.
    """
    Tr, Ka, Ta, Te = par["Tr"], par["Ka"], par["Ta"], par["Te"]
    target, s_r = saturate(Ka * (par["Vref"] - vm - v_oxl), par["vr_min"], par["vr_max"])
    drive, s_e = saturate(vr, par["efd_min"], par["efd_max"])
    val = {
        "vm": (V - vm) / Tr,
        "vr": (target - vr) / Ta,
        "efd": (drive - efd) / Te,
    }
    d = {
        ("vm", "V"): 1.0 / Tr,
        ("vm", "vm"): -1.0 / Tr,
        ("vr", "vr"): -1.0 / Ta,
        ("vr", "vm"): -s_r * Ka / Ta,
        ("vr", "voxl"): -s_r * Ka / Ta,
        ("efd", "efd"): -1.0 / Te,
        ("efd", "vr"): s_e / Te,
    }
    return val, d


def avr_equilibrium_efd(par, V, v_oxl):
    """Steady-state field voltage of the regulator for a held terminal voltage."""
    vr, _ = saturate(par["Ka"] * (par["Vref"] - V - v_oxl), par["vr_min"], par["vr_max"])
    efd, _ = saturate(vr, par["efd_min"], par["efd_max"])
    return efd


def oxl_derivative(par, v, i_f, active):
    """Slow limiter state.

    Active: ``max(K (i_f - i_lim), -v / T_reset)``, which integrates up while
    over the limit and relaxes toward zero (never below) otherwise.
    Inactive: ``-v / T_reset``.
    Returns ``(rate, d_rate/d_v, d_rate/d_i_f)``.
    """
    v = np.asarray(v, dtype=float)
    i_f = np.asarray(i_f, dtype=float)
    active = np.asarray(active, dtype=bool)
    integ = par["K"] * (i_f - par["i_lim"])
    decay = -v / par["T_reset"]
    use_integ = active & (integ >= decay)
    rate = np.where(use_integ, integ, decay)
    d_v = np.where(use_integ, 0.0, -1.0 / par["T_reset"])
    d_if = np.where(use_integ, par["K"], 0.0)
    return rate, d_v, d_if


def governor_dynamics(par, g1, g2, omega):
    """Droop governor through servo and turbine lags, both clamped to ``[0, p_max]``.

    Mechanical power is ``g2``.
    """
    R, Ts, Tt = par["R"], par["Ts"], par["Tt"]
    target, s1 = saturate(par["pref"] - omega / R, 0.0, par["p_max"])
    drive, s2 = saturate(g1, 0.0, par["p_max"])
    val = {"g1": (target - g1) / Ts, "g2": (drive - g2) / Tt}
    d = {
        ("g1", "g1"): -1.0 / Ts,
        ("g1", "omega"): -s1 / (R * Ts),
        ("g2", "g2"): -1.0 / Tt,
        ("g2", "g1"): s2 / Tt,
    }
    return val, d


def governor_steady_state(pref, omega, R, p_max):
    """Mechanical power the governor settles to at a held speed deviation."""
    return float(np.clip(pref - omega / R, 0.0, p_max))


def _pow(V, e):
    Vs = np.maximum(V, 1e-6)
    return Vs**e, e * Vs ** (e - 1.0)


def recovery_load_dynamics(par, xp, xq, V):
    """Exponential recovery load.

    ``dxp/dt = -xp/Tp + P0 (V^as - V^at)``, consumption ``P = xp/Tp + P0 V^at``
    (and the same for reactive power).
    """
    P0, Q0 = par["P0"], par["Q0"]
    Tp, Tq = par["Tp"], par["Tq"]
    vas, das = _pow(V, par["alpha_s"])
    vat, dat = _pow(V, par["alpha_t"])
    vbs, dbs = _pow(V, par["beta_s"])
    vbt, dbt = _pow(V, par["beta_t"])
    val = {
        "xp": -xp / Tp + P0 * (vas - vat),
        "xq": -xq / Tq + Q0 * (vbs - vbt),
        "P": xp / Tp + P0 * vat,
        "Q": xq / Tq + Q0 * vbt,
    }
    d = {
        ("xp", "xp"): -1.0 / Tp,
        ("xp", "V"): P0 * (das - dat),
        ("xq", "xq"): -1.0 / Tq,
        ("xq", "V"): Q0 * (dbs - dbt),
        ("P", "xp"): 1.0 / Tp,
        ("P", "V"): P0 * dat,
        ("Q", "xq"): 1.0 / Tq,
        ("Q", "V"): Q0 * dbt,
    }
    return val, d


def recovery_load_equilibrium(par, V):
    """Recovery states that make ``dxp/dt = dxq/dt = 0`` at voltage ``V``."""
    return (
        par["Tp"] * par["P0"] * (V ** par["alpha_s"] - V ** par["alpha_t"]),
        par["Tq"] * par["Q0"] * (V ** par["beta_s"] - V ** par["beta_t"]),
    )


def static_load(par, V):
    """Exponential static load ``P0 V^alpha``, ``Q0 V^beta``."""
    pa, dpa = _pow(V, par["alpha"])
    pb, dpb = _pow(V, par["beta"])
    return {"P": par["P0"] * pa, "Q": par["Q0"] * pb}, {
        ("P", "V"): par["P0"] * dpa,
        ("Q", "V"): par["Q0"] * dpb,
    }


# ---------------------------------------------------------------------------
# Discrete bookkeeping
# ---------------------------------------------------------------------------

TIME_EPS = 1e-9


@dataclass
class LtcState:
    """Tap position plus the timer of one tap changer.

    ``next_action`` is the absolute time of the next tap move while the
    controlled voltage is out of band, ``None`` while inside the band.
    """

    n: float
    next_action: float | None = None
    at_limit: bool = False

    def copy(self):
        return LtcState(self.n, self.next_action, self.at_limit)


def _move(n, p: LtcParams):
    # rounding keeps repeated steps from accumulating float drift
    return min(max(round(n, 10), p.n_min), p.n_max)


def ltc_monitor(state: LtcState, p: LtcParams, v_ref: float, V: float, t: float) -> LtcState:
    """Deadband supervision at a sample: start or clear the timer."""
    low, high = v_ref - p.deadband, v_ref + p.deadband
    new = state.copy()
    if low <= V <= high:
        new.next_action = None
        new.at_limit = False
    elif new.next_action is None:
        new.next_action = t + p.T_d0
    return new


def ltc_due(state: LtcState, t: float) -> bool:
    return state.next_action is not None and t >= state.next_action - TIME_EPS


def ltc_transition(state: LtcState, p: LtcParams, v_ref: float, V: float, t: float):
    """Tap move at a due instant.

    Returns ``(new_state, changed)``.  Low voltage lowers the ratio, high
    voltage raises it, one step at a time; at a limit the tap stays and the
    at-limit flag is set.  The next move is scheduled ``dT`` later.
    """
    new = state.copy()
    changed = False
    low, high = v_ref - p.deadband, v_ref + p.deadband
    if V < low:
        if state.n > p.n_min + TIME_EPS:
            new.n = _move(state.n - p.step, p)
            changed = True
            new.at_limit = False
        else:
            new.at_limit = True
    elif V > high:
        if state.n < p.n_max - TIME_EPS:
            new.n = _move(state.n + p.step, p)
            changed = True
            new.at_limit = False
        else:
            new.at_limit = True
    else:
        new.next_action = None
        return new, False
    new.next_action = t + p.dT
    return new, changed


@dataclass
class OxlTimer:
    """Pickup timer of one limiter: starts when ``i_f`` exceeds the limit."""

    pickup_start: float | None = None
    active: bool = False

    def copy(self):
        return OxlTimer(self.pickup_start, self.active)

    def elapsed(self, t, T_delay):
        if self.pickup_start is None:
            return 0.0
        return min(max(t - self.pickup_start, 0.0), T_delay)


def oxl_dynamics(timer: OxlTimer, p: OxlParams, i_f: float, t: float) -> OxlTimer:
    """Advance the pickup logic at a sample.

    Over the limit the timer runs and the limiter activates once it reaches
    ``T_delay``; at or below ``i_lim (1 - hysteresis)`` the timer resets and
    the limiter drops out (its state then decays through
    :func:`oxl_derivative`).
    """
    new = timer.copy()
    if i_f > p.i_lim:
        if new.pickup_start is None:
            new.pickup_start = t
        if not new.active and t - new.pickup_start >= p.T_delay - TIME_EPS:
            new.active = True
    elif i_f <= p.i_lim * (1.0 - p.hysteresis):
        new.pickup_start = None
        new.active = False
    return new


def time_constants(case) -> list[float]:
    """All device time constants of a case (used for the time-scale ratio)."""
    out = []
    for g in case.generators:
        out += [g.Td0_p, g.Tq0_p, 2.0 * g.H]
    for a in case.avrs:
        out += [a.Tr, a.Ta, a.Te]
    for o in case.oxls:
        out += [1.0 / o.K, o.T_reset]
    for v in case.governors:
        out += [v.Ts, v.Tt]
    for r in case.recovery_loads:
        out += [r.Tp, r.Tq]
    return [t for t in out if t > 0.0 and math.isfinite(t)]
