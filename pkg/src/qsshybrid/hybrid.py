"""Hybrid QSS / full-model engine with checkpointed rollback.

Phases:

* A: full model up to ``tau1`` while the post-disturbance transients settle;
* B: QSS model; at every jump of ``z_d`` the OXL states of a one-step
  full-model continuation are compared with the QSS ones;
* C: once the discrete dynamics are quiescent, a short full-model probe
  from the QSS point checks that the OXL states are positively damped.

A failed check rolls the run back to a stored point and finishes it with
the full model; the run never returns to QSS afterwards.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dae import Annotation, IntegratorConfig, StepSolver, _commit, algebraic_kinds, simulate_full, step_full_model
from .errors import CheckpointMissing, ManifoldSolveError, NewtonFailure
from .qss import QssConfig, simulate_qss, solve_fast_equilibrium
from .stability import DAMPED, GROWING, INCONCLUSIVE, DampingVerdict, assess_damping, classify_outcome


@dataclass(frozen=True)
class HybridParams:
    """Settings of a hybrid run.

    Parameters
    ----------
    tau1 : float
        End of the full-model warm-up (s).
    eta : float
        OXL deviation threshold; a switch-back needs a strictly larger distance.
    probe_steps : int
        Full-model steps of the damping probe; extended once if inconclusive.
    probe_kick : float
        Offset added to excited OXL states at the start of the probe.  The
        QSS end point is an equilibrium of the full model as well, so an
        unperturbed probe would not move.
    norm : str
        ``"inf"`` (default) or ``"2"`` for the OXL distance.
    quiet_tol : float
        ``max |h_c|`` below which the QSS run counts as settled once no
        discrete timer is pending.
    verdict_window : float
        Length (s) of the final window judged after a switch-back.
    """

    tau1: float = 20.0
    eta: float = 1e-3
    probe_steps: int = 200
    probe_extensions: int = 1
    probe_kick: float = 1e-3
    norm: str = "inf"
    dt_full: float = 0.01
    dt_qss: float = 0.1
    t_end: float = 300.0
    tol: float = 1e-8
    quiet_tol: float = 1e-4
    verdict_window: float = 60.0

    def __post_init__(self):
        if not self.tau1 > 0.0:
            raise ValueError("tau1 must be positive")
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")
        if self.probe_steps < 1:
            raise ValueError("probe_steps must be positive")
        if self.norm not in ("inf", "2"):
            raise ValueError("norm must be 'inf' or '2'")

    def full_config(self, t_end=None):
        return IntegratorConfig(dt=self.dt_full, tol=self.tol,
                                t_end=self.t_end if t_end is None else t_end)

    def qss_config(self):
        return QssConfig(dt=self.dt_qss, tol=self.tol, t_end=self.t_end, tau1=self.tau1,
                         dt_full=self.dt_full)


class CheckpointStore:
    """QSS start point plus the pre-jump points of the current QSS episode.

    ``points[j]`` is the manifold point just before the jump that produced
    ``z_d(j + 1)``, i.e. it carries ``z_d(j)``.
    """

    def __init__(self, start=None):
        self.start = start
        self.points = {}

    def record(self, j, state):
        self.points[j] = state.copy()

    def get(self, j):
        try:
            return self.points[j]
        except KeyError:
            raise CheckpointMissing(f"no checkpoint recorded for index {j}") from None

    def __contains__(self, j):
        return j in self.points

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class SwitchBack:
    k: int
    reason: str
    t_trigger: float
    t_rollback: float

    def as_dict(self):
        return {"k": self.k, "reason": self.reason, "t_trigger": self.t_trigger,
                "t_rollback": self.t_rollback}


@dataclass
class HybridVerdict:
    outcome: str
    switch_backs: list = field(default_factory=list)
    final_model: str = "qss"
    status: str = "completed"
    probe: DampingVerdict | None = None
    deviations: list = field(default_factory=list)
    phases: dict = field(default_factory=dict)


def check_oxl_deviation(z_oxl_l, z_oxl_q, eta, norm="inf"):
    """``"switch-back"`` iff the OXL distance exceeds ``eta`` (strictly)."""
    a = np.asarray(z_oxl_l, dtype=float)
    b = np.asarray(z_oxl_q, dtype=float)
    if a.shape != b.shape:
        raise ValueError("OXL vectors differ in length")
    return "switch-back" if oxl_distance(a, b, norm) > eta else "continue"


def oxl_distance(a, b, norm="inf"):
    if a.size == 0:
        return 0.0
    d = np.asarray(a, float) - np.asarray(b, float)
    if not np.all(np.isfinite(d)):
        return float("inf")
    return float(np.max(np.abs(d)) if norm == "inf" else np.linalg.norm(d))


def approximate_post_jump_point(model, pre_jump, post_jump, dt, config=None, solver=None):
    """One full-model step right after a jump.

    Starts from the pre-jump continuous point ``(z_c, x)`` with the new
    discrete state of ``post_jump``; ``y`` is re-solved first because the
    network changed.

    Raises
    ------
    NewtonFailure
        When the re-solve or the step fails.
    """
    config = config or IntegratorConfig(dt=dt)
    solver = solver or StepSolver(model, config.tol, config.max_iter)
    s = pre_jump.copy()
    s.zd = post_jump.zd.copy()
    s.ctrl = post_jump.ctrl.copy()
    U = solver.solve(s, algebraic_kinds(model.partition), 0.0)
    s = _commit(model, s, U, s.t)
    return step_full_model(model, s, dt, config, solver)


def select_rollback_point(k, store):
    """Initial point of the full model after a switch-back triggered at jump ``k``.

    ``k <= 2`` restarts from the QSS start point, otherwise from checkpoint
    ``k - 3``, the point recorded just before jump ``k - 2``.
    """
    if k <= 2:
        if store.start is None:
            raise CheckpointMissing("QSS start point not recorded")
        return store.start
    return store.get(k - 3)


def damping_probe(model, qss_endpoint, N=None, probe_steps=200, params=None):
    """Run the full model briefly from a QSS point and judge the OXL damping.

    Skipped (damped, ``skipped=True``) when no limiter is excited.  The
    probe starts from the QSS point with ``probe_kick`` added to the excited
    OXL states and is extended ``probe_extensions`` times while the verdict
    is inconclusive.

    Returns
    -------
    (DampingVerdict, Trace or None)
    """
    params = params or HybridParams(probe_steps=probe_steps)
    if not model.oxl_excited(qss_endpoint):
        return DampingVerdict(DAMPED, [], [], skipped=True), None
    p = model.partition
    start = qss_endpoint.copy()
    idx = np.asarray(p.oxl_index, dtype=int)
    excited = _excited_mask(model, start)
    start.zc[idx[excited]] += params.probe_kick
    cfg = params.full_config()
    t0 = start.t
    trace = None
    verdict = None
    for ext in range(params.probe_extensions + 1):
        horizon = t0 + (ext + 1) * probe_steps * params.dt_full
        cfg = IntegratorConfig(dt=params.dt_full, tol=params.tol, t_end=horizon)
        if trace is None:
            trace = simulate_full(model, None, cfg, start=start, start_events=False)
        else:
            more = simulate_full(model, None, cfg, start=trace.final, start_events=False)
            more = _drop_first(more)
            trace.extend(more)
        if trace.status != "completed":
            return DampingVerdict(GROWING, [], []), trace
        cols = [p.names.index(p.zc_names[i]) for i in idx]
        verdict = assess_damping(trace.data[:, cols][:, excited])
        if verdict.verdict != INCONCLUSIVE:
            break
    return verdict, trace


def _drop_first(trace):
    """Drop the first sample (it repeats the last sample of the previous segment)."""
    trace.t = trace.t[1:]
    trace.rows = trace.rows[1:]
    trace.annotations = [Annotation(a.index - 1, a.kind, a.detail)
                         for a in trace.annotations if a.index > 0]
    return trace


def _excited_mask(model, state):
    p = model.partition
    idx = np.asarray(p.oxl_index, dtype=int)
    mask = state.zc[idx] > 1e-9
    if hasattr(model, "oxl_field_currents"):
        i_f = model.oxl_field_currents(state)
        lim = np.array([o.i_lim for o in model.oxls])
        active = np.array([t.active for t in state.ctrl.oxl], bool)
        mask = mask | (i_f > lim) | active
    return mask


def run_hybrid(case, schedule=None, params=None, start=None):
    """Run the hybrid model.

    Parameters
    ----------
    case : Case, SystemModel or (SystemModel, State)
    schedule : EventSchedule, optional
    params : HybridParams, optional

    Returns
    -------
    (Trace, HybridVerdict)
    """
    from .dae import _model_and_state

    params = params or HybridParams()
    model, state0 = _model_and_state(case, start)
    phases = {}
    clock = time.perf_counter()

    # A: full model until the transients settle
    trace = simulate_full(model, schedule, params.full_config(params.tau1), start=state0)
    phases["full_warmup"] = time.perf_counter() - clock
    if trace.status != "completed":
        return trace, HybridVerdict("unstable", final_model="full", status=trace.status,
                                    phases=phases)
    warm_end = trace.final
    clock = time.perf_counter()
    store = CheckpointStore()
    try:
        qstart = solve_fast_equilibrium(model, warm_end, tol=params.tol).state
    except ManifoldSolveError:
        qstart = None
    if qstart is None:
        # the fast subsystem has no equilibrium near the settled point: stay on the full model
        store.start = warm_end
        rest = simulate_full(model, schedule, params.full_config(), start=warm_end,
                             start_events=False)
        trace.extend(_drop_first(rest))
        sb = SwitchBack(1, "qss-failure", warm_end.t, warm_end.t)
        phases["full"] = time.perf_counter() - clock
        return trace, HybridVerdict(classify_outcome(trace, model, params.verdict_window),
                                    [sb], "full", trace.status, phases=phases)
    store.start = qstart
    k0 = qstart.ctrl.k
    deviations = []
    step_cfg = params.full_config()
    jump_solver = StepSolver(model, params.tol)

    # B: QSS with a deviation check at every jump
    def on_jump(pre, post, k):
        j = k - k0
        store.record(j - 1, pre)
        try:
            approx = approximate_post_jump_point(model, pre, post, params.dt_full, step_cfg,
                                                 jump_solver)
            dist = oxl_distance(model.oxl_values(approx), model.oxl_values(post), params.norm)
        except NewtonFailure:
            dist = float("inf")
        deviations.append((j, post.t, dist))
        if dist > params.eta:
            return ("oxl-deviation", j)
        return None

    def watch(s):
        if s.t < params.tau1 + params.dt_qss * 0.5:
            return None
        if model.timers_pending(s):
            return None
        h, _, _ = model.eval_residuals(s)
        if h.size == 0 or np.max(np.abs(h)) <= params.quiet_tol:
            return ("quiescent", None)
        return None

    qcfg = params.qss_config()
    qtrace = simulate_qss(model, schedule, qcfg, start=qstart, on_jump=on_jump, watch=watch,
                          start_events=False)
    trace = trace.truncate(params.tau1)
    trace.extend(qtrace)
    jumps = qtrace.final.ctrl.k - k0
    reason = qtrace.stop_reason
    trigger = None
    probe = None
    if qtrace.status != "completed":
        trigger = (jumps + 1, "qss-failure")
    elif reason and reason[0] == "oxl-deviation":
        trigger = (reason[1], "oxl-deviation")
    else:
        # C: discrete dynamics quiescent (or horizon reached)
        probe, _ = damping_probe(model, qtrace.final, jumps, params.probe_steps, params)
        if probe.verdict != DAMPED:
            trigger = (jumps + 1, "undamped")
        elif qtrace.final.t < params.t_end - 1e-9:
            more = simulate_qss(model, schedule, qcfg, start=qtrace.final, on_jump=on_jump,
                                start_events=False)
            more = _drop_first(more)
            trace.extend(more)
            reason = more.stop_reason
            if more.status != "completed":
                trigger = (more.final.ctrl.k - k0 + 1, "qss-failure")
            elif reason and reason[0] == "oxl-deviation":
                trigger = (reason[1], "oxl-deviation")
    phases["qss"] = time.perf_counter() - clock

    if trigger is None:
        return trace, HybridVerdict("long-term-stable", [], "qss", trace.status, probe,
                                    deviations, phases)

    clock = time.perf_counter()
    k, why = trigger
    t_trigger = trace.t[-1]
    point = select_rollback_point(k, store)
    trace = trace.truncate(point.t)
    first = len(trace)
    cont = simulate_full(model, schedule, params.full_config(), start=point, start_events=False)
    trace.extend(cont)
    trace.annotate("switch", f"{why}:k={k}", index=first)
    phases["full"] = time.perf_counter() - clock
    sb = SwitchBack(k, why, t_trigger, point.t)
    outcome = classify_outcome(cont, model, params.verdict_window)
    return trace, HybridVerdict(outcome, [sb], "full", cont.status, probe, deviations, phases)
