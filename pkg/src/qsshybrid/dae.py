"""Fixed-step trapezoidal integration of the full long-term model.

All engines share one masked Newton solver (:class:`StepSolver`).  Every
residual row is either integrated with the trapezoidal rule, treated as an
algebraic equation, or frozen at its previous value, which covers the full
model, the QSS model, equilibrium solves and algebraic re-solves with a
single code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import NewtonFailure

FROZEN, TRAP, ALG = 0, 1, 2
STATUSES = ("completed", "short-term-unstable", "newton-failure", "singularity")


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration settings.

    Parameters
    ----------
    dt : float
        Step size in seconds.
    tol : float
        Newton convergence threshold on the infinity norm of the residual.
    max_iter : int
        Newton iterations allowed per step.
    t_end : float
        Horizon in seconds.
    halvings : int
        Emergency step halvings tried before declaring Newton failure.
    """

    dt: float = 0.01
    tol: float = 1e-8
    max_iter: int = 20
    t_end: float = 300.0
    halvings: int = 2

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class Annotation:
    index: int
    kind: str
    detail: str = ""

    def label(self):
        return f"{self.kind}={self.detail}" if self.detail else self.kind


@dataclass
class Trace:
    """Sampled trajectory: one row ``[x, z_c, z_d, y]`` per time instant."""

    names: tuple
    t: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    annotations: list = field(default_factory=list)
    status: str = "completed"
    message: str = ""
    final: object = None

    def __len__(self):
        return len(self.t)

    def append(self, state):
        if self.t and not state.t > self.t[-1]:
            raise ValueError(f"non-increasing sample time {state.t} after {self.t[-1]}")
        self.t.append(float(state.t))
        self.rows.append(state.row())
        self.final = state

    def annotate(self, kind, detail="", index=None):
        i = len(self.t) - 1 if index is None else index
        self.annotations.append(Annotation(i, kind, str(detail)))

    @property
    def times(self):
        return np.asarray(self.t, dtype=float)

    @property
    def data(self):
        if not self.rows:
            return np.empty((0, len(self.names)))
        return np.vstack(self.rows)

    def column(self, name):
        return self.data[:, self.names.index(name)]

    def events_at(self, index):
        return [a for a in self.annotations if a.index == index]

    def find(self, kind):
        return [a for a in self.annotations if a.kind == kind]

    def truncate(self, t_cut):
        """Keep samples with ``t < t_cut`` (annotations on dropped samples go too)."""
        n = int(np.searchsorted(self.times, t_cut - 1e-9, side="left"))
        out = Trace(self.names, self.t[:n], self.rows[:n],
                    [a for a in self.annotations if a.index < n], self.status, self.message)
        return out

    def extend(self, other):
        """Append another trace whose first sample is later than our last."""
        offset = len(self.t)
        for tt, row in zip(other.t, other.rows):
            if self.t and not tt > self.t[-1]:
                raise ValueError("traces overlap")
            self.t.append(tt)
            self.rows.append(row)
        self.annotations += [Annotation(a.index + offset, a.kind, a.detail) for a in other.annotations]
        self.status, self.message = other.status, other.message
        if other.final is not None:
            self.final = other.final
        return self


class StepSolver:
    """Chord Newton on masked trapezoidal/algebraic residuals.

    The LU factorisation is cached and reused while the structural key
    (row kinds, step size, discrete state) is unchanged and Newton contracts
    quickly; it is refreshed otherwise.  A new solver starts with an empty
    cache, so a run is fully determined by its inputs.
    """

    def __init__(self, model, tol=1e-8, max_iter=20):
        self.model = model
        self.tol = tol
        self.max_iter = max_iter
        self._lu = None
        self._key = None
        self.iterations = 0
        self.factorizations = 0

    def _struct_key(self, state, kinds, h):
        c = state.ctrl
        return (kinds.tobytes(), h, state.zd.tobytes(), c.out, c.load_scale,
                c.oxl_active().tobytes())

    def solve(self, state, kinds, h, U0=None, fresh=False):
        """Solve the masked residual for the unknowns at the new point.

        Parameters
        ----------
        state : State
            Point at the start of the step; supplies ``z_d``, control state
            and the values of frozen and integrated rows.
        kinds : ndarray of int8
            Row kind per unknown: ``FROZEN``, ``TRAP`` or ``ALG``.
        h : float
            Step size for trapezoidal rows (ignored otherwise).

        Returns
        -------
        U : ndarray
            Converged unknown vector ``[x, z_c, y]``.
        """
        model = self.model
        p = model.partition
        Un = p.gather(state)
        trap = kinds == TRAP
        a = np.where(kinds == ALG, 0.0, 1.0)
        b = np.where(trap, -0.5 * h, np.where(kinds == ALG, 1.0, 0.0))
        c = np.zeros_like(Un)
        if trap.any():
            Rn, _ = model.evaluate(Un, state, jac=False)
            c[trap] = -0.5 * h * Rn[trap]
        U = (Un if U0 is None else U0).copy()
        key = self._struct_key(state, kinds, h)
        if fresh or key != self._key:
            self._lu = None
        self._key = key
        prev = np.inf
        refactor = self._lu is None
        for it in range(self.max_iter + 1):
            R, _ = model.evaluate(U, state, jac=False)
            F = a * (U - Un) + b * R + c
            err = np.max(np.abs(F)) if F.size else 0.0
            if not np.isfinite(err) or err > 1e8:
                break
            if err <= self.tol:
                self.iterations += it
                return U
            if it == self.max_iter:
                break
            if err > 0.25 * prev:
                refactor = True
            if refactor:
                _, J = model.evaluate(U, state, jac=True)
                NJ = b[:, None] * J
                NJ[np.diag_indices_from(NJ)] += a
                try:
                    self._lu = lu_factor(NJ, check_finite=True)
                except (ValueError, np.linalg.LinAlgError) as exc:
                    self._lu = None
                    raise NewtonFailure(f"singular Newton matrix: {exc}") from exc
                self.factorizations += 1
                refactor = False
            U = U - lu_solve(self._lu, F)
            prev = err
        self._lu = None
        raise NewtonFailure(f"Newton did not converge (residual {err:.3e})")


def full_kinds(partition):
    k = np.full(partition.n, ALG, dtype=np.int8)
    k[: partition.nx + partition.nz] = TRAP
    return k


def algebraic_kinds(partition):
    """Re-solve ``y`` with ``x`` and ``z_c`` frozen."""
    k = np.full(partition.n, ALG, dtype=np.int8)
    k[: partition.nx + partition.nz] = FROZEN
    return k


def _commit(model, state, U, t):
    new = model.partition.scatter(U, state)
    new.t = t
    return new


def _step_with_halving(solver, state, kinds, dt, halvings, substeps=1):
    """Advance by ``dt`` in ``substeps`` steps; on Newton failure retry with 2, 4, ... times as many."""
    model = solver.model
    last = None
    for level in range(halvings + 1):
        n = substeps * 2**level
        h = dt / n
        try:
            s = state
            for i in range(n):
                U = solver.solve(s, kinds, h)
                s = _commit(model, s, U, state.t + (i + 1) * h)
            return s, level
        except NewtonFailure as exc:
            last = exc
    raise NewtonFailure(f"step at t={state.t:.4f} failed after {halvings} halvings: {last}")


def step_full_model(model, state, dt, config=None, solver=None):
    """One trapezoidal step of the full model (``x``, ``z_c`` integrated, ``y`` algebraic).

    Raises
    ------
    NewtonFailure
        When Newton fails even after the configured step halvings.
    """
    config = config or IntegratorConfig(dt=dt)
    solver = solver or StepSolver(model, config.tol, config.max_iter)
    new, _ = _step_with_halving(solver, state, full_kinds(model.partition), dt, config.halvings)
    new.t = state.t + dt
    return new


def resolve_algebraic(model, state, solver=None, tol=1e-8):
    """Re-solve ``y`` from ``g = 0`` with the dynamic states held."""
    solver = solver or StepSolver(model, tol)
    U = solver.solve(state, algebraic_kinds(model.partition), 0.0)
    return _commit(model, state, U, state.t)


def handle_discrete_event(model, state, t=None):
    """Run the discrete update at an event instant.

    Monitors (deadband and pickup timers) are refreshed first, then every
    due tap move is applied as one jump.  Continuous states are untouched.

    Returns
    -------
    (State, bool, int)
        Updated state, whether ``z_d`` jumped and the jump counter ``k``.
    """
    if t is not None:
        state = state.copy()
        state.t = t
    state = model.update_monitors(state)
    return model.eval_discrete(state)


class Marcher:
    """Shared fixed-step driver for the full and QSS engines.

    ``stepper(state, dt)`` advances the continuous states; ``resolver(state)``
    restores consistency after a discontinuity.  ``on_jump(pre, post, k)``
    may return a truthy reason to stop the run (used by the hybrid engine).
    """

    def __init__(self, model, stepper, resolver, bounds_check=True, on_jump=None,
                 on_sample=None):
        self.model = model
        self.stepper = stepper
        self.resolver = resolver
        self.bounds_check = bounds_check
        self.on_jump = on_jump
        self.on_sample = on_sample
        self.stop_reason = None

    def _instant(self, state, schedule, events=True):
        """Events, monitors and jumps at ``state.t``; returns the post-event state."""
        model = self.model
        events = schedule.at(state.t) if schedule is not None and events else []
        for ev in events:
            state = model.apply_event(state, ev)
            self._pending.append(("event", f"{ev.kind}:{ev.target}"))
        if events:
            state = self.resolver(state)
        pre = state
        state, jumped, k = handle_discrete_event(model, state)
        if jumped:
            state = self.resolver(state)
            self._pending.append(("jump", str(k)))
            if self.on_jump is not None:
                reason = self.on_jump(pre, state, k)
                if reason:
                    self.stop_reason = reason
        return state

    def run(self, state, schedule, t_end, dt, trace, start_events=True):
        """March from ``state`` (already consistent) to ``t_end``.

        With ``start_events=False`` exogenous events at the start instant
        are taken as already applied (continuations from a stored point).
        """
        self._pending = []
        t0 = state.t
        state = self._instant(state, schedule, start_events)
        self._record(trace, state)
        if self.stop_reason:
            return state
        n = int(round((t_end - t0) / dt))
        for i in range(1, n + 1):
            t_new = t0 + i * dt
            try:
                state = self.stepper(state, t_new - state.t)
            except NewtonFailure as exc:
                trace.status = "newton-failure"
                trace.message = f"t={t_new:.4f}: {exc}"
                trace.annotate("status", "newton-failure")
                return state
            state.t = t_new
            try:
                state = self._instant(state, schedule)
            except NewtonFailure as exc:
                trace.status = "newton-failure"
                trace.message = f"t={t_new:.4f}: {exc}"
                trace.annotate("status", "newton-failure")
                return state
            self._record(trace, state)
            if self.bounds_check:
                msg = self.model.check_bounds(state)
                if msg:
                    trace.status = "short-term-unstable"
                    trace.message = f"t={t_new:.4f}: {msg}"
                    trace.annotate("status", "short-term-unstable")
                    return state
            if self.on_sample is not None:
                reason = self.on_sample(state)
                if reason:
                    self.stop_reason = reason
            if self.stop_reason:
                return state
        return state

    def _record(self, trace, state):
        trace.append(state)
        for kind, detail in self._pending:
            trace.annotate(kind, detail)
        self._pending = []


def _model_and_state(case, start):
    from .model import SystemModel, build_model

    if isinstance(case, tuple):
        model, init = case
        return model, init if start is None else start
    if isinstance(case, SystemModel):
        if start is None:
            raise ValueError("a start state is required when passing a model")
        return case, start
    model, init = build_model(case)
    return model, init if start is None else start


def simulate_full(case, schedule=None, config=None, start=None, on_jump=None, trace=None,
                  resolve_start=True, start_events=True):
    """Integrate the full model over ``[start.t, config.t_end]``.

    Parameters
    ----------
    case : Case, SystemModel or (SystemModel, State)
        A case (built and initialised here), a built model (``start`` then
        required) or a model with its initial state.
    schedule : EventSchedule, optional
        Exogenous events applied at their sample instants.
    config : IntegratorConfig, optional
    start : State, optional
        Initial point; ``y`` is re-solved before the first sample.

    Returns
    -------
    Trace
        ``trace.final`` holds the last state and ``trace.model`` the model.
    """
    config = config or IntegratorConfig()
    model, state = _model_and_state(case, start)
    solver = StepSolver(model, config.tol, config.max_iter)
    kinds = full_kinds(model.partition)

    def stepper(s, dt):
        new, _ = _step_with_halving(solver, s, kinds, dt, config.halvings)
        return new

    def resolver(s):
        U = solver.solve(s, algebraic_kinds(model.partition), 0.0)
        return _commit(model, s, U, s.t)

    trace = trace if trace is not None else Trace(model.partition.names)
    trace.model = model
    if resolve_start:
        try:
            state = resolver(state)
        except NewtonFailure as exc:
            trace.status = "newton-failure"
            trace.message = f"inconsistent start: {exc}"
            trace.final = state
            return trace
    marcher = Marcher(model, stepper, resolver, on_jump=on_jump)
    final = marcher.run(state, schedule, config.t_end, config.dt, trace, start_events)
    trace.final = final
    trace.stop_reason = marcher.stop_reason
    trace.solver = solver
    return trace
