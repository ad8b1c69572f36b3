"""Quasi steady-state engine: slow integration on the constraint manifold.

The fast states ``x`` are replaced by their equilibrium conditions, so every
accepted sample satisfies ``f = 0`` and ``g = 0`` while ``z_c`` follows the
trapezoidal rule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgWarning, lapack, lu_factor

from .dae import (
    ALG,
    FROZEN,
    TRAP,
    IntegratorConfig,
    Marcher,
    StepSolver,
    Trace,
    _commit,
    _model_and_state,
    _step_with_halving,
    simulate_full,
)
from .errors import ManifoldSolveError, NewtonFailure


@dataclass(frozen=True)
class QssConfig(IntegratorConfig):
    """QSS settings; ``dt`` is the slow step.

    ``tau1`` is the length of the full-model warm-up used when no start
    point is given (short-term dynamics right after a disturbance are not
    representable on the manifold); ``dt_full`` is its step.  The first
    step after a change of the discrete state is split into
    ``restart_substeps`` steps, which keeps the trapezoidal rule from
    ringing on stiff slow modes (an OXL that just picked up).
    """

    dt: float = 0.1
    tau1: float = 20.0
    dt_full: float = 0.01
    track_singularity: bool = True
    restart_substeps: int = 10

    def full_config(self, t_end=None):
        return IntegratorConfig(dt=self.dt_full, tol=self.tol, max_iter=self.max_iter,
                                t_end=self.tau1 if t_end is None else t_end,
                                halvings=self.halvings)


@dataclass
class ManifoldPoint:
    """A state certified to lie on ``f = 0, g = 0``."""

    state: object
    f_norm: float
    g_norm: float
    iterations: int = 0


@dataclass(frozen=True)
class SingularityReport:
    """Bordered-Jacobian determinant of the fast subsystem.

    ``det`` is the raw determinant, ``scaled_det`` the determinant after
    row equilibration, ``sign`` its sign and ``rcond`` the 1-norm
    reciprocal condition estimate of the row-equilibrated matrix (used for
    the threshold).
    """

    det: float
    scaled_det: float
    sign: float
    min_eig: float | None
    flag: bool
    rcond: float = 1.0


def fast_kinds(partition):
    """``x`` and ``y`` algebraic, ``z_c`` frozen."""
    k = np.full(partition.n, ALG, dtype=np.int8)
    k[partition.nx: partition.nx + partition.nz] = FROZEN
    return k


def qss_kinds(partition):
    """``z_c`` trapezoidal, ``x`` and ``y`` algebraic."""
    k = np.full(partition.n, ALG, dtype=np.int8)
    k[partition.nx: partition.nx + partition.nz] = TRAP
    return k


def _certify(model, state, tol):
    h, f, g = model.eval_residuals(state)
    fn = float(np.max(np.abs(f))) if f.size else 0.0
    gn = float(np.max(np.abs(g))) if g.size else 0.0
    if fn > tol or gn > tol:
        raise ManifoldSolveError(f"point not on manifold: |f|={fn:.2e} |g|={gn:.2e}")
    return fn, gn


def solve_fast_equilibrium(model, state, guess=None, *, tol=1e-8, max_iter=20, max_step=None,
                           require_stable=False, solver=None):
    """Solve ``f = 0, g = 0`` for ``(x, y)`` with ``(z_c, z_d)`` held.

    Parameters
    ----------
    model : SystemModel
    state : State
        Supplies ``z_c``, ``z_d`` and the control state; its ``(x, y)`` is
        the initial guess unless ``guess`` is given.
    guess : tuple of ndarray, optional
        ``(x0, y0)`` initial guess.
    max_step : float, optional
        Reject solutions farther than this (infinity norm) from the guess,
        which guards against converging to another branch.
    require_stable : bool
        Also require the solution to lie on the stable component (all
        reduced-Jacobian eigenvalues in the open left half plane).

    Raises
    ------
    ManifoldSolveError
        On Newton failure, a branch jump or (optionally) an unstable point.
    """
    p = model.partition
    start = state.copy()
    if guess is not None:
        start.x = np.asarray(guess[0], float).copy()
        start.y = np.asarray(guess[1], float).copy()
    solver = solver or StepSolver(model, tol, max_iter)
    before = solver.iterations
    try:
        U = solver.solve(start, fast_kinds(p), 0.0)
    except NewtonFailure as exc:
        raise ManifoldSolveError(f"fast equilibrium not found: {exc}") from exc
    new = _commit(model, start, U, state.t)
    if max_step is not None:
        jump = max(np.max(np.abs(new.x - start.x), initial=0.0),
                   np.max(np.abs(new.y - start.y), initial=0.0))
        if jump > max_step:
            raise ManifoldSolveError(f"solution moved {jump:.3e} from the guess (branch jump)")
    if require_stable:
        from .stability import classify_gamma_s

        cls = classify_gamma_s(model, new)
        if not cls.member:
            raise ManifoldSolveError("fast equilibrium is not on the stable component")
    fn, gn = _certify(model, new, max(tol, 1e-12) * 10)
    return ManifoldPoint(new, fn, gn, solver.iterations - before)


def step_qss(model, state, dt_qss, solver=None, tol=1e-8, max_iter=20, halvings=2):
    """One trapezoidal step of ``z_c`` with ``(x, y)`` re-solved on the manifold."""
    solver = solver or StepSolver(model, tol, max_iter)
    try:
        new, _ = _step_with_halving(solver, state, qss_kinds(model.partition), dt_qss, halvings)
    except NewtonFailure as exc:
        raise ManifoldSolveError(str(exc)) from exc
    new.t = state.t + dt_qss
    return new


def detect_singularity(model, state, previous=None, threshold=1e-10, eigen=False):
    """Check the bordered fast Jacobian ``[[Fx, Fy], [Gx, Gy]]`` for singularity.

    The matrix is flagged when it is numerically singular (``rcond`` below
    ``threshold``).  ``previous`` is the report of the preceding sample; a
    sign change of the determinant between the two also flags a crossing of
    the singular set.
    """
    blocks = model.eval_jacobian_blocks(state)
    A = blocks.fast()
    if A.size == 0:
        return SingularityReport(1.0, 1.0, 1.0, None, False)
    scale = np.max(np.abs(A), axis=1)
    scale[scale == 0.0] = 1.0
    As = A / scale[:, None]
    with warnings.catch_warnings():
        # an exactly singular factor is reported through the sign below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(As, check_finite=False)
    d = np.diag(lu)
    swaps = np.count_nonzero(piv != np.arange(piv.size))
    sign = 0.0 if np.any(d == 0.0) else float((-1) ** swaps * np.prod(np.sign(d)))
    with np.errstate(divide="ignore"):
        s_log = float(np.sum(np.log(np.abs(d))))
    scaled = sign * float(np.exp(s_log))
    det = sign * float(np.exp(s_log + np.sum(np.log(scale))))
    rcond = 0.0
    if sign != 0.0:
        rcond = float(lapack.dgecon(lu, np.max(np.sum(np.abs(As), axis=0)))[0])
    min_eig = float(np.min(np.abs(np.linalg.eigvals(A)))) if eigen else None
    flag = sign == 0.0 or rcond < threshold
    if previous is not None and previous.sign != 0 and sign != 0 and sign != previous.sign:
        flag = True
    return SingularityReport(det, scaled, sign, min_eig, bool(flag), rcond)


def simulate_qss(case, schedule=None, config=None, start=None, on_jump=None, watch=None,
                 start_events=True):
    """Run the QSS model.

    Without ``start`` the full model is integrated up to ``config.tau1``
    first and the QSS model starts from the fast equilibrium seeded with the
    full-model point there.  With ``start`` (a State or ManifoldPoint) the
    QSS model runs from that point directly.  ``watch(state)`` is called at
    every sample and may return a reason to stop early.

    Returns
    -------
    Trace
        Samples from the warm-up (if any) followed by manifold samples.  A
        ``mode=qss`` annotation marks the first manifold sample; a failed
        manifold solve ends the run with status ``singularity``.
    """
    config = config or QssConfig()
    if isinstance(start, ManifoldPoint):
        start = start.state
    model, state = _model_and_state(case, start)
    trace = Trace(model.partition.names)
    trace.model = model
    if start is None:
        warm = simulate_full(model, schedule, config.full_config(), start=state)
        if warm.status != "completed":
            warm.qss_start = None
            return warm
        trace = warm.truncate(config.tau1)
        trace.model = model
        try:
            state = solve_fast_equilibrium(model, warm.final, tol=config.tol).state
        except ManifoldSolveError as exc:
            trace.status = "singularity"
            trace.message = f"QSS start: {exc}"
            trace.final = warm.final
            return trace
    else:
        try:
            state = solve_fast_equilibrium(model, state, tol=config.tol).state
        except ManifoldSolveError as exc:
            trace.status = "singularity"
            trace.message = f"QSS start: {exc}"
            trace.final = state
            return trace
    trace.qss_start = state.copy()
    solver = StepSolver(model, config.tol, config.max_iter)
    kinds = qss_kinds(model.partition)
    fkinds = fast_kinds(model.partition)

    mode = {"last": None}

    def stepper(s, dt):
        sig = (s.zd.tobytes(), tuple(s.ctrl.oxl_active()))
        sub = config.restart_substeps if sig != mode["last"] else 1
        mode["last"] = sig
        try:
            new, _ = _step_with_halving(solver, s, kinds, dt, config.halvings, sub)
        except NewtonFailure as exc:
            raise ManifoldSolveError(str(exc)) from exc
        return new

    def resolver(s):
        try:
            U = solver.solve(s, fkinds, 0.0)
        except NewtonFailure as exc:
            raise ManifoldSolveError(str(exc)) from exc
        return _commit(model, s, U, s.t)

    last = {"report": None}

    def on_sample(s):
        if config.track_singularity:
            rep = detect_singularity(model, s, last["report"])
            if rep.flag:
                marcher._pending.append(("singular", f"{rep.rcond:.3e}"))
            last["report"] = rep
        return watch(s) if watch is not None else None

    marcher = Marcher(model, stepper, resolver, on_jump=on_jump, on_sample=on_sample)
    n0 = len(trace)
    try:
        final = marcher.run(state, schedule, config.t_end, config.dt, trace,
                            start_events if start is not None else False)
    except ManifoldSolveError as exc:
        trace.status = "singularity"
        trace.message = str(exc)
        trace.annotate("status", "singularity")
        final = trace.final
    else:
        if trace.status == "newton-failure":
            trace.status = "singularity"
    if len(trace) > n0:
        trace.annotate("mode", "qss", index=n0)
    trace.final = final
    trace.stop_reason = marcher.stop_reason
    return trace


def reduced_slow_jacobian(blocks):
    """``Hz - [Hx Hy] [[Fx Fy], [Gx Gy]]^-1 [Fz; Gz]``."""
    A = blocks.fast()
    if blocks.Hz.size == 0:
        return blocks.Hz.copy()
    B = np.vstack([blocks.Fz, blocks.Gz])
    C = np.hstack([blocks.Hx, blocks.Hy])
    return blocks.Hz - C @ np.linalg.solve(A, B)


def find_qss_equilibrium(model, state, tol=1e-9, max_iter=30):
    """Equilibrium of the QSS model: ``h_c(z_c, l(z_c, z_d)) = 0``.

    Nested Newton: the outer iteration on ``z_c`` uses the reduced slow
    Jacobian, the inner one keeps ``(x, y)`` on the manifold.
    """
    s = solve_fast_equilibrium(model, state, tol=tol * 0.1).state
    for _ in range(max_iter):
        h, _, _ = model.eval_residuals(s)
        if h.size == 0 or np.max(np.abs(h)) <= tol:
            return s
        Hr = reduced_slow_jacobian(model.eval_jacobian_blocks(s))
        try:
            dz = np.linalg.solve(Hr, h)
        except np.linalg.LinAlgError as exc:
            raise ManifoldSolveError(f"singular reduced slow Jacobian: {exc}") from exc
        s = replace(s, zc=s.zc - dz)
        s = solve_fast_equilibrium(model, s, tol=tol * 0.1).state
    raise ManifoldSolveError("QSS equilibrium iteration did not converge")
