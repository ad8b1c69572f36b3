"""Equilibria, stable-component classification and oscillation damping checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dae import ALG, StepSolver, _commit
from .errors import NewtonFailure, NoEquilibriumError

DAMPED = "positively-damped"
GROWING = "undamped-or-growing"
INCONCLUSIVE = "inconclusive"


@dataclass
class EquilibriumPoint:
    """Point of ``{h_c = 0, f = 0, g = 0}`` for fixed ``z_d``.

    ``classification`` is ``"long-term SEP"`` when every finite eigenvalue
    of the full linearisation lies in the open left half plane,
    ``"unstable"`` otherwise and ``"unclassified"`` when ``D_y g`` is
    singular.
    """

    state: object
    h_norm: float
    f_norm: float
    g_norm: float
    iterations: int
    classification: str
    eigenvalues: np.ndarray


@dataclass
class GammaClassification:
    eigenvalues: np.ndarray
    gy_nonsingular: bool
    member: bool

    @property
    def abscissa(self):
        """Largest real part of the reduced spectrum (``nan`` if empty)."""
        if self.eigenvalues.size == 0:
            return float("nan")
        return float(np.max(self.eigenvalues.real))


@dataclass
class DampingVerdict:
    """Outcome of :func:`assess_damping`.

    ``swings`` holds, per signal, the peak-to-peak magnitudes between
    successive extrema; ``per_signal`` the verdict of each signal.
    """

    verdict: str
    swings: list
    per_signal: list
    skipped: bool = False

    @property
    def damped(self):
        return self.verdict == DAMPED


def _residual_norms(model, state):
    h, f, g = model.eval_residuals(state)
    n = lambda v: float(np.max(np.abs(v))) if v.size else 0.0  # noqa: E731
    return n(h), n(f), n(g)


def _gy_ok(Gy, cond_max=1e12):
    if Gy.size == 0:
        return True
    try:
        return bool(np.isfinite(np.linalg.cond(Gy)) and np.linalg.cond(Gy) < cond_max)
    except np.linalg.LinAlgError:
        return False


def full_reduced_jacobian(blocks):
    """State matrix of ``[x, z_c]`` after eliminating ``y``."""
    A = np.block([[blocks.Fx, blocks.Fz], [blocks.Hx, blocks.Hz]])
    if blocks.Gy.size == 0:
        return A
    B = np.vstack([blocks.Fy, blocks.Hy])
    C = np.hstack([blocks.Gx, blocks.Gz])
    return A - B @ np.linalg.solve(blocks.Gy, C)


def find_equilibrium(model, state, tol=1e-9, max_iter=30, classify=True):
    """Newton on the stacked ``(h_c, f, g)`` with ``z_d`` fixed.

    Parameters
    ----------
    model : SystemModel
    state : State
        Initial guess; its ``z_d`` and control state are kept.

    Raises
    ------
    NoEquilibriumError
        If Newton does not converge.
    """
    p = model.partition
    solver = StepSolver(model, tol, max_iter)
    kinds = np.full(p.n, ALG, dtype=np.int8)
    try:
        U = solver.solve(state, kinds, 0.0)
    except NewtonFailure as exc:
        raise NoEquilibriumError(f"no equilibrium found: {exc}") from exc
    eq = _commit(model, state, U, state.t)
    hn, fn, gn = _residual_norms(model, eq)
    cls, eig = "unclassified", np.empty(0, complex)
    if classify:
        blocks = model.eval_jacobian_blocks(eq)
        if _gy_ok(blocks.Gy):
            eig = np.linalg.eigvals(full_reduced_jacobian(blocks))
            cls = "long-term SEP" if np.all(eig.real < 0.0) else "unstable"
    return EquilibriumPoint(eq, hn, fn, gn, solver.iterations, cls, eig)


def is_equilibrium(model, state, tol=1e-8):
    """Full-model equilibrium test: ``h_c``, ``f`` and ``g`` all within ``tol``."""
    return max(_residual_norms(model, state)) <= tol


def classify_gamma_s(model, state):
    """Stable-component membership of a point of the constraint manifold.

    The point belongs to the stable component when ``D_y g`` is
    nonsingular and every eigenvalue of ``Fx - Fy Gy^-1 Gx`` has a negative
    real part.
    """
    blocks = model.eval_jacobian_blocks(state)
    if not _gy_ok(blocks.Gy):
        return GammaClassification(np.empty(0, complex), False, False)
    eig = np.linalg.eigvals(blocks.reduced()) if blocks.Fx.size else np.empty(0, complex)
    return GammaClassification(eig, True, bool(np.all(eig.real < 0.0)))


def _smooth(s):
    if s.size < 3:
        return s.copy()
    return np.convolve(s, np.ones(3) / 3.0, mode="valid")


def _extrema(s):
    """Indices where the discrete first difference changes sign."""
    d = np.diff(s)
    sg = np.sign(d)
    # carry the last nonzero sign over flat stretches
    for i in range(1, sg.size):
        if sg[i] == 0:
            sg[i] = sg[i - 1]
    idx = np.nonzero(sg[1:] * sg[:-1] < 0)[0] + 1
    return idx


def _signal_verdict(s, slack, rel_floor, abs_floor):
    s = _smooth(np.asarray(s, dtype=float))
    if s.size < 4:
        return INCONCLUSIVE, np.empty(0)
    size = max(np.max(np.abs(s)), np.max(s) - np.min(s))
    if np.max(s) - np.min(s) <= abs_floor:
        return DAMPED, np.empty(0)
    ext = _extrema(s)
    vals = s[ext]
    swings = np.abs(np.diff(vals))
    floor = max(rel_floor * size, abs_floor)
    big = swings > floor
    if ext.size == 0 or (swings.size and not big.any()):
        # monotone (or flat up to noise): converging iff the slope shrinks
        d = np.abs(np.diff(s))
        q = max(d.size // 4, 1)
        head, tail = np.mean(d[:q]), np.mean(d[-q:])
        if tail <= floor * 1e-3 or tail <= (1.0 - slack) * head:
            return DAMPED, swings
        return GROWING, swings
    if ext.size < 3:
        return INCONCLUSIVE, swings
    # swings that died out below the floor count as zero
    sw = np.where(big, swings, 0.0)
    if sw.size >= 3:
        prev, nxt = sw[:-2], sw[2:]
    else:
        prev, nxt = sw[:-1], sw[1:]
    live = prev > 0.0
    if not live.any():
        return DAMPED, swings
    ratios = nxt[live] / prev[live]
    if np.all(ratios <= 1.0 - slack):
        return DAMPED, swings
    return GROWING, swings


def assess_damping(signals, slack=1e-3, rel_floor=1e-6, abs_floor=1e-9):
    """Decide whether oscillating signals are positively damped.

    Each signal is smoothed over three samples, its extrema are located by
    sign changes of the first difference and the magnitudes of the swings
    between consecutive extrema are compared (same-direction swings when at
    least three are available, so a drifting mean does not bias the test).
    A signal is damped when every ratio is at most ``1 - slack``; equal
    swings therefore count as undamped.  Monotone signals are damped when
    their slope decays.  Fewer than three extrema on a non-monotone signal
    gives ``inconclusive``.  Swings below ``max(rel_floor * size,
    abs_floor)`` are treated as noise, and a signal whose whole range is
    within ``abs_floor`` counts as settled.

    Parameters
    ----------
    signals : array_like
        One signal (1-D) or several (2-D, one per column).

    Returns
    -------
    DampingVerdict
    """
    arr = np.asarray(signals, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    per, swings = [], []
    for j in range(arr.shape[1]):
        v, sw = _signal_verdict(arr[:, j], slack, rel_floor, abs_floor)
        per.append(v)
        swings.append(sw)
    if not per or all(v == DAMPED for v in per):
        verdict = DAMPED
    elif any(v == GROWING for v in per):
        verdict = GROWING
    else:
        verdict = INCONCLUSIVE
    return DampingVerdict(verdict, swings, per)


def oxl_signals(trace, model, t_from=None):
    """OXL state columns of a trace (optionally from ``t_from`` on)."""
    names = [model.partition.zc_names[i] for i in model.partition.oxl_index]
    data = trace.data
    t = trace.times
    mask = np.ones(t.size, bool) if t_from is None else t >= t_from - 1e-9
    cols = [trace.names.index(n) for n in names]
    return data[mask][:, cols]


def classify_outcome(trace, model, window=60.0):
    """Stability outcome of a finished full-model trace.

    A terminated run is ``unstable``; otherwise the OXL states over the
    final ``window`` seconds decide between ``oscillatory`` and
    ``long-term-stable``.
    """
    if trace.status != "completed":
        return "unstable"
    if not model.partition.oxl_index or len(trace) < 8:
        return "long-term-stable"
    sig = oxl_signals(trace, model, trace.t[-1] - window)
    v = assess_damping(sig)
    return "oscillatory" if v.verdict == GROWING else "long-term-stable"
