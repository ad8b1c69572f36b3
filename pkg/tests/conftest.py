import functools
import time

import numpy as np
import pytest

from qsshybrid.dae import IntegratorConfig, simulate_full
from qsshybrid.hybrid import HybridParams, run_hybrid
from qsshybrid.model import build_model
from qsshybrid.qss import QssConfig, simulate_qss
from qsshybrid.scenario import load_bundled


@functools.lru_cache(maxsize=None)
def bundled(name):
    """``(case, schedule, model, initial_state)`` of a bundled scenario."""
    case, schedule = load_bundled(name)
    model, state = build_model(case)
    return case, schedule, model, state


@functools.lru_cache(maxsize=None)
def scenario_run(name, mode, t_end=300.0):
    """Cached ``(trace, verdict_or_None, wall_clock)`` of one scenario run."""
    case, schedule, model, state = bundled(name)
    t0 = time.perf_counter()
    if mode == "qss":
        out = simulate_qss((model, state), schedule, QssConfig(t_end=t_end)), None
    elif mode == "full":
        out = simulate_full((model, state), schedule, IntegratorConfig(t_end=t_end)), None
    else:
        out = run_hybrid(case, schedule, HybridParams(t_end=t_end))
    return out[0], out[1], time.perf_counter() - t0


def state_from_row(model, row, t, template):
    """Rebuild a State from a trace row (control state taken from ``template``)."""
    p = model.partition
    nzd = len(p.zd_names)
    s = template.copy()
    s.x = row[: p.nx].copy()
    s.zc = row[p.nx: p.nx + p.nz].copy()
    s.zd = row[p.nx + p.nz: p.nx + p.nz + nzd].copy()
    s.y = row[p.nx + p.nz + nzd:].copy()
    s.t = t
    return s


def central_jacobian(model, state, h=1e-6):
    p = model.partition
    U = p.gather(state)
    J = np.empty((p.n, p.n))
    for j in range(p.n):
        e = np.zeros(p.n)
        e[j] = h
        Rp, _ = model.evaluate(U + e, state, jac=False)
        Rm, _ = model.evaluate(U - e, state, jac=False)
        J[:, j] = (Rp - Rm) / (2 * h)
    return J


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
