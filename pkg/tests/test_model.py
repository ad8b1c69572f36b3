import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsshybrid import kernel
from qsshybrid.case import Event
from qsshybrid.dae import IntegratorConfig, handle_discrete_event, simulate_full
from qsshybrid.devices import time_constants
from qsshybrid.model import FunctionModel, State
from qsshybrid.stability import find_equilibrium

from conftest import bundled, central_jacobian


def smib_oracle(model, case, s, active):
    """Residual ``[f, h_c, g]`` of the 3-bus toy written out by hand."""
    g = case.generators[0]
    a = case.avrs[0]
    o = case.oxls[0]
    gv = case.governors[0]
    r = case.recovery_loads[0]
    lt = case.ltcs[0]
    st = model._static
    Vref = st["apar"][0, 8]
    pref = st["vpar"][0, 3]
    P0, Q0 = model._rl_base[0, :2]
    n = s.zd[0]
    delta, omega, eqp, edp, vm, vr, efd = s.x
    voxl, g1, pm, xp, xq = s.zc
    th = s.y[0:3]
    V = s.y[3:6]
    i_d, i_q = s.y[6:8]
    wb = 2 * np.pi * case.freq

    Te = edp * i_d + eqp * i_q + (g.xq_p - g.xd_p) * i_d * i_q
    f = [
        wb * omega,
        (pm - Te - g.D * omega) / (2 * g.H),
        (efd - eqp - (g.xd - g.xd_p) * i_d) / g.Td0_p,
        (-edp + (g.xq - g.xq_p) * i_q) / g.Tq0_p,
        (V[1] - vm) / a.Tr,
        (min(max(a.Ka * (Vref - vm - voxl), a.vr_min), a.vr_max) - vr) / a.Ta,
        (min(max(vr, a.efd_min), a.efd_max) - efd) / a.Te,
    ]
    i_f = eqp + (g.xd - g.xd_p) * i_d
    h = [
        max(o.K * (i_f - o.i_lim), -voxl / o.T_reset) if active else -voxl / o.T_reset,
        (min(max(pref - omega / gv.R, 0.0), gv.p_max) - g1) / gv.Ts,
        (min(max(g1, 0.0), gv.p_max) - pm) / gv.Tt,
        -xp / r.Tp + P0 * (V[2] ** r.alpha_s - V[2] ** r.alpha_t),
        -xq / r.Tq + Q0 * (V[2] ** r.beta_s - V[2] ** r.beta_t),
    ]
    # network: branch 1-2 (x1), branch 2-3 (x2, tap n on bus 2)
    x1 = case.branch(1).x
    x2 = case.branch(lt.branch).x
    Vc = V * np.exp(1j * th)
    y1, y2 = 1 / (1j * x1), 1 / (1j * x2)
    I = np.array([
        y1 * (Vc[0] - Vc[1]),
        y1 * (Vc[1] - Vc[0]) + y2 / n * (Vc[1] / n - Vc[2]),
        y2 * (Vc[2] - Vc[1] / n),
    ])
    S = Vc * np.conj(I)
    vd = V[1] * np.sin(delta - th[1])
    vq = V[1] * np.cos(delta - th[1])
    Pg = vd * i_d + vq * i_q
    Qg = vq * i_d - vd * i_q
    Pl = xp / r.Tp + P0 * V[2] ** r.alpha_t
    Ql = xq / r.Tq + Q0 * V[2] ** r.beta_t
    gP = [th[0] - model._thset, Pg - S[1].real, -Pl - S[2].real]
    gQ = [V[0] - model._vset, Qg - S[1].imag, -Ql - S[2].imag]
    gs = [
        edp - vd - g.ra * i_d + g.xq_p * i_q,
        eqp - vq - g.ra * i_q - g.xd_p * i_d,
    ]
    return np.array(f + h + gP + gQ + gs)


def random_state(model, state, rng, scale=0.02):
    s = state.copy()
    s.x = s.x + scale * rng.standard_normal(s.x.size) * np.maximum(np.abs(s.x), 0.1)
    s.zc = s.zc + scale * rng.standard_normal(s.zc.size) * np.maximum(np.abs(s.zc), 0.1)
    s.y = s.y + scale * rng.standard_normal(s.y.size) * np.maximum(np.abs(s.y), 0.1)
    return s


@pytest.mark.parametrize("active", [False, True])
def test_smib_residual_matches_hand_oracle(rng, active):
    case, _, model, state = bundled("smib")
    for _ in range(20):
        s = random_state(model, state, rng, 0.05)
        s.zd = np.array([rng.uniform(0.9, 1.1)])
        s.zc[0] = abs(s.zc[0])
        s.ctrl = s.ctrl.copy()
        s.ctrl.oxl = tuple(type(t)(0.0, active) for t in s.ctrl.oxl)
        R, _ = model.evaluate(model.partition.gather(s), s, jac=False)
        np.testing.assert_allclose(R, smib_oracle(model, case, s, active), atol=1e-12, rtol=0)


def test_initial_state_is_equilibrium():
    for name in ("smib", "case1", "case2", "stable"):
        _, _, model, state = bundled(name)
        h, f, g = model.eval_residuals(state)
        assert max(np.abs(h).max(), np.abs(f).max(), np.abs(g).max()) <= 1e-9, name


def test_evaluation_is_pure():
    _, _, model, state = bundled("case1")
    a = model.eval_residuals(state)
    b = model.eval_residuals(state)
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


def test_toy_jacobian_blocks():
    m = FunctionModel(1, 0, 1, lambda x, z, y, zd: (-x + y, [], y - 0.5 * x))
    b = m.eval_jacobian_blocks(m.state(x=[0.3], y=[0.2]))
    vals = [b.Fx[0, 0], b.Fy[0, 0], b.Gx[0, 0], b.Gy[0, 0]]
    np.testing.assert_allclose(vals, [-1, 1, -0.5, 1], atol=1e-9)


@pytest.mark.parametrize("name", ["smib", "case1", "case2"])
def test_jacobian_matches_central_differences(name):
    """Analytic Jacobian against central differences at random feasible states."""
    _, _, model, state = bundled(name)
    rng = np.random.default_rng(7)
    n_states = 100 if name == "case1" else 20
    worst = 0.0
    for k in range(n_states):
        s = random_state(model, state, rng)
        s.zc[list(model.partition.oxl_index)] = rng.uniform(0.0, 0.05, len(model.oxls))
        s.ctrl = s.ctrl.copy()
        s.ctrl.oxl = tuple(type(t)(0.0, bool(rng.integers(2))) for t in s.ctrl.oxl)
        _, J = model.evaluate(model.partition.gather(s), s)
        Jfd = central_jacobian(model, s)
        worst = max(worst, np.max(np.abs(J - Jfd) / np.maximum(1.0, np.abs(Jfd))))
    assert worst <= 1e-5


@pytest.mark.skipif("compiled" not in kernel.available_backends(), reason="extension not built")
def test_backends_agree(rng):
    _, schedule, model, state = bundled("case1")
    s0 = state.copy()
    for ev in schedule.events:
        s0 = model.apply_event(s0, ev)
    prev = kernel.backend()
    try:
        for s in (state, s0):
            for _ in range(10):
                r = random_state(model, s, rng)
                U = model.partition.gather(r)
                kernel.use_backend("python")
                Rp, Jp = model.evaluate(U, r)
                kernel.use_backend("compiled")
                Rc, Jc = model.evaluate(U, r)
                np.testing.assert_allclose(Rc, Rp, rtol=1e-12, atol=1e-12)
                np.testing.assert_allclose(Jc, Jp, rtol=1e-12, atol=1e-12)
    finally:
        kernel.use_backend(prev)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernel.use_backend("fortran")


def test_decoupled_devices_have_zero_cross_blocks():
    _, _, model, state = bundled("case1")
    b = model.eval_jacobian_blocks(state)
    p = model.partition
    rows = [i for i, n in enumerate(p.zc_names) if n.startswith(("xp_", "xq_"))]
    assert np.all(b.Hx[rows] == 0.0)
    gov = [i for i, n in enumerate(p.zc_names) if n.startswith(("gov1_", "pm_"))]
    assert np.all(b.Hy[gov] == 0.0)


def test_dead_bus_is_pinned():
    case, schedule, model, state = bundled("case1")
    s = state
    for ev in schedule.events:
        s = model.apply_event(s, ev)
    kd = model.kernel_data(s)
    pos11 = model.bus_pos[11]
    assert pos11 in kd.pin
    R, J = model.evaluate(model.partition.gather(s), s)
    oy = model.partition.nx + model.partition.nz
    assert R[oy + model.nb + pos11] == pytest.approx(s.y[model.nb + pos11] - 1.0)
    row = J[oy + model.nb + pos11]
    assert row[oy + model.nb + pos11] == 1.0 and np.count_nonzero(row) == 1
    # only the slack is pinned before the trips
    assert list(model.kernel_data(state).pin) == [model.slack]


def test_eps_from_time_constants():
    case, _, model, _ = bundled("case1")
    assert model.eps == pytest.approx(1.0 / max(time_constants(case)))


def test_no_timer_due_is_identity():
    _, _, model, state = bundled("case2")
    new, jumped, k = handle_discrete_event(model, state, t=5.0)
    assert not jumped and k == state.ctrl.k
    np.testing.assert_array_equal(new.zd, state.zd)


def _all_due(model, state, t, V):
    s = state.copy()
    s.t = t
    s.ctrl.ltc = tuple(type(lt)(lt.n, t) for lt in s.ctrl.ltc)
    s.y[model.nb: 2 * model.nb] = V
    return s


def test_simultaneous_taps_are_one_jump():
    _, _, model, state = bundled("case2")
    s = _all_due(model, state, 41.0, 0.5)
    new, jumped, k = model.eval_discrete(s)
    assert jumped and k == state.ctrl.k + 1
    np.testing.assert_allclose(new.zd, state.zd - 0.01)


def test_tap_at_limit_is_held():
    _, _, model, state = bundled("case2")
    s = _all_due(model, state, 41.0, 0.5)
    s.zd[:] = [lt.n_min for lt in model.ltcs]
    s.ctrl.ltc = tuple(type(lt)(n, 41.0) for lt, n in zip(s.ctrl.ltc, s.zd))
    new, jumped, _ = model.eval_discrete(s)
    assert not jumped
    np.testing.assert_array_equal(new.zd, s.zd)
    assert all(lt.at_limit for lt in new.ctrl.ltc)


def test_load_step_event():
    _, _, model, state = bundled("case1")
    s = model.apply_event(state, Event(1.0, "load_step", "RL9", 1.1))
    assert s.ctrl.load_scale[model.load_ids.index("RL9")] == 1.1
    h, _, g = model.eval_residuals(s)
    assert np.abs(g).max() > 1e-3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4), st.data())
def test_partition_round_trip(nx, nz, ny, data):
    m = FunctionModel(nx, nz, ny, lambda x, z, y, zd: (x, z, y))
    vals = data.draw(st.lists(st.floats(-1e6, 1e6), min_size=nx + nz + ny,
                              max_size=nx + nz + ny))
    U = np.array(vals, dtype=float)
    tmpl = State(0.0, np.zeros(nx), np.zeros(nz), np.zeros(0), np.zeros(ny))
    s = m.partition.scatter(U, tmpl)
    assert m.partition.gather(s).tobytes() == U.tobytes()
    s2 = m.partition.scatter(m.partition.gather(s), tmpl)
    for a, b in ((s.x, s2.x), (s.zc, s2.zc), (s.y, s2.y)):
        assert a.tobytes() == b.tobytes()


def test_equilibrium_cross_fed_to_both_models():
    from qsshybrid.qss import find_qss_equilibrium, solve_fast_equilibrium

    _, _, model, state = bundled("smib")
    eq = find_equilibrium(model, state)
    # a full-model equilibrium is a fast equilibrium with h_c = 0
    fast = solve_fast_equilibrium(model, eq.state)
    h, _, _ = model.eval_residuals(fast.state)
    assert np.abs(h).max() <= 1e-8
    q = find_qss_equilibrium(model, state)
    hq, fq, gq = model.eval_residuals(q)
    assert max(np.abs(hq).max(), np.abs(fq).max(), np.abs(gq).max()) <= 1e-8


def test_python_fallback_selected_without_extension():
    code = (
        "import sys; sys.modules['qsshybrid._kernel'] = None\n"
        "from qsshybrid import kernel\n"
        "from qsshybrid.scenario import load_bundled\n"
        "from qsshybrid.model import build_model\n"
        "from qsshybrid.dae import simulate_full, IntegratorConfig\n"
        "assert kernel.backend() == 'python'\n"
        "assert kernel.available_backends() == ('python',)\n"
        "m, s = build_model(load_bundled('smib')[0])\n"
        "tr = simulate_full((m, s), None, IntegratorConfig(t_end=1.0))\n"
        "assert tr.status == 'completed'\n"
    )
    subprocess.run([sys.executable, "-c", code], check=True)


def test_python_backend_runs_scenario():
    prev = kernel.use_backend("python")
    try:
        _, schedule, model, state = bundled("case1")
        tr = simulate_full((model, state), schedule, IntegratorConfig(t_end=3.0))
    finally:
        kernel.use_backend(prev)
    ref = simulate_full((model, state), schedule, IntegratorConfig(t_end=3.0))
    np.testing.assert_allclose(tr.data, ref.data, atol=1e-9)
