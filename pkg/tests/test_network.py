import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsshybrid.case import Case
from qsshybrid.errors import CaseValidationError
from qsshybrid.network import (
    Branch,
    Bus,
    OutageWarning,
    apply_branch_outage,
    branch_stamp,
    build_admittance,
    network_mismatch,
    network_mismatch_jacobian,
    solve_power_flow,
)
from qsshybrid.scenario import load_bundled


def two_bus(**kw):
    br = dict(id=1, from_bus=1, to_bus=2, r=0.0, x=0.1)
    br.update(kw)
    return Case("two", [Bus(1, "slack"), Bus(2)], [Branch(**br)])


def dense_oracle(case, taps=None, out=()):
    """Entry-by-entry re-stamping with plain complex arithmetic."""
    ids = sorted(b.id for b in case.buses)
    Y = np.zeros((len(ids), len(ids)), complex)
    for b in case.buses:
        Y[ids.index(b.id), ids.index(b.id)] += complex(b.gs, b.bs)
    for br in case.branches:
        if br.id in out or not br.in_service:
            continue
        i, j = ids.index(br.from_bus), ids.index(br.to_bus)
        n = (taps or {}).get(br.id, br.tap)
        y = 1 / complex(br.r, br.x)
        sh = 1j * br.b / 2
        Y[i, i] += (y + sh) / n**2
        Y[j, j] += y + sh
        Y[i, j] -= y / n
        Y[j, i] -= y / n
    return Y


def test_two_bus_stamp():
    Y = build_admittance(two_bus()).dense()
    y = -10j
    np.testing.assert_allclose(Y, [[y, -y], [-y, y]], atol=1e-14)


def test_shunt_only():
    case = Case("one", [Bus(1, "slack", bs=0.2)], [])
    np.testing.assert_allclose(build_admittance(case).dense(), [[0.2j]])


def test_fourteen_bus_matches_dense_oracle():
    case, _ = load_bundled("ieee14")
    np.testing.assert_allclose(build_admittance(case).dense(), dense_oracle(case), atol=1e-12)


def test_tap_override_matches_oracle():
    case, _ = load_bundled("case2")
    taps = {lt.branch: 0.93 for lt in case.ltcs}
    np.testing.assert_allclose(build_admittance(case, taps=taps).dense(),
                               dense_oracle(case, taps=taps), atol=1e-12)


def test_trip_only_branch_gives_zero():
    case = two_bus()
    Y = apply_branch_outage(build_admittance(case), case.branches[0])
    np.testing.assert_array_equal(Y.dense(), np.zeros((2, 2)))


def test_trip_one_of_two_parallel_lines():
    case = Case("par", [Bus(1, "slack"), Bus(2)],
                [Branch(1, 1, 2, 0.0, 0.1), Branch(2, 1, 2, 0.0, 0.1)])
    Y = build_admittance(case)
    Y1 = apply_branch_outage(Y, case.branches[0])
    np.testing.assert_allclose(Y1.dense()[0, 1], Y.dense()[0, 1] / 2, atol=1e-14)


def test_sequential_trips_equal_rebuild():
    case, _ = load_bundled("case2")
    Y = build_admittance(case)
    ends = {frozenset((b.from_bus, b.to_bus)): b for b in case.branches}
    tripped = []
    for pair in ((6, 13), (7, 9), (6, 11)):
        br = ends[frozenset(pair)]
        Y = apply_branch_outage(Y, br)
        tripped.append(br.id)
    rebuilt = build_admittance(case, out_of_service=tripped)
    np.testing.assert_allclose(Y.dense(), rebuilt.dense(), atol=1e-14, rtol=0)


def test_double_trip_warns():
    case = two_bus()
    Y = apply_branch_outage(build_admittance(case), case.branches[0])
    with pytest.warns(OutageWarning):
        Y2 = apply_branch_outage(Y, case.branches[0])
    assert Y2 is Y


def test_unknown_bus_rejected():
    case = Case("bad", [Bus(1, "slack")], [Branch(1, 1, 7, 0.0, 0.1)])
    with pytest.raises(CaseValidationError):
        build_admittance(case)


def test_isolated_bus_zero_mismatch():
    case = Case("iso", [Bus(1, "slack"), Bus(2)], [])
    Y = build_admittance(case)
    g = network_mismatch(Y, np.array([1.0, 0.7]), np.array([0.0, 1.3]), np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(g, 0.0)


def test_two_bus_newton_matches_hand_power_flow():
    # hand Newton on the receiving-end equations of a lossless line
    x, P, Q = 0.1, 0.5, 0.1
    V, th = 1.0, 0.0
    for _ in range(30):
        F = np.array([-P - V * np.sin(th) / x, -Q - (V * V - V * np.cos(th)) / x])
        Jh = np.array([[-V * np.cos(th) / x, -np.sin(th) / x],
                       [-V * np.sin(th) / x, -(2 * V - np.cos(th)) / x]])
        d = np.linalg.solve(Jh, -F)
        th, V = th + d[0], V + d[1]
    Y = build_admittance(two_bus())
    Vs, ths = np.array([1.0, 1.0]), np.zeros(2)
    p_inj, q_inj = np.array([0.0, -P]), np.array([0.0, -Q])
    for _ in range(30):
        g = network_mismatch(Y, Vs, ths, p_inj, q_inj, slack=0, v_set=1.0)
        if np.max(np.abs(g)) < 1e-13:
            break
        J = network_mismatch_jacobian(Y, Vs, ths, slack=0)
        dx = np.linalg.solve(J, -g)
        ths, Vs = ths + dx[:2], Vs + dx[2:]
    assert abs(Vs[1] - V) <= 1e-8 and abs(ths[1] - th) <= 1e-8


def test_power_flow_fourteen_bus():
    case, _ = load_bundled("ieee14")
    Y = build_admittance(case)
    buses = sorted(case.buses, key=lambda b: b.id)
    kinds = [b.kind for b in buses]
    V0 = np.array([b.V for b in buses])
    p = np.zeros(len(buses))
    q = np.zeros(len(buses))
    pos = {b.id: i for i, b in enumerate(buses)}
    for g in case.generators:
        p[pos[g.bus]] += g.P
        V0[pos[g.bus]] = g.V
    for ld in case.static_loads:
        p[pos[ld.bus]] -= ld.P
        q[pos[ld.bus]] -= ld.Q
    pf = solve_power_flow(Y, kinds, V0, np.zeros(len(buses)), p, q)
    pq = [i for i, k in enumerate(kinds) if k == "pq"]
    np.testing.assert_allclose(pf.Q[pq], q[pq], atol=1e-10)
    # known solution of the standard case
    assert abs(pf.V[pos[14]] - 1.036) < 2e-3
    assert abs(np.degrees(pf.theta[pos[14]]) + 16.03) < 0.1


def test_mismatch_jacobian_finite_difference(rng):
    case, _ = load_bundled("ieee14")
    Y = build_admittance(case)
    n = len(case.buses)
    for _ in range(5):
        V = 1 + 0.05 * rng.standard_normal(n)
        th = 0.2 * rng.standard_normal(n)
        dp, dq = rng.standard_normal(n), rng.standard_normal(n)
        J = network_mismatch_jacobian(Y, V, th, dp_dv=dp, dq_dv=dq)

        def g(u):
            return network_mismatch(Y, u[n:], u[:n], dp * u[n:], dq * u[n:])

        u0 = np.concatenate([th, V])
        h = 1e-6
        Jfd = np.column_stack([(g(u0 + h * e) - g(u0 - h * e)) / (2 * h) for e in np.eye(2 * n)])
        assert np.max(np.abs(J - Jfd) / np.maximum(1.0, np.abs(J))) <= 1e-5


branch_st = st.builds(
    lambda f, t, r, x, b, tap: (f, t if t != f else (f % 4) + 1, r, x, b, tap),
    st.integers(1, 4), st.integers(1, 4), st.floats(0.0, 0.1), st.floats(0.01, 1.0),
    st.floats(0.0, 0.3), st.floats(0.85, 1.15),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(branch_st, min_size=1, max_size=8))
def test_admittance_is_sum_of_stamps(specs):
    buses = [Bus(1, "slack")] + [Bus(i) for i in range(2, 5)]
    branches = [Branch(k, f, t, r, x, b, tap) for k, (f, t, r, x, b, tap) in enumerate(specs)]
    Y = build_admittance(Case("h", buses, branches)).dense()
    S = np.zeros((4, 4), complex)
    for br in branches:
        i, j = br.from_bus - 1, br.to_bus - 1
        S[np.ix_([i, j], [i, j])] += branch_stamp(br)
    np.testing.assert_allclose(Y, S, atol=1e-14, rtol=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(branch_st, min_size=2, max_size=8), st.data())
def test_outage_equals_rebuild(specs, data):
    buses = [Bus(1, "slack")] + [Bus(i) for i in range(2, 5)]
    branches = [Branch(k, f, t, r, x, b, tap) for k, (f, t, r, x, b, tap) in enumerate(specs)]
    case = Case("h", buses, branches)
    k = data.draw(st.integers(0, len(branches) - 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Y = apply_branch_outage(build_admittance(case), branches[k])
    np.testing.assert_allclose(Y.dense(), build_admittance(case, out_of_service=[k]).dense(),
                               atol=1e-14, rtol=0)
