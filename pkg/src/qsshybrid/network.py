"""Transmission network: admittance matrix, outages and bus power mismatch.

Conventions
-----------
* Bus order is ascending bus id; every dense vector indexed by bus uses it.
* Transformer taps sit on the *from* side of a branch (ideal ``n:1`` followed
  by the series impedance), so ``V_to ~ V_from / n`` and lowering ``n`` raises
  the to-side voltage.
* Mismatch rows are ``injection - network flow``; the slack bus rows are
  replaced by ``theta - theta_set`` and ``V - V_set``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import CaseValidationError, NewtonFailure

BUS_KINDS = ("slack", "pv", "pq")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "pq"
    V: float = 1.0
    theta: float = 0.0
    gs: float = 0.0
    bs: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    in_service: bool = True


class OutageWarning(UserWarning):
    """Tripping a branch that is already out of service."""


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Sparse bus admittance matrix plus the bookkeeping needed to edit it."""

    matrix: sp.csr_matrix
    bus_ids: tuple
    out_of_service: frozenset = frozenset()
    taps: dict = field(default_factory=dict)

    @property
    def n_bus(self):
        return len(self.bus_ids)

    def index(self, bus_id):
        return self.bus_ids.index(bus_id)

    def dense(self):
        return self.matrix.toarray()


def branch_stamp(branch: Branch, tap: float | None = None) -> np.ndarray:
    """2x2 pi-model stamp ``[[Yff, Yft], [Ytf, Ytt]]`` of one branch."""
    n = branch.tap if tap is None else tap
    ys = 1.0 / complex(branch.r, branch.x)
    bc = 0.5j * branch.b
    return np.array(
        [[(ys + bc) / (n * n), -ys / n], [-ys / n, ys + bc]], dtype=complex
    )


def _check_references(buses, branches):
    ids = [b.id for b in buses]
    errors = []
    if len(set(ids)) != len(ids):
        errors.append("duplicate bus ids")
    known = set(ids)
    for br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                errors.append(f"branch {br.id} references unknown bus {end}")
        if br.x == 0.0:
            errors.append(f"branch {br.id} has zero reactance")
    if errors:
        raise CaseValidationError(errors)


def build_admittance(case, taps=None, out_of_service=()) -> AdmittanceMatrix:
    """Stamp the bus admittance matrix of ``case``.

    ``case`` only needs ``buses`` and ``branches`` attributes.  ``taps`` maps
    branch id to an overriding tap ratio; branches listed in
    ``out_of_service`` (or flagged out in the case) are skipped.
    """
    buses = sorted(case.buses, key=lambda b: b.id)
    branches = list(case.branches)
    _check_references(buses, branches)
    taps = dict(taps or {})
    out = frozenset(out_of_service) | {br.id for br in branches if not br.in_service}

    bus_ids = tuple(b.id for b in buses)
    pos = {bid: i for i, bid in enumerate(bus_ids)}
    rows, cols, vals = [], [], []
    for b in buses:
        if b.gs or b.bs:
            i = pos[b.id]
            rows.append(i)
            cols.append(i)
            vals.append(complex(b.gs, b.bs))
    for br in branches:
        if br.id in out:
            continue
        i, j = pos[br.from_bus], pos[br.to_bus]
        st = branch_stamp(br, taps.get(br.id))
        rows += [i, i, j, j]
        cols += [i, j, i, j]
        vals += [st[0, 0], st[0, 1], st[1, 0], st[1, 1]]
    n = len(bus_ids)
    mat = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return AdmittanceMatrix(mat, bus_ids, out, taps)


def apply_branch_outage(Y: AdmittanceMatrix, branch: Branch) -> AdmittanceMatrix:
    """Return ``Y`` with ``branch`` removed by subtracting its stamp.

    Tripping a branch that is already out is a no-op and emits
    :class:`OutageWarning`.
    """
    if branch.id in Y.out_of_service or not branch.in_service:
        warnings.warn(f"branch {branch.id} already out of service", OutageWarning, stacklevel=2)
        return Y
    i, j = Y.index(branch.from_bus), Y.index(branch.to_bus)
    st = branch_stamp(branch, Y.taps.get(branch.id))
    delta = sp.coo_matrix(
        (-st.ravel(), ([i, i, j, j], [i, j, i, j])), shape=Y.matrix.shape
    ).tocsr()
    mat = (Y.matrix + delta).tocsr()
    mat.sort_indices()
    return replace(Y, matrix=mat, out_of_service=Y.out_of_service | {branch.id})


def network_flows(Y, V, theta):
    """Net active/reactive power leaving each bus into the network."""
    Vc = V * np.exp(1j * theta)
    S = Vc * np.conj(_mat(Y) @ Vc)
    return S.real, S.imag


def network_flow_jacobian(Y, V, theta):
    """Dense ``(dP/dtheta, dP/dV, dQ/dtheta, dQ/dV)`` of :func:`network_flows`."""
    M = _mat(Y)
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    Vc = V * np.exp(1j * theta)
    I = M @ Vc
    dV = np.diag(Vc)
    dS_dth = 1j * dV @ np.conj(np.diag(I) - M @ dV)
    dS_dV = dV @ np.conj(M @ np.diag(Vc / V)) + np.conj(np.diag(I)) @ np.diag(Vc / V)
    return dS_dth.real, dS_dV.real, dS_dth.imag, dS_dV.imag


def _mat(Y):
    return Y.matrix if isinstance(Y, AdmittanceMatrix) else Y


def network_mismatch(Y, V, theta, p_inj, q_inj, slack=None, v_set=1.0, theta_set=0.0):
    """Bus power mismatch ``[P rows, Q rows]``, length ``2 * n_bus``.

    ``p_inj``/``q_inj`` are the device injections (generation minus load).
    When ``slack`` (a bus position) is given its two rows pin angle and
    magnitude instead.
    """
    V = np.asarray(V, dtype=float)
    theta = np.asarray(theta, dtype=float)
    P, Q = network_flows(Y, V, theta)
    g = np.concatenate([np.asarray(p_inj) - P, np.asarray(q_inj) - Q])
    if slack is not None:
        n = V.size
        g[slack] = theta[slack] - theta_set
        g[n + slack] = V[slack] - v_set
    return g


def network_mismatch_jacobian(Y, V, theta, dp_dv=None, dq_dv=None, slack=None):
    """Jacobian of :func:`network_mismatch` w.r.t. ``[theta, V]``.

    ``dp_dv``/``dq_dv`` are optional diagonal voltage sensitivities of the
    injections (voltage-dependent loads).
    """
    n = len(V)
    Pth, PV, Qth, QV = network_flow_jacobian(Y, np.asarray(V, float), np.asarray(theta, float))
    J = -np.block([[Pth, PV], [Qth, QV]])
    if dp_dv is not None:
        J[np.arange(n), n + np.arange(n)] += dp_dv
    if dq_dv is not None:
        J[n + np.arange(n), n + np.arange(n)] += dq_dv
    if slack is not None:
        J[slack, :] = 0.0
        J[n + slack, :] = 0.0
        J[slack, slack] = 1.0
        J[n + slack, n + slack] = 1.0
    return J


@dataclass
class PowerFlowResult:
    V: np.ndarray
    theta: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    iterations: int


def solve_power_flow(Y, kinds, V0, theta0, p_spec, q_spec, tol=1e-12, max_iter=30):
    """Newton power flow.

    ``kinds`` holds ``'slack'``/``'pv'``/``'pq'`` per bus position.  Specified
    injections are constant power.  Returns the solved voltages and the net
    injections at every bus (so slack and PV reactive output can be read).
    """
    kinds = list(kinds)
    n = len(kinds)
    V = np.array(V0, dtype=float)
    th = np.array(theta0, dtype=float)
    p_rows = [i for i in range(n) if kinds[i] != "slack"]
    q_rows = [i for i in range(n) if kinds[i] == "pq"]
    for it in range(max_iter + 1):
        P, Q = network_flows(Y, V, th)
        F = np.concatenate([(p_spec - P)[p_rows], (q_spec - Q)[q_rows]])
        if np.max(np.abs(F), initial=0.0) <= tol:
            return PowerFlowResult(V, th, P, Q, it)
        Pth, PV, Qth, QV = network_flow_jacobian(Y, V, th)
        J = np.block(
            [
                [Pth[np.ix_(p_rows, p_rows)], PV[np.ix_(p_rows, q_rows)]],
                [Qth[np.ix_(q_rows, p_rows)], QV[np.ix_(q_rows, q_rows)]],
            ]
        )
        dx = np.linalg.solve(J, F)
        th[p_rows] += dx[: len(p_rows)]
        V[q_rows] += dx[len(p_rows):]
    raise NewtonFailure(f"power flow did not converge in {max_iter} iterations")
