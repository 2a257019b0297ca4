"""Unbalanced radial load flow (forward/backward sweep) and its linearization.

Net injections are complex per-unit arrays over the flat bus-phase order of
``FeederModel.topology`` (generation positive).  Leading batch dimensions are
allowed everywhere, which the Monte-Carlo plant uses to solve all scenarios
of one step in a single sweep loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LoadFlowDivergedError, VoltageCollapseError
from .feeder import FeederModel

COLLAPSE_VOLTAGE = 0.5


@dataclass
class NetworkState:
    """Lifted network variables for one time step.

    ``W`` per bus, ``I`` and ``S`` per branch (keyed by id).  ``V`` and ``i``
    are the phasors when the state came from a load flow, else None.
    """

    model: FeederModel
    W: dict[str, np.ndarray]
    I: dict[str, np.ndarray]
    S: dict[str, np.ndarray]
    V: dict[str, np.ndarray] | None = None
    i: dict[str, np.ndarray] | None = None


@dataclass
class LoadFlowResult:
    model: FeederModel
    s_net: np.ndarray
    v: np.ndarray
    i: np.ndarray
    sweeps: int
    update_norm: float
    mismatch: float

    def state(self) -> NetworkState:
        """Lifted state W = VV*, I = ii*, S = V_from i* (single step only)."""
        if self.v.ndim != 1:
            raise ValueError("state() needs an unbatched result")
        model, topo = self.model, self.model.topology
        W, I, S, V, cur = {}, {}, {}, {}, {}
        for bus in topo.order:
            vb = self.v[topo.bus_idx[bus]]
            V[bus] = vb
            W[bus] = np.outer(vb, vb.conj())
        for li, br in enumerate(model.branches):
            ib = self.i[topo.branch_idx[li]]
            vu = self.v[topo.bus_idx[topo.up[li]]][topo.pos_up[li]]
            cur[br.id] = ib
            I[br.id] = np.outer(ib, ib.conj())
            S[br.id] = np.outer(vu, ib.conj())
        return NetworkState(model, W, I, S, V, cur)

    @property
    def losses(self) -> np.ndarray:
        return branch_losses(self.model, self.i)

    @property
    def slack_power(self) -> np.ndarray:
        """Complex power imported at the substation (summed over phases)."""
        topo = self.model.topology
        vs = self.v[..., : topo.n_slack]
        out = np.zeros(self.v.shape[:-1], dtype=complex)
        for li in topo.child_branches[self.model.slack_bus]:
            vu = vs[..., topo.pos_up[li]]
            out = out + np.sum(vu * np.conj(self.i[..., topo.branch_idx[li]]), axis=-1)
        return out

    @property
    def branch_flows(self) -> np.ndarray:
        """Per branch-phase sending-end complex power, flat branch-phase order."""
        topo = self.model.topology
        out = np.empty_like(self.i)
        for li in range(len(self.model.branches)):
            vu = self.v[..., topo.bus_idx[topo.up[li]]][..., topo.pos_up[li]]
            idx = topo.branch_idx[li]
            out[..., idx] = vu * np.conj(self.i[..., idx])
        return out


def branch_losses(model: FeederModel, i_flat: np.ndarray) -> np.ndarray:
    """Real losses sum_l i_l^H R_l i_l from flat branch-phase currents."""
    topo = model.topology
    total = np.zeros(i_flat.shape[:-1])
    for li, br in enumerate(model.branches):
        ib = i_flat[..., topo.branch_idx[li]]
        total = total + np.real(np.einsum("...p,pq,...q->...", ib.conj(), br.z.real, ib))
    return total


def flat_start(model: FeederModel, slack_voltage=None) -> np.ndarray:
    topo = model.topology
    vs = model.slack_voltage if slack_voltage is None else np.asarray(slack_voltage, dtype=complex)
    slack_phases = topo.bus_phases[model.slack_bus]
    return np.array([vs[slack_phases.index(p)] for _, p in topo.bp])


def solve_loadflow(
    model: FeederModel,
    s_net,
    slack_voltage=None,
    tol: float = 1e-10,
    max_sweeps: int = 100,
    check_mismatch: float | None = 1e-8,
) -> LoadFlowResult:
    """Constant-power load flow by forward/backward sweep.

    Converges when the voltage update infinity norm drops below ``tol``.
    Raises ``VoltageCollapseError`` if any magnitude falls below 0.5 p.u.
    during iteration and ``LoadFlowDivergedError`` after ``max_sweeps``.
    """
    topo = model.topology
    s = np.asarray(s_net, dtype=complex)
    if s.shape[-1] != topo.n_bp:
        raise ValueError(f"injection vector has {s.shape[-1]} entries, expected {topo.n_bp}")
    s = s.copy()
    s[..., : topo.n_slack] = 0.0
    batch = s.shape[:-1]
    v = np.broadcast_to(flat_start(model, slack_voltage), batch + (topo.n_bp,)).copy()
    cur = np.zeros(batch + (topo.n_brp,), dtype=complex)
    zt = [br.z.T for br in model.branches]

    delta = np.inf
    sweeps = 0
    converged = False
    for sweeps in range(1, max_sweeps + 1):
        _backward(topo, s, v, cur)
        v_new = v.copy()
        for li in topo.branch_order:
            vu = v_new[..., topo.bus_idx[topo.up[li]]][..., topo.pos_up[li]]
            v_new[..., topo.bus_idx[topo.down[li]]] = vu - cur[..., topo.branch_idx[li]] @ zt[li]
        delta = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        v = v_new
        if v.size and np.min(np.abs(v)) < COLLAPSE_VOLTAGE:
            raise VoltageCollapseError(
                f"voltage magnitude {np.min(np.abs(v)):.3f} p.u. below {COLLAPSE_VOLTAGE} at sweep {sweeps}"
            )
        if delta < tol:
            converged = True
            break

    # one more backward pass so currents are consistent with the final voltages
    _backward(topo, s, v, cur)
    result = LoadFlowResult(model, s, v, cur, sweeps, delta, 0.0)
    result.mismatch = power_mismatch(result)
    if not converged or (check_mismatch is not None and result.mismatch > check_mismatch):
        raise LoadFlowDivergedError(sweeps, delta, result.mismatch)
    return result


def _backward(topo, s, v, cur) -> None:
    """Branch currents from the leaves up, written into ``cur`` in place."""
    drawn = -np.conj(s / v)
    for li in reversed(topo.branch_order):
        down = topo.down[li]
        acc = drawn[..., topo.bus_idx[down]].copy()
        for ci in topo.child_branches[down]:
            acc[..., topo.pos_in_parent[ci]] += cur[..., topo.branch_idx[ci]]
        cur[..., topo.branch_idx[li]] = acc


def power_mismatch(result: LoadFlowResult) -> float:
    """Infinity norm of nodal power balance error, re-evaluated from V and i."""
    model, topo = result.model, result.model.topology
    injected = np.zeros_like(result.v)
    for li in range(len(model.branches)):
        idx = topo.branch_idx[li]
        down_idx = topo.bus_idx[topo.down[li]]
        injected[..., down_idx] -= result.i[..., idx]
        up_idx = topo.bus_idx[topo.up[li]][topo.pos_up[li]]
        injected[..., up_idx] += result.i[..., idx]
    s_calc = result.v * np.conj(injected)
    err = s_calc[..., topo.n_slack :] - result.s_net[..., topo.n_slack :]
    return float(np.max(np.abs(err))) if err.size else 0.0


def compute_losses(state: NetworkState) -> float:
    """Total real losses: sum over branches of sum_ij R_ij Re(I_ij)."""
    total = 0.0
    for br in state.model.branches:
        total += float(np.sum(br.z.real * state.I[br.id].real))
    return total


def _minor_defect(a: float, b: float, off: complex) -> float:
    tr = a + b
    if tr <= 0:
        return 0.0
    return abs(a * b - abs(off) ** 2) / tr**2


def rank1_gap(state: NetworkState) -> float:
    """Largest normalized 2x2-minor determinant over W, I and the mixed W/S/I blocks.

    Zero exactly when every minor is rank one.
    """
    model, topo = state.model, state.model.topology
    gap = 0.0
    for W in state.W.values():
        d = np.real(np.diag(W))
        for i in range(len(d)):
            for j in range(i + 1, len(d)):
                gap = max(gap, _minor_defect(d[i], d[j], W[i, j]))
    for li, br in enumerate(model.branches):
        I = state.I[br.id]
        S = state.S[br.id]
        d = np.real(np.diag(I))
        for i in range(len(d)):
            for j in range(i + 1, len(d)):
                gap = max(gap, _minor_defect(d[i], d[j], I[i, j]))
        wu = state.W.get(topo.up[li])
        if wu is None:
            continue
        wd = np.real(np.diag(wu))[topo.pos_up[li]]
        for i in range(len(wd)):
            for j in range(len(d)):
                gap = max(gap, _minor_defect(wd[i], d[j], S[i, j]))
    return gap


class LinearizedFlow:
    """First-order response of a load-flow solution to injection changes.

    Differentiates the fixed point ``V = V_slack + K conj(S / V)`` over the
    non-slack bus-phases.  A direction is a complex (n_ns, m) matrix of
    injection perturbations; each method returns the matching directional
    derivatives, one column per direction.
    """

    def __init__(self, result: LoadFlowResult):
        if result.v.ndim != 1:
            raise ValueError("linearize needs an unbatched result")
        model = result.model
        topo = model.topology
        self.model = model
        self.result = result
        ns = topo.ns
        self.v = result.v[ns]
        self.s = result.s_net[ns]
        self.K = model.path_impedance
        n = len(ns)
        A = self.K * np.conj(self.s / self.v**2)[None, :]
        Ar, Ai = A.real, A.imag
        eye = np.eye(n)
        self.M = np.block([[eye + Ar, Ai], [Ai, eye - Ar]])
        self.cond = float(np.linalg.cond(self.M)) if n else 1.0
        self._lu = None
        self.i = result.i
        self.D = model.subtree_incidence
        # upstream flat index for every branch-phase (bus-phase order)
        up = np.empty(topo.n_brp, dtype=int)
        for li in range(len(model.branches)):
            up[topo.branch_idx[li]] = topo.bus_idx[topo.up[li]][topo.pos_up[li]]
        self.up_flat = up

    def voltage(self, ds: np.ndarray) -> np.ndarray:
        """dV (n_ns, m) complex for injection directions ds (n_ns, m)."""
        ds = np.asarray(ds, dtype=complex).reshape(len(self.v), -1)
        rhs = self.K @ (np.conj(ds) / np.conj(self.v)[:, None])
        sol = np.linalg.solve(self.M, np.vstack([rhs.real, rhs.imag])) if len(self.v) else rhs.real
        n = len(self.v)
        return sol[:n] + 1j * sol[n:]

    def squared_voltage(self, ds, dv=None) -> np.ndarray:
        dv = self.voltage(ds) if dv is None else dv
        return 2.0 * np.real(np.conj(self.v)[:, None] * dv)

    def current(self, ds, dv=None) -> np.ndarray:
        """Branch-phase current derivatives (n_brp, m)."""
        ds = np.asarray(ds, dtype=complex).reshape(len(self.v), -1)
        dv = self.voltage(ds) if dv is None else dv
        cv = np.conj(self.v)[:, None]
        d_drawn = -np.conj(ds) / cv + np.conj(self.s)[:, None] * np.conj(dv) / cv**2
        return self.D @ d_drawn

    def branch_flow(self, ds, dv=None) -> np.ndarray:
        """Sending-end per-phase complex branch power derivatives (n_brp, m)."""
        ds = np.asarray(ds, dtype=complex).reshape(len(self.v), -1)
        dv = self.voltage(ds) if dv is None else dv
        di = self.current(ds, dv)
        topo = self.model.topology
        dv_full = np.zeros((topo.n_bp, dv.shape[1]), dtype=complex)
        dv_full[topo.ns] = dv
        v_up = self.result.v[self.up_flat][:, None]
        return dv_full[self.up_flat] * np.conj(self.i)[:, None] + v_up * np.conj(di)

    def losses(self, ds, di=None) -> np.ndarray:
        di = self.current(ds) if di is None else di
        topo = self.model.topology
        out = np.zeros(di.shape[1])
        for li, br in enumerate(self.model.branches):
            idx = topo.branch_idx[li]
            out += 2.0 * np.real(self.i[idx].conj() @ br.z.real @ di[idx])
        return out

    def loss_gauss_newton(self, di: np.ndarray) -> np.ndarray:
        """Gauss-Newton Hessian of losses for current derivatives ``di``."""
        topo = self.model.topology
        m = di.shape[1]
        H = np.zeros((m, m))
        for li, br in enumerate(self.model.branches):
            d = di[topo.branch_idx[li]]
            R = br.z.real
            H += 2.0 * (d.real.T @ R @ d.real + d.imag.T @ R @ d.imag)
        return 0.5 * (H + H.T)


def linearize(result: LoadFlowResult) -> LinearizedFlow:
    return LinearizedFlow(result)
