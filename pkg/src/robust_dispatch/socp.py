"""Multi-period second-order cone relaxation of the unbalanced branch flow OPF.

Lifted variables per step: a Hermitian ``W`` per non-slack bus (the slack
block is the constant ``V0 V0^H``), Hermitian ``I`` and full complex ``S`` per
branch.  Hermitian k x k blocks use k^2 reals: the diagonal, then (re, im) of
each upper pair (i < j).  Full k x k blocks use (re, im) per entry, row
major.

Variables per step: sum_n k_n^2 (non-slack buses) + sum_l 3 k_l^2
+ 3 per battery + 2 per solar inverter + 2 per non-slack bus-phase when
voltage slacks are on; plus one state of charge per battery per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .conic import ConicProgram, ConicResult, Lin, ProgramBuilder, solve_conic
from .errors import DataError, InfeasibleProgramError
from .feeder import BatterySpec, FeederModel, TimeSeries
from .loadflow import NetworkState, rank1_gap
from .tightening import TightenedBounds


@dataclass
class SolverConfig:
    scd_penalty: float = 1e-3
    slack_penalty: float = 1e3
    voltage_slacks: bool = True
    enforce_soc_sustainability: bool = False
    # slack penalties amplify feasibility error, so solve tightly
    tol: float = 1e-10
    time_limit: float | None = None
    # recovery stage
    trust_radius: float = 0.05
    max_iterations: int = 50
    step_tol: float = 1e-7
    improvement_tol: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        from .errors import ConfigError

        if self.scd_penalty < 0 or self.slack_penalty < 0:
            raise ConfigError("penalties must be nonnegative")


@dataclass
class DispatchSchedule:
    """Battery and inverter set-points, (T, n) per quantity; ``soc`` is (T+1, n)."""

    p_c: np.ndarray
    p_d: np.ndarray
    q_b: np.ndarray
    p_s: np.ndarray
    q_s: np.ndarray
    soc: np.ndarray

    @property
    def horizon(self) -> int:
        return self.p_c.shape[0]


def soc_update(b: float, p_c: float, p_d: float, spec: BatterySpec, dt: float) -> float:
    return b + spec.eta_c * p_c * dt - p_d * dt / spec.eta_d


def soc_trajectory(model: FeederModel, p_c, p_d, soc0, dt) -> np.ndarray:
    soc = np.empty((p_c.shape[0] + 1, len(model.batteries)))
    soc[0] = soc0
    for t in range(p_c.shape[0]):
        for j, d in enumerate(model.batteries):
            soc[t + 1, j] = soc_update(soc[t, j], p_c[t, j], p_d[t, j], d.battery, dt)
    return soc


def net_injection(model: FeederModel, demand, p_c, p_d, q_b, p_s, q_s) -> np.ndarray:
    """Net complex injection per flat bus-phase for one step (or a batch)."""
    topo = model.topology
    s = -np.asarray(demand, dtype=complex).copy()
    for j, d in enumerate(model.batteries):
        f = topo.bp_index[(d.bus, d.phase)]
        s[..., f] += p_d[..., j] - p_c[..., j] + 1j * q_b[..., j]
    for j, d in enumerate(model.solars):
        f = topo.bp_index[(d.bus, d.phase)]
        s[..., f] += p_s[..., j] + 1j * q_s[..., j]
    return s


# ---------------------------------------------------------------- block algebra


def _pairs(k):
    return [(i, j) for i in range(k) for j in range(i + 1, k)]


def herm_basis(k: int) -> np.ndarray:
    B = np.zeros((k * k, k, k), dtype=complex)
    for i in range(k):
        B[i, i, i] = 1.0
    r = k
    for i, j in _pairs(k):
        B[r, i, j] = B[r, j, i] = 1.0
        B[r + 1, i, j] = 1j
        B[r + 1, j, i] = -1j
        r += 2
    return B


def full_basis(k: int) -> np.ndarray:
    B = np.zeros((2 * k * k, k, k), dtype=complex)
    r = 0
    for i in range(k):
        for j in range(k):
            B[r, i, j] = 1.0
            B[r + 1, i, j] = 1j
            r += 2
    return B


def herm_components(M: np.ndarray) -> np.ndarray:
    """Real components of Hermitian matrices (..., k, k) in block layout (..., k^2)."""
    k = M.shape[-1]
    parts = [M[..., i, i].real[..., None] for i in range(k)]
    for i, j in _pairs(k):
        parts.append(M[..., i, j].real[..., None])
        parts.append(M[..., i, j].imag[..., None])
    return np.concatenate(parts, axis=-1) if parts else np.zeros(M.shape[:-2] + (0,))


def herm_from_components(x: np.ndarray, k: int) -> np.ndarray:
    return np.tensordot(x, herm_basis(k), axes=(0, 0))


def full_from_components(x: np.ndarray, k: int) -> np.ndarray:
    return np.tensordot(x, full_basis(k), axes=(0, 0))


def _pair_offset(k, i, j):
    # position of the (re) component for pair i<j
    return k + 2 * _pairs(k).index((i, j))


# ---------------------------------------------------------------- program


@dataclass
class SocpProgram:
    conic: ConicProgram
    model: FeederModel
    series: TimeSeries
    bounds: TightenedBounds
    cfg: SolverConfig
    soc_init: np.ndarray
    W: list[dict[str, np.ndarray]]
    I: list[dict[str, np.ndarray]]
    S: list[dict[str, np.ndarray]]
    p_c: np.ndarray
    p_d: np.ndarray
    q_b: np.ndarray
    p_s: np.ndarray
    q_s: np.ndarray
    soc: np.ndarray
    s_plus: np.ndarray | None
    s_minus: np.ndarray | None

    @property
    def horizon(self) -> int:
        return self.bounds.horizon


@dataclass
class SocpSolution:
    schedule: DispatchSchedule
    states: list[NetworkState]
    objective: float
    losses: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    rank1_gaps: np.ndarray
    status: str
    demand: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=complex))
    solar_available: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    kkt: dict = field(default_factory=dict)

    @property
    def slack_total(self) -> np.ndarray:
        return self.v_plus.sum(axis=1) + self.v_minus.sum(axis=1)


def variable_count(model: FeederModel, horizon: int, voltage_slacks: bool = True) -> int:
    """Number of real variables ``build_program`` creates."""
    per_step = sum(len(b.phases) ** 2 for b in model.buses if b.id != model.slack_bus)
    per_step += sum(3 * len(br.phases) ** 2 for br in model.branches)
    per_step += 3 * len(model.batteries) + 2 * len(model.solars)
    if voltage_slacks:
        per_step += 2 * len(model.topology.ns)
    return horizon * (per_step + len(model.batteries))


def build_program(
    model: FeederModel,
    series: TimeSeries,
    bounds: TightenedBounds,
    cfg: SolverConfig | None = None,
    soc_init=None,
) -> SocpProgram:
    """Assemble the relaxed multi-period OPF over ``series.horizon`` steps.

    Real decision variables per step: k^2 for each non-slack bus W block,
    3k^2 for each branch (I block plus complex S), 3 per battery, 2 per
    solar inverter and 2 voltage slacks per non-slack bus-phase (when
    enabled); plus one state-of-charge variable per battery per step.
    ``variable_count`` evaluates the same formula.
    """
    cfg = cfg or SolverConfig()
    T = series.horizon
    if T < 1:
        raise DataError("horizon must be at least one step")
    topo = model.topology
    n_ns = len(topo.ns)
    if bounds.v_lower.shape != (T, n_ns) or bounds.line_upper.shape != (T, topo.n_brp) or bounds.solar_upper.shape != (
        T,
        len(model.solars),
    ):
        raise DataError(
            f"bounds do not match model/series dimensions (T={T}, buses={n_ns}, "
            f"branch-phases={topo.n_brp}, solar={len(model.solars)})"
        )
    demand = series.demand_matrix(model)
    avail = series.solar_matrix(model)
    dt = series.dt_hours
    batts, sols = model.batteries, model.solars
    nb, nsol = len(batts), len(sols)
    soc0 = np.array([d.battery.b_init for d in batts]) if soc_init is None else np.asarray(soc_init, float)

    pb = ProgramBuilder()
    slack = model.slack_bus
    v0 = model.slack_voltage
    W0 = np.outer(v0, v0.conj())
    branches = model.branches

    Wv, Iv, Sv = [], [], []
    p_c = np.zeros((T, nb), dtype=int)
    p_d = np.zeros((T, nb), dtype=int)
    q_b = np.zeros((T, nb), dtype=int)
    p_s = np.zeros((T, nsol), dtype=int)
    q_s = np.zeros((T, nsol), dtype=int)
    soc = np.zeros((T, nb), dtype=int)
    s_plus = np.zeros((T, n_ns), dtype=int) if cfg.voltage_slacks else None
    s_minus = np.zeros((T, n_ns), dtype=int) if cfg.voltage_slacks else None

    # per-branch constant coefficient tensors
    coef = []
    for li, br in enumerate(branches):
        k = len(br.phases)
        Z = br.z
        ZH = Z.conj().T
        HB, FB = herm_basis(k), full_basis(k)
        rows_S = herm_components(FB @ ZH + Z @ FB.conj().transpose(0, 2, 1))  # (2k^2, k^2)
        rows_I = herm_components(-(Z @ HB @ ZH))  # (k^2, k^2)
        ZI = Z @ HB  # (k^2, k, k): (Z F_r)
        up = topo.up[li]
        pos = topo.pos_up[li]
        if up == slack:
            rows_Wu = None
            const_Wu = herm_components(-W0[np.ix_(pos, pos)])
        else:
            ku = len(topo.bus_phases[up])
            HBu = herm_basis(ku)[:, pos][:, :, pos]
            rows_Wu = herm_components(-HBu)
            const_Wu = None
        loss = np.zeros(k * k)
        R = Z.real
        loss[:k] = np.diag(R)
        for i, j in _pairs(k):
            loss[_pair_offset(k, i, j)] = 2.0 * R[i, j]
        coef.append((k, rows_S, rows_I, ZI, rows_Wu, const_Wu, loss))

    bat_at: dict[int, list[int]] = {}
    for j, d in enumerate(batts):
        bat_at.setdefault(topo.bp_index[(d.bus, d.phase)], []).append(j)
    sol_at: dict[int, list[int]] = {}
    for j, d in enumerate(sols):
        sol_at.setdefault(topo.bp_index[(d.bus, d.phase)], []).append(j)

    gamma = cfg.slack_penalty
    for t in range(T):
        Wt = {}
        for bus in topo.order[1:]:
            k = len(topo.bus_phases[bus])
            Wt[bus] = pb.var(f"W[{bus},{t}]", k * k)
        It, St = {}, {}
        for li, br in enumerate(branches):
            k = len(br.phases)
            It[br.id] = pb.var(f"I[{br.id},{t}]", k * k)
            St[br.id] = pb.var(f"S[{br.id},{t}]", 2 * k * k)
        Wv.append(Wt)
        Iv.append(It)
        Sv.append(St)
        if nb:
            p_c[t] = pb.var(f"Pc[{t}]", nb)
            p_d[t] = pb.var(f"Pd[{t}]", nb)
            q_b[t] = pb.var(f"qb[{t}]", nb)
        if nsol:
            p_s[t] = pb.var(f"PS[{t}]", nsol)
            q_s[t] = pb.var(f"QS[{t}]", nsol)
        if cfg.voltage_slacks and n_ns:
            s_plus[t] = pb.var(f"Vv+[{t}]", n_ns)
            s_minus[t] = pb.var(f"Vv-[{t}]", n_ns)
        if nb:
            soc[t] = pb.var(f"B[{t + 1}]", nb)

        def wdiag(bus, p):
            if bus == slack:
                return Lin.constant(W0[p, p].real)
            return Lin.var(Wt[bus][p])

        for li, br in enumerate(branches):
            k, rows_S, rows_I, ZI, rows_Wu, const_Wu, loss = coef[li]
            up, down = topo.up[li], topo.down[li]
            Iidx, Sidx, Wd = It[br.id], St[br.id], Wt[down]
            # voltage drop, one real equation per Hermitian component
            idx_parts = [Wd, Sidx, Iidx]
            val_parts = [np.eye(k * k), rows_S, rows_I]
            if rows_Wu is not None:
                idx_parts.append(Wt[up])
                val_parts.append(rows_Wu)
            idx_all = np.concatenate(idx_parts)
            vals = np.vstack(val_parts)
            for e in range(k * k):
                c0 = const_Wu[e] if const_Wu is not None else 0.0
                pb.eq(Lin(idx_all, vals[:, e], c0))

            # cones on 2x2 minors of I
            for i, j in _pairs(k):
                o = _pair_offset(k, i, j)
                ii, jj = Lin.var(Iidx[i]), Lin.var(Iidx[j])
                pb.soc(ii + jj, Lin.var(Iidx[o], 2.0), Lin.var(Iidx[o + 1], 2.0), ii - jj)
            # mixed W/S/I minors, every ordered phase pair
            pos = topo.pos_up[li]
            for i in range(k):
                w = wdiag(up, pos[i])
                for j in range(k):
                    ij = Lin.var(Iidx[j])
                    r = 2 * (i * k + j)
                    pb.soc(w + ij, Lin.var(Sidx[r], 2.0), Lin.var(Sidx[r + 1], 2.0), w - ij)
            # line limits on |diag S|
            for p in range(k):
                lim = br.s_max[p]
                if np.isfinite(lim):
                    r = 2 * (p * k + p)
                    f = topo.branch_idx[li][p]
                    pb.soc(Lin.constant(bounds.line_upper[t, f]), Lin.var(Sidx[r]), Lin.var(Sidx[r + 1]))
            pb.minimize(Lin(Iidx, loss))

        for bus in topo.order[1:]:
            k = len(topo.bus_phases[bus])
            Wb = Wt[bus]
            for i, j in _pairs(k):
                o = _pair_offset(k, i, j)
                ii, jj = Lin.var(Wb[i]), Lin.var(Wb[j])
                pb.soc(ii + jj, Lin.var(Wb[o], 2.0), Lin.var(Wb[o + 1], 2.0), ii - jj)

            li = topo.parent_branch[bus]
            br = branches[li]
            k_l, _, _, ZI, _, _, _ = coef[li]
            Iidx, Sidx = It[br.id], St[br.id]
            for p in range(k):
                f = topo.bus_idx[bus][p]
                phase = topo.bus_phases[bus][p]
                re = Lin.var(Sidx[2 * (p * k + p)]) + Lin(Iidx, -ZI[:, p, p].real)
                im = Lin.var(Sidx[2 * (p * k + p) + 1]) + Lin(Iidx, -ZI[:, p, p].imag)
                for ci in topo.child_branches[bus]:
                    cb = branches[ci]
                    if phase in cb.phases:
                        q = cb.phases.index(phase)
                        kc = len(cb.phases)
                        re = re - Lin.var(St[cb.id][2 * (q * kc + q)])
                        im = im - Lin.var(St[cb.id][2 * (q * kc + q) + 1])
                re = re - demand[t, f].real
                im = im - demand[t, f].imag
                for j in bat_at.get(f, ()):
                    re = re + Lin.var(p_d[t, j]) - Lin.var(p_c[t, j])
                    im = im + Lin.var(q_b[t, j])
                for j in sol_at.get(f, ()):
                    re = re + Lin.var(p_s[t, j])
                    im = im + Lin.var(q_s[t, j])
                pb.eq(re)
                pb.eq(im)

                a = f - topo.n_slack
                w = Lin.var(Wb[p])
                if cfg.voltage_slacks:
                    sp, sm = Lin.var(s_plus[t, a]), Lin.var(s_minus[t, a])
                    pb.ge0(w - bounds.v_lower[t, a] + sm)
                    pb.ge0(bounds.v_upper[t, a] + sp - w)
                    pb.ge0(sp)
                    pb.ge0(sm)
                    pb.minimize((sp + sm) * gamma)
                else:
                    pb.ge0(w - bounds.v_lower[t, a])
                    pb.ge0(bounds.v_upper[t, a] - w)

        for j, d in enumerate(batts):
            b = d.battery
            pc, pdv, qb = Lin.var(p_c[t, j]), Lin.var(p_d[t, j]), Lin.var(q_b[t, j])
            pb.ge0(pc)
            pb.ge0(b.p_max - pc)
            pb.ge0(pdv)
            pb.ge0(b.p_max - pdv)
            pb.soc(Lin.constant(b.h_max), pdv - pc, qb)
            prev = Lin.constant(soc0[j]) if t == 0 else Lin.var(soc[t - 1, j])
            bt = Lin.var(soc[t, j])
            pb.eq(bt - prev - pc * (b.eta_c * dt) + pdv * (dt / b.eta_d))
            pb.ge0(bt - b.b_min)
            pb.ge0(b.b_max - bt)
            pb.minimize(pdv * (cfg.scd_penalty * (1.0 / b.eta_d - b.eta_c)))
        for j, d in enumerate(sols):
            ps, qs = Lin.var(p_s[t, j]), Lin.var(q_s[t, j])
            pb.ge0(ps)
            pb.ge0(avail[t, j] - ps)
            pb.soc(Lin.constant(bounds.solar_upper[t, j]), ps, qs)

    if cfg.enforce_soc_sustainability:
        for j in range(nb):
            pb.eq(Lin.var(soc[T - 1, j]) - soc0[j])

    return SocpProgram(
        conic=pb.build(),
        model=model,
        series=series,
        bounds=bounds,
        cfg=cfg,
        soc_init=soc0,
        W=Wv,
        I=Iv,
        S=Sv,
        p_c=p_c,
        p_d=p_d,
        q_b=q_b,
        p_s=p_s,
        q_s=q_s,
        soc=soc,
        s_plus=s_plus,
        s_minus=s_minus,
    )


def _diagnose_infeasible(program: SocpProgram) -> str | None:
    if program.cfg.voltage_slacks:
        return None
    relaxed = build_program(
        program.model, program.series, program.bounds, replace(program.cfg, voltage_slacks=True), program.soc_init
    )
    res = solve_conic(relaxed.conic, tol=program.cfg.tol)
    return "voltage" if res.status == "optimal" else None


def solve_program(program: SocpProgram) -> SocpSolution:
    cfg = program.cfg
    res: ConicResult = solve_conic(program.conic, tol=cfg.tol, time_limit=cfg.time_limit)
    if res.status == "infeasible":
        family = _diagnose_infeasible(program)
        hint = f"; enabling {family} slacks restores feasibility" if family else ""
        raise InfeasibleProgramError(f"relaxed OPF is infeasible{hint}", family)
    return extract_solution(program, res)


def extract_solution(program: SocpProgram, res: ConicResult) -> SocpSolution:
    model, topo = program.model, program.model.topology
    x = res.x
    T = program.horizon
    v0 = model.slack_voltage
    W0 = np.outer(v0, v0.conj())
    states, losses, gaps = [], np.zeros(T), np.zeros(T)
    for t in range(T):
        W = {model.slack_bus: W0}
        for bus, idx in program.W[t].items():
            W[bus] = herm_from_components(x[idx], len(topo.bus_phases[bus]))
        I, S = {}, {}
        for br in model.branches:
            k = len(br.phases)
            I[br.id] = herm_from_components(x[program.I[t][br.id]], k)
            S[br.id] = full_from_components(x[program.S[t][br.id]], k)
            losses[t] += float(np.sum(br.z.real * I[br.id].real))
        st = NetworkState(model, W, I, S)
        states.append(st)
        gaps[t] = rank1_gap(st)

    def take(idx):
        return x[idx] if idx.size else np.zeros(idx.shape)

    nb = len(model.batteries)
    soc = np.empty((T + 1, nb))
    soc[0] = program.soc_init
    soc[1:] = take(program.soc)
    sched = DispatchSchedule(
        p_c=take(program.p_c),
        p_d=take(program.p_d),
        q_b=take(program.q_b),
        p_s=take(program.p_s),
        q_s=take(program.q_s),
        soc=soc,
    )
    n_ns = len(topo.ns)
    if program.s_plus is not None:
        vp, vm = take(program.s_plus), take(program.s_minus)
    else:
        vp = vm = np.zeros((T, n_ns))
    return SocpSolution(
        schedule=sched,
        states=states,
        objective=res.objective,
        losses=losses,
        v_plus=vp,
        v_minus=vm,
        rank1_gaps=gaps,
        status=res.status,
        demand=program.series.demand_matrix(model),
        solar_available=program.series.solar_matrix(model),
        kkt={"r_prim": res.r_prim, "r_dual": res.r_dual, "iterations": res.iterations},
    )


def solve_socp(model, series, bounds=None, cfg=None, soc_init=None) -> SocpSolution:
    """Build and solve in one call; ``bounds`` defaults to the untightened limits."""
    if bounds is None:
        bounds = TightenedBounds.nominal(model, series.horizon)
    return solve_program(build_program(model, series, bounds, cfg, soc_init))
