"""Per-step AC-feasibility recovery with battery active power held fixed.

Every iterate is a load-flow solution, so the recovered state is rank one
by construction.  Each iteration linearizes losses, squared voltages and
line flows around the current solution, solves a small convex step problem
in the reactive and solar set-points inside a box trust region, and keeps
the step only if the true penalized objective

    losses + gamma * (voltage bound excess + line limit excess)

decreases; otherwise the radius is halved.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .conic import ConicProgram, solve_conic
from .feeder import FeederModel
from .loadflow import LinearizedFlow, LoadFlowResult, NetworkState, rank1_gap, solve_loadflow
from .socp import SocpSolution, SolverConfig, net_injection
from .tightening import TightenedBounds


@dataclass
class FeasibleOperatingPoint:
    t: int
    p_c: np.ndarray
    p_d: np.ndarray
    q_b: np.ndarray
    p_s: np.ndarray
    q_s: np.ndarray
    demand: np.ndarray
    solar_available: np.ndarray
    flow: LoadFlowResult
    losses: float
    v_plus: np.ndarray
    v_minus: np.ndarray
    line_excess: np.ndarray
    objective: float
    iterations: int
    corrections: int
    converged: bool
    rank1_gap: float
    socp_bound: float

    @property
    def state(self) -> NetworkState:
        return self.flow.state()

    @property
    def slack_total(self) -> float:
        return float(self.v_plus.sum() + self.v_minus.sum())

    @property
    def injection(self) -> np.ndarray:
        return self.flow.s_net

    def diagnostics(self) -> dict:
        return {
            "step": self.t,
            "iterations": self.iterations,
            "corrections": self.corrections,
            "converged": self.converged,
            "rank1_gap": self.rank1_gap,
            "losses": self.losses,
            "slack_total": self.slack_total,
            "objective": self.objective,
            "socp_bound": self.socp_bound,
        }


class _StepProblem:
    """Evaluates the penalized objective and its local model for one step."""

    def __init__(self, model, demand, avail, p_c, p_d, bounds: TightenedBounds, cfg: SolverConfig):
        self.model = model
        topo = model.topology
        self.demand = demand
        self.avail = avail
        self.p_c = p_c
        self.p_d = p_d
        self.v_lo = bounds.v_lower[0]
        self.v_hi = bounds.v_upper[0]
        self.l_hi = bounds.line_upper[0]
        self.s_hi = bounds.solar_upper[0]
        self.gamma = cfg.slack_penalty if cfg.slack_penalty > 0 else 1e3
        self.lines = np.flatnonzero(np.isfinite(model.s_max_flat))
        self.nb = len(model.batteries)
        self.nsol = len(model.solars)
        n_ns = len(topo.ns)
        nu = self.nb + 2 * self.nsol
        # injection direction of each decision variable
        ds = np.zeros((n_ns, nu), dtype=complex)
        for j, d in enumerate(model.batteries):
            ds[topo.bp_index[(d.bus, d.phase)] - topo.n_slack, j] = 1j
        for j, d in enumerate(model.solars):
            a = topo.bp_index[(d.bus, d.phase)] - topo.n_slack
            ds[a, self.nb + j] = 1.0
            ds[a, self.nb + self.nsol + j] = 1j
        self.ds = ds
        self.h_room = np.array(
            [np.sqrt(max(d.battery.h_max**2 - (p_d[j] - p_c[j]) ** 2, 0.0)) for j, d in enumerate(model.batteries)]
        )

    def split(self, u):
        nb, ns = self.nb, self.nsol
        return u[:nb], u[nb : nb + ns], u[nb + ns :]

    def project(self, u):
        q_b, p_s, q_s = (x.copy() for x in self.split(u))
        q_b = np.clip(q_b, -self.h_room, self.h_room)
        p_s = np.clip(p_s, 0.0, np.minimum(self.avail, self.s_hi))
        room = np.sqrt(np.maximum(self.s_hi**2 - p_s**2, 0.0))
        q_s = np.clip(q_s, -room, room)
        return np.concatenate([q_b, p_s, q_s])

    def evaluate(self, u):
        q_b, p_s, q_s = self.split(u)
        s = net_injection(self.model, self.demand, self.p_c, self.p_d, q_b, p_s, q_s)
        flow = solve_loadflow(self.model, s)
        topo = self.model.topology
        w = np.abs(flow.v[topo.ns]) ** 2
        sabs = np.abs(flow.branch_flows)
        v_plus = np.maximum(w - self.v_hi, 0.0)
        v_minus = np.maximum(self.v_lo - w, 0.0)
        line_ex = np.maximum(sabs[self.lines] - self.l_hi[self.lines], 0.0)
        loss = float(flow.losses)
        merit = loss + self.gamma * (v_plus.sum() + v_minus.sum() + line_ex.sum())
        return flow, w, sabs, loss, v_plus, v_minus, line_ex, merit

    def step(self, u, flow, w, sabs, loss, radius):
        """Solve the local convex model; returns (du, predicted merit) or (None, nan)."""
        lin = LinearizedFlow(flow)
        dv = lin.voltage(self.ds)
        dw = lin.squared_voltage(self.ds, dv)
        di = lin.current(self.ds, dv)
        dloss = lin.losses(self.ds, di)
        H = lin.loss_gauss_newton(di)
        S = flow.branch_flows[self.lines]
        dS = lin.branch_flow(self.ds, dv)[self.lines]
        mag = sabs[self.lines]
        safe = np.where(mag > 0, mag, 1.0)
        grad = np.where((mag > 0)[:, None], np.real(np.conj(S)[:, None] * dS) / safe[:, None], np.abs(dS))

        nu, n, nl = len(u), len(w), len(self.lines)
        nb, ns = self.nb, self.nsol
        nz = nu + 2 * n + nl
        q_b, p_s, q_s = self.split(u)
        I_u, I_n, I_l = np.eye(nu), np.eye(n), np.eye(nl)
        Z = np.zeros

        # rows are b - A z >= 0
        blocks = [
            (np.hstack([dw, -I_n, Z((n, n)), Z((n, nl))]), self.v_hi - w),
            (np.hstack([-dw, Z((n, n)), -I_n, Z((n, nl))]), w - self.v_lo),
            (np.hstack([Z((2 * n + nl, nu)), -np.eye(2 * n + nl)]), Z(2 * n + nl)),
            (np.hstack([grad, Z((nl, 2 * n)), -I_l]), self.l_hi[self.lines] - mag),
            (np.hstack([I_u, Z((nu, nz - nu))]), np.full(nu, radius)),
            (np.hstack([-I_u, Z((nu, nz - nu))]), np.full(nu, radius)),
        ]
        sel_p = np.zeros((ns, nz))
        sel_p[np.arange(ns), nb + np.arange(ns)] = 1.0
        sel_q = np.zeros((ns, nz))
        sel_q[np.arange(ns), nb + ns + np.arange(ns)] = 1.0
        blocks += [(-sel_p, p_s), (sel_p, self.avail - p_s)]
        n_lin = sum(len(b) for _, b in blocks)
        cones = [("nonneg", n_lin)]
        for j in range(nb):
            rows = np.zeros((3, nz))
            rows[2, j] = -1.0
            blocks.append((rows, np.array([self.model.batteries[j].battery.h_max, self.p_d[j] - self.p_c[j], q_b[j]])))
            cones.append(("soc", 3))
        for j in range(ns):
            rows = np.vstack([np.zeros(nz), -sel_p[j], -sel_q[j]])
            blocks.append((rows, np.array([self.s_hi[j], p_s[j], q_s[j]])))
            cones.append(("soc", 3))
        A = sparse.csc_matrix(np.vstack([a for a, _ in blocks]))
        b = np.concatenate([v for _, v in blocks])
        c = np.concatenate([dloss, np.full(2 * n + nl, self.gamma)])
        P = np.zeros((nz, nz))
        P[:nu, :nu] = H + 1e-10 * np.eye(nu)
        res = solve_conic(ConicProgram(c, A, b, cones, sparse.csc_matrix(P)))
        if res.status != "optimal":
            return None, float("nan")
        return res.x[:nu], loss + res.objective


def recover(
    model: FeederModel,
    socp: SocpSolution,
    t: int,
    bounds: TightenedBounds | None = None,
    cfg: SolverConfig | None = None,
) -> FeasibleOperatingPoint:
    """AC-exact operating point for step ``t`` with the SOCP battery powers fixed."""
    cfg = cfg or SolverConfig()
    T = socp.schedule.horizon
    if not 0 <= t < T:
        raise IndexError(f"step {t} outside horizon {T}")
    if bounds is None:
        bounds = TightenedBounds.nominal(model, T)
    sched = socp.schedule
    demand = socp.demand[t]
    avail = socp.solar_available[t]
    p_c = sched.p_c[t].copy()
    p_d = sched.p_d[t].copy()
    prob = _StepProblem(model, demand, avail, p_c, p_d, bounds.step(t), cfg)

    u = prob.project(np.concatenate([sched.q_b[t], sched.p_s[t], sched.q_s[t]]))
    flow, w, sabs, loss, vp, vm, lex, merit = prob.evaluate(u)
    radius = cfg.trust_radius
    iterations = corrections = 0
    converged = len(u) == 0
    while not converged and iterations < cfg.max_iterations:
        iterations += 1
        du, predicted = prob.step(u, flow, w, sabs, loss, radius)
        if du is None:
            radius *= 0.5
            if radius < cfg.step_tol:
                break
            continue
        if np.max(np.abs(du)) < cfg.step_tol or merit - predicted <= cfg.improvement_tol:
            converged = True
            break
        u_new = prob.project(u + du)
        cand = prob.evaluate(u_new)
        if cand[-1] < merit:
            gain = merit - cand[-1]
            u = u_new
            flow, w, sabs, loss, vp, vm, lex, merit = cand
            corrections += 1
            if gain <= cfg.improvement_tol:
                converged = True
                break
        else:
            radius *= 0.5
            if radius < cfg.step_tol:
                converged = True
                break

    q_b, p_s, q_s = prob.split(u)
    state = flow.state()
    return FeasibleOperatingPoint(
        t=t,
        p_c=p_c,
        p_d=p_d,
        q_b=q_b.copy(),
        p_s=p_s.copy(),
        q_s=q_s.copy(),
        demand=demand,
        solar_available=avail,
        flow=flow,
        losses=loss,
        v_plus=vp,
        v_minus=vm,
        line_excess=lex,
        objective=loss + prob.gamma * (vp.sum() + vm.sum()),
        iterations=iterations,
        corrections=corrections,
        converged=converged,
        rank1_gap=rank1_gap(state),
        socp_bound=float(socp.losses[t] + prob.gamma * socp.slack_total[t]),
    )


def recover_all(
    model: FeederModel,
    socp: SocpSolution,
    bounds: TightenedBounds | None = None,
    cfg: SolverConfig | None = None,
) -> list[FeasibleOperatingPoint]:
    """Recover every step of the horizon; steps are independent."""
    cfg = cfg or SolverConfig()
    T = socp.schedule.horizon
    if bounds is None:
        bounds = TightenedBounds.nominal(model, T)
    if cfg.workers > 1 and T > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(lambda t: recover(model, socp, t, bounds, cfg), range(T)))
    return [recover(model, socp, t, bounds, cfg) for t in range(T)]
