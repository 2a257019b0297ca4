"""Receding-horizon closed loop and run metrics.

At every closed-loop step the controller plans over the next ``horizon``
forecast steps, applies the first step to the plant and advances the
battery state of charge.  In stochastic mode the plan is made twice: a
deterministic pass supplies the operating points around which the bounds
are tightened, and a second pass plans against the tightened bounds.

Planning only sees forecasts and the battery state of charge, and battery
active power is applied exactly, so the applied dispatch is the same for
every scenario.  Scenarios differ only in the plant response to realized
demand and solar output, which is evaluated as one batched load flow per
step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, IncompatibleRunsError, PlantError, RobustDispatchError
from .feeder import FeederModel, TimeSeries, check_series
from .loadflow import LoadFlowResult, NetworkState, solve_loadflow
from .recovery import FeasibleOperatingPoint, recover, recover_all
from .socp import DispatchSchedule, SolverConfig, net_injection, soc_update, solve_socp
from .tightening import RobustConfig, TightenedBounds, tighten
from .uncertainty import UncertaintyModel, refresh_schedule, sample_errors

log = logging.getLogger(__name__)

MODES = ("deterministic", "stochastic")


@dataclass
class RunConfig:
    mode: str = "deterministic"
    horizon: int = 12
    dt_hours: float = 1.0 / 60.0
    steps: int = 60
    robust: RobustConfig = field(default_factory=RobustConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    scenarios: int = 200

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least one step")
        if self.steps < 1:
            raise ConfigError("number of closed-loop steps must be at least one")
        if self.scenarios < 0:
            raise ConfigError("scenario count must be nonnegative")
        if self.dt_hours <= 0:
            raise ConfigError("step length must be positive")


@dataclass
class StepRecord:
    """Planning outcome for one closed-loop step."""

    t: int
    lead: int
    point: FeasibleOperatingPoint
    bounds: TightenedBounds
    socp_status: list[str]
    socp_objective: float
    horizon_bounds: TightenedBounds | None = None
    anchor_losses: np.ndarray | None = None
    soc_after: np.ndarray | None = None


@dataclass
class RunLog:
    config: RunConfig
    model: FeederModel
    forecast: TimeSeries
    records: list[StepRecord]
    dispatch: DispatchSchedule
    scenario_seeds: np.ndarray
    errors: np.ndarray  # (scenarios, steps, n_uncertain)
    realized_demand: np.ndarray  # (scenarios, steps, n_bp) complex
    solar_output: np.ndarray  # (scenarios, steps, n_solar)
    plant_v: np.ndarray  # (scenarios, steps, n_bp) complex
    plant_i: np.ndarray  # (scenarios, steps, n_brp) complex
    plant_losses: np.ndarray  # (scenarios, steps)
    plant_mismatch: np.ndarray  # (scenarios, steps)
    aborted: np.ndarray  # (scenarios,) bool

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def n_scenarios(self) -> int:
        return self.plant_v.shape[0]

    @property
    def leads(self) -> np.ndarray:
        return np.array([r.lead for r in self.records], dtype=int)

    @property
    def applied_margins(self) -> np.ndarray:
        """(steps, n_ns) voltage margins used for the applied step."""
        return np.vstack([r.bounds.lam_v[0] for r in self.records])

    @property
    def planned_losses(self) -> np.ndarray:
        return np.array([r.point.losses for r in self.records])

    @property
    def slack_totals(self) -> np.ndarray:
        return np.array([r.point.slack_total for r in self.records])

    def plant_state(self, scenario: int, t: int) -> NetworkState:
        s = net_injection(
            self.model,
            self.realized_demand[scenario, t],
            self.dispatch.p_c[t],
            self.dispatch.p_d[t],
            self.dispatch.q_b[t],
            self.solar_output[scenario, t],
            self.dispatch.q_s[t],
        )
        res = LoadFlowResult(self.model, s, self.plant_v[scenario, t], self.plant_i[scenario, t], 0, 0.0, 0.0)
        return res.state()

    def served_demand(self) -> np.ndarray:
        """(scenarios, steps) total real demand served."""
        return self.realized_demand.real.sum(axis=-1)


def _plan_step(model, window, soc, t, modelU, cfg: RunConfig) -> StepRecord:
    T = window.horizon
    nominal = TightenedBounds.nominal(model, T)
    socp = solve_socp(model, window, nominal, cfg.solver, soc)
    lead = int(refresh_schedule(modelU, t))
    if cfg.mode == "deterministic":
        nominal.leads = refresh_schedule(modelU, np.arange(t, t + T))
        point = recover(model, socp, 0, nominal, cfg.solver)
        return StepRecord(t, lead, point, nominal.step(0), [socp.status], socp.objective, nominal)
    anchor = recover_all(model, socp, nominal, cfg.solver)
    bounds = tighten(model, anchor, modelU, cfg.robust, t0=t)
    robust = solve_socp(model, window, bounds, cfg.solver, soc)
    point = recover(model, robust, 0, bounds, cfg.solver)
    return StepRecord(
        t, lead, point, bounds.step(0), [socp.status, robust.status], robust.objective, bounds,
        np.array([p.losses for p in anchor]),
    )


def plan(model: FeederModel, forecast: TimeSeries, modelU: UncertaintyModel, cfg: RunConfig) -> list[StepRecord]:
    """Closed-loop planning pass; returns one record per applied step."""
    soc = np.array([d.battery.b_init for d in model.batteries])
    records = []
    for t in range(cfg.steps):
        window = forecast.window(t, cfg.horizon)
        try:
            rec = _plan_step(model, window, soc, t, modelU, cfg)
        except RobustDispatchError as exc:
            exc.step = t
            exc.args = (f"closed-loop step {t}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        p = rec.point
        nxt = np.array(
            [soc_update(soc[j], p.p_c[j], p.p_d[j], d.battery, forecast.dt_hours) for j, d in enumerate(model.batteries)]
        )
        lo = np.array([d.battery.b_min for d in model.batteries])
        hi = np.array([d.battery.b_max for d in model.batteries])
        soc = np.clip(nxt, lo, hi)
        rec.soc_after = soc
        records.append(rec)
    return records


def scenario_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def run_closed_loop(
    model: FeederModel, series: TimeSeries, modelU: UncertaintyModel, cfg: RunConfig
) -> RunLog:
    """Plan every closed-loop step, then evaluate all scenarios on the plant."""
    check_series(model, series)
    if abs(series.dt_hours - cfg.dt_hours) > 1e-12:
        raise ConfigError(f"series step {series.dt_hours} h differs from configured {cfg.dt_hours} h")
    if series.horizon < cfg.steps:
        raise DataError(f"series has {series.horizon} steps, closed loop needs {cfg.steps}")
    records = plan(model, series, modelU, cfg)
    nb = len(model.batteries)
    soc = np.vstack([np.array([d.battery.b_init for d in model.batteries]).reshape(1, nb)] + [r.soc_after.reshape(1, nb) for r in records])

    def stack(name):
        return np.vstack([getattr(r.point, name).reshape(1, -1) for r in records])

    dispatch = DispatchSchedule(stack("p_c"), stack("p_d"), stack("q_b"), stack("p_s"), stack("q_s"), soc)
    return simulate_plant(model, series, modelU, cfg, records, dispatch)


def simulate_plant(model, series, modelU, cfg, records, dispatch) -> RunLog:
    topo = model.topology
    steps, n_scen = len(records), cfg.scenarios
    leads = refresh_schedule(modelU, np.arange(steps))
    errors = np.zeros((n_scen, steps, modelU.n))
    for s in range(n_scen):
        errors[s] = sample_errors(modelU, leads, scenario_seed(cfg.seed, s))
    demand_fc = series.demand_matrix(model)[:steps]
    dirs = np.zeros((modelU.n, topo.n_bp), dtype=complex)
    solar_cols = np.zeros((modelU.n, len(model.solars)))
    sol_index = {(d.bus, d.phase): j for j, d in enumerate(model.solars)}
    for k, inj in enumerate(modelU.injections):
        if inj.quantity == "demand":
            dirs[k, topo.bp_index[(inj.bus, inj.phase)]] = 1.0 + 1j * inj.q_ratio
        elif (inj.bus, inj.phase) in sol_index:
            solar_cols[k, sol_index[(inj.bus, inj.phase)]] = 1.0
    realized = demand_fc[None] + errors @ dirs
    g = np.array([d.solar.g_max for d in model.solars])
    room = np.sqrt(np.maximum(g[None, :] ** 2 - dispatch.q_s**2, 0.0))
    solar = np.clip(dispatch.p_s[None] + errors @ solar_cols, 0.0, room[None])

    plant_v = np.full((n_scen, steps, topo.n_bp), np.nan, dtype=complex)
    plant_i = np.full((n_scen, steps, topo.n_brp), np.nan, dtype=complex)
    losses = np.full((n_scen, steps), np.nan)
    mismatch = np.full((n_scen, steps), np.nan)
    aborted = np.zeros(n_scen, dtype=bool)
    for t in range(steps):
        live = np.flatnonzero(~aborted)
        if not len(live):
            break
        s_net = net_injection(
            model,
            realized[live, t],
            dispatch.p_c[t],
            dispatch.p_d[t],
            dispatch.q_b[t],
            solar[live, t],
            dispatch.q_s[t],
        )
        try:
            results = [(live, solve_loadflow(model, s_net))]
        except PlantError:
            results = []
            for k, s in enumerate(live):
                try:
                    results.append((np.array([s]), solve_loadflow(model, s_net[k : k + 1])))
                except PlantError as exc:
                    log.warning("scenario %d aborted at step %d: %s", s, t, exc)
                    aborted[s] = True
        for idx, res in results:
            plant_v[idx, t] = res.v
            plant_i[idx, t] = res.i
            losses[idx, t] = res.losses
            mismatch[idx, t] = res.mismatch
    return RunLog(
        cfg, model, series, records, dispatch, np.arange(n_scen), errors, realized, solar,
        plant_v, plant_i, losses, mismatch, aborted,
    )


# ---------------------------------------------------------------- metrics


@dataclass
class ScenarioTable:
    """Per-scenario, per-step plant aggregates; the basis of every run statistic.

    Arrays are (scenarios, steps).  Aborted scenarios hold NaN from the step
    they failed onwards and are excluded from statistics.
    """

    losses: np.ndarray
    served_demand: np.ndarray
    violations: np.ndarray
    samples: np.ndarray
    imbalance: np.ndarray
    v_low: np.ndarray
    v_high: np.ndarray
    aborted: np.ndarray

    @property
    def net_demand(self) -> np.ndarray:
        return self.served_demand + self.losses

    @property
    def shape(self) -> tuple[int, int]:
        return self.losses.shape


def voltage_imbalance(model: FeederModel, v: np.ndarray) -> np.ndarray:
    """Mean over multi-phase buses of max |phase magnitude - phase mean| / phase mean.

    Reduces the last axis of ``v`` (flat bus-phase order); 0 without multi-phase buses.
    """
    topo = model.topology
    vals = []
    for bus in topo.order:
        idx = topo.bus_idx[bus]
        if len(idx) < 2:
            continue
        mag = np.abs(v[..., idx])
        mean = mag.mean(axis=-1)
        vals.append(np.max(np.abs(mag - mean[..., None]), axis=-1) / mean)
    if not vals:
        return np.zeros(v.shape[:-1])
    return np.mean(np.stack(vals), axis=0)


def scenario_table(log: RunLog) -> ScenarioTable:
    model = log.model
    ns = model.topology.ns
    mag = np.abs(log.plant_v[:, :, ns])
    lo = model.v_min_flat[ns]
    hi = model.v_max_flat[ns]
    outside = (mag < lo) | (mag > hi)
    valid = np.isfinite(mag).all(axis=-1)
    return ScenarioTable(
        losses=log.plant_losses.copy(),
        served_demand=np.where(valid, log.served_demand(), np.nan),
        violations=np.where(valid, outside.sum(axis=-1), 0).astype(int),
        samples=np.where(valid, len(ns), 0).astype(int),
        imbalance=voltage_imbalance(model, log.plant_v),
        v_low=mag.min(axis=-1) if len(ns) else np.zeros(log.plant_losses.shape),
        v_high=mag.max(axis=-1) if len(ns) else np.zeros(log.plant_losses.shape),
        aborted=log.aborted.copy(),
    )


@dataclass
class PairedComparison:
    net_demand_rmse: float
    loss_increase: float
    relative_net_demand_increase: float
    losses_a: float
    losses_b: float
    rate_a: float
    rate_b: float
    imbalance_a: float
    imbalance_b: float


@dataclass
class ViolationStats:
    rate: float
    rate_se: float
    n_samples: int
    n_violations: int
    per_step_rate: np.ndarray
    total_losses: float
    net_demand: np.ndarray  # (steps,) scenario mean of served demand + losses
    imbalance: float
    n_scenarios: int
    n_aborted: int
    comparison: PairedComparison | None = None

    def summary(self) -> dict:
        out = {
            "violation_rate": self.rate,
            "violation_rate_se": self.rate_se,
            "samples": self.n_samples,
            "violations": self.n_violations,
            "total_losses": self.total_losses,
            "total_net_demand": float(self.net_demand.sum()),
            "imbalance": self.imbalance,
            "scenarios": self.n_scenarios,
            "aborted": self.n_aborted,
        }
        if self.comparison is not None:
            out["comparison"] = dict(vars(self.comparison))
        return out


def table_stats(table: ScenarioTable) -> ViolationStats:
    keep = ~table.aborted
    n = int(table.samples[keep].sum())
    k = int(table.violations[keep].sum())
    rate = k / n if n else 0.0
    steps = table.shape[1]
    per_step = table.violations[keep].sum(axis=0) / np.maximum(table.samples[keep].sum(axis=0), 1)
    return ViolationStats(
        rate=rate,
        rate_se=float(np.sqrt(rate * (1 - rate) / n)) if n else 0.0,
        n_samples=n,
        n_violations=k,
        per_step_rate=per_step if keep.any() else np.zeros(steps),
        total_losses=float(table.losses[keep].sum(axis=1).mean()) if keep.any() else float("nan"),
        net_demand=table.net_demand[keep].mean(axis=0) if keep.any() else np.zeros(steps),
        imbalance=float(table.imbalance[keep].mean()) if keep.any() else float("nan"),
        n_scenarios=len(keep),
        n_aborted=int(table.aborted.sum()),
    )


def compare_tables(a: ScenarioTable, b: ScenarioTable) -> PairedComparison:
    """Paired deltas of run B relative to run A over scenarios live in both."""
    if a.shape != b.shape:
        raise IncompatibleRunsError(f"runs are not paired: {a.shape} vs {b.shape} (scenarios, steps)")
    both = ~(a.aborted | b.aborted)
    ndA, ndB = a.net_demand[both], b.net_demand[both]
    la = float(a.losses[both].sum(axis=1).mean()) if both.any() else float("nan")
    lb = float(b.losses[both].sum(axis=1).mean()) if both.any() else float("nan")
    sa, sb = table_stats(a), table_stats(b)
    return PairedComparison(
        net_demand_rmse=float(np.sqrt(np.mean((ndB - ndA) ** 2))) if ndA.size else 0.0,
        loss_increase=lb - la,
        relative_net_demand_increase=float((ndB.sum() - ndA.sum()) / ndA.sum()) if ndA.size else 0.0,
        losses_a=la,
        losses_b=lb,
        rate_a=sa.rate,
        rate_b=sb.rate,
        imbalance_a=sa.imbalance,
        imbalance_b=sb.imbalance,
    )


def metrics(logA: RunLog, logB: RunLog | None = None) -> ViolationStats:
    """Plant-side statistics for ``logA``; with ``logB``, also the paired comparison B vs A."""
    ta = scenario_table(logA)
    stats = table_stats(ta)
    if logB is not None:
        if logA.config.seed != logB.config.seed:
            raise IncompatibleRunsError(f"runs use different scenario seeds ({logA.config.seed} vs {logB.config.seed})")
        stats.comparison = compare_tables(ta, scenario_table(logB))
    return stats


def voltage_histogram(log: RunLog, bins=40, value_range=(0.9, 1.1)):
    """(edges, counts) of plant voltage magnitudes over all live non-slack samples."""
    topo = log.model.topology
    mag = np.abs(log.plant_v[~log.aborted][:, :, topo.ns]).ravel()
    counts, edges = np.histogram(mag, bins=bins, range=value_range)
    return edges, counts
