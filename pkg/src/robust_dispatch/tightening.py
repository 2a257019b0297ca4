"""Chance-constraint tightening from linearized uncertainty propagation.

A constrained quantity Y is approximated near an AC-exact operating point as
``Y + Gamma @ omega`` with omega the zero-mean forecast errors.  Each bound
is moved inward by ``factor * ||Gamma Sigma^(1/2)||_2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import ConfigError
from .feeder import FeederModel

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("gaussian", "chebyshev", "unimodal")


def safety_factor(dist: str, alpha: float) -> float:
    """Multiplier turning a standard deviation into a one-sided buffer at risk ``alpha``."""
    if not (0.0 < alpha < 0.5):
        raise ConfigError(f"violation probability must lie in (0, 0.5), got {alpha}")
    if dist == "gaussian":
        return NormalDist().inv_cdf(1.0 - alpha)
    if dist == "chebyshev":
        return math.sqrt((1.0 - alpha) / alpha)
    if dist == "unimodal":
        return ((1.0 - alpha) / (math.e * alpha)) ** (1.0 / 1.95)
    raise ConfigError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")


def unimodal_one_sided_bound(alpha: float) -> float:
    """Closed-form one-sided Chebyshev bound for unimodal laws, valid for alpha < 1/6."""
    return math.sqrt(4.0 / (9.0 * alpha) - 1.0)


@dataclass
class RobustConfig:
    alpha_v: float = 0.10
    alpha_l: float = 0.10
    alpha_s: float = 0.10
    distribution: str = "unimodal"
    tighten_voltage: bool = True
    tighten_lines: bool = False
    tighten_solar: bool = False

    def __post_init__(self):
        for name in ("alpha_v", "alpha_l", "alpha_s"):
            a = getattr(self, name)
            if not (0.0 < a < 0.5):
                raise ConfigError(f"{name} must lie in (0, 0.5), got {a}")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"unknown distribution {self.distribution!r}")


@dataclass
class TightenedBounds:
    """Per-step robust limits.  Voltage limits are on squared magnitudes.

    Arrays are (T, n) with columns in the model's non-slack bus-phase,
    branch-phase and solar-DER orders respectively.
    """

    v_lower: np.ndarray
    v_upper: np.ndarray
    line_upper: np.ndarray
    solar_upper: np.ndarray
    lam_v: np.ndarray
    lam_l: np.ndarray
    lam_s: np.ndarray
    leads: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def horizon(self) -> int:
        return self.v_lower.shape[0]

    @property
    def over_tight(self) -> np.ndarray:
        return self.v_lower > self.v_upper

    @classmethod
    def nominal(cls, model: FeederModel, horizon: int) -> "TightenedBounds":
        return cls.from_margins(
            model,
            np.zeros((horizon, len(model.topology.ns))),
            np.zeros((horizon, model.topology.n_brp)),
            np.zeros((horizon, len(model.solars))),
        )

    @classmethod
    def from_margins(cls, model, lam_v, lam_l, lam_s, leads=None) -> "TightenedBounds":
        topo = model.topology
        vmin2 = model.v_min_flat[topo.ns] ** 2
        vmax2 = model.v_max_flat[topo.ns] ** 2
        gmax = np.array([d.solar.g_max for d in model.solars])
        T = lam_v.shape[0]
        return cls(
            v_lower=vmin2[None, :] + lam_v,
            v_upper=vmax2[None, :] - lam_v,
            line_upper=np.maximum(model.s_max_flat[None, :] - lam_l, 0.0),
            solar_upper=np.maximum(gmax[None, :] - lam_s, 0.0),
            lam_v=lam_v,
            lam_l=lam_l,
            lam_s=lam_s,
            leads=np.zeros(T, dtype=int) if leads is None else np.asarray(leads, dtype=int),
        )

    def step(self, t: int) -> "TightenedBounds":
        sl = slice(t, t + 1)
        return TightenedBounds(
            self.v_lower[sl],
            self.v_upper[sl],
            self.line_upper[sl],
            self.solar_upper[sl],
            self.lam_v[sl],
            self.lam_l[sl],
            self.lam_s[sl],
            self.leads[sl] if len(self.leads) else self.leads,
        )


@dataclass
class SensitivityMatrix:
    """First-order response of constrained quantities to forecast errors at one point.

    Rows follow the registry order: squared voltage per non-slack bus-phase,
    per-phase apparent power per limited branch-phase, apparent output per
    solar DER.  Columns follow the uncertainty model's injections.
    """

    voltage: np.ndarray
    line: np.ndarray
    line_complex: np.ndarray
    line_magnitude: np.ndarray
    line_rows: np.ndarray
    solar: np.ndarray
    solar_magnitude: np.ndarray
    step: int = 0
    condition: float = 1.0

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.voltage, self.line, self.solar])

    @property
    def n_rows(self) -> int:
        return self.stacked.shape[0]


def _solar_columns(model: FeederModel, modelU) -> np.ndarray:
    """(n_solar, n_unc) indicator of each solar DER's own output error."""
    out = np.zeros((len(model.solars), modelU.n))
    where = {(inj.bus, inj.phase): k for k, inj in enumerate(modelU.injections) if inj.quantity == "solar"}
    for j, d in enumerate(model.solars):
        k = where.get((d.bus, d.phase))
        if k is not None:
            out[j, k] = 1.0
    return out


def compute_sensitivities(model: FeederModel, point, modelU) -> SensitivityMatrix:
    """Analytic sensitivities at an AC-exact operating point.

    Falls back to central finite differences when the linearized load flow
    is numerically singular.
    """
    from .loadflow import LinearizedFlow

    lin = LinearizedFlow(point.flow)
    if not np.isfinite(lin.cond) or lin.cond > 1e12:
        return finite_difference_sensitivities(model, point, modelU)
    ds = modelU.injection_directions(model)
    dv = lin.voltage(ds)
    dw = lin.squared_voltage(ds, dv)
    rows = np.flatnonzero(np.isfinite(model.s_max_flat))
    S = point.flow.branch_flows[rows]
    dS = lin.branch_flow(ds, dv)[rows]
    mag = np.abs(S)
    safe = np.where(mag > 0, mag, 1.0)
    dmag = np.real(np.conj(S)[:, None] * dS) / safe[:, None]
    dmag[mag == 0] = 0.0
    sel = _solar_columns(model, modelU)
    smag = np.hypot(point.p_s, point.q_s)
    ssafe = np.where(smag > 0, smag, 1.0)
    dsol = sel * np.where(smag > 0, point.p_s / ssafe, 1.0)[:, None]
    return SensitivityMatrix(dw, dmag, dS, mag, rows, dsol, smag, point.t, lin.cond)


def _quantities(model, flow, p_s, q_s, rows):
    w = np.abs(flow.v[model.topology.ns]) ** 2
    return w, flow.branch_flows[rows], np.hypot(p_s, q_s)


def finite_difference_sensitivities(model: FeederModel, point, modelU, step: float = 1e-4) -> SensitivityMatrix:
    """Central differences of the plant load flow, one uncertain injection at a time."""
    from .loadflow import solve_loadflow

    topo = model.topology
    rows = np.flatnonzero(np.isfinite(model.s_max_flat))
    ds = modelU.injection_directions(model)
    sel = _solar_columns(model, modelU)
    n = modelU.n
    n_ns = len(topo.ns)
    dw = np.zeros((n_ns, n))
    dS = np.zeros((len(rows), n), dtype=complex)
    dsol = np.zeros((len(model.solars), n))
    dmag = np.zeros((len(rows), n))
    base = point.flow.s_net
    for k in range(n):
        out = []
        for sign in (1.0, -1.0):
            s = base.copy()
            s[topo.ns] += sign * step * ds[:, k]
            flow = solve_loadflow(model, s)
            out.append(_quantities(model, flow, point.p_s + sign * step * sel[:, k], point.q_s, rows))
        dw[:, k] = (out[0][0] - out[1][0]) / (2 * step)
        dS[:, k] = (out[0][1] - out[1][1]) / (2 * step)
        dsol[:, k] = (out[0][2] - out[1][2]) / (2 * step)
        dmag[:, k] = (np.abs(out[0][1]) - np.abs(out[1][1])) / (2 * step)
    mag = np.abs(point.flow.branch_flows[rows])
    return SensitivityMatrix(dw, dmag, dS, mag, rows, dsol, np.hypot(point.p_s, point.q_s), point.t, float("nan"))


def uncertainty_margin(gamma, sigma, factor: float) -> np.ndarray | float:
    """``factor * ||Gamma Sigma^(1/2)||_2`` for one row or each row of a block."""
    G = np.atleast_2d(np.asarray(gamma, dtype=float))
    Sig = np.asarray(sigma, dtype=float)
    var = np.einsum("ij,jk,ik->i", G, Sig, G)
    lam = factor * np.sqrt(np.clip(var, 0.0, None))
    return float(lam[0]) if np.ndim(gamma) == 1 else lam


def _line_margins(sens: SensitivityMatrix, sigma, factor) -> np.ndarray:
    lam = uncertainty_margin(sens.line, sigma, factor)
    zero = sens.line_magnitude == 0
    if np.any(zero):
        re = uncertainty_margin(sens.line_complex[zero].real, sigma, 1.0)
        im = uncertainty_margin(sens.line_complex[zero].imag, sigma, 1.0)
        lam[zero] = factor * np.hypot(re, im)
    return lam


def margins(model: FeederModel, sens: SensitivityMatrix, sigma, cfg: RobustConfig):
    """(lam_v, lam_l over all branch-phases, lam_s) for one step."""
    n_ns = sens.voltage.shape[0]
    lam_v = uncertainty_margin(sens.voltage, sigma, safety_factor(cfg.distribution, cfg.alpha_v))
    lam_l = np.zeros(model.topology.n_brp)
    lam_l[sens.line_rows] = _line_margins(sens, sigma, safety_factor(cfg.distribution, cfg.alpha_l))
    lam_s = uncertainty_margin(sens.solar, sigma, safety_factor(cfg.distribution, cfg.alpha_s))
    if not cfg.tighten_voltage:
        lam_v = np.zeros(n_ns)
    if not cfg.tighten_lines:
        lam_l = np.zeros_like(lam_l)
    if not cfg.tighten_solar:
        lam_s = np.zeros_like(lam_s)
    return lam_v, lam_l, lam_s


def tighten(model: FeederModel, trajectory, modelU, cfg: RobustConfig | None = None, t0: int = 0) -> TightenedBounds:
    """Robust bounds for each step of ``trajectory`` (step k sits at closed-loop time t0 + k)."""
    from .uncertainty import covariance_at, refresh_schedule

    cfg = cfg or RobustConfig()
    T = len(trajectory)
    lam_v = np.zeros((T, len(model.topology.ns)))
    lam_l = np.zeros((T, model.topology.n_brp))
    lam_s = np.zeros((T, len(model.solars)))
    leads = np.zeros(T, dtype=int)
    for k, point in enumerate(trajectory):
        leads[k] = refresh_schedule(modelU, t0 + k)
        sigma = covariance_at(modelU, leads[k])
        if not np.any(sigma):
            continue
        sens = compute_sensitivities(model, point, modelU)
        lam_v[k], lam_l[k], lam_s[k] = margins(model, sens, sigma, cfg)
    bounds = TightenedBounds.from_margins(model, lam_v, lam_l, lam_s, leads)
    n_bad = int(bounds.over_tight.sum())
    if n_bad:
        log.warning("%d voltage rows have crossing robust bounds; slacks will absorb them", n_bad)
    return bounds


def bounds_rows(model: FeederModel, bounds: TightenedBounds, t0: int = 0):
    """Columnar rows (step, element, family, lower, upper, margin); voltages are squared."""
    topo = model.topology
    v_names = [f"{b}.{p}" for b, p in (topo.bp[i] for i in topo.ns)]
    l_names = [f"{model.branches[li].id}.{p}" for li, p in topo.brp]
    s_names = [d.id for d in model.solars]
    for k in range(bounds.horizon):
        step = t0 + k
        for a, name in enumerate(v_names):
            yield step, name, "voltage", bounds.v_lower[k, a], bounds.v_upper[k, a], bounds.lam_v[k, a]
        for a, name in enumerate(l_names):
            if np.isfinite(model.s_max_flat[a]):
                yield step, name, "line", 0.0, bounds.line_upper[k, a], bounds.lam_l[k, a]
        for a, name in enumerate(s_names):
            yield step, name, "solar", 0.0, bounds.solar_upper[k, a], bounds.lam_s[k, a]
