"""Forecast-error model for solar output and demand.

Each uncertain injection has a fixed scale (p.u.) and a relative half-width
that grows piecewise linearly with forecast lead time.  Forecasts are
reissued every ``refresh_period`` steps, which resets the lead to zero.
Errors are additive in real power; a demand error keeps the forecast power
factor, so it also moves reactive demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, DataError
from .feeder import FORMAT_VERSION, FeederModel, TimeSeries

FAMILIES = ("uniform", "gaussian", "custom-unimodal")
QUANTITIES = ("solar", "demand")

# variance as a multiple of half-width squared
_VARIANCE_FACTOR = {"uniform": 1.0 / 3.0, "gaussian": 1.0 / 9.0, "custom-unimodal": 1.0 / 6.0}

DEFAULT_GROWTH = ((0, 0.02), (30, 0.30), (60, 0.58))


@dataclass(frozen=True)
class UncertainInjection:
    bus: str
    phase: str
    quantity: str
    scale: float
    # reactive-to-real ratio carried along with a demand error
    q_ratio: float = 0.0

    @property
    def label(self) -> str:
        return f"{self.quantity}:{self.bus}.{self.phase}"


@dataclass(frozen=True)
class UncertaintyModel:
    injections: tuple[UncertainInjection, ...]
    growth: tuple[tuple[float, float], ...] = DEFAULT_GROWTH
    family: str = "uniform"
    refresh_period: int = 30
    correlation: np.ndarray | None = field(default=None, compare=False)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown error family {self.family!r}; expected one of {FAMILIES}")
        if self.refresh_period <= 0:
            raise ConfigError("refresh period must be positive")
        leads = np.array([g[0] for g in self.growth], dtype=float)
        rel = np.array([g[1] for g in self.growth], dtype=float)
        if len(leads) == 0 or np.any(np.diff(leads) <= 0):
            raise ConfigError("growth points must have strictly increasing lead times")
        if rel[0] < 0 or np.any(np.diff(rel) < 0):
            raise ConfigError("relative half-width must be nonnegative and nondecreasing in lead time")
        for inj in self.injections:
            if inj.quantity not in QUANTITIES:
                raise ConfigError(f"unknown uncertain quantity {inj.quantity!r}")
            if inj.scale < 0:
                raise ConfigError(f"negative error scale for {inj.label}")
        if self.correlation is not None:
            C = np.asarray(self.correlation, dtype=float)
            n = len(self.injections)
            if C.shape != (n, n) or not np.allclose(C, C.T) or not np.allclose(np.diag(C), 1.0):
                raise ConfigError("correlation must be a symmetric unit-diagonal matrix over the injections")
            if np.linalg.eigvalsh(C).min() < -1e-10:
                raise ConfigError("correlation matrix is not positive semidefinite")

    @property
    def n(self) -> int:
        return len(self.injections)

    @property
    def scales(self) -> np.ndarray:
        return np.array([inj.scale for inj in self.injections], dtype=float)

    def relative_width(self, lead) -> np.ndarray:
        if np.any(np.asarray(lead) < 0):
            raise ValueError("lead time must be nonnegative")
        pts = np.array(self.growth, dtype=float)
        return np.interp(lead, pts[:, 0], pts[:, 1])

    def half_width(self, lead) -> np.ndarray:
        """Half-widths e(lead) per injection, shape (n,) or (len(lead), n)."""
        rel = np.asarray(self.relative_width(lead))
        return rel[..., None] * self.scales

    def std(self, lead) -> np.ndarray:
        return self.half_width(lead) * np.sqrt(_VARIANCE_FACTOR[self.family])

    def scaled(self, factor: float) -> "UncertaintyModel":
        """Same structure with every scale multiplied by ``factor``."""
        inj = tuple(replace(i, scale=i.scale * factor) for i in self.injections)
        return replace(self, injections=inj)

    def injection_directions(self, model: FeederModel) -> np.ndarray:
        """(n_ns, n) complex change in net injection per unit error."""
        topo = model.topology
        out = np.zeros((len(topo.ns), self.n), dtype=complex)
        for k, inj in enumerate(self.injections):
            a = topo.bp_index[(inj.bus, inj.phase)] - topo.n_slack
            if a < 0:
                # the slack bus absorbs its own errors
                continue
            out[a, k] = 1.0 if inj.quantity == "solar" else -(1.0 + 1j * inj.q_ratio)
        return out

    @classmethod
    def from_forecast(
        cls,
        model: FeederModel,
        forecast: TimeSeries,
        family: str = "uniform",
        growth=DEFAULT_GROWTH,
        refresh_period: int = 30,
        demand_ratio: float = 0.2,
        correlation=None,
        seed: int = 0,
        include_demand: bool = True,
        include_solar: bool = True,
    ) -> "UncertaintyModel":
        """Errors on every solar DER and every load, scaled by peak forecast magnitude.

        Demand half-widths are ``demand_ratio`` times the solar relative width.
        """
        inj = []
        if include_solar:
            for d in model.solars:
                s = forecast.solar.get((d.bus, d.phase))
                peak = float(np.max(np.abs(s))) if s is not None and len(s) else d.solar.g_max
                inj.append(UncertainInjection(d.bus, d.phase, "solar", peak))
        if include_demand:
            topo = model.topology
            for key in sorted(forecast.demand, key=lambda k: topo.bp_index[k]):
                s = np.asarray(forecast.demand[key], dtype=complex)
                peak = float(np.max(np.abs(s))) if len(s) else 0.0
                if peak == 0.0:
                    continue
                k = int(np.argmax(np.abs(s)))
                ratio = float(s[k].imag / s[k].real) if s[k].real != 0 else 0.0
                inj.append(UncertainInjection(key[0], key[1], "demand", demand_ratio * peak, ratio))
        return cls(
            tuple(inj),
            tuple((float(a), float(b)) for a, b in growth),
            family,
            int(refresh_period),
            None if correlation is None else np.asarray(correlation, dtype=float),
            int(seed),
        )


@dataclass
class UncertaintyConfig:
    """File-level settings; becomes an ``UncertaintyModel`` once bound to a feeder and forecast."""

    family: str = "uniform"
    refresh_period: int = 30
    growth: tuple = DEFAULT_GROWTH
    demand_ratio: float = 0.2
    correlation: list | None = None
    seed: int = 0
    include_demand: bool = True
    include_solar: bool = True

    def build(self, model: FeederModel, forecast: TimeSeries) -> UncertaintyModel:
        return UncertaintyModel.from_forecast(
            model,
            forecast,
            self.family,
            self.growth,
            self.refresh_period,
            self.demand_ratio,
            self.correlation,
            self.seed,
            self.include_demand,
            self.include_solar,
        )


def load_uncertainty_config(path) -> UncertaintyConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    known = set(UncertaintyConfig.__dataclass_fields__)
    extra = set(doc) - known - {"format_version"}
    if extra:
        raise ConfigError(f"{path}: unknown uncertainty keys {sorted(extra)}")
    args = {k: v for k, v in doc.items() if k in known}
    if "growth" in args:
        args["growth"] = tuple(tuple(p) for p in args["growth"])
    return UncertaintyConfig(**args)


def covariance_at(modelU: UncertaintyModel, lead: int) -> np.ndarray:
    """Error covariance over the uncertain injections at a given lead time."""
    sd = modelU.std(lead)
    if modelU.correlation is None:
        return np.diag(sd**2)
    return modelU.correlation * np.outer(sd, sd)


def refresh_schedule(modelU: UncertaintyModel, t) -> np.ndarray | int:
    """Lead time of the forecast in force at closed-loop step ``t``."""
    return np.asarray(t) % modelU.refresh_period if np.ndim(t) else int(t) % modelU.refresh_period


def _standard_normals(modelU: UncertaintyModel, rng: np.random.Generator, shape) -> np.ndarray:
    z = rng.standard_normal(shape + (modelU.n,))
    if modelU.correlation is not None:
        w, U = np.linalg.eigh(modelU.correlation)
        root = U * np.sqrt(np.clip(w, 0.0, None))
        z = z @ root.T
    return z


def unit_errors(modelU: UncertaintyModel, z: np.ndarray) -> np.ndarray:
    """Map standard normals to the family's law on [-1, 1] (gaussian: sd 1/3)."""
    if modelU.family == "gaussian":
        return z / 3.0
    u = ndtr(z)
    if modelU.family == "uniform":
        return 2.0 * u - 1.0
    # symmetric triangular on [-1, 1]
    return np.where(u < 0.5, np.sqrt(2.0 * u) - 1.0, 1.0 - np.sqrt(2.0 * (1.0 - u)))


@dataclass
class Realization:
    forecast: TimeSeries
    errors: np.ndarray  # (T, n) additive real-power errors
    leads: np.ndarray
    modelU: UncertaintyModel

    @property
    def horizon(self) -> int:
        return self.errors.shape[0]

    def realized(self) -> TimeSeries:
        """Forecast plus errors as a plain series."""
        demand = {k: np.array(v, dtype=complex) for k, v in self.forecast.demand.items()}
        solar = {k: np.array(v, dtype=float) for k, v in self.forecast.solar.items()}
        T = self.horizon
        for k, inj in enumerate(self.modelU.injections):
            key = (inj.bus, inj.phase)
            if inj.quantity == "solar":
                solar[key] = solar.get(key, np.zeros(T))[:T] + self.errors[:, k]
            else:
                demand[key] = demand.get(key, np.zeros(T, complex))[:T] + self.errors[:, k] * (1.0 + 1j * inj.q_ratio)
        return TimeSeries(self.forecast.dt_hours, demand, solar)


def sample_errors(modelU: UncertaintyModel, leads, rng: np.random.Generator, batch=()) -> np.ndarray:
    """Errors of shape batch + (len(leads), n) at the given lead times."""
    leads = np.asarray(leads)
    z = _standard_normals(modelU, rng, tuple(batch) + leads.shape)
    return unit_errors(modelU, z) * modelU.half_width(leads)


def sample_realization(modelU: UncertaintyModel, forecast: TimeSeries, seed: int, t0: int = 0) -> Realization:
    """Seeded additive errors for every step of ``forecast`` starting at closed-loop time ``t0``."""
    T = forecast.horizon
    leads = refresh_schedule(modelU, np.arange(t0, t0 + T))
    rng = np.random.default_rng(seed)
    return Realization(forecast, sample_errors(modelU, leads, rng), leads, modelU)
