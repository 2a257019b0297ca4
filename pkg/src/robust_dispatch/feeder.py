"""Per-unit three-phase radial feeder model, file I/O and topology checks.

Feeder files are JSON documents; time series are CSV files with one row per
(bus, phase, quantity).  Both carry a ``format_version``.  See
``docs/formats.md`` for the schema.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DisconnectedGraphError, FeederParseError, FeederValidationError

FORMAT_VERSION = 1
PHASES = ("a", "b", "c")
DEFAULT_ANGLES = {"a": 0.0, "b": -120.0, "c": 120.0}
SERIES_QUANTITIES = ("p_demand", "q_demand", "solar")


def _phase_tuple(phases) -> tuple[str, ...]:
    if isinstance(phases, str):
        phases = tuple(phases)
    phases = tuple(phases)
    if not phases or any(p not in PHASES for p in phases) or len(set(phases)) != len(phases):
        raise FeederValidationError(f"invalid phase set {phases!r}")
    return tuple(p for p in PHASES if p in phases)


@dataclass(frozen=True)
class BusSpec:
    id: str
    phases: tuple[str, ...]
    v_min: float = 0.95
    v_max: float = 1.05


@dataclass(frozen=True, eq=False)
class BranchSpec:
    """Series impedance branch.  ``z`` is restricted to ``phases`` (k x k)."""

    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    z: np.ndarray
    s_max: np.ndarray

    @property
    def r(self) -> np.ndarray:
        return self.z.real

    @property
    def x(self) -> np.ndarray:
        return self.z.imag


@dataclass(frozen=True)
class BatterySpec:
    p_max: float
    h_max: float
    b_min: float
    b_max: float
    b_init: float
    eta_c: float = 0.95
    eta_d: float = 0.95


@dataclass(frozen=True)
class SolarSpec:
    g_max: float


@dataclass(frozen=True)
class DerSpec:
    """Single-phase connected battery and/or solar inverter."""

    id: str
    bus: str
    phase: str
    battery: BatterySpec | None = None
    solar: SolarSpec | None = None


class Topology:
    """Radial orientation of a feeder plus flat index maps.

    Bus-phase quantities are stored in one flat vector: the slack bus phases
    first, then every other bus in breadth-first order, phases in abc order.
    Non-slack entries are therefore the contiguous tail ``ns``.
    """

    def __init__(self, model: "FeederModel"):
        bus_by_id = {b.id: b for b in model.buses}
        adj: dict[str, list[tuple[str, int]]] = {b.id: [] for b in model.buses}
        for li, br in enumerate(model.branches):
            adj[br.from_bus].append((br.to_bus, li))
            adj[br.to_bus].append((br.from_bus, li))

        slack = model.slack_bus
        depth = {slack: 0}
        parent_branch: dict[str, int | None] = {slack: None}
        order = [slack]
        queue = deque([slack])
        while queue:
            u = queue.popleft()
            for v, li in adj[u]:
                if v not in depth:
                    depth[v] = depth[u] + 1
                    parent_branch[v] = li
                    order.append(v)
                    queue.append(v)
        missing = set(bus_by_id) - set(depth)
        if missing:
            raise DisconnectedGraphError(missing)

        self.order = order
        self.depth = depth
        self.parent_branch = parent_branch
        self.children: dict[str, list[str]] = {b: [] for b in order}
        self.child_branches: dict[str, list[int]] = {b: [] for b in order}
        nl = len(model.branches)
        self.up = [""] * nl
        self.down = [""] * nl
        for bus in order[1:]:
            li = parent_branch[bus]
            br = model.branches[li]
            upstream = br.from_bus if br.to_bus == bus else br.to_bus
            self.up[li] = upstream
            self.down[li] = bus
            self.children[upstream].append(bus)
            self.child_branches[upstream].append(li)
        # branches in breadth-first order of their downstream bus
        self.branch_order = [parent_branch[b] for b in order[1:]]

        self.bus_phases = {b: bus_by_id[b].phases for b in order}
        self.bp: list[tuple[str, str]] = []
        self.bus_idx: dict[str, np.ndarray] = {}
        for b in order:
            start = len(self.bp)
            self.bp.extend((b, p) for p in self.bus_phases[b])
            self.bus_idx[b] = np.arange(start, len(self.bp))
        self.bp_index = {key: i for i, key in enumerate(self.bp)}
        self.n_bp = len(self.bp)
        self.n_slack = len(self.bus_phases[slack])
        self.ns = np.arange(self.n_slack, self.n_bp)

        self.brp: list[tuple[int, str]] = []
        self.branch_idx: list[np.ndarray] = []
        for li, br in enumerate(model.branches):
            start = len(self.brp)
            self.brp.extend((li, p) for p in br.phases)
            self.branch_idx.append(np.arange(start, len(self.brp)))
        self.n_brp = len(self.brp)
        # positions of each branch's phases inside its upstream bus phase list
        self.pos_up = [
            np.array([self.bus_phases[self.up[li]].index(p) for p in br.phases])
            for li, br in enumerate(model.branches)
        ]
        # positions of each child branch's phases inside the parent branch's phase list
        self.pos_in_parent: list[np.ndarray | None] = []
        for li, br in enumerate(model.branches):
            pli = parent_branch[self.up[li]]
            if pli is None:
                self.pos_in_parent.append(None)
            else:
                pph = model.branches[pli].phases
                self.pos_in_parent.append(np.array([pph.index(p) for p in br.phases]))

        self.subtree: dict[str, list[str]] = {}
        for b in reversed(order):
            self.subtree[b] = [b] + [x for c in self.children[b] for x in self.subtree[c]]

    def path(self, bus: str) -> list[int]:
        """Branch indices from the slack down to ``bus``."""
        out = []
        while self.parent_branch[bus] is not None:
            li = self.parent_branch[bus]
            out.append(li)
            bus = self.up[li]
        return out[::-1]


@dataclass(frozen=True, eq=False)
class FeederModel:
    """Validated per-unit feeder.  Immutable once constructed."""

    name: str
    buses: tuple[BusSpec, ...]
    branches: tuple[BranchSpec, ...]
    ders: tuple[DerSpec, ...]
    base_voltage: float
    base_power: float
    slack_bus: str
    slack_magnitude: dict[str, float] = field(default_factory=dict)
    slack_angle_deg: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "ders", tuple(self.ders))
        _validate(self)

    def __eq__(self, other):
        if not isinstance(other, FeederModel):
            return NotImplemented
        return _model_to_dict(self, "pu") == _model_to_dict(other, "pu")

    __hash__ = None

    @cached_property
    def topology(self) -> Topology:
        return Topology(self)

    @cached_property
    def bus_by_id(self) -> dict[str, BusSpec]:
        return {b.id: b for b in self.buses}

    @cached_property
    def batteries(self) -> tuple[DerSpec, ...]:
        return tuple(d for d in self.ders if d.battery is not None)

    @cached_property
    def solars(self) -> tuple[DerSpec, ...]:
        return tuple(d for d in self.ders if d.solar is not None)

    @property
    def z_base(self) -> float:
        return self.base_voltage**2 / self.base_power

    @cached_property
    def slack_voltage(self) -> np.ndarray:
        phases = self.bus_by_id[self.slack_bus].phases
        return np.array(
            [
                self.slack_magnitude.get(p, 1.0)
                * np.exp(1j * math.radians(self.slack_angle_deg.get(p, DEFAULT_ANGLES[p])))
                for p in phases
            ]
        )

    @cached_property
    def v_min_flat(self) -> np.ndarray:
        return np.array([self.bus_by_id[b].v_min for b, _ in self.topology.bp])

    @cached_property
    def v_max_flat(self) -> np.ndarray:
        return np.array([self.bus_by_id[b].v_max for b, _ in self.topology.bp])

    @cached_property
    def s_max_flat(self) -> np.ndarray:
        return np.concatenate([br.s_max for br in self.branches]) if self.branches else np.zeros(0)

    @cached_property
    def path_impedance(self) -> np.ndarray:
        """Radial bus impedance matrix over non-slack bus-phases.

        Entry (a, b) sums the impedance of branches shared by the slack paths
        of a and b, so that ``V = V_slack - K @ i_drawn``.
        """
        topo = self.topology
        n = len(topo.ns)
        K = np.zeros((n, n), dtype=complex)
        for li, br in enumerate(self.branches):
            idx, pos = [], []
            for bus in topo.subtree[topo.down[li]]:
                for p, flat in zip(topo.bus_phases[bus], topo.bus_idx[bus]):
                    idx.append(flat - topo.n_slack)
                    pos.append(br.phases.index(p))
            K[np.ix_(idx, idx)] += br.z[np.ix_(pos, pos)]
        return K

    @cached_property
    def subtree_incidence(self) -> np.ndarray:
        """(n_brp, n_ns) 0/1 map from bus currents drawn to branch currents."""
        topo = self.topology
        D = np.zeros((topo.n_brp, len(topo.ns)))
        for li, br in enumerate(self.branches):
            for p, row in zip(br.phases, topo.branch_idx[li]):
                for bus in topo.subtree[topo.down[li]]:
                    key = (bus, p)
                    if key in topo.bp_index:
                        D[row, topo.bp_index[key] - topo.n_slack] = 1.0
        return D


def _validate(model: FeederModel) -> None:
    ids = [b.id for b in model.buses]
    if len(set(ids)) != len(ids):
        raise FeederValidationError("duplicate bus ids")
    if len({br.id for br in model.branches}) != len(model.branches):
        raise FeederValidationError("duplicate branch ids")
    if len({d.id for d in model.ders}) != len(model.ders):
        raise FeederValidationError("duplicate DER ids")
    if not (model.base_voltage > 0 and model.base_power > 0):
        raise FeederValidationError("bases must be positive")
    buses = {b.id: b for b in model.buses}
    if model.slack_bus not in buses:
        raise FeederValidationError(f"slack bus {model.slack_bus!r} not defined")
    for b in model.buses:
        if tuple(b.phases) != _phase_tuple(b.phases):
            raise FeederValidationError(f"bus {b.id}: phases must be an ordered subset of abc")
        if not (0 < b.v_min < b.v_max):
            raise FeederValidationError(f"bus {b.id}: need 0 < v_min < v_max")
    if len(model.branches) != len(model.buses) - 1:
        raise FeederValidationError(
            f"not radial: {len(model.branches)} branches for {len(model.buses)} buses"
        )
    for br in model.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in buses:
                raise FeederValidationError(f"branch {br.id}: unknown bus {end!r}")
        if br.from_bus == br.to_bus:
            raise FeederValidationError(f"branch {br.id}: self loop")
        if tuple(br.phases) != _phase_tuple(br.phases):
            raise FeederValidationError(f"branch {br.id}: phases must be an ordered subset of abc")
        for end in (br.from_bus, br.to_bus):
            if not set(br.phases) <= set(buses[end].phases):
                raise FeederValidationError(
                    f"branch {br.id}: phases {''.join(br.phases)} not present at bus {end}"
                )
        k = len(br.phases)
        if br.z.shape != (k, k) or br.s_max.shape != (k,):
            raise FeederValidationError(f"branch {br.id}: impedance/limit shape does not match phases")
        if not np.all(np.isfinite(br.z)):
            raise FeederValidationError(f"branch {br.id}: non-finite impedance")
        if not np.allclose(br.z, br.z.T, rtol=0, atol=1e-12 * max(1.0, np.abs(br.z).max())):
            raise FeederValidationError(f"branch {br.id}: impedance not symmetric")
        if np.any(np.diag(br.z).real < 0):
            raise FeederValidationError(f"branch {br.id}: negative self resistance")
        if np.any(~(br.s_max > 0)):
            raise FeederValidationError(f"branch {br.id}: s_max must be positive")

    topo = Topology(model)  # raises on disconnection
    for bus in topo.order[1:]:
        br = model.branches[topo.parent_branch[bus]]
        if tuple(br.phases) != buses[bus].phases:
            raise FeederValidationError(
                f"bus {bus}: phases {''.join(buses[bus].phases)} differ from supplying branch {br.id}"
            )

    seen_solar = set()
    for d in model.ders:
        if d.bus not in buses:
            raise FeederValidationError(f"DER {d.id}: unknown bus {d.bus!r}")
        if d.bus == model.slack_bus:
            raise FeederValidationError(f"DER {d.id}: DERs at the slack bus are not supported")
        if d.phase not in buses[d.bus].phases:
            raise FeederValidationError(f"DER {d.id}: phase {d.phase} absent at bus {d.bus}")
        bat = d.battery
        if bat is not None:
            if not (bat.b_min <= bat.b_init <= bat.b_max):
                raise FeederValidationError(f"DER {d.id}: need b_min <= b_init <= b_max")
            if not (0 < bat.eta_c <= 1 and 0 < bat.eta_d <= 1):
                raise FeederValidationError(f"DER {d.id}: efficiencies must lie in (0, 1]")
            if bat.p_max < 0 or bat.h_max < 0:
                raise FeederValidationError(f"DER {d.id}: battery ratings must be nonnegative")
        if d.solar is not None:
            if d.solar.g_max < 0:
                raise FeederValidationError(f"DER {d.id}: g_max must be nonnegative")
            key = (d.bus, d.phase)
            if key in seen_solar:
                raise FeederValidationError(f"DER {d.id}: second solar inverter on {d.bus}.{d.phase}")
            seen_solar.add(key)
    for p, mag in model.slack_magnitude.items():
        if p not in buses[model.slack_bus].phases or not mag > 0:
            raise FeederValidationError(f"invalid slack voltage entry for phase {p!r}")


def validate_radial(model: FeederModel) -> Topology:
    """Orient the feeder from the slack bus; raises if any bus is unreachable."""
    return Topology(model)


# --------------------------------------------------------------------------- I/O


def _unit_scales(units: str, base_voltage: float, base_power: float) -> dict[str, float]:
    if units == "pu":
        return {"z": 1.0, "s": 1.0, "e": 1.0}
    if units == "si":
        return {"z": base_voltage**2 / base_power, "s": base_power, "e": base_power}
    raise FeederParseError(f"unknown units {units!r} (expected 'pu' or 'si')")


def _model_to_dict(model: FeederModel, units: str = "pu") -> dict:
    sc = _unit_scales(units, model.base_voltage, model.base_power)

    def smax_out(v):
        return [None if math.isinf(x) else x * sc["s"] for x in v.tolist()]

    doc = {
        "format_version": FORMAT_VERSION,
        "name": model.name,
        "units": units,
        "base_voltage": model.base_voltage,
        "base_power": model.base_power,
        "slack_bus": model.slack_bus,
        "slack_voltage": {
            p: [model.slack_magnitude.get(p, 1.0), model.slack_angle_deg.get(p, DEFAULT_ANGLES[p])]
            for p in model.bus_by_id[model.slack_bus].phases
        },
        "buses": [
            {"id": b.id, "phases": "".join(b.phases), "v_min": b.v_min, "v_max": b.v_max}
            for b in model.buses
        ],
        "branches": [
            {
                "id": br.id,
                "from": br.from_bus,
                "to": br.to_bus,
                "phases": "".join(br.phases),
                "r": (br.z.real * sc["z"]).tolist(),
                "x": (br.z.imag * sc["z"]).tolist(),
                "s_max": smax_out(br.s_max),
            }
            for br in model.branches
        ],
        "ders": [],
    }
    for d in model.ders:
        entry = {"id": d.id, "bus": d.bus, "phase": d.phase, "battery": None, "solar": None}
        if d.battery is not None:
            b = d.battery
            entry["battery"] = {
                "p_max": b.p_max * sc["s"],
                "h_max": b.h_max * sc["s"],
                "b_min": b.b_min * sc["e"],
                "b_max": b.b_max * sc["e"],
                "b_init": b.b_init * sc["e"],
                "eta_c": b.eta_c,
                "eta_d": b.eta_d,
            }
        if d.solar is not None:
            entry["solar"] = {"g_max": d.solar.g_max * sc["s"]}
        doc["ders"].append(entry)
    return doc


def model_from_dict(doc: dict) -> FeederModel:
    try:
        version = doc["format_version"]
        if version != FORMAT_VERSION:
            raise FeederParseError(f"unsupported format_version {version!r}")
        vb, sb = float(doc["base_voltage"]), float(doc["base_power"])
        sc = _unit_scales(doc.get("units", "pu"), vb, sb)
        buses = [
            BusSpec(
                id=str(b["id"]),
                phases=_phase_tuple(b["phases"]),
                v_min=float(b.get("v_min", 0.95)),
                v_max=float(b.get("v_max", 1.05)),
            )
            for b in doc["buses"]
        ]
        branches = []
        for br in doc["branches"]:
            phases = _phase_tuple(br["phases"])
            z = (np.asarray(br["r"], dtype=float) + 1j * np.asarray(br["x"], dtype=float)) / sc["z"]
            z = np.atleast_2d(z)
            smax = br.get("s_max")
            if smax is None:
                smax = [None] * len(phases)
            smax = np.array([math.inf if v is None else float(v) / sc["s"] for v in smax])
            branches.append(
                BranchSpec(str(br["id"]), str(br["from"]), str(br["to"]), phases, z, smax)
            )
        ders = []
        for d in doc.get("ders", []):
            bat = sol = None
            if d.get("battery"):
                b = d["battery"]
                bat = BatterySpec(
                    p_max=float(b["p_max"]) / sc["s"],
                    h_max=float(b["h_max"]) / sc["s"],
                    b_min=float(b["b_min"]) / sc["e"],
                    b_max=float(b["b_max"]) / sc["e"],
                    b_init=float(b["b_init"]) / sc["e"],
                    eta_c=float(b.get("eta_c", 0.95)),
                    eta_d=float(b.get("eta_d", 0.95)),
                )
            if d.get("solar"):
                sol = SolarSpec(g_max=float(d["solar"]["g_max"]) / sc["s"])
            ders.append(DerSpec(str(d["id"]), str(d["bus"]), str(d["phase"]), bat, sol))
        sv = doc.get("slack_voltage") or {}
        mags = {p: float(v[0]) for p, v in sv.items()}
        angs = {p: float(v[1]) for p, v in sv.items()}
        return FeederModel(
            name=str(doc.get("name", "feeder")),
            buses=buses,
            branches=branches,
            ders=ders,
            base_voltage=vb,
            base_power=sb,
            slack_bus=str(doc["slack_bus"]),
            slack_magnitude=mags,
            slack_angle_deg=angs,
        )
    except FeederValidationError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FeederParseError(f"malformed feeder document: {exc!r}") from exc


def load_feeder(path) -> FeederModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FeederParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise FeederParseError(f"{path}: {exc}") from exc
    return model_from_dict(doc)


def save_feeder(model: FeederModel, path, units: str = "pu") -> None:
    Path(path).write_text(json.dumps(_model_to_dict(model, units), indent=1) + "\n")


# --------------------------------------------------------------------------- time series


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Forecast demand and available solar power per (bus, phase), per step.

    ``demand`` maps (bus, phase) to complex per-unit load; ``solar`` maps
    (bus, phase) to available real power.  ``dt_hours`` is the step length.
    """

    dt_hours: float
    demand: dict[tuple[str, str], np.ndarray]
    solar: dict[tuple[str, str], np.ndarray]

    def __post_init__(self):
        if not self.dt_hours > 0:
            raise FeederValidationError("dt_hours must be positive")
        lengths = {len(v) for v in self.demand.values()} | {len(v) for v in self.solar.values()}
        if len(lengths) > 1:
            raise FeederValidationError(f"series lengths differ: {sorted(lengths)}")

    @property
    def horizon(self) -> int:
        for v in self.demand.values():
            return len(v)
        for v in self.solar.values():
            return len(v)
        return 0

    def window(self, start: int, length: int) -> "TimeSeries":
        """Steps ``start .. start+length-1``; past the end the last value is held."""
        if self.horizon == 0:
            raise FeederValidationError("empty time series")
        idx = np.minimum(np.arange(start, start + length), self.horizon - 1)
        return TimeSeries(
            self.dt_hours,
            {k: v[idx] for k, v in self.demand.items()},
            {k: v[idx] for k, v in self.solar.items()},
        )

    def demand_matrix(self, model: FeederModel) -> np.ndarray:
        """(T, n_bp) complex demand on the model's flat bus-phase order."""
        topo = model.topology
        out = np.zeros((self.horizon, topo.n_bp), dtype=complex)
        for key, v in self.demand.items():
            out[:, topo.bp_index[key]] = v
        return out

    def solar_matrix(self, model: FeederModel) -> np.ndarray:
        """(T, n_solar) available real power for each solar DER."""
        out = np.zeros((self.horizon, len(model.solars)))
        for j, d in enumerate(model.solars):
            v = self.solar.get((d.bus, d.phase))
            if v is not None:
                out[:, j] = v
        return out

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.dt_hours == other.dt_hours
            and self.demand.keys() == other.demand.keys()
            and self.solar.keys() == other.solar.keys()
            and all(np.array_equal(self.demand[k], other.demand[k]) for k in self.demand)
            and all(np.array_equal(self.solar[k], other.solar[k]) for k in self.solar)
        )

    __hash__ = None


def check_series(model: FeederModel, series: TimeSeries) -> None:
    """Raise if the series references unknown bus-phases or loads the slack bus."""
    topo = model.topology
    for kind, table in (("demand", series.demand), ("solar", series.solar)):
        for key in table:
            if key not in topo.bp_index:
                raise FeederValidationError(f"{kind} series for unknown bus-phase {key[0]}.{key[1]}")
            if key[0] == model.slack_bus and np.any(table[key] != 0):
                raise FeederValidationError(f"{kind} at the slack bus is not supported")
    solar_keys = {(d.bus, d.phase) for d in model.solars}
    for key in series.solar:
        if key not in solar_keys:
            raise FeederValidationError(f"solar series at {key[0]}.{key[1]} has no solar inverter")


def load_series(path) -> TimeSeries:
    path = Path(path)
    meta: dict[str, str] = {}
    demand_p: dict = {}
    demand_q: dict = {}
    solar: dict = {}
    try:
        with path.open(newline="") as fh:
            lines = [ln for ln in fh]
        body = []
        for ln in lines:
            if ln.startswith("#"):
                for item in ln[1:].split(","):
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k.strip()] = v.strip()
            elif ln.strip():
                body.append(ln)
        if int(meta.get("format_version", -1)) != FORMAT_VERSION:
            raise FeederParseError(f"{path}: missing or unsupported format_version")
        dt = float(meta["dt_hours"])
        reader = csv.reader(body)
        header = next(reader)
        if header[:3] != ["bus", "phase", "quantity"]:
            raise FeederParseError(f"{path}: header must start with bus,phase,quantity")
        n = len(header) - 3
        for row in reader:
            bus, phase, qty = row[0], row[1], row[2]
            vals = np.array([float(x) for x in row[3:]])
            if len(vals) != n:
                raise FeederParseError(f"{path}: row {bus},{phase},{qty} has {len(vals)} values, expected {n}")
            key = (bus, phase)
            target = {"p_demand": demand_p, "q_demand": demand_q, "solar": solar}.get(qty)
            if target is None:
                raise FeederParseError(f"{path}: unknown quantity {qty!r}")
            target[key] = vals
    except (OSError, KeyError, ValueError, StopIteration) as exc:
        raise FeederParseError(f"{path}: {exc!r}") from exc
    demand = {}
    for key in sorted(set(demand_p) | set(demand_q)):
        p = demand_p.get(key)
        q = demand_q.get(key)
        if p is None:
            p = np.zeros_like(q)
        if q is None:
            q = np.zeros_like(p)
        demand[key] = p + 1j * q
    return TimeSeries(dt, demand, dict(sorted(solar.items())))


def save_series(series: TimeSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}, dt_hours={series.dt_hours!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "phase", "quantity"] + [f"t{i}" for i in range(series.horizon)])
        for (bus, ph), v in series.demand.items():
            w.writerow([bus, ph, "p_demand"] + [repr(float(x)) for x in v.real])
            w.writerow([bus, ph, "q_demand"] + [repr(float(x)) for x in v.imag])
        for (bus, ph), v in series.solar.items():
            w.writerow([bus, ph, "solar"] + [repr(float(x)) for x in v])
