"""Regenerate the feeder and time-series fixtures in src/robust_dispatch/data.

Topology and line configurations follow the public IEEE 13-node test feeder
(transformer and regulator replaced by short lines, 670 load lumped at 632).
Line impedances are in ohm/mile.  Run from the repository root:

    python scripts/make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

from robust_dispatch.feeder import FORMAT_VERSION, TimeSeries, save_series

DATA = Path(__file__).resolve().parents[1] / "src" / "robust_dispatch" / "data"

CONFIGS = {
    "601": ("abc", [[0.3465 + 1.0179j, 0.1560 + 0.5017j, 0.1580 + 0.4236j],
                    [0.1560 + 0.5017j, 0.3375 + 1.0478j, 0.1535 + 0.3849j],
                    [0.1580 + 0.4236j, 0.1535 + 0.3849j, 0.3414 + 1.0348j]]),
    "602": ("abc", [[0.7526 + 1.1814j, 0.1580 + 0.4236j, 0.1560 + 0.5017j],
                    [0.1580 + 0.4236j, 0.7475 + 1.1983j, 0.1535 + 0.3849j],
                    [0.1560 + 0.5017j, 0.1535 + 0.3849j, 0.7436 + 1.2112j]]),
    "603": ("bc", [[1.3294 + 1.3471j, 0.2066 + 0.4591j],
                   [0.2066 + 0.4591j, 1.3238 + 1.3569j]]),
    "604": ("ac", [[1.3238 + 1.3569j, 0.2066 + 0.4591j],
                   [0.2066 + 0.4591j, 1.3294 + 1.3471j]]),
    "605": ("c", [[1.3292 + 1.3475j]]),
    "606": ("abc", [[0.7982 + 0.4463j, 0.3192 + 0.0328j, 0.2849 - 0.0143j],
                    [0.3192 + 0.0328j, 0.7891 + 0.4041j, 0.3192 + 0.0328j],
                    [0.2849 - 0.0143j, 0.3192 + 0.0328j, 0.7982 + 0.4463j]]),
    "607": ("a", [[1.3425 + 0.5124j]]),
}

# (from, to, config, length ft)
LINES = [
    ("650", "632", "601", 2000),
    ("632", "633", "602", 500),
    ("633", "634", "601", 150),
    ("632", "645", "603", 500),
    ("645", "646", "603", 300),
    ("632", "671", "601", 2000),
    ("671", "680", "601", 1000),
    ("671", "684", "604", 300),
    ("684", "611", "605", 300),
    ("684", "652", "607", 800),
    ("671", "692", "601", 50),
    ("692", "675", "606", 500),
]

BUS_PHASES = {
    "650": "abc", "632": "abc", "633": "abc", "634": "abc", "645": "bc", "646": "bc",
    "671": "abc", "680": "abc", "684": "ac", "611": "c", "652": "a", "692": "abc", "675": "abc",
}

# kW, kvar per phase
LOADS = {
    ("632", "a"): (17, 10), ("632", "b"): (66, 38), ("632", "c"): (117, 68),
    ("634", "a"): (160, 110), ("634", "b"): (120, 90), ("634", "c"): (120, 90),
    ("645", "b"): (170, 125),
    ("646", "b"): (115, 66), ("646", "c"): (115, 66),
    ("652", "a"): (128, 86),
    ("671", "a"): (385, 220), ("671", "b"): (385, 220), ("671", "c"): (385, 220),
    ("675", "a"): (485, 190), ("675", "b"): (68, 60), ("675", "c"): (290, 212),
    ("692", "c"): (170, 151),
    ("611", "c"): (170, 80),
}

# solar + battery sites: (bus, phase, solar kVA, battery kW)
DERS = [
    ("634", "a", 200, 100), ("634", "b", 200, 100), ("634", "c", 200, 100),
    ("675", "a", 300, 120), ("675", "b", 150, 80), ("675", "c", 300, 120),
    ("652", "a", 150, 80), ("611", "c", 150, 80),
    ("646", "b", 150, 80), ("646", "c", 150, 80),
    ("680", "a", 150, 80), ("680", "b", 150, 80), ("680", "c", 150, 80),
]

BASE_V = 2401.777  # 4.16 kV line-to-line
BASE_S = 1.0e6  # per phase


def feeder_13(name, slack_mag, load_scale):
    branches = []
    for k, (f, t, cfg, ft) in enumerate(LINES):
        phases, z = CONFIGS[cfg]
        z = np.array(z) * ft / 5280.0
        branches.append({
            "id": f"{f}-{t}", "from": f, "to": t, "phases": phases,
            "r": z.real.round(12).tolist(), "x": z.imag.round(12).tolist(),
            "s_max": [1.5e6] * len(phases),
        })
    ders = []
    for bus, ph, kva, kw in DERS:
        ders.append({
            "id": f"der{bus}{ph}", "bus": bus, "phase": ph,
            "battery": {"p_max": kw * 1e3, "h_max": 1.2 * kw * 1e3, "b_min": 0.1 * kw * 1e3,
                        "b_max": kw * 1e3, "b_init": 0.6 * kw * 1e3, "eta_c": 0.95, "eta_d": 0.95},
            "solar": {"g_max": kva * 1e3},
        })
    return {
        "format_version": FORMAT_VERSION,
        "name": name,
        "units": "si",
        "base_voltage": BASE_V,
        "base_power": BASE_S,
        "slack_bus": "650",
        "slack_voltage": {p: [slack_mag, a] for p, a in zip("abc", (0.0, -120.0, 120.0))},
        "buses": [{"id": b, "phases": ph, "v_min": 0.95, "v_max": 1.05} for b, ph in BUS_PHASES.items()],
        "branches": branches,
        "ders": ders,
        "_load_scale": load_scale,
    }


def series_13(n_steps, load_scale, solar_level, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps)
    demand, solar = {}, {}
    for (bus, ph), (kw, kvar) in LOADS.items():
        shape = 1.0 + 0.03 * np.sin(2 * np.pi * t / 45.0 + rng.uniform(0, 2 * np.pi))
        demand[(bus, ph)] = load_scale * (kw + 1j * kvar) * 1e3 / BASE_S * shape
    for bus, ph, kva, _ in DERS:
        shape = solar_level * (0.9 + 0.06 * np.cos(2 * np.pi * (t - 30) / 120.0))
        solar[(bus, ph)] = kva * 1e3 / BASE_S * shape
    return TimeSeries(1.0 / 60.0, demand, solar)


def write(doc, name):
    doc = {k: v for k, v in doc.items() if not k.startswith("_")}
    (DATA / name).write_text(json.dumps(doc, indent=1) + "\n")


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    two = {
        "format_version": FORMAT_VERSION,
        "name": "2bus",
        "units": "pu",
        "base_voltage": BASE_V,
        "base_power": BASE_S,
        "slack_bus": "1",
        "slack_voltage": {"a": [1.0, 0.0]},
        "buses": [{"id": "1", "phases": "a", "v_min": 0.95, "v_max": 1.05},
                  {"id": "2", "phases": "a", "v_min": 0.95, "v_max": 1.05}],
        "branches": [{"id": "1-2", "from": "1", "to": "2", "phases": "a",
                      "r": [[0.01]], "x": [[0.02]], "s_max": [2.0]}],
        "ders": [{"id": "der2a", "bus": "2", "phase": "a",
                  "battery": {"p_max": 0.2, "h_max": 0.25, "b_min": 0.02, "b_max": 0.2, "b_init": 0.1,
                              "eta_c": 0.95, "eta_d": 0.95},
                  "solar": {"g_max": 0.3}}],
    }
    write(two, "feeder_2bus.json")
    n = 120
    t = np.arange(n)
    save_series(
        TimeSeries(1.0 / 60.0,
                   {("2", "a"): (0.5 + 0.1j) * (1.0 + 0.02 * np.sin(2 * np.pi * t / 60.0))},
                   {("2", "a"): 0.2 * (0.95 + 0.05 * np.cos(2 * np.pi * t / 120.0))}),
        DATA / "series_2bus.csv",
    )
    write(feeder_13("ieee13", 1.04, 1.0), "feeder_13bus.json")
    save_series(series_13(n, 1.0, 0.8, 13), DATA / "series_13bus.csv")
    # weak source and heavier loads: the minimum-voltage limit binds at the loss-optimal dispatch
    write(feeder_13("ieee13-stressed", 1.0, 1.3), "feeder_13bus_stressed.json")
    save_series(series_13(n, 1.3, 0.8, 13), DATA / "series_13bus_stressed.csv")
    uncertainty = {
        "format_version": FORMAT_VERSION,
        "family": "uniform",
        "refresh_period": 30,
        "growth": [[0, 0.02], [30, 0.30], [60, 0.58]],
        "demand_ratio": 0.2,
        "correlation": None,
        "seed": 7,
    }
    (DATA / "uncertainty_default.json").write_text(json.dumps(uncertainty, indent=1) + "\n")


if __name__ == "__main__":
    main()
