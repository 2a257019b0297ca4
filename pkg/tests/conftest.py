import numpy as np
import pytest

from robust_dispatch.feeder import FORMAT_VERSION, TimeSeries, model_from_dict
from robust_dispatch.fixtures import builtin


def feeder_doc(buses, branches, ders=(), slack="0", slack_voltage=None, name="test"):
    """Minimal per-unit feeder document.

    ``buses`` is a list of (id, phases); ``branches`` a list of
    (id, from, to, phases, z) with z a complex k x k array or scalar.
    """
    out_br = []
    for bid, f, t, ph, z in branches:
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        out_br.append({"id": bid, "from": f, "to": t, "phases": ph, "r": z.real.tolist(), "x": z.imag.tolist(),
                       "s_max": [10.0] * len(ph)})
    return {
        "format_version": FORMAT_VERSION,
        "name": name,
        "units": "pu",
        "base_voltage": 2400.0,
        "base_power": 1e6,
        "slack_bus": slack,
        "slack_voltage": slack_voltage or {},
        "buses": [{"id": b, "phases": ph} for b, ph in buses],
        "branches": out_br,
        "ders": list(ders),
    }


def battery_der(der_id, bus, phase, p_max=0.2, h_max=0.25, b=(0.02, 0.2, 0.1), solar=0.3):
    d = {"id": der_id, "bus": bus, "phase": phase,
         "battery": {"p_max": p_max, "h_max": h_max, "b_min": b[0], "b_max": b[1], "b_init": b[2],
                     "eta_c": 0.95, "eta_d": 0.95}}
    if solar:
        d["solar"] = {"g_max": solar}
    return d


def constant_series(demand, solar=None, steps=1, dt=1.0 / 60.0):
    return TimeSeries(
        dt,
        {k: np.full(steps, v, dtype=complex) for k, v in demand.items()},
        {k: np.full(steps, v, dtype=float) for k, v in (solar or {}).items()},
    )


Z3 = np.array([[0.02 + 0.04j, 0.005 + 0.01j, 0.005 + 0.01j],
               [0.005 + 0.01j, 0.02 + 0.04j, 0.005 + 0.01j],
               [0.005 + 0.01j, 0.005 + 0.01j, 0.02 + 0.04j]])


@pytest.fixture(scope="session")
def two_bus():
    return builtin("2bus")


@pytest.fixture(scope="session")
def ieee13():
    return builtin("13bus")


@pytest.fixture(scope="session")
def ieee13_stressed():
    return builtin("13bus-stressed")


@pytest.fixture
def balanced_three_phase():
    doc = feeder_doc([("0", "abc"), ("1", "abc"), ("2", "abc")],
                     [("l1", "0", "1", "abc", Z3), ("l2", "1", "2", "abc", 0.5 * Z3)])
    return model_from_dict(doc)
