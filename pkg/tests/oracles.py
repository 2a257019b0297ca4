"""Independent reference computations used by the tests.

None of these reuse the package's sweep, linearization or conic code.
"""

import math

import networkx as nx
import numpy as np
from scipy.optimize import fsolve
from scipy.stats import norm


def two_bus_receiving_voltage(z: complex, load: complex, v_send: float = 1.0) -> float:
    """|V2| for a single line feeding a constant-power load, from the closed-form quartic.

    With W = |V2|^2: W^2 + (2 (rP + xQ) - |V1|^2) W + |z|^2 |S|^2 = 0, high-voltage root.
    """
    r, x = z.real, z.imag
    p, q = load.real, load.imag
    b = 2 * (r * p + x * q) - v_send**2
    c = abs(z) ** 2 * abs(load) ** 2
    w = (-b + math.sqrt(b * b - 4 * c)) / 2
    return math.sqrt(w)


def two_bus_hand_sweep(z: complex, load: complex, sweeps: int = 2):
    """The forward/backward iterations written out by hand, for docs and tests."""
    v2 = 1.0 + 0j
    out = []
    for _ in range(sweeps):
        i = np.conj(load / v2)
        v2 = 1.0 - z * i
        out.append((i, v2))
    return out


def nodal_loadflow(model, s_net):
    """Solve V * conj(Y V) = s on non-slack bus-phases with a generic root finder."""
    topo = model.topology
    n = topo.n_bp
    Y = np.zeros((n, n), dtype=complex)
    for li, br in enumerate(model.branches):
        yb = np.linalg.inv(br.z)
        up = topo.bus_idx[topo.up[li]][topo.pos_up[li]]
        dn_bus = topo.down[li]
        dn = np.array([topo.bp_index[(dn_bus, p)] for p in br.phases])
        Y[np.ix_(up, up)] += yb
        Y[np.ix_(dn, dn)] += yb
        Y[np.ix_(up, dn)] -= yb
        Y[np.ix_(dn, up)] -= yb
    vs = model.slack_voltage
    ns = np.arange(topo.n_slack, n)
    v0 = np.concatenate([vs, np.zeros(len(ns), dtype=complex)])
    # flat start: each bus-phase at the slack angle of its phase
    slack_phases = topo.bus_phases[model.slack_bus]
    for a in ns:
        p = topo.bp[a][1]
        v0[a] = vs[slack_phases.index(p)]

    def residual(x):
        v = v0.copy()
        v[ns] = x[: len(ns)] + 1j * x[len(ns):]
        r = v * np.conj(Y @ v) - s_net
        return np.concatenate([r[ns].real, r[ns].imag])

    x0 = np.concatenate([v0[ns].real, v0[ns].imag])
    x, info, ok, msg = fsolve(residual, x0, full_output=True, xtol=1e-13)
    assert ok == 1, msg
    v = v0.copy()
    v[ns] = x[: len(ns)] + 1j * x[len(ns):]
    return v


def bfs_depths(doc) -> dict:
    g = nx.Graph()
    g.add_nodes_from(b["id"] for b in doc["buses"])
    g.add_edges_from((br["from"], br["to"]) for br in doc["branches"])
    return dict(nx.single_source_shortest_path_length(g, doc["slack_bus"]))


def gaussian_factor(alpha):
    return float(norm.ppf(1 - alpha))


def one_sided_unimodal_bound(alpha):
    return math.sqrt(4.0 / (9.0 * alpha) - 1.0)


def soc_by_hand(b, eta_c, eta_d, p_c, p_d, dt):
    return b + eta_c * p_c * dt - p_d * dt / eta_d
