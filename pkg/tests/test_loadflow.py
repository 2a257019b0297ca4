import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_dispatch.errors import LoadFlowDivergedError, VoltageCollapseError
from robust_dispatch.feeder import model_from_dict
from robust_dispatch.loadflow import (
    NetworkState,
    compute_losses,
    linearize,
    power_mismatch,
    rank1_gap,
    solve_loadflow,
)

from conftest import Z3, feeder_doc
from oracles import nodal_loadflow, two_bus_hand_sweep, two_bus_receiving_voltage

LOAD = 0.5 + 0.1j
Z = 0.01 + 0.02j


def demand_injection(model, series, t=0):
    return -series.demand_matrix(model)[t]


def energy_balance(result):
    """Slack import plus net bus injections, i.e. what the branches must dissipate."""
    topo = result.model.topology
    return result.slack_power.real + result.s_net[..., topo.n_slack:].real.sum(axis=-1)


class TestTwoBus:
    def test_receiving_voltage_matches_closed_form(self, two_bus):
        model, _ = two_bus
        res = solve_loadflow(model, np.array([0.0, -LOAD]))
        oracle = two_bus_receiving_voltage(Z, LOAD)
        assert oracle == pytest.approx(0.99290893, abs=1e-8)
        assert abs(abs(res.v[1]) - oracle) < 1e-10

    def test_hand_sweep_approaches_solution(self, two_bus):
        model, _ = two_bus
        res = solve_loadflow(model, np.array([0.0, -LOAD]))
        (i1, v1), (i2, v2) = two_bus_hand_sweep(Z, LOAD, 2)
        assert i1 == pytest.approx(0.5 - 0.1j)
        assert v1 == pytest.approx(0.993 - 0.009j)
        assert abs(v2 - res.v[1]) < 1e-4
        assert abs(v2 - res.v[1]) < abs(v1 - res.v[1])

    def test_losses_match_current_magnitude(self, two_bus):
        model, _ = two_bus
        res = solve_loadflow(model, np.array([0.0, -LOAD]))
        i_mag = abs(LOAD) / two_bus_receiving_voltage(Z, LOAD)
        assert i_mag == pytest.approx(0.5135, abs=1e-4)
        assert float(res.losses) == pytest.approx(Z.real * i_mag**2, rel=1e-9)
        assert compute_losses(res.state()) == pytest.approx(float(res.losses), rel=1e-12)
        assert float(res.losses) == pytest.approx(0.002637, abs=2e-6)

    def test_voltage_collapse(self, two_bus):
        model, _ = two_bus
        with pytest.raises(VoltageCollapseError):
            solve_loadflow(model, np.array([0.0, -30.0 - 10.0j]))

    def test_divergence_reports_mismatch(self, two_bus):
        model, _ = two_bus
        with pytest.raises(LoadFlowDivergedError) as err:
            solve_loadflow(model, np.array([0.0, -LOAD]), max_sweeps=2)
        assert "mismatch" in str(err.value)


class TestAgainstNodalSolver:
    @pytest.mark.parametrize("fixture", ["ieee13", "ieee13_stressed"])
    def test_voltages_match_root_finder(self, request, fixture):
        model, series = request.getfixturevalue(fixture)
        s = demand_injection(model, series)
        res = solve_loadflow(model, s)
        ref = nodal_loadflow(model, s)
        assert np.max(np.abs(res.v - ref)) < 1e-6

    def test_with_solar_injection(self, ieee13):
        model, series = ieee13
        s = demand_injection(model, series, 10)
        topo = model.topology
        for d in model.solars:
            s[topo.bp_index[(d.bus, d.phase)]] += series.solar[(d.bus, d.phase)][10]
        res = solve_loadflow(model, s)
        assert np.max(np.abs(res.v - nodal_loadflow(model, s))) < 1e-6


class TestInvariants:
    @pytest.mark.parametrize("name", ["two_bus", "ieee13", "ieee13_stressed"])
    def test_mismatch_small(self, request, name):
        model, series = request.getfixturevalue(name)
        res = solve_loadflow(model, demand_injection(model, series))
        assert res.mismatch < 1e-8
        assert power_mismatch(res) == pytest.approx(res.mismatch)

    def test_zero_injection_flat(self, ieee13):
        model, _ = ieee13
        a = np.exp(-2j * np.pi / 3)
        res = solve_loadflow(model, np.zeros(model.topology.n_bp, dtype=complex), slack_voltage=[1.0, a, a**2])
        np.testing.assert_allclose(np.abs(res.v), 1.0, atol=1e-14)
        assert np.all(res.i == 0)
        assert compute_losses(res.state()) == 0.0

    @pytest.mark.parametrize("name", ["ieee13", "ieee13_stressed"])
    def test_energy_balance(self, request, name):
        model, series = request.getfixturevalue(name)
        res = solve_loadflow(model, demand_injection(model, series))
        assert compute_losses(res.state()) == pytest.approx(energy_balance(res), abs=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(-0.3, 0.3), st.floats(-0.2, 0.2)), min_size=6, max_size=6))
    def test_energy_balance_random_injections(self, pq):
        doc = feeder_doc([("0", "abc"), ("1", "abc"), ("2", "abc")],
                         [("l1", "0", "1", "abc", Z3), ("l2", "1", "2", "abc", 0.5 * Z3)])
        model = model_from_dict(doc)
        s = np.zeros(9, dtype=complex)
        s[3:] = [p + 1j * q for p, q in pq]
        res = solve_loadflow(model, s)
        state = res.state()
        assert compute_losses(state) == pytest.approx(float(energy_balance(res)), abs=1e-9)
        assert rank1_gap(state) < 1e-12

    def test_batched_matches_single(self, ieee13):
        model, series = ieee13
        s = -series.demand_matrix(model)[:4]
        batch = solve_loadflow(model, s)
        for t in range(4):
            single = solve_loadflow(model, s[t])
            np.testing.assert_allclose(batch.v[t], single.v, atol=1e-12)

    def test_balanced_feeder_symmetric(self, balanced_three_phase):
        a = np.exp(-2j * np.pi / 3)
        load = 0.1 + 0.03j
        s = np.zeros(9, dtype=complex)
        s[3:] = -load
        model = balanced_three_phase
        res = solve_loadflow(model, s, slack_voltage=[1.0, a, a**2])
        mags = np.abs(res.v).reshape(3, 3)
        assert np.ptp(mags, axis=1).max() < 1e-12


class TestRankOneGap:
    def _state(self, model, W, I, S):
        branches = [br.id for br in model.branches]
        return NetworkState(model, {b: W for b in ("0", "1", "2")}, dict.fromkeys(branches, I), dict.fromkeys(branches, S))

    def test_outer_product_has_zero_gap(self, balanced_three_phase):
        v = np.array([1.0, np.exp(-2j), 0.98 * np.exp(2j)])
        i = np.array([0.2 - 0.1j, 0.1j, -0.05])
        state = self._state(balanced_three_phase, np.outer(v, v.conj()), np.outer(i, i.conj()), np.outer(v, i.conj()))
        assert rank1_gap(state) < 1e-15

    def test_identity_gap_quarter(self, balanced_three_phase):
        zero = np.zeros((3, 3), dtype=complex)
        state = self._state(balanced_three_phase, np.eye(3, dtype=complex), zero, zero)
        assert rank1_gap(state) == pytest.approx(0.25)

    def test_loadflow_states_rank_one(self, ieee13):
        model, series = ieee13
        res = solve_loadflow(model, demand_injection(model, series))
        assert rank1_gap(res.state()) < 1e-12


class TestLinearization:
    def test_two_bus_no_load_slope(self, two_bus):
        # d|V2|^2 / dP2 at flat voltage is 2 r
        model, _ = two_bus
        lin = linearize(solve_loadflow(model, np.zeros(2, dtype=complex)))
        assert lin.squared_voltage(np.array([[1.0]]))[0, 0] == pytest.approx(0.02, abs=1e-12)
        assert lin.squared_voltage(np.array([[1.0j]]))[0, 0] == pytest.approx(0.04, abs=1e-12)

    def test_matches_finite_differences(self, ieee13):
        model, series = ieee13
        s = demand_injection(model, series)
        lin = linearize(solve_loadflow(model, s))
        n_ns = len(model.topology.ns)
        rng = np.random.default_rng(3)
        ds = (rng.standard_normal(n_ns) + 1j * rng.standard_normal(n_ns)) * 0.01
        h = 1e-4
        plus = np.zeros_like(s)
        plus[model.topology.ns] = ds
        vp = solve_loadflow(model, s + h * plus)
        vm = solve_loadflow(model, s - h * plus)
        fd_v = (vp.v - vm.v)[model.topology.ns] / (2 * h)
        np.testing.assert_allclose(lin.voltage(ds)[:, 0], fd_v, atol=1e-8)
        fd_loss = (vp.losses - vm.losses) / (2 * h)
        assert lin.losses(ds)[0] == pytest.approx(fd_loss, rel=1e-6)
        fd_flow = (vp.branch_flows - vm.branch_flows) / (2 * h)
        np.testing.assert_allclose(lin.branch_flow(ds)[:, 0], fd_flow, atol=1e-8)
