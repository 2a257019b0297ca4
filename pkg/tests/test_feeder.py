import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_dispatch.errors import DisconnectedGraphError, FeederParseError, FeederValidationError
from robust_dispatch.feeder import (
    TimeSeries,
    check_series,
    load_feeder,
    load_series,
    model_from_dict,
    save_feeder,
    save_series,
    validate_radial,
)
from robust_dispatch.fixtures import BUILTIN, data_path

from conftest import battery_der, feeder_doc
from oracles import bfs_depths


class TestLoading:
    def test_two_bus_counts(self, two_bus):
        model, _ = two_bus
        assert len(model.buses) == 2
        assert len(model.branches) == 1

    def test_cycle_is_not_radial(self):
        doc = feeder_doc([("0", "a"), ("1", "a"), ("2", "a")],
                         [("x", "0", "1", "a", 0.01j), ("y", "1", "2", "a", 0.01j), ("z", "2", "0", "a", 0.01j)])
        with pytest.raises(FeederValidationError, match="not radial"):
            model_from_dict(doc)

    def test_ieee13_shape(self, ieee13):
        model, _ = ieee13
        assert len(model.branches) == 12
        assert {len(br.phases) for br in model.branches} == {1, 2, 3}

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(FeederParseError):
            load_feeder(p)

    def test_missing_key(self):
        doc = feeder_doc([("0", "a"), ("1", "a")], [("l", "0", "1", "a", 0.01j)])
        del doc["slack_bus"]
        with pytest.raises(FeederParseError):
            model_from_dict(doc)

    def test_wrong_version(self):
        doc = feeder_doc([("0", "a"), ("1", "a")], [("l", "0", "1", "a", 0.01j)])
        doc["format_version"] = 99
        with pytest.raises(FeederParseError, match="format_version"):
            model_from_dict(doc)


class TestValidation:
    def test_phase_mismatch_names_branch(self):
        doc = feeder_doc([("0", "abc"), ("1", "a")], [("l1", "0", "1", "b", 0.01j)])
        with pytest.raises(FeederValidationError, match="l1"):
            model_from_dict(doc)

    def test_bus_phases_must_match_supplying_branch(self):
        doc = feeder_doc([("0", "abc"), ("1", "ab")], [("l1", "0", "1", "a", 0.01j)])
        with pytest.raises(FeederValidationError, match="bus 1"):
            model_from_dict(doc)

    def test_bad_battery_bounds(self):
        der = battery_der("d", "1", "a", b=(0.1, 0.2, 0.05))
        doc = feeder_doc([("0", "a"), ("1", "a")], [("l", "0", "1", "a", 0.01j)], [der])
        with pytest.raises(FeederValidationError, match="b_min"):
            model_from_dict(doc)

    def test_der_at_slack_rejected(self):
        doc = feeder_doc([("0", "a"), ("1", "a")], [("l", "0", "1", "a", 0.01j)], [battery_der("d", "0", "a")])
        with pytest.raises(FeederValidationError, match="slack"):
            model_from_dict(doc)

    def test_second_solar_on_same_phase_rejected(self):
        ders = [battery_der("d1", "1", "a"), battery_der("d2", "1", "a")]
        doc = feeder_doc([("0", "a"), ("1", "a")], [("l", "0", "1", "a", 0.01j)], ders)
        with pytest.raises(FeederValidationError, match="second solar"):
            model_from_dict(doc)

    def test_disconnected_lists_unreachable(self):
        # right branch count, but bus 3 hangs off a cycle-free island
        doc = feeder_doc([("0", "a"), ("1", "a"), ("2", "a"), ("3", "a")],
                         [("x", "0", "1", "a", 0.01j), ("y", "2", "3", "a", 0.01j), ("z", "3", "2", "a", 0.02j)])
        with pytest.raises(DisconnectedGraphError) as err:
            model_from_dict(doc)
        assert "2" in str(err.value) and "3" in str(err.value)

    def test_asymmetric_impedance_rejected(self):
        z = np.array([[0.01, 0.002], [0.003, 0.01]]) * (1 + 2j)
        doc = feeder_doc([("0", "ab"), ("1", "ab")], [("l", "0", "1", "ab", z)])
        with pytest.raises(FeederValidationError, match="symmetric"):
            model_from_dict(doc)


class TestTopology:
    def test_two_bus_depths(self, two_bus):
        model, _ = two_bus
        assert validate_radial(model).depth == {"1": 0, "2": 1}

    def test_star_leaves_at_depth_one(self):
        doc = feeder_doc([("0", "a")] + [(str(k), "a") for k in range(1, 5)],
                         [(f"l{k}", "0", str(k), "a", 0.01j) for k in range(1, 5)])
        depth = validate_radial(model_from_dict(doc)).depth
        assert all(depth[str(k)] == 1 for k in range(1, 5))

    def test_ieee13_depths_match_graph_traversal(self, ieee13):
        model, _ = ieee13
        doc = json.loads(data_path(BUILTIN["13bus"][0]).read_text())
        assert validate_radial(model).depth == bfs_depths(doc)

    def test_ieee13_depths_by_hand(self, ieee13):
        model, _ = ieee13
        expected = {"650": 0, "632": 1, "633": 2, "645": 2, "671": 2, "634": 3, "646": 3,
                    "680": 3, "684": 3, "692": 3, "611": 4, "652": 4, "675": 4}
        assert validate_radial(model).depth == expected

    def test_reversed_branch_is_reoriented(self):
        doc = feeder_doc([("0", "a"), ("1", "a"), ("2", "a")],
                         [("x", "1", "0", "a", 0.01j), ("y", "2", "1", "a", 0.01j)])
        topo = validate_radial(model_from_dict(doc))
        assert topo.depth == {"0": 0, "1": 1, "2": 2}
        assert [topo.up[k] for k in range(2)] == ["0", "1"]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(min_value=0, max_value=10_000), min_size=1, max_size=12), st.data())
    def test_random_trees_validate_and_extra_edge_fails(self, picks, data):
        n = len(picks) + 1
        parents = [p % (k + 1) for k, p in enumerate(picks)]
        buses = [(str(k), "a") for k in range(n)]
        branches = [(f"l{k + 1}", str(parents[k]), str(k + 1), "a", 0.01 + 0.02j) for k in range(n - 1)]
        topo = validate_radial(model_from_dict(feeder_doc(buses, branches)))
        assert sorted(topo.order) == sorted(b for b, _ in buses)
        for k in range(1, n):
            assert topo.depth[str(k)] == topo.depth[str(parents[k - 1])] + 1
        a = data.draw(st.integers(0, n - 1))
        b = data.draw(st.integers(0, n - 1).filter(lambda v: v != a))
        with pytest.raises(FeederValidationError):
            model_from_dict(feeder_doc(buses, branches + [("extra", str(a), str(b), "a", 0.01j)]))


class TestRoundTrip:
    @pytest.mark.parametrize("name", sorted(BUILTIN))
    @pytest.mark.parametrize("units", ["pu", "si"])
    def test_feeder_round_trip(self, tmp_path, name, units):
        model = load_feeder(data_path(BUILTIN[name][0]))
        path = tmp_path / "f.json"
        save_feeder(model, path, units=units)
        back = load_feeder(path)
        if units == "pu":
            assert back == model
        for a, b in zip(model.branches, back.branches):
            np.testing.assert_allclose(b.z, a.z, rtol=1e-12, atol=0)

    def test_si_values_recovered(self, tmp_path, ieee13):
        model, _ = ieee13
        raw = json.loads(data_path(BUILTIN["13bus"][0]).read_text())
        path = tmp_path / "f.json"
        save_feeder(model, path, units="si")
        out = json.loads(path.read_text())
        for a, b in zip(raw["branches"], out["branches"]):
            np.testing.assert_allclose(b["r"], a["r"], rtol=1e-12)
            np.testing.assert_allclose(b["x"], a["x"], rtol=1e-12)
        for a, b in zip(raw["ders"], out["ders"]):
            for key in ("p_max", "h_max", "b_min", "b_max", "b_init"):
                assert b["battery"][key] == pytest.approx(a["battery"][key], rel=1e-12)

    def test_series_round_trip(self, tmp_path, ieee13):
        _, series = ieee13
        path = tmp_path / "s.csv"
        save_series(series, path)
        assert load_series(path) == series

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8),
           st.floats(0.001, 2.0))
    def test_series_round_trip_property(self, tmp_path_factory, values, dt):
        v = np.array(values)
        series = TimeSeries(dt, {("1", "a"): v + 0.5j * v[::-1]}, {("1", "a"): np.abs(v)})
        path = tmp_path_factory.mktemp("s") / "s.csv"
        save_series(series, path)
        assert load_series(path) == series


class TestSeries:
    def test_window_holds_last_value(self, two_bus):
        _, series = two_bus
        w = series.window(series.horizon - 2, 5)
        d = w.demand[("2", "a")]
        assert w.horizon == 5
        assert np.all(d[1:] == series.demand[("2", "a")][-1])

    def test_unequal_lengths_rejected(self):
        with pytest.raises(FeederValidationError, match="lengths"):
            TimeSeries(1.0, {("1", "a"): np.zeros(3)}, {("1", "a"): np.zeros(4)})

    def test_unknown_bus_phase(self, two_bus):
        model, _ = two_bus
        with pytest.raises(FeederValidationError, match="unknown"):
            check_series(model, TimeSeries(1.0, {("2", "b"): np.ones(2)}, {}))

    def test_solar_without_inverter(self, ieee13):
        model, _ = ieee13
        with pytest.raises(FeederValidationError, match="no solar"):
            check_series(model, TimeSeries(1.0, {}, {("633", "a"): np.ones(2)}))
