import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_dispatch.errors import ConfigError
from robust_dispatch.recovery import recover, recover_all
from robust_dispatch.socp import solve_socp
from robust_dispatch.tightening import (
    RobustConfig,
    SensitivityMatrix,
    TightenedBounds,
    bounds_rows,
    compute_sensitivities,
    finite_difference_sensitivities,
    margins,
    safety_factor,
    tighten,
    uncertainty_margin,
)
from robust_dispatch.uncertainty import UncertainInjection, UncertaintyConfig, UncertaintyModel

from conftest import constant_series
from oracles import gaussian_factor

ALL_FAMILIES = RobustConfig(tighten_voltage=True, tighten_lines=True, tighten_solar=True)


def relative_error(a, b):
    scale = max(np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / scale


@pytest.fixture(scope="module")
def ieee13_anchor(ieee13):
    model, series = ieee13
    window = series.window(0, 12)
    socp = solve_socp(model, window)
    modelU = UncertaintyConfig().build(model, series)
    return model, modelU, recover_all(model, socp)


class TestSafetyFactor:
    def test_unimodal_value(self):
        assert safety_factor("unimodal", 0.10) == pytest.approx(1.8478, abs=1e-4)

    def test_chebyshev_value(self):
        assert safety_factor("chebyshev", 0.10) == pytest.approx(3.0, abs=1e-12)

    def test_gaussian_matches_scipy(self):
        assert safety_factor("gaussian", 0.05) == pytest.approx(gaussian_factor(0.05), abs=1e-9)
        assert safety_factor("gaussian", 0.05) == pytest.approx(1.6449, abs=1e-4)

    @pytest.mark.parametrize("alpha", [0.0, 0.5, -0.1, 0.7])
    def test_domain(self, alpha):
        with pytest.raises(ConfigError):
            safety_factor("unimodal", alpha)

    def test_unknown_distribution(self):
        with pytest.raises(ConfigError):
            safety_factor("laplace", 0.1)

    @settings(max_examples=60)
    @given(st.floats(0.01, 0.49))
    def test_ordering(self, alpha):
        g, u, c = (safety_factor(d, alpha) for d in ("gaussian", "unimodal", "chebyshev"))
        assert g <= u <= c

    def test_robust_config_rejects_alpha(self):
        with pytest.raises(ConfigError):
            RobustConfig(alpha_v=0.6)


class TestMargin:
    def test_hand_value(self):
        lam = uncertainty_margin([0.5, -0.2], np.diag([0.04, 0.01]), 1.8478)
        assert lam == pytest.approx(np.hypot(0.1, -0.02) * 1.8478, rel=1e-12)
        assert lam == pytest.approx(0.188439, abs=1e-6)

    def test_zero_covariance(self):
        assert uncertainty_margin([0.5, -0.2], np.zeros((2, 2)), 1.8478) == 0.0

    def test_zero_factor(self):
        assert uncertainty_margin([0.5, -0.2], np.diag([0.04, 0.01]), 0.0) == 0.0

    def test_block_matches_rows(self):
        G = np.array([[0.5, -0.2], [0.1, 0.3]])
        S = np.array([[0.04, 0.01], [0.01, 0.02]])
        block = uncertainty_margin(G, S, 2.0)
        assert block == pytest.approx([uncertainty_margin(g, S, 2.0) for g in G])
        root = np.linalg.cholesky(S)
        assert block == pytest.approx(2.0 * np.linalg.norm(G @ root, axis=1))

    @settings(max_examples=50)
    @given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3),
           st.floats(0, 10))
    def test_homogeneous_in_std(self, gamma, std, c):
        base = uncertainty_margin(gamma, np.diag(np.square(std)), 1.5)
        scaled = uncertainty_margin(gamma, np.diag(np.square(np.multiply(std, c))), 1.5)
        assert scaled == pytest.approx(c * base, rel=1e-9, abs=1e-12)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3),
           st.lists(st.floats(0, 1), min_size=3, max_size=3))
    def test_monotone_in_diagonal(self, gamma, var, extra):
        small = uncertainty_margin(gamma, np.diag(var), 1.5)
        large = uncertainty_margin(gamma, np.diag(np.add(var, extra)), 1.5)
        assert large >= small - 1e-12


class TestSensitivities:
    def test_matches_finite_differences(self, ieee13_anchor):
        model, modelU, points = ieee13_anchor
        for point in (points[0], points[-1]):
            an = compute_sensitivities(model, point, modelU)
            fd = finite_difference_sensitivities(model, point, modelU, step=1e-4)
            assert relative_error(an.voltage, fd.voltage) < 1e-3
            assert relative_error(an.line, fd.line) < 1e-3
            assert relative_error(an.solar, fd.solar) < 1e-3

    def test_two_bus_flat_slope(self, two_bus):
        model, _ = two_bus
        socp = solve_socp(model, constant_series({("2", "a"): 0.0}, {("2", "a"): 0.0}))
        point = recover(model, socp, 0)
        modelU = UncertaintyModel((UncertainInjection("2", "a", "solar", 0.1),))
        sens = compute_sensitivities(model, point, modelU)
        assert sens.voltage[0, 0] == pytest.approx(0.02, abs=1e-5)

    def test_slack_injection_has_no_effect(self, ieee13_anchor):
        model, _, points = ieee13_anchor
        modelU = UncertaintyModel((UncertainInjection(model.slack_bus, "a", "demand", 0.1),))
        sens = compute_sensitivities(model, points[0], modelU)
        assert not np.any(sens.stacked)

    def test_row_registry(self, ieee13_anchor):
        model, modelU, points = ieee13_anchor
        sens = compute_sensitivities(model, points[0], modelU)
        topo = model.topology
        n_lines = int(np.isfinite(model.s_max_flat).sum())
        assert sens.stacked.shape == (len(topo.ns) + n_lines + len(model.solars), modelU.n)

    def test_solar_row_uses_power_factor(self, ieee13_anchor):
        model, modelU, points = ieee13_anchor
        p = points[0]
        sens = compute_sensitivities(model, p, modelU)
        k = [i for i, inj in enumerate(modelU.injections) if inj.quantity == "solar"][0]
        j = 0
        assert sens.solar[j, k] == pytest.approx(p.p_s[j] / np.hypot(p.p_s[j], p.q_s[j]))


class TestLineFallback:
    def test_zero_flow_uses_component_norm(self, two_bus):
        model, _ = two_bus
        sens = SensitivityMatrix(
            voltage=np.zeros((1, 1)),
            line=np.zeros((1, 1)),
            line_complex=np.array([[0.3 + 0.4j]]),
            line_magnitude=np.zeros(1),
            line_rows=np.array([0]),
            solar=np.zeros((1, 1)),
            solar_magnitude=np.zeros(1),
        )
        _, lam_l, _ = margins(model, sens, np.array([[0.04]]), ALL_FAMILIES)
        assert lam_l[0] == pytest.approx(safety_factor("unimodal", 0.1) * 0.5 * 0.2)

    def test_voltage_only_by_default(self, ieee13_anchor):
        model, modelU, points = ieee13_anchor
        bounds = tighten(model, points[:2], modelU, RobustConfig(), t0=10)
        assert np.any(bounds.lam_v > 0)
        assert not np.any(bounds.lam_l) and not np.any(bounds.lam_s)
        every = tighten(model, points[:2], modelU, ALL_FAMILIES, t0=10)
        assert np.any(every.lam_l > 0) and np.any(every.lam_s > 0)


class TestTighten:
    def test_zero_uncertainty_gives_nominal(self, ieee13_anchor):
        model, modelU, points = ieee13_anchor
        bounds = tighten(model, points, modelU.scaled(0.0), ALL_FAMILIES)
        nominal = TightenedBounds.nominal(model, len(points))
        for name in ("v_lower", "v_upper", "line_upper", "solar_upper"):
            assert np.array_equal(getattr(bounds, name), getattr(nominal, name))

    def test_margins_grow_then_reset(self, ieee13_anchor):
        model, modelU, points = ieee13_anchor
        bounds = tighten(model, points, modelU, t0=22)
        lead = bounds.leads
        assert list(lead) == [22, 23, 24, 25, 26, 27, 28, 29, 0, 1, 2, 3]
        worst = bounds.lam_v.max(axis=1)
        assert np.all(np.diff(worst[:8]) > 0)
        assert worst[8] < worst[7]
        assert np.all(np.diff(worst[8:]) > 0)

    def test_bounds_move_inward(self, ieee13_anchor):
        model, modelU, points = ieee13_anchor
        b = tighten(model, points, modelU, ALL_FAMILIES, t0=5)
        vmin2 = model.v_min_flat[model.topology.ns] ** 2
        assert np.all(b.v_lower >= vmin2) and np.all(b.v_upper <= model.v_max_flat[model.topology.ns] ** 2)
        np.testing.assert_allclose(b.v_lower - vmin2, b.lam_v)

    def test_extreme_uncertainty_flags_crossing(self, ieee13_anchor, caplog):
        model, modelU, points = ieee13_anchor
        with caplog.at_level(logging.WARNING, logger="robust_dispatch.tightening"):
            b = tighten(model, points[:1], modelU.scaled(50.0), t0=29)
        assert b.over_tight.any()
        assert "crossing" in caplog.text

    def test_bounds_rows(self, ieee13_anchor):
        model, modelU, points = ieee13_anchor
        b = tighten(model, points[:2], modelU, t0=4)
        rows = list(bounds_rows(model, b, t0=4))
        families = [r[2] for r in rows]
        n_lines = int(np.isfinite(model.s_max_flat).sum())
        per_step = len(model.topology.ns) + n_lines + len(model.solars)
        assert len(rows) == 2 * per_step
        assert families[: len(model.topology.ns)] == ["voltage"] * len(model.topology.ns)
        assert rows[0][0] == 4 and rows[-1][0] == 5
