"""Thermal network: exact discretization, fixed points, throttling flags.

The single-node oracle is the scalar RC closed form computed inline with
math.exp; the multi-node checks lean on structural properties (fixed
point, monotone decay, symmetry, linearity) plus a brute-force fine
integrator.
"""

import math

import numpy as np
import pytest

from pimsched.arch import Chiplet, Link, PimType, SystemGraph, desk_mesh
from pimsched.errors import ConfigError, FormatError, InvariantError
from pimsched.thermal import (
    ThermalConfig,
    ThermalModel,
    load_thermal_file,
    throttle_update,
    write_thermal_file,
)


def one_node():
    return SystemGraph([Chiplet(0, PimType.STANDARD, 0, 0, 4.0, 8, 8)], [])


def test_single_node_matches_scalar_rc_closed_form():
    # C = 0.05*4 = 0.2 J/K, G = 0.02*4 = 0.08 W/K, tau = 2.5 s
    model = ThermalModel(one_node(), ThermalConfig(dt_s=0.1))
    a = math.exp(-0.1 * 0.08 / 0.2)
    assert model.A[0, 0] == pytest.approx(a, abs=1e-15)
    assert model.B[0, 0] == pytest.approx((1 - a) / 0.08, abs=1e-15)
    t = np.array([310.0])
    p = np.array([3.0])
    expect = a * (310.0 - 298.0) + (1 - a) * 3.0 / 0.08 + 298.0
    assert model.step(t, p)[0] == pytest.approx(expect, abs=1e-12)


def test_single_node_steady_state_is_power_over_conductance():
    model = ThermalModel(one_node(), ThermalConfig(dt_s=0.1))
    ss = model.steady_state(np.array([3.0]))
    assert ss[0] == pytest.approx(298.0 + 3.0 / 0.08, abs=1e-9)  # 335.5 K


def test_zero_power_decay_is_monotone_to_ambient():
    model = ThermalModel(desk_mesh(), ThermalConfig(dt_s=0.1))
    n = model.n_nodes
    temps = np.full(n, 400.0)
    zero = np.zeros(n)
    for _ in range(200):  # 20 s = 8 tau
        nxt = model.step(temps, zero)
        assert np.all(nxt < temps)
        assert np.all(nxt >= 298.0)
        temps = nxt
    assert np.all(temps < 298.5)


def test_never_cools_below_ambient_under_nonnegative_power():
    model = ThermalModel(desk_mesh(), ThermalConfig(dt_s=0.1))
    rng = np.random.default_rng(0)
    temps = np.full(model.n_nodes, 298.0)
    for _ in range(50):
        temps = model.step(temps, rng.uniform(0.0, 4.0, model.n_nodes))
        assert np.all(temps >= 298.0 - 1e-12)


def test_steady_state_is_fixed_point_of_step():
    model = ThermalModel(desk_mesh(), ThermalConfig(dt_s=0.1))
    p = np.linspace(0.5, 3.5, model.n_nodes)
    ss = model.steady_state(p)
    assert np.allclose(model.step(ss, p), ss, atol=1e-10)
    assert np.all(ss > 298.0)


def test_exact_step_tracks_fine_integrator():
    model = ThermalModel(desk_mesh(), ThermalConfig(dt_s=0.1))
    rng = np.random.default_rng(3)
    exact = np.full(model.n_nodes, 298.0)
    fine = exact.copy()
    for _ in range(20):  # 2 s with piecewise-constant power
        p = rng.uniform(0.0, 4.0, model.n_nodes)
        exact = model.step(exact, p)
        fine = model.step_fine(fine, p, substeps=1000)
    assert np.max(np.abs(exact - fine)) < 0.05


def test_mirror_symmetry_of_identical_nodes():
    c = [Chiplet(0, PimType.STANDARD, 0.0, 0.0, 4.0, 8, 8),
         Chiplet(1, PimType.STANDARD, 3.0, 0.0, 4.0, 8, 8)]
    model = ThermalModel(SystemGraph(c, [Link(0, 1)]), ThermalConfig(dt_s=0.1))
    temps = np.array([298.0, 298.0])
    for _ in range(30):
        temps = model.step(temps, np.array([2.0, 2.0]))
    assert temps[0] == pytest.approx(temps[1], abs=1e-12)
    # coupling pulls an unevenly heated pair together
    hot = model.steady_state(np.array([4.0, 0.0]))
    assert hot[0] > hot[1] > 298.0


def test_step_is_affine_in_power():
    model = ThermalModel(desk_mesh(), ThermalConfig(dt_s=0.1))
    rng = np.random.default_rng(7)
    x = np.full(model.n_nodes, 320.0)
    p1 = rng.uniform(0, 3, model.n_nodes)
    p2 = rng.uniform(0, 3, model.n_nodes)
    lhs = model.step(x, p1 + p2) - model.step(x, p2)
    rhs = model.step(x, p1) - model.step(x, np.zeros(model.n_nodes))
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_max_step_rise_bounds_one_step_from_ambient():
    model = ThermalModel(desk_mesh(), ThermalConfig(dt_s=0.1))
    p = np.full(model.n_nodes, 6.0)
    start = np.full(model.n_nodes, 298.0)
    rise = model.step(start, p) - start
    assert np.max(rise) == pytest.approx(model.max_step_rise(p), abs=1e-12)


def test_numerically_marginal_network_trips_stability_guard():
    cfg = ThermalConfig(g_ambient_per_mm2=1e-300, g_lateral=0.0)
    with pytest.raises(InvariantError):
        ThermalModel(one_node(), cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        ThermalConfig(dt_s=-0.1).validate()
    with pytest.raises(ConfigError):
        ThermalConfig(dt_s=0.0).validate()
    with pytest.raises(ConfigError):
        ThermalConfig(cap_per_mm2=0.0).validate()
    with pytest.raises(ConfigError):
        ThermalConfig(g_lateral=-1.0).validate()
    with pytest.raises(ConfigError):
        ThermalConfig(ambient_k=0.0).validate()
    ThermalConfig().validate()


def test_throttle_flags_follow_limits():
    g = desk_mesh()
    std = g.members(PimType.STANDARD)[0]
    sram = g.members(PimType.SHARED_ADC)[0]
    g.chiplets[std].temp_k = 330.0   # at the ReRAM limit: throttles
    g.chiplets[sram].temp_k = 340.0  # below the SRAM limit: stays open
    hot, cooled = throttle_update(g)
    assert hot == [std] and cooled == []
    assert g.chiplets[std].throttled
    assert not g.chiplets[std].can_accept_weights()
    assert not g.chiplets[sram].throttled
    g.chiplets[std].temp_k = 329.9
    hot, cooled = throttle_update(g)
    assert hot == [] and cooled == [std]
    assert g.chiplets[std].can_accept_weights()


def test_throttle_ignores_io_chiplets():
    g = desk_mesh()
    io = g.io_ids[0]
    g.chiplets[io].temp_k = 1000.0
    hot, _cooled = throttle_update(g)
    assert io not in hot
    assert not g.chiplets[io].throttled


def test_thermal_file_round_trip(tmp_path):
    cfg = ThermalConfig(ambient_k=300.0, cap_per_mm2=0.04, g_ambient_per_mm2=0.03,
                        g_lateral=0.02, lateral_radius_mm=5.0, dt_s=0.05)
    path = tmp_path / "thermal.yaml"
    write_thermal_file(cfg, path)
    assert load_thermal_file(path) == cfg


def test_thermal_file_rejects_bad_values(tmp_path):
    path = tmp_path / "thermal.yaml"
    write_thermal_file(ThermalConfig(), path)
    path.write_text(path.read_text().replace("dt_s: 0.1", "dt_s: -1.0"))
    with pytest.raises(FormatError):
        load_thermal_file(path)


def test_thermal_file_rejects_wrong_format(tmp_path):
    path = tmp_path / "thermal.yaml"
    path.write_text("format: other\nversion: 1\n")
    with pytest.raises(FormatError):
        load_thermal_file(path)
