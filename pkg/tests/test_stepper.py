"""Configuration, preset fields, and the time-marching driver."""

import numpy as np
import pytest
from conftest import random_divfree

from obstacleflow.errors import (
    ConfigurationError,
    ScenarioValidationError,
    StepNonConvergence,
)
from obstacleflow.grid import norm_L2
from obstacleflow.vi_step import divergence_inf
from obstacleflow.obstacle import build_ladder, make_obstacle
from obstacleflow.stepper import (
    SimulationConfig,
    build_initial_data,
    make_forcing,
    make_initial,
    run,
    run_ladder,
)


def tiny_config(**kw):
    base = dict(nx=8, ny=8, tau=0.025, horizon=0.1, nu=0.1,
                initial="taylor-green", initial_params={"amplitude": 0.3})
    base.update(kw)
    return SimulationConfig(**base)


# ============================================================
# config validation
# ============================================================

def test_config_accepts_valid():
    cfg = tiny_config()
    assert cfg.steps == 4
    assert np.allclose(cfg.times, [0.0, 0.025, 0.05, 0.075, 0.1])
    assert cfg.grid().h == pytest.approx(1.0 / 8)


def test_config_rejects_nonsquare_cells():
    with pytest.raises(ScenarioValidationError, match="square"):
        tiny_config(nx=8, ny=16)


def test_config_rejects_tau_not_dividing_horizon():
    with pytest.raises(ScenarioValidationError, match="divide"):
        tiny_config(tau=0.03)


def test_config_rejects_nonpositive_nu():
    with pytest.raises(ScenarioValidationError, match="physics.nu must be > 0"):
        tiny_config(nu=-1.0)


def test_config_collects_every_problem():
    with pytest.raises(ScenarioValidationError) as err:
        SimulationConfig(nx=8, ny=16, tau=0.03, horizon=0.1, nu=-1.0,
                         obstacle="wall-of-lava")
    msgs = err.value.problems
    assert len(msgs) == 4
    assert any("square" in m for m in msgs)
    assert any("divide" in m for m in msgs)
    assert any("physics.nu" in m for m in msgs)
    assert any("wall-of-lava" in m and "available" in m for m in msgs)


def test_config_rejects_unsorted_ladder():
    with pytest.raises(ScenarioValidationError, match="strictly increasing"):
        tiny_config(ladder_indices=(16, 8))


def test_config_params_become_plain_lists():
    # tuples must normalize so that to_dict round-trips through TOML
    cfg = tiny_config(obstacle="total-blockage",
                      obstacle_params={"p_max": 1.0,
                                       "fractions": (0.2, 0.4, 0.6, 0.8)})
    assert cfg.obstacle_params["fractions"] == [0.2, 0.4, 0.6, 0.8]
    assert isinstance(cfg.obstacle_params["fractions"], list)


def test_config_equality_is_structural():
    assert tiny_config() == tiny_config()
    assert tiny_config() != tiny_config(nu=0.2)


# ============================================================
# initial / forcing presets
# ============================================================

def test_taylor_green_amplitude_sets_peak_speed(g16):
    u = make_initial("taylor-green", g16, {"amplitude": 0.7})
    assert divergence_inf(u) <= 1e-12
    assert u.center_speed().max() == pytest.approx(0.7, rel=0.05)


def test_zero_initial_is_zero(g16):
    u = make_initial("zero", g16)
    assert norm_L2(u) == 0.0


def test_bump_vortex_is_solenoidal_and_local(g16):
    u = make_initial("bump-vortex", g16,
                     {"amplitude": 0.4, "cx": 0.3, "cy": 0.3, "radius": 0.2})
    assert divergence_inf(u) <= 1e-12
    sp = u.center_speed()
    cx, cy = g16.cell_centers()
    far = (cx - 0.3) ** 2 + (cy - 0.3) ** 2 > 0.35 ** 2
    assert sp[far].max() <= 1e-12
    assert sp.max() > 0


def test_double_bump_is_solenoidal(g16):
    u = make_initial("double-bump", g16)
    assert divergence_inf(u) <= 1e-12
    assert u.center_speed().max() > 0


def test_unknown_initial_preset_rejected(g16):
    with pytest.raises(ConfigurationError, match="available"):
        make_initial("plume", g16)


def test_forcing_none_is_zero(g16):
    g = make_forcing("none", g16)
    assert norm_L2(g(0.37)) == 0.0


def test_forcing_swirl_frozen_in_time_when_omega_zero(g16):
    g = make_forcing("swirl", g16, {"amplitude": 1.5, "omega": 0.0})
    a, b = g(0.1), g(0.9)
    assert np.array_equal(a.dof(), b.dof())
    assert norm_L2(a) > 0


def test_forcing_swirl_oscillates(g16):
    g = make_forcing("swirl", g16, {"amplitude": 1.0, "omega": 3.0})
    assert not np.array_equal(g(0.0).dof(), g(0.5).dof())


# ============================================================
# initial-data regularization
# ============================================================

def test_initial_data_untouched_when_obstacle_clears_it(g16):
    # free flow: p == inf, so the shrink factor is exactly zero
    u0 = make_initial("taylor-green", g16, {"amplitude": 0.3})
    p = make_obstacle("free-flow", {}, (1.0, 1.0), 1.0)
    member = build_ladder(p, [8], g16, np.linspace(0.0, 1.0, 9))[8]
    u0n = build_initial_data(u0, p, member)
    assert np.array_equal(u0n.dof(), u0.dof())


def test_initial_data_rejects_support_on_dead_region(g16):
    u0 = make_initial("taylor-green", g16, {"amplitude": 0.3})
    p = make_obstacle("growing-disk",
                      {"cx": 0.5, "cy": 0.5, "r0": 0.2, "rate": 0.5, "w": 0.1},
                      (1.0, 1.0), 1.0)
    member = build_ladder(p, [8], g16, np.linspace(0.0, 1.0, 9))[8]
    with pytest.raises(ConfigurationError, match="supported where the obstacle"):
        build_initial_data(u0, p, member)


def test_initial_data_shrinks_into_regularized_tube(g16):
    # uniform radius 0.2 with a field that grazes it: the n = 4 member clips
    # the radius away from p, so the built data must shrink, never grow
    u0 = make_initial("taylor-green", g16, {"amplitude": 0.2})
    p = make_obstacle("uniform", {"value": 0.2}, (1.0, 1.0), 1.0)
    member = build_ladder(p, [4], g16, np.linspace(0.0, 1.0, 9))[4]
    u0n = build_initial_data(u0, p, member)
    assert norm_L2(u0n) <= norm_L2(u0)
    assert np.all(u0n.center_speed() <= member.at(0) * (1 + 1e-12))


# ============================================================
# marching
# ============================================================

def test_rest_scenario_stays_at_rest():
    cfg = tiny_config(initial="zero", initial_params=None)
    rec = run(cfg, 8)
    assert rec.l2.max() == 0.0
    assert rec.violation.max() == 0.0


def test_free_flow_matches_unconstrained_twin():
    cfg = tiny_config()
    constrained = run(cfg, 16)
    free = run(cfg, 16, unconstrained=True)
    assert np.abs(constrained.dofs - free.dofs).max() <= 1e-12


def test_march_is_bitwise_deterministic():
    cfg = tiny_config(obstacle="uniform", obstacle_params={"value": 0.4},
                      forcing="swirl", forcing_params={"amplitude": 2.0,
                                                       "omega": 1.0})
    a = run(cfg, 8)
    b = run(cfg, 8)
    assert np.array_equal(a.dofs, b.dofs)
    assert np.array_equal(a.residual, b.residual)
    assert np.array_equal(a.iters, b.iters)


def test_trajectory_shapes_and_forcing_log():
    cfg = tiny_config(forcing="swirl", forcing_params={"amplitude": 1.0,
                                                       "omega": 2.0})
    rec = run(cfg, 8)
    assert rec.dofs.shape == (cfg.steps + 1, cfg.grid().ndof)
    assert rec.g_dofs.shape == (cfg.steps, cfg.grid().ndof)
    assert rec.iters[0] == 0 and rec.residual[0] == 0.0
    g = make_forcing("swirl", cfg.grid(), {"amplitude": 1.0, "omega": 2.0})
    assert np.array_equal(rec.forcing_field(2).dof(), g(cfg.times[2]).dof())


def test_snapshot_indices_include_final_step():
    cfg = tiny_config(tau=0.02, horizon=0.1, cadence=2)
    rec = run(cfg, 8)
    assert rec.snapshot_indices() == [0, 2, 4, 5]


def test_nonconvergence_carries_partial_trajectory():
    cfg = tiny_config(initial="zero", initial_params=None,
                      obstacle="uniform", obstacle_params={"value": 0.05},
                      forcing="swirl", forcing_params={"amplitude": 3.0,
                                                       "omega": 0.0},
                      max_iter=3)
    with pytest.raises(StepNonConvergence) as err:
        run(cfg, 8)
    partial = err.value.partial
    assert partial.config is cfg
    assert len(partial.times) >= 1
    assert partial.times[0] == 0.0


def test_ladder_needs_two_indices():
    cfg = tiny_config(ladder_indices=(8,))
    with pytest.raises(ConfigurationError, match="2 indices"):
        run_ladder(cfg)


def test_ladder_distances_and_cauchy_pairs():
    cfg = tiny_config(initial_params={"amplitude": 0.1},
                      obstacle="uniform", obstacle_params={"value": 0.15},
                      forcing="swirl", forcing_params={"amplitude": 1.5,
                                                       "omega": 0.0},
                      ladder_indices=(4, 8, 16))
    lad = run_ladder(cfg)
    assert lad.indices == [4, 8, 16]
    pairs = lad.cauchy_pairs()
    assert [(a, b) for a, b, _ in pairs] == [(4, 8), (8, 16)]
    assert lad.distance(4, 8) == lad.distance(8, 4)
    assert lad.distance(8, 8) == 0.0
    for _, _, d in pairs:
        assert np.isfinite(d) and d >= 0.0


def test_l2_distance_rejects_partition_mismatch():
    a = run(tiny_config(), 8)
    b = run(tiny_config(tau=0.05), 8)
    with pytest.raises(ConfigurationError, match="different partitions"):
        a.l2_distance(b)


def test_trajectory_member_records_ladder_index():
    cfg = tiny_config(obstacle="uniform", obstacle_params={"value": 0.5})
    rec = run(cfg, 8)
    assert rec.n == 8
    assert rec.member is not None
    assert rec.member.at(0).shape == (8, 8)
