"""Obstacle presets, the alpha transform, ladder construction and validation."""

import numpy as np
import pytest

from obstacleflow.errors import ConfigurationError, DomainError
from obstacleflow.grid import MacGrid
from obstacleflow.obstacle import (
    alpha_transform,
    build_ladder,
    cutoff,
    make_obstacle,
    region_classify,
    validate_ladder,
)

DOMAIN = (1.0, 1.0)
T = 0.5


def lattice(nx=16, tau=1.0 / 32):
    grid = MacGrid(nx, nx, 1.0 / nx)
    times = np.arange(0.0, T + tau / 2, tau)
    return grid, times


# ------------------------------------------------------------------
# pointwise transforms
# ------------------------------------------------------------------

def test_alpha_values():
    assert alpha_transform(np.inf) == 1.0
    assert alpha_transform(0.0) == 0.0
    assert alpha_transform(3.0) == 0.75


def test_alpha_monotone():
    vals = alpha_transform(np.array([0.0, 0.5, 1.0, 4.0, 100.0, np.inf]))
    assert np.all(np.diff(vals) > 0) or vals[-1] == 1.0
    assert np.all(np.diff(vals[:-1]) > 0)


def test_alpha_rejects_negative():
    with pytest.raises(DomainError):
        alpha_transform(-0.1)


def test_cutoff_cases():
    assert cutoff(10.0, 4) == 4.0
    assert cutoff(0.0, 4) == 0.25
    assert cutoff(2.0, 4) == 2.0
    assert cutoff(np.inf, 8) == 8.0


def test_cutoff_idempotent_and_bounded():
    rng = np.random.default_rng(0)
    vals = rng.uniform(0, 50, size=1000)
    vals[::17] = np.inf
    for n in (1, 2, 4, 16):
        c = cutoff(vals, n)
        assert np.all(c >= 1.0 / n) and np.all(c <= n)
        assert np.array_equal(cutoff(c, n), c)


def test_cutoff_rejects_negative():
    with pytest.raises(DomainError):
        cutoff(-1.0, 4)


# ------------------------------------------------------------------
# presets
# ------------------------------------------------------------------

ALL_PRESETS = ["free-flow", "uniform", "narrowing-channel", "growing-disk",
               "total-blockage", "lid-free-check"]


def test_unknown_preset_lists_available():
    with pytest.raises(ConfigurationError) as err:
        make_obstacle("vortex-sheet", {}, DOMAIN, T)
    assert "narrowing-channel" in str(err.value)


@pytest.mark.parametrize("name", ALL_PRESETS)
def test_presets_nonnegative(name):
    p = make_obstacle(name, {}, DOMAIN, T)
    grid, times = lattice()
    for t in times[:: max(1, len(times) // 5)]:
        vals = p.sample(grid, float(t))
        assert np.all(vals >= 0)


@pytest.mark.parametrize("name", ALL_PRESETS)
def test_alpha_continuity_on_lattice(name):
    # adjacent lattice points differ by at most the declared modulus
    p = make_obstacle(name, {}, DOMAIN, T)
    grid, times = lattice()
    alpha = alpha_transform(p.sample_cylinder(grid, times))
    tau = times[1] - times[0]
    slack = 1 + 1e-9
    assert np.abs(np.diff(alpha, axis=0)).max() <= p.alpha_modulus(tau) * slack + 1e-15
    assert np.abs(np.diff(alpha, axis=1)).max() <= p.alpha_modulus(grid.h) * slack + 1e-15
    assert np.abs(np.diff(alpha, axis=2)).max() <= p.alpha_modulus(grid.h) * slack + 1e-15


def test_free_flow_is_infinite():
    p = make_obstacle("free-flow", {}, DOMAIN, T)
    grid, _ = lattice()
    assert np.all(np.isinf(p.sample(grid, 0.1)))


def test_blockage_timeline():
    p = make_obstacle("total-blockage", {}, DOMAIN, T)
    t1, t2, t3, t4 = (f * T for f in (0.2, 0.4, 0.6, 0.8))
    grid, _ = lattice()
    assert p.blockage_t0 == pytest.approx(t2)
    assert p.sample(grid, 0.0).max() == pytest.approx(1.5)
    assert p.sample(grid, (t2 + t3) / 2).max() == 0.0
    assert p.sample(grid, T).max() == pytest.approx(1.5)
    mid_ramp = p.sample(grid, (t1 + t2) / 2).max()
    assert 0 < mid_ramp < 1.5


# ------------------------------------------------------------------
# ladder construction
# ------------------------------------------------------------------

def test_ladder_constant_obstacle_fixed_point():
    p = make_obstacle("uniform", {"value": 1.0}, DOMAIN, T)
    grid, times = lattice()
    ladder = build_ladder(p, [1, 2, 4], grid, times)
    for n in ladder:
        assert np.allclose(ladder[n].values, 1.0, atol=1e-15)


def test_ladder_member_bounds_and_metadata():
    p = make_obstacle("narrowing-channel", {}, DOMAIN, T)
    grid, times = lattice()
    ladder = build_ladder(p, [4, 8, 16], grid, times)
    for n in ladder:
        m = ladder[n]
        assert np.isfinite(m.values).all()
        assert m.min_value > 0
        assert m.values.min() >= 1.0 / (2 * n)
        assert m.values.max() <= 2 * n
        assert np.isfinite(m.lipschitz) and m.lipschitz >= 0
        assert m.radius == max(2 * grid.h, 1.0 / (4 * n))


def test_ladder_blockage_floor():
    p = make_obstacle("total-blockage", {}, DOMAIN, T)
    grid, times = lattice(nx=16, tau=1.0 / 64)
    ladder = build_ladder(p, [8], grid, times)
    m = ladder[8]
    assert m.values.min() >= 1.0 / 16
    # during the closed plateau the member sits exactly on its floor,
    # starting at the very first zero time t0
    t2, t3 = 0.4 * T, 0.6 * T
    on_plateau = (times >= t2 - 1e-12) & (times <= t3 + 1e-12)
    assert on_plateau.sum() >= 3
    assert np.all(m.values[on_plateau] == 1.0 / 8)


def test_ladder_infinite_region_saturates():
    p = make_obstacle("growing-disk", {}, DOMAIN, T)
    grid, times = lattice()
    ladder = build_ladder(p, [8], grid, times)
    m = ladder[8]
    raw = p.sample_cylinder(grid, times)
    from scipy.ndimage import binary_erosion
    struct = np.ones(tuple(2 * w + 1 for w in m.window), dtype=bool)
    core = binary_erosion(np.isinf(raw), structure=struct, border_value=1)
    assert core.any()
    assert np.all(m.values[core] == 8.0)


def test_ladder_rejects_bad_indices():
    p = make_obstacle("free-flow", {}, DOMAIN, T)
    grid, times = lattice()
    with pytest.raises(ConfigurationError):
        build_ladder(p, [], grid, times)
    with pytest.raises(ConfigurationError):
        build_ladder(p, [4, 4], grid, times)
    with pytest.raises(ConfigurationError):
        build_ladder(p, [8, 4], grid, times)
    with pytest.raises(ConfigurationError):
        build_ladder(p, [0.5], grid, times)


def test_ladder_rejects_coarse_time_step():
    p = make_obstacle("free-flow", {}, DOMAIN, T)
    grid = MacGrid(16, 16, 1.0 / 16)
    times = np.array([0.0, 0.3])          # tau = 0.3 > r_32 = 1/8
    with pytest.raises(ConfigurationError):
        build_ladder(p, [32], grid, times)


# ------------------------------------------------------------------
# ladder validation
# ------------------------------------------------------------------

def test_validate_constant_all_zero_distance():
    p = make_obstacle("uniform", {"value": 1.0}, DOMAIN, T)
    grid, times = lattice()
    ladder = build_ladder(p, [1, 2, 4], grid, times)
    report = validate_ladder(p, ladder, kappas=[1.0])
    assert report.ok
    assert all(row[2] == 0.0 for row in report.rows)


def test_validate_narrowing_sup_distances_nonincreasing():
    p = make_obstacle("narrowing-channel", {}, DOMAIN, T)
    grid, times = lattice()
    ladder = build_ladder(p, [4, 8, 16], grid, times)
    report = validate_ladder(p, ladder, kappas=[1.0])
    assert report.ok
    sups = [row[2] for row in report.rows if row[1] == 1.0]
    assert len(sups) == 3
    assert all(b <= a + 1e-14 or b <= report.floors[n]
               for a, b, n in zip(sups, sups[1:], [8, 16]))


def test_validate_sandwich_on_infinite_region():
    p = make_obstacle("growing-disk", {}, DOMAIN, T)
    grid, times = lattice()
    ladder = build_ladder(p, [4, 16], grid, times)
    report = validate_ladder(p, ladder)
    assert report.ok
    # M = 10 requires n > 10; the first qualifying index is 16
    assert report.sandwich_index[10.0] == 16


def test_validate_rows_shape():
    p = make_obstacle("total-blockage", {}, DOMAIN, T)
    grid, times = lattice(tau=1.0 / 64)
    ladder = build_ladder(p, [8, 16], grid, times)
    report = validate_ladder(p, ladder)
    assert report.ok
    for n, kappa, sup, sand in report.rows:
        assert n in (8, 16) and kappa in p.kappas
        assert sup >= 0 and isinstance(sand, bool)


def test_validate_empty_ladder_raises():
    p = make_obstacle("free-flow", {}, DOMAIN, T)
    grid, times = lattice()
    ladder = build_ladder(p, [4], grid, times)
    ladder.members.clear()
    with pytest.raises(ConfigurationError):
        validate_ladder(p, ladder)


# ------------------------------------------------------------------
# region classification
# ------------------------------------------------------------------

def test_region_free_flow_all_infinite():
    p = make_obstacle("free-flow", {}, DOMAIN, T)
    grid, times = lattice()
    rm = region_classify(p, grid, times, kappa=1.0)
    assert rm.infinite_set.all()
    assert rm.is_partition()


def test_region_zero_obstacle():
    p = make_obstacle("uniform", {"value": 0.0}, DOMAIN, T)
    grid, times = lattice()
    rm = region_classify(p, grid, times, kappa=1.0)
    assert rm.zero_set.all()
    assert rm.is_partition()


def test_region_growing_disk_initial_zero_set():
    p = make_obstacle("growing-disk", {}, DOMAIN, T)
    grid, times = lattice()
    rm = region_classify(p, grid, times, kappa=1.0)
    X, Y = grid.cell_centers()
    expected = np.hypot(X - 0.5, Y - 0.5) <= 0.15 + 1e-15
    assert np.array_equal(rm.zero_set[0], expected)
    assert rm.is_partition()


def test_region_rejects_nonpositive_kappa():
    p = make_obstacle("free-flow", {}, DOMAIN, T)
    grid, times = lattice()
    with pytest.raises(DomainError):
        region_classify(p, grid, times, kappa=0.0)
