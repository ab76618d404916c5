from pathlib import Path

import numpy as np
import pytest

from obstacleflow.grid import MacGrid, VectorField, embedding_constants, leray_project
from obstacleflow.scenario_io import parse_scenario
from obstacleflow.stepper import run, run_ladder

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "scenarios"


def scenario_path(name):
    return SCENARIO_DIR / f"{name}.toml"


@pytest.fixture(scope="session")
def g8():
    return MacGrid(8, 8, 1.0 / 8)


@pytest.fixture(scope="session")
def g16():
    return MacGrid(16, 16, 1.0 / 16)


@pytest.fixture(scope="session")
def shipped_configs():
    """Every scenario file under scenarios/, parsed."""
    paths = sorted(SCENARIO_DIR.glob("*.toml"))
    assert paths, "no shipped scenarios found"
    return {p.stem: parse_scenario(p) for p in paths}


@pytest.fixture(scope="session")
def shipped_runs(shipped_configs):
    """name -> (LadderRun or None, {n: TrajectoryRecord}) for every scenario.

    Single-index scenarios get a plain run; everything else gets the full
    ladder.  Computed once per session because the marches dominate the
    suite's runtime.
    """
    out = {}
    for name, cfg in sorted(shipped_configs.items()):
        if len(cfg.ladder_indices) >= 2:
            ladder = run_ladder(cfg)
            out[name] = (ladder, ladder.records)
        else:
            out[name] = (None, {n: run(cfg, n) for n in cfg.ladder_indices})
    return out


@pytest.fixture(scope="session")
def constants_for():
    """Discrete embedding constants per grid (memoized in the grid module)."""
    return embedding_constants


def random_field(grid, rng, scale=1.0):
    return VectorField(
        grid,
        scale * rng.standard_normal((grid.nx + 1, grid.ny)),
        scale * rng.standard_normal((grid.nx, grid.ny + 1)),
    )


def random_divfree(grid, rng, scale=1.0):
    return leray_project(random_field(grid, rng, scale))
