"""Command-line surface: exit codes, artifacts, and output text."""

import json

import numpy as np
import pytest
from conftest import SCENARIO_DIR, scenario_path

from obstacleflow.cli import main
from obstacleflow.scenario_io import read_snapshot

TINY = """\
[grid]
nx = 8
ny = 8

[time]
tau = 0.025
horizon = 0.1

[physics]
nu = 0.1

[initial]
preset = "taylor-green"
amplitude = 0.2

[ladder]
indices = [4, 8]
"""

BROKEN = """\
[grid]
ny = 8
zz = 3

[time]
tau = "soon"
horizon = 0.1

[physics]
nu = 0.1

[widgets]
spin = 1

[forcing]
preset = "whirl"
"""


@pytest.fixture(autouse=True)
def sandbox_env(tmp_path, monkeypatch):
    monkeypatch.setenv("OBSTACLEFLOW_OUTPUT_ROOT", str(tmp_path / "out"))
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    (tmp_path / "out").mkdir()
    return tmp_path


def tiny_file(tmp_path, text=TINY, name="tiny.toml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


# ============================================================
# parser surface
# ============================================================

def test_help_lists_every_subcommand(capsys):
    with pytest.raises(SystemExit) as stop:
        main(["--help"])
    assert stop.value.code == 0
    out = capsys.readouterr().out
    for name in ("run", "ladder", "verify", "constants", "project"):
        assert name in out


@pytest.mark.parametrize("sub,flags", [
    ("run", ["--set", "--outdir", "--index"]),
    ("ladder", ["--set", "--outdir"]),
    ("verify", ["--set", "--outdir", "--only"]),
    ("constants", ["--outdir"]),
])
def test_subcommand_help_names_flags(capsys, sub, flags):
    with pytest.raises(SystemExit) as stop:
        main([sub, "--help"])
    assert stop.value.code == 0
    out = capsys.readouterr().out
    for flag in flags:
        assert flag in out


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == 1
    assert "error:" in capsys.readouterr().err


# ============================================================
# project
# ============================================================

@pytest.mark.parametrize("argv,expect", [
    (["project", "3", "4", "1"], "0.6 0.8"),
    (["project", "0.1", "0.2", "1"], "0.1 0.2"),
    (["project", "3", "4", "0"], "0 0"),
    (["project", "-3", "4", "2.5"], "-1.5 2"),
])
def test_project_prints_projected_vector(capsys, argv, expect):
    assert main(argv) == 0
    assert capsys.readouterr().out.strip() == expect


def test_project_rejects_negative_radius(capsys):
    assert main(["project", "1", "1", "-1"]) == 1
    assert ">= 0" in capsys.readouterr().err


def test_project_rejects_nan(capsys):
    assert main(["project", "nan", "0", "1"]) == 1
    assert "must be numbers" in capsys.readouterr().err


# ============================================================
# run
# ============================================================

def test_run_free_flow_emits_artifacts(tmp_path, capsys):
    outdir = tmp_path / "ff"
    assert main(["run", str(scenario_path("free-flow")),
                 "--outdir", str(outdir)]) == 0
    out = capsys.readouterr().out
    assert "index 16: 5 steps" in out
    assert "energy: pass" in out
    names = sorted(p.name for p in outdir.iterdir())
    assert "scenario.toml" in names
    assert "timeseries.csv" in names
    assert "manifest.json" in names
    snaps = [n for n in names if n.startswith("snapshot-")]
    assert snaps == [f"snapshot-{k:06d}.vtk" for k in range(6)]
    doc = json.loads((outdir / "manifest.json").read_text())
    assert doc["checks"]["energy"] == "pass"
    assert len(doc["files"]) == len(names) - 1      # manifest lists the rest


def test_run_bad_file_prints_every_problem(tmp_path, capsys):
    assert main(["run", tiny_file(tmp_path, BROKEN, "bad.toml")]) == 1
    err_lines = [l for l in capsys.readouterr().err.splitlines()
                 if l.startswith("error:")]
    assert len(err_lines) == 5


def test_run_missing_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "ghost.toml")]) == 1
    assert "ghost.toml" in capsys.readouterr().err


def test_run_rejects_nonpositive_index(tmp_path, capsys):
    assert main(["run", tiny_file(tmp_path), "--index", "0"]) == 1
    assert "positive" in capsys.readouterr().err


def test_run_override_changes_partition(tmp_path, capsys):
    outdir = tmp_path / "fast"
    assert main(["run", tiny_file(tmp_path), "--set", "time.tau=0.05",
                 "--outdir", str(outdir)]) == 0
    assert "index 8: 2 steps" in capsys.readouterr().out
    assert "tau = 0.05" in (outdir / "scenario.toml").read_text()


def test_run_override_rejects_unknown_key(tmp_path, capsys):
    assert main(["run", tiny_file(tmp_path), "--set", "time.dt=0.1"]) == 1
    assert "unknown key time.dt" in capsys.readouterr().err


def test_run_override_must_be_dotted(tmp_path, capsys):
    assert main(["run", tiny_file(tmp_path), "--set", "tau=0.1"]) == 1
    assert "section.key=value" in capsys.readouterr().err


def test_preset_override_resets_old_parameters(tmp_path, capsys):
    # vi-reference carries uniform's "value"; switching the preset must not
    # leak that parameter into the free-flow section
    outdir = tmp_path / "switched"
    assert main(["run", str(scenario_path("vi-reference")),
                 "--set", "obstacle.preset=free-flow",
                 "--outdir", str(outdir)]) == 0
    text = (outdir / "scenario.toml").read_text()
    assert 'preset = "free-flow"' in text
    assert "value" not in text


def test_nonconvergence_exits_2(tmp_path, capsys):
    assert main(["run", str(scenario_path("vi-reference")),
                 "--set", "tolerances.max_iter=5",
                 "--outdir", str(tmp_path / "stall")]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_run_total_blockage_manifest_and_final_snapshot(tmp_path, capsys):
    outdir = tmp_path / "tb"
    assert main(["run", str(scenario_path("total-blockage")),
                 "--outdir", str(outdir)]) == 0
    out = capsys.readouterr().out
    assert "energy: pass" in out
    assert "blockage: pass" in out
    doc = json.loads((outdir / "manifest.json").read_text())
    assert doc["checks"] == {"energy": "pass", "blockage": "pass"}
    final = read_snapshot(outdir / "snapshot-000032.vtk")
    assert final["speed"].max() <= 1e-8
    assert np.hypot(final["velocity"][:, 0], final["velocity"][:, 1]).max() \
        <= 1e-8


# ============================================================
# ladder
# ============================================================

def test_ladder_single_index_fails(tmp_path, capsys):
    assert main(["ladder", str(scenario_path("vi-reference"))]) == 1
    assert "ladder needs >= 2 indices" in capsys.readouterr().err


def test_ladder_outputs_distances(tmp_path, capsys):
    outdir = tmp_path / "lad"
    assert main(["ladder", tiny_file(tmp_path), "--outdir", str(outdir)]) == 0
    out = capsys.readouterr().out
    assert "D(4,8) = " in out
    assert "verdict: nonincreasing" in out
    assert (outdir / "ladder.csv").exists()
    doc = json.loads((outdir / "manifest.json").read_text())
    assert doc["checks"]["cauchy"] == "nonincreasing"


# ============================================================
# verify
# ============================================================

def test_verify_unknown_check_rejected(tmp_path, capsys):
    assert main(["verify", tiny_file(tmp_path), "--only", "vibes"]) == 1
    err = capsys.readouterr().err
    assert "unknown check 'vibes'" in err
    for name in ("energy", "global-vi", "perturbation", "bv", "blockage"):
        assert name in err


def test_verify_only_runs_single_check(tmp_path, capsys):
    outdir = tmp_path / "v1"
    assert main(["verify", str(scenario_path("free-flow")),
                 "--only", "energy", "--outdir", str(outdir)]) == 0
    out = capsys.readouterr().out
    assert "energy: pass" in out
    assert "global-vi" not in out
    assert (outdir / "check-energy.csv").exists()
    assert not (outdir / "check-bv.csv").exists()


def test_verify_broken_tolerance_fails(tmp_path, capsys):
    # a sloppy feasibility tolerance leaves visible flow after total
    # blockage, which the blockage check must catch
    assert main(["verify", str(scenario_path("total-blockage")),
                 "--set", "grid.nx=16", "--set", "grid.ny=16",
                 "--set", "tolerances.feas_tol=1e-3",
                 "--only", "blockage",
                 "--outdir", str(tmp_path / "sloppy")]) == 2
    captured = capsys.readouterr()
    assert "blockage: fail" in captured.out
    assert "failing report" in captured.err


@pytest.mark.parametrize("name", sorted(p.stem for p in
                                        SCENARIO_DIR.glob("*.toml")))
def test_verify_every_shipped_scenario(tmp_path, capsys, name):
    outdir = tmp_path / f"verify-{name}"
    code = main(["verify", str(scenario_path(name)), "--outdir", str(outdir)])
    captured = capsys.readouterr()
    assert code == 0, captured.out + captured.err
    assert "fail" not in captured.out


# ============================================================
# constants
# ============================================================

def test_constants_reports_table(tmp_path, capsys):
    outdir = tmp_path / "const"
    assert main(["constants", tiny_file(tmp_path),
                 "--outdir", str(outdir)]) == 0
    out = capsys.readouterr().out
    for name in ("L0", "L1", "L2", "L3", "L_P"):
        assert f"{name} = " in out
    header = (outdir / "constants.csv").read_text().splitlines()[0]
    assert header == "constant,value,method,sweeps"
