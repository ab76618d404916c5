"""Command-line surface: scenarios in, runs and checks out.

Five subcommands: run (march one ladder member), ladder (march them all and
compare), verify (diagnostic checks applicable to the scenario), constants
(grid embedding constants), project (pointwise ball projection, a
scriptable oracle).  Exit codes: 0 ok, 1 configuration problem, 2 numerical
failure or failed check.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .diagnostics import (
    Subcylinder,
    TestFunctionFamily,
    blockage_check,
    bv_estimate,
    energy_check,
    global_vi_residual,
    perturbation_structure_check,
)
from .errors import ConfigurationError, NumericalError, ScenarioValidationError
from .grid import VectorField, embedding_constants
from .obstacle import region_classify
from .scenario_io import (
    RunManifest,
    ScenarioFile,
    cauchy_verdict,
    config_hash,
    parse_scenario,
    resolve_output_dir,
    serialize_scenario,
    write_ladder_csv,
    write_rows_csv,
    write_snapshot,
    write_timeseries,
)
from .stepper import SimulationConfig, run, run_ladder

__all__ = [
    "EXIT_CONFIG",
    "EXIT_NUMERICAL",
    "EXIT_OK",
    "CommandSpec",
    "VERIFY_CHECKS",
    "apply_overrides",
    "main",
    "parse_args",
]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

VERIFY_CHECKS = ("energy", "global-vi", "perturbation", "bv", "blockage")


@dataclass(frozen=True)
class CommandSpec:
    """Parsed invocation: one subcommand plus its options."""

    subcommand: str
    scenario: Path | None = None
    overrides: tuple = ()
    verbosity: int = 0
    outdir: str | None = None
    index: int | None = None
    only: str | None = None
    vector: tuple = ()


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for
    # numerical failure here, so turn usage problems into exit code 1
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(
        prog="obstacleflow",
        description="Incompressible flow under a pointwise speed obstacle: "
                    "run scenarios, compare ladder members, verify estimates.")
    sub = ap.add_subparsers(dest="subcommand", required=True,
                            metavar="{run,ladder,verify,constants,project}")

    def scenario_command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("scenario", type=Path, help="scenario TOML file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override one scenario value (repeatable)")
        p.add_argument("--outdir", metavar="DIR",
                       help="output directory (default: named from the "
                            "config hash, under $OBSTACLEFLOW_OUTPUT_ROOT "
                            "if set)")
        p.add_argument("-v", "--verbose", action="count", default=0,
                       help="more detail on stdout")
        return p

    p_run = scenario_command(
        "run", "march one ladder member and write CSV, VTK and manifest")
    p_run.add_argument("--index", type=int, metavar="N",
                       help="ladder index to march (default: largest listed)")

    scenario_command(
        "ladder", "march every ladder index and report the distance matrix")

    p_verify = scenario_command(
        "verify", "run the diagnostic checks applicable to the scenario")
    p_verify.add_argument("--only", metavar="CHECK",
                          help="run a single check: " + ", ".join(VERIFY_CHECKS))

    scenario_command(
        "constants", "estimate the grid embedding constants and write CSV")

    p_proj = sub.add_parser(
        "project", help="project a velocity vector onto the ball |u| <= r",
        description="Prints the pointwise ball projection of (UX, UY); "
                    "the scriptable oracle for the constraint geometry.")
    p_proj.add_argument("vector", nargs=3, type=float,
                        metavar=("UX", "UY", "RADIUS"))
    return ap


def parse_args(argv=None) -> CommandSpec:
    ns = build_parser().parse_args(argv)
    return CommandSpec(
        subcommand=ns.subcommand,
        scenario=getattr(ns, "scenario", None),
        overrides=tuple(getattr(ns, "overrides", ()) or ()),
        verbosity=getattr(ns, "verbose", 0),
        outdir=getattr(ns, "outdir", None),
        index=getattr(ns, "index", None),
        only=getattr(ns, "only", None),
        vector=tuple(getattr(ns, "vector", ()) or ()),
    )


# ============================================================
# scenario loading with overrides
# ============================================================

def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw                      # bare word: take it as a string


def apply_overrides(config: SimulationConfig, overrides) -> SimulationConfig:
    """Dotted-key overrides (time.tau=0.001) on top of a parsed config.

    The override is spliced into the canonical dict and the whole scenario
    is revalidated, so an override naming an unknown section or key fails
    exactly like the same mistake in the file would.  Overriding a preset
    resets that preset's parameters.
    """
    if not overrides:
        return config
    d = config.to_dict()
    problems = []
    for item in overrides:
        key, sep, raw = item.partition("=")
        parts = key.split(".")
        if not sep or len(parts) != 2 or not parts[0] or not parts[1]:
            problems.append(f"override '{item}' must look like "
                            "section.key=value")
            continue
        section, name = parts
        value = _parse_value(raw)
        table = d.setdefault(section, {})
        if name == "preset":
            d[section] = {"preset": value}
        else:
            table[name] = value
    if problems:
        raise ScenarioValidationError(problems)
    return ScenarioFile(d).to_config()


def _load_config(spec: CommandSpec) -> SimulationConfig:
    return apply_overrides(parse_scenario(spec.scenario), spec.overrides)


def _ensure_outdir(spec: CommandSpec, config: SimulationConfig,
                   kind: str) -> Path:
    override = spec.outdir
    if override is None and config.outdir is None:
        override = f"{kind}-{config_hash(config)[:12]}"
    out = resolve_output_dir(config, override)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ============================================================
# run
# ============================================================

def cmd_run(spec: CommandSpec) -> int:
    config = _load_config(spec)
    if spec.index is not None and spec.index < 1:
        raise ScenarioValidationError(["--index must be a positive integer"])
    n = spec.index if spec.index is not None else max(config.ladder_indices)
    outdir = _ensure_outdir(spec, config, "run")

    traj = run(config, n)
    constants = embedding_constants(config.grid())
    ledger = energy_check(traj, config, constants.L_P)

    manifest = RunManifest(config)
    scen_path = outdir / "scenario.toml"
    scen_path.write_text(serialize_scenario(config), encoding="utf-8")
    manifest.record_file(scen_path, outdir)
    ts_path = write_timeseries(traj, ledger, outdir / "timeseries.csv")
    manifest.record_file(ts_path, outdir)
    for k in traj.snapshot_indices():
        snap = write_snapshot(traj.field(k), traj.times[k],
                              outdir / f"snapshot-{k:06d}.vtk",
                              traj.member.at(k))
        manifest.record_file(snap, outdir)

    energy_status = "pass" if ledger.ok() else "fail"
    manifest.record_check("energy", energy_status)
    obstacle = config.make_obstacle()
    blockage_status = None
    if obstacle.blockage_t0 is not None:
        report = blockage_check(traj, obstacle.blockage_t0)
        blockage_status = report.status
        manifest.record_check("blockage", blockage_status)
    manifest.write(outdir / "manifest.json")

    print(f"index {n}: {traj.steps} steps, peak iterations "
          f"{int(traj.iters.max())}, worst violation "
          f"{traj.violation.max():.3e}")
    print(f"energy: {energy_status}")
    if blockage_status is not None:
        print(f"blockage: {blockage_status}")
    print(f"outputs: {outdir}")
    return EXIT_OK


# ============================================================
# ladder
# ============================================================

def cmd_ladder(spec: CommandSpec) -> int:
    config = _load_config(spec)
    if len(config.ladder_indices) < 2:
        print("error: ladder needs >= 2 indices", file=sys.stderr)
        return EXIT_CONFIG
    outdir = _ensure_outdir(spec, config, "ladder")
    lrun = run_ladder(config)
    csv_path = write_ladder_csv(lrun, outdir / "ladder.csv")
    verdict = cauchy_verdict(lrun)
    manifest = RunManifest(config)
    manifest.record_file(csv_path, outdir)
    manifest.record_check("cauchy", verdict)
    manifest.write(outdir / "manifest.json")
    for a, b, d in lrun.cauchy_pairs():
        print(f"D({a},{b}) = {d:.6e}")
    print(f"verdict: {verdict}")
    print(f"outputs: {outdir}")
    return EXIT_OK


# ============================================================
# verify
# ============================================================

def _zero_field(grid) -> VectorField:
    return VectorField(grid, np.zeros((grid.nx + 1, grid.ny)),
                       np.zeros((grid.nx, grid.ny + 1)))


def _check_energy(traj, config, constants, ledger):
    s = ledger.summary()
    return s["status"], ledger.rows(), \
        f"worst margin {s['worst']:.3e} vs allowance {-s['threshold']:.3e}"


def _check_global_vi(traj, config, constants, ledger):
    obstacle = config.make_obstacle()
    family = TestFunctionFamily(obstacle, traj.grid, traj.times)
    zero = _zero_field(traj.grid)
    family.add("zero", lambda t: zero)
    report = global_vi_residual(traj, family, traj.member)
    evaluator = report.per_member["zero"][0]
    probe = ledger.zero_probe_residual()
    gap = abs(evaluator - probe)
    # two independent code paths must land on the same number
    status = "pass" if gap <= 1e-8 * max(1.0, abs(probe)) else "fail"
    rows = report.rows() + [("zero-vs-ledger-gap", gap, 0.0)]
    return status, rows, f"two-path gap {gap:.3e}"


def _check_perturbation(traj, config, constants, ledger):
    v = traj.field(traj.steps // 2)
    w = traj.field(traj.steps)
    report = perturbation_structure_check(v, w)
    s = report.summary()
    return s["status"], report.rows(), \
        f"skew remainder {s['worst']:.3e} vs {s['threshold']:.3e}"


def _check_bv(traj, config, constants, ledger):
    obstacle = config.make_obstacle()
    if not obstacle.kappas:
        return "not-applicable", None, "preset declares no level threshold"
    kappa = float(obstacle.kappas[0])
    grid = traj.grid
    horizon = config.horizon
    # widest time window whose level set p > kappa keeps a few whole cells
    for frac in (1.0, 0.5, 0.25, 0.125):
        t_end = horizon * frac
        window = traj.times[traj.times <= t_end + 1e-12]
        if len(window) < 2:
            break
        region = region_classify(obstacle, grid, window, kappa)
        mask = (region.super_level | region.infinite_set).all(axis=0)
        mask &= grid.interior_cell_mask()
        if mask.sum() >= 4:
            sub = Subcylinder(grid, mask, 0.0, float(window[-1]),
                              label=f"level set > {kappa:g}")
            report = bv_estimate({traj.n: traj}, sub, kappa, constants)
            s = report.summary()
            return s["status"], report.rows(), \
                (f"tv {s['worst']:.3e} vs budget {s['threshold']:.3e} "
                 f"on [0, {window[-1]:g}] ({int(mask.sum())} cells)")
    return "not-applicable", None, \
        f"no cells stay above level {kappa:g} long enough"


def _check_blockage(traj, config, constants, ledger):
    obstacle = config.make_obstacle()
    if obstacle.blockage_t0 is None:
        return "not-applicable", None, "obstacle never closes completely"
    report = blockage_check(traj, obstacle.blockage_t0)
    detail = report.reason if report.status == "not-applicable" else \
        f"worst speed after t0 {report.worst_after():.3e}"
    return report.status, report.rows(), detail


_VERIFY_HANDLERS = {
    "energy": _check_energy,
    "global-vi": _check_global_vi,
    "perturbation": _check_perturbation,
    "bv": _check_bv,
    "blockage": _check_blockage,
}


def cmd_verify(spec: CommandSpec) -> int:
    if spec.only is not None and spec.only not in VERIFY_CHECKS:
        raise ScenarioValidationError(
            [f"unknown check '{spec.only}' "
             f"(available: {', '.join(VERIFY_CHECKS)})"])
    config = _load_config(spec)
    outdir = _ensure_outdir(spec, config, "verify")
    selected = [spec.only] if spec.only else list(VERIFY_CHECKS)

    n = max(config.ladder_indices)
    traj = run(config, n)
    constants = embedding_constants(config.grid())
    ledger = energy_check(traj, config, constants.L_P)

    manifest = RunManifest(config)
    failing = []
    for name in selected:
        status, rows, detail = _VERIFY_HANDLERS[name](
            traj, config, constants, ledger)
        manifest.record_check(name, status)
        report_path = None
        if rows:
            report_path = write_rows_csv(rows, outdir / f"check-{name}.csv")
            manifest.record_file(report_path, outdir)
        line = f"{name}: {status}"
        if spec.verbosity or status == "fail":
            line += f" ({detail})"
        print(line)
        if status == "fail":
            failing.append(report_path)
    manifest.write(outdir / "manifest.json")
    print(f"outputs: {outdir}")
    if failing:
        for path in failing:
            print(f"failing report: {path}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# ============================================================
# constants and project
# ============================================================

def cmd_constants(spec: CommandSpec) -> int:
    config = _load_config(spec)
    outdir = _ensure_outdir(spec, config, "constants")
    report = embedding_constants(config.grid())
    rows = [("constant", "value", "method", "sweeps")] + report.rows()
    path = write_rows_csv(rows, outdir / "constants.csv")
    for name, value, _method, _sweeps in report.rows():
        print(f"{name} = {value:.6g}")
    print(f"outputs: {path}")
    return EXIT_OK


def cmd_project(spec: CommandSpec) -> int:
    ux, uy, radius = spec.vector
    if math.isnan(ux) or math.isnan(uy) or math.isnan(radius):
        raise ScenarioValidationError(["project arguments must be numbers"])
    if radius < 0:
        raise ScenarioValidationError(["projection radius must be >= 0"])
    norm = math.hypot(ux, uy)
    if norm <= radius:
        scale = 1.0
    elif norm == 0.0:
        scale = 0.0
    else:
        scale = radius / norm
    print(f"{ux * scale:g} {uy * scale:g}")
    return EXIT_OK


_HANDLERS = {
    "run": cmd_run,
    "ladder": cmd_ladder,
    "verify": cmd_verify,
    "constants": cmd_constants,
    "project": cmd_project,
}


def main(argv=None) -> int:
    try:
        spec = parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _HANDLERS[spec.subcommand](spec)
    except ScenarioValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
