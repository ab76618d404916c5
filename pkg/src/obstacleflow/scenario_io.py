"""Scenario files and run artifacts.

One text format in (TOML scenarios, strictly validated with every problem
reported at once), three formats out: CSV time series and reports, legacy
VTK ASCII snapshots, and a JSON run manifest.  All writers are
deterministic: the same configuration produces byte-identical files, so
outputs can be diffed and hashed in tests.  Timestamps honour the
SOURCE_DATE_EPOCH convention for that reason.
"""

from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigurationError, DomainError, ScenarioValidationError
from .grid import VectorField
from .obstacle import OBSTACLE_PRESETS
from .stepper import (
    FORCING_PRESETS,
    INITIAL_PRESETS,
    LadderRun,
    SimulationConfig,
    TrajectoryRecord,
)

__all__ = [
    "ENV_OUTPUT_ROOT",
    "RunManifest",
    "ScenarioFile",
    "cauchy_verdict",
    "config_hash",
    "load_scenario",
    "parse_scenario",
    "read_snapshot",
    "resolve_output_dir",
    "serialize_scenario",
    "write_ladder_csv",
    "write_rows_csv",
    "write_snapshot",
    "write_timeseries",
]

ENV_OUTPUT_ROOT = "OBSTACLEFLOW_OUTPUT_ROOT"

# parameters each preset accepts; anything else in its table is rejected
OBSTACLE_PARAMS = {
    "free-flow": frozenset(),
    "lid-free-check": frozenset(),
    "uniform": frozenset({"value"}),
    "narrowing-channel": frozenset({"p_out", "theta0", "theta1",
                                    "t_ramp", "cx", "width"}),
    "growing-disk": frozenset({"cx", "cy", "r0", "rate", "w"}),
    "total-blockage": frozenset({"p_max", "fractions"}),
}
INITIAL_PARAMS = {
    "zero": frozenset(),
    "taylor-green": frozenset({"amplitude"}),
    "bump-vortex": frozenset({"amplitude", "cx", "cy", "radius"}),
    "double-bump": frozenset({"amplitude1", "amplitude2",
                              "radius1", "radius2"}),
}
FORCING_PARAMS = {
    "none": frozenset(),
    "swirl": frozenset({"amplitude", "omega"}),
}

# parameters that are arrays of numbers rather than single numbers
_ARRAY_PARAMS = {"fractions"}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return _is_int(v) or isinstance(v, float)


def _is_number_array(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_number(x) for x in v)


def _is_int_array(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_int(x) for x in v)


# ============================================================
# scenario parsing
# ============================================================

class ScenarioFile:
    """Raw parsed scenario: the section tables exactly as read from disk.

    Validation lives in to_config(): it collects every structural problem
    (unknown sections or keys, wrong types, missing required keys) before
    handing the values to SimulationConfig, which adds the semantic checks.
    The caller therefore sees one exception listing all errors.
    """

    SECTIONS = ("grid", "time", "physics", "obstacle", "ladder",
                "forcing", "initial", "outputs", "tolerances")

    def __init__(self, data: dict, path=None):
        if not isinstance(data, dict):
            raise ScenarioValidationError(["scenario must be a table of sections"])
        self.data = data
        self.path = Path(path) if path is not None else None

    @classmethod
    def load(cls, path) -> "ScenarioFile":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioValidationError([f"{path}: {exc}"]) from exc
        except UnicodeDecodeError as exc:
            raise ScenarioValidationError([f"{path}: not UTF-8: {exc}"]) from exc
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioValidationError([f"{path}: invalid TOML: {exc}"]) from exc
        return cls(data, path)

    # ---- extraction helpers ----

    def _section(self, name):
        sec = self.data.get(name)
        return sec if isinstance(sec, dict) else {}

    def to_config(self) -> SimulationConfig:
        problems = []
        data = self.data
        for name in data:
            if name not in self.SECTIONS:
                avail = ", ".join(self.SECTIONS)
                problems.append(f"unknown section [{name}] (sections: {avail})")
            elif not isinstance(data[name], dict):
                problems.append(f"[{name}] must be a table")

        def need(section, key, check, what):
            sec = self._section(section)
            if key not in sec:
                problems.append(f"{section}.{key} is required")
                return None
            if not check(sec[key]):
                problems.append(f"{section}.{key} must be {what}")
                return None
            return sec[key]

        def opt(section, key, check, what, default):
            sec = self._section(section)
            if key not in sec:
                return default
            if not check(sec[key]):
                problems.append(f"{section}.{key} must be {what}")
                return default
            return sec[key]

        def extra_keys(section, allowed):
            for key in self._section(section):
                if key not in allowed:
                    problems.append(f"unknown key {section}.{key}")

        nx = need("grid", "nx", _is_int, "an integer")
        ny = need("grid", "ny", _is_int, "an integer")
        lx = opt("grid", "lx", _is_number, "a number", 1.0)
        ly = opt("grid", "ly", _is_number, "a number", 1.0)
        extra_keys("grid", {"nx", "ny", "lx", "ly"})

        tau = need("time", "tau", _is_number, "a number")
        horizon = need("time", "horizon", _is_number, "a number")
        extra_keys("time", {"tau", "horizon"})

        nu = need("physics", "nu", _is_number, "a number")
        extra_keys("physics", {"nu"})

        indices = opt("ladder", "indices", _is_int_array,
                      "an array of integers", [8, 16])
        extra_keys("ladder", {"indices"})

        obstacle, obstacle_params = self._preset_block(
            "obstacle", "free-flow", OBSTACLE_PRESETS, OBSTACLE_PARAMS, problems)
        forcing, forcing_params = self._preset_block(
            "forcing", "none", FORCING_PRESETS, FORCING_PARAMS, problems)
        initial, initial_params = self._preset_block(
            "initial", "zero", INITIAL_PRESETS, INITIAL_PARAMS, problems)

        cadence = opt("outputs", "cadence", _is_int, "an integer", 1)
        outdir = opt("outputs", "directory",
                     lambda v: isinstance(v, str), "a string", None)
        extra_keys("outputs", {"cadence", "directory"})

        feas_tol = opt("tolerances", "feas_tol", _is_number, "a number", 1e-8)
        kkt_tol = opt("tolerances", "kkt_tol", _is_number, "a number", 1e-7)
        max_iter = opt("tolerances", "max_iter", _is_int, "an integer", 4000)
        extra_keys("tolerances", {"feas_tol", "kkt_tol", "max_iter"})

        if problems:
            raise ScenarioValidationError(problems)
        return SimulationConfig(
            nx, ny, tau, horizon, nu,
            obstacle=obstacle, obstacle_params=obstacle_params,
            ladder_indices=tuple(indices),
            forcing=forcing, forcing_params=forcing_params,
            initial=initial, initial_params=initial_params,
            extents=(float(lx), float(ly)), cadence=cadence,
            feas_tol=float(feas_tol), kkt_tol=float(kkt_tol),
            max_iter=max_iter, outdir=outdir)

    def _preset_block(self, section, default, registry, param_lists, problems):
        sec = self._section(section)
        name = sec.get("preset", default)
        params = {k: v for k, v in sec.items() if k != "preset"}
        if not isinstance(name, str):
            problems.append(f"{section}.preset must be a string")
            return default, {}
        if name not in registry:
            avail = ", ".join(sorted(registry))
            problems.append(f"unknown {section} preset '{name}' "
                            f"(available: {avail})")
            return name, params
        allowed = param_lists[name]
        for key in sorted(params):
            if key not in allowed:
                takes = ", ".join(sorted(allowed)) if allowed else "no parameters"
                problems.append(f"unknown key {section}.{key} "
                                f"(preset '{name}' takes: {takes})")
            elif key in _ARRAY_PARAMS:
                if not _is_number_array(params[key]):
                    problems.append(f"{section}.{key} must be an array of numbers")
            elif not _is_number(params[key]):
                problems.append(f"{section}.{key} must be a number")
        return name, params


def load_scenario(path) -> ScenarioFile:
    return ScenarioFile.load(path)


def parse_scenario(path) -> SimulationConfig:
    """Read, parse and fully validate a scenario file.

    Raises ScenarioValidationError carrying the complete problem list,
    each message prefixed with its dotted key.
    """
    return ScenarioFile.load(path).to_config()


# ============================================================
# canonical serialization and hashing
# ============================================================

# fixed key order for the sections whose keys are closed; preset sections
# emit "preset" first and their parameters sorted
_CANONICAL_ORDER = {
    "grid": ("nx", "ny", "lx", "ly"),
    "time": ("tau", "horizon"),
    "physics": ("nu",),
    "ladder": ("indices",),
    "outputs": ("cadence", "directory"),
    "tolerances": ("feas_tol", "kkt_tol", "max_iter"),
}


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return repr(v)
    if isinstance(v, float):
        return repr(v)                     # shortest exact round-trip
    if isinstance(v, str):
        return json.dumps(v)               # valid TOML basic string
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigurationError(f"cannot serialize value {v!r} to a scenario file")


def serialize_scenario(config: SimulationConfig) -> str:
    """Canonical TOML text: fixed section and key order, exact floats.

    parse(serialize(config)) == config, and equal configs serialize to
    identical bytes, which makes the config hash well defined.
    """
    d = config.to_dict()
    lines = []
    for section in ScenarioFile.SECTIONS:
        table = d[section]
        order = _CANONICAL_ORDER.get(section)
        if order is None:
            keys = ["preset"] + sorted(k for k in table if k != "preset")
        else:
            keys = [k for k in order if k in table]
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_toml_value(table[key])}")
        lines.append("")
    return "\n".join(lines)


def config_hash(config: SimulationConfig) -> str:
    return hashlib.sha256(serialize_scenario(config).encode("utf-8")).hexdigest()


# ============================================================
# output location
# ============================================================

def resolve_output_dir(config: SimulationConfig, override=None) -> Path:
    """Pick the run directory: CLI override, then scenario, then a hash name.

    A relative result is rooted at $OBSTACLEFLOW_OUTPUT_ROOT when that is
    set, else at the working directory.
    """
    target = override or config.outdir or ("run-" + config_hash(config)[:12])
    target = Path(target)
    if not target.is_absolute():
        root = os.environ.get(ENV_OUTPUT_ROOT)
        if root:
            target = Path(root) / target
    return target


# ============================================================
# run manifest
# ============================================================

def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        try:
            dt = datetime.fromtimestamp(int(epoch), timezone.utc)
        except (ValueError, OverflowError, OSError):
            dt = datetime.now(timezone.utc)
    else:
        dt = datetime.now(timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


class RunManifest:
    """Summary record of one run: config hash, checks, file inventory.

    Written exactly once; a second write() call or an existing file at the
    target path is refused.  With SOURCE_DATE_EPOCH set the bytes are a
    pure function of the run outputs.
    """

    def __init__(self, config: SimulationConfig, code_version=None):
        self.config_hash = config_hash(config)
        self.code_version = code_version or __version__
        self.created = _timestamp()
        self.checks = {}
        self.files = []
        self._written_to = None

    def record_check(self, name, status):
        self.checks[str(name)] = str(status)

    def record_file(self, path, root=None):
        """Add one output file: relative path, byte size, content hash."""
        path = Path(path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if root is not None:
            try:
                shown = path.relative_to(root).as_posix()
            except ValueError:
                shown = path.name
        else:
            shown = path.name
        self.files.append({"path": shown, "bytes": path.stat().st_size,
                           "sha256": digest})

    def as_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "created": self.created,
            "checks": dict(self.checks),
            "files": sorted(self.files, key=lambda f: f["path"]),
        }

    def write(self, path) -> Path:
        path = Path(path)
        if self._written_to is not None:
            raise ConfigurationError(
                f"manifest already written to {self._written_to}")
        if path.exists():
            raise ConfigurationError(
                f"refusing to overwrite existing manifest {path}")
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"
        path.write_text(text, encoding="utf-8")
        self._written_to = path
        return path


# ============================================================
# CSV writers
# ============================================================

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_rows_csv(rows, path) -> Path:
    """Write header-plus-tuples rows as CSV with exact float text."""
    rows = list(rows)
    if not rows:
        raise DomainError("cannot write an empty CSV")
    path = Path(path)
    out = [",".join(str(c) for c in rows[0])]
    out += [",".join(_fmt(c) for c in row) for row in rows[1:]]
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


TIMESERIES_COLUMNS = ("t", "l2_norm", "h1_seminorm", "cumulative_dissipation",
                      "energy_lhs", "M0", "constraint_violation",
                      "step_iters", "step_residual")


def write_timeseries(traj: TrajectoryRecord, ledger, path) -> Path:
    """Per-time CSV: norms, running dissipation, energy budget, solver stats.

    K steps give K + 1 rows (t = 0 included).  The dissipation column holds
    the running sum alone, so its monotonicity is checkable without
    untangling the |u|^2 term from the energy left-hand side.
    """
    if not np.array_equal(ledger.times, traj.times):
        raise ConfigurationError(
            "trajectory and energy ledger disagree on the time partition")
    dissipation = ledger.lhs - traj.l2 ** 2
    rows = [TIMESERIES_COLUMNS]
    for k in range(len(traj.times)):
        rows.append((traj.times[k], traj.l2[k], traj.h1[k], dissipation[k],
                     ledger.lhs[k], ledger.m0, traj.violation[k],
                     int(traj.iters[k]), traj.residual[k]))
    return write_rows_csv(rows, path)


def cauchy_verdict(run: LadderRun) -> str:
    """"nonincreasing" when consecutive ladder distances never grow."""
    pairs = run.cauchy_pairs()
    for (a, b, d1), (_, c, d2) in zip(pairs, pairs[1:]):
        if d2 > d1:
            return f"increased at D({b},{c})"
    return "nonincreasing"


def write_ladder_csv(run: LadderRun, path) -> Path:
    """Full distance matrix D(n, m) over the ladder indices."""
    idx = run.indices
    rows = [("n",) + tuple(idx)]
    for i, n in enumerate(idx):
        rows.append((n,) + tuple(run.distances[i]))
    return write_rows_csv(rows, path)


# ============================================================
# VTK snapshots
# ============================================================

def write_snapshot(field: VectorField, time, path, radii=None) -> Path:
    """One legacy-VTK ASCII structured-points frame.

    Cell centers become the point lattice (origin h/2, spacing h); point
    data holds the interpolated velocity vectors, the regularized obstacle
    radius, and the speed.  radii = None means unconstrained, written as
    inf.  Bytes are a pure function of the inputs.
    """
    grid = field.grid
    vec = field.center_vectors()
    speed = field.center_speed()
    if radii is None:
        rad = np.full((grid.nx, grid.ny), np.inf)
    else:
        rad = np.asarray(radii, dtype=float)
        if rad.shape != (grid.nx, grid.ny):
            raise DomainError(
                f"radii must be cell-centered {(grid.nx, grid.ny)}, "
                f"got {rad.shape}")
    lines = [
        "# vtk DataFile Version 3.0",
        f"obstacleflow snapshot t={_fmt(float(time))}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {grid.nx} {grid.ny} 1",
        f"ORIGIN {_fmt(grid.h / 2)} {_fmt(grid.h / 2)} 0",
        f"SPACING {_fmt(grid.h)} {_fmt(grid.h)} 1",
        f"POINT_DATA {grid.nx * grid.ny}",
        "VECTORS velocity double",
    ]
    # x varies fastest, the structured-points convention
    for j in range(grid.ny):
        for i in range(grid.nx):
            lines.append(f"{_fmt(vec[i, j, 0])} {_fmt(vec[i, j, 1])} 0")
    lines += ["SCALARS radius double 1", "LOOKUP_TABLE default"]
    for j in range(grid.ny):
        for i in range(grid.nx):
            lines.append(_fmt(rad[i, j]))
    lines += ["SCALARS speed double 1", "LOOKUP_TABLE default"]
    for j in range(grid.ny):
        for i in range(grid.nx):
            lines.append(_fmt(speed[i, j]))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_snapshot(path) -> dict:
    """Reparse a snapshot written by write_snapshot.

    Returns dimensions, origin, spacing, time and the three data blocks;
    the round-trip partner for tests and the scriptable diff hook.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 9 or lines[2] != "ASCII" \
            or lines[3] != "DATASET STRUCTURED_POINTS":
        raise ConfigurationError(f"{path}: not a snapshot file")
    dims = tuple(int(x) for x in lines[4].split()[1:])
    origin = tuple(float(x) for x in lines[5].split()[1:])
    spacing = tuple(float(x) for x in lines[6].split()[1:])
    count = int(lines[7].split()[1])
    time = float(lines[1].rsplit("t=", 1)[1])
    pos = 9
    velocity = np.array([[float(x) for x in lines[pos + k].split()]
                         for k in range(count)])
    pos += count
    blocks = {}
    for name in ("radius", "speed"):
        if not lines[pos].startswith(f"SCALARS {name}"):
            raise ConfigurationError(f"{path}: missing SCALARS {name} block")
        pos += 2                            # SCALARS line + LOOKUP_TABLE line
        blocks[name] = np.array([float(lines[pos + k]) for k in range(count)])
        pos += count
    return {
        "title": lines[1],
        "time": time,
        "dimensions": dims,
        "origin": origin,
        "spacing": spacing,
        "velocity": velocity,
        "radius": blocks["radius"],
        "speed": blocks["speed"],
    }
