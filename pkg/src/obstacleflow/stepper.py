"""Implicit time marching of the speed-constrained flow.

One trajectory solves the regularized problem for a single ladder index n:
backward Euler in time, with the cell radius slice taken at the end-of-step
time (the implicit convention), each step handed to the splitting solver in
vi_step.  A ladder run repeats this across indices on the shared grid and
time partition and fills the pairwise L2-in-space-time distance matrix used
as the convergence probe.

Forcing and initial-data presets live here as well: every preset is built
from a stream function on grid nodes, so the fields are discretely
divergence-free by construction.
"""

import numpy as np

from .errors import (
    ConfigurationError,
    ScenarioValidationError,
    StepNonConvergence,
)
from .grid import MacGrid, VectorField, norm_L2, seminorm_H1
from .obstacle import (
    OBSTACLE_PRESETS,
    LadderMember,
    ObstacleField,
    build_ladder,
    make_obstacle,
)
from .vi_step import SplitParams, StepProblem, shrink_test_function, solve_step


# ============================================================
# field presets
# ============================================================

def _zero_field(grid, params, t=None):
    return VectorField(grid, np.zeros((grid.nx + 1, grid.ny)),
                       np.zeros((grid.nx, grid.ny + 1)))


def _stream_bump(X, Y, cx, cy, r):
    # C^2 compactly supported bump, zero outside the disk of radius r
    s2 = ((X - cx) / r) ** 2 + ((Y - cy) / r) ** 2
    return np.where(s2 < 1.0, (1.0 - s2) ** 3, 0.0)


def _initial_zero(grid, params):
    return _zero_field(grid, params)


def _initial_taylor_green(grid, params):
    amp = float(params.get("amplitude", 1.0))
    lx, ly = grid.nx * grid.h, grid.ny * grid.h
    X, Y = grid.node_coords()
    psi = (amp / np.pi) * np.sin(np.pi * X / lx) * np.sin(np.pi * Y / ly)
    return VectorField.from_stream(grid, psi)


def _initial_bump_vortex(grid, params):
    amp = float(params.get("amplitude", 1.0))
    cx = float(params.get("cx", 0.5))
    cy = float(params.get("cy", 0.5))
    r = float(params.get("radius", 0.3))
    if r <= 0:
        raise ConfigurationError("bump-vortex radius must be positive")
    X, Y = grid.node_coords()
    return VectorField.from_stream(grid, amp * _stream_bump(X, Y, cx, cy, r))


def _initial_double_bump(grid, params):
    # two counter-rotating compact vortices; deliberately asymmetric.
    # peak speed of one bump is about 1.72 |amp| / radius
    a1 = float(params.get("amplitude1", 0.04))
    a2 = float(params.get("amplitude2", -0.025))
    r1 = float(params.get("radius1", 0.25))
    r2 = float(params.get("radius2", 0.2))
    if r1 <= 0 or r2 <= 0:
        raise ConfigurationError("double-bump radii must be positive")
    X, Y = grid.node_coords()
    psi = (a1 * _stream_bump(X, Y, 0.3, 0.55, r1)
           + a2 * _stream_bump(X, Y, 0.68, 0.4, r2))
    return VectorField.from_stream(grid, psi)


def _forcing_none(grid, params, t):
    return _zero_field(grid, params)


def _forcing_swirl(grid, params, t):
    amp = float(params.get("amplitude", 1.0))
    omega = float(params.get("omega", 0.0))
    lx, ly = grid.nx * grid.h, grid.ny * grid.h
    X, Y = grid.node_coords()
    psi = (amp * np.cos(omega * t) / np.pi
           * np.sin(np.pi * X / lx) ** 2 * np.sin(np.pi * Y / ly) ** 2)
    return VectorField.from_stream(grid, psi)


INITIAL_PRESETS = {
    "zero": _initial_zero,
    "taylor-green": _initial_taylor_green,
    "bump-vortex": _initial_bump_vortex,
    "double-bump": _initial_double_bump,
}

FORCING_PRESETS = {
    "none": _forcing_none,
    "swirl": _forcing_swirl,
}


def make_initial(name, grid, params=None) -> VectorField:
    if name not in INITIAL_PRESETS:
        avail = ", ".join(sorted(INITIAL_PRESETS))
        raise ConfigurationError(
            f"unknown initial preset '{name}' (available: {avail})")
    return INITIAL_PRESETS[name](grid, params or {})


def make_forcing(name, grid, params=None):
    """Returns t -> VectorField; the zero preset reuses one shared field."""
    if name not in FORCING_PRESETS:
        avail = ", ".join(sorted(FORCING_PRESETS))
        raise ConfigurationError(
            f"unknown forcing preset '{name}' (available: {avail})")
    builder = FORCING_PRESETS[name]
    params = params or {}
    if name == "none":
        frozen = _zero_field(grid, params)
        return lambda t: frozen
    return lambda t: builder(grid, params, t)


# ============================================================
# configuration
# ============================================================

def _plain_params(params):
    # tuples become lists so params stay scenario-file representable and
    # round-trip through serialization without changing equality
    out = {}
    for key, val in dict(params or {}).items():
        if isinstance(val, tuple):
            val = list(val)
        out[key] = val
    return out


class SimulationConfig:
    """Validated description of one simulation: grid, physics, presets, output.

    Collects every validation problem before raising, so scenario files get
    a complete error list in one pass.
    """

    def __init__(self, nx, ny, tau, horizon, nu,
                 obstacle="free-flow", obstacle_params=None,
                 ladder_indices=(8, 16),
                 forcing="none", forcing_params=None,
                 initial="zero", initial_params=None,
                 extents=(1.0, 1.0), cadence=1,
                 feas_tol=1e-8, kkt_tol=1e-7, max_iter=4000,
                 outdir=None):
        problems = []
        if not (isinstance(nx, int) and isinstance(ny, int) and nx >= 4 and ny >= 4):
            problems.append("grid.nx and grid.ny must be integers >= 4")
        lx, ly = float(extents[0]), float(extents[1])
        if lx <= 0 or ly <= 0:
            problems.append("grid extents must be positive")
        elif nx >= 4 and ny >= 4 and abs(lx / nx - ly / ny) > 1e-12:
            problems.append("grid cells must be square (lx/nx == ly/ny)")
        if not tau > 0:
            problems.append("time.tau must be > 0")
        if not horizon > 0:
            problems.append("time.horizon must be > 0")
        if tau > 0 and horizon > 0:
            k = round(horizon / tau)
            if k < 1 or abs(k * tau - horizon) > 1e-9 * horizon:
                problems.append("time.tau must divide time.horizon")
        if not nu > 0:
            problems.append("physics.nu must be > 0")
        indices = tuple(int(n) for n in ladder_indices)
        if not indices or any(n < 1 for n in indices):
            problems.append("ladder.indices must be positive integers")
        elif any(b <= a for a, b in zip(indices, indices[1:])):
            problems.append("ladder.indices must be strictly increasing")
        if obstacle not in OBSTACLE_PRESETS:
            avail = ", ".join(sorted(OBSTACLE_PRESETS))
            problems.append(f"unknown obstacle preset '{obstacle}' "
                            f"(available: {avail})")
        if forcing not in FORCING_PRESETS:
            avail = ", ".join(sorted(FORCING_PRESETS))
            problems.append(f"unknown forcing preset '{forcing}' "
                            f"(available: {avail})")
        if initial not in INITIAL_PRESETS:
            avail = ", ".join(sorted(INITIAL_PRESETS))
            problems.append(f"unknown initial preset '{initial}' "
                            f"(available: {avail})")
        if not (isinstance(cadence, int) and cadence >= 1):
            problems.append("outputs.cadence must be an integer >= 1")
        if not (feas_tol > 0 and kkt_tol > 0):
            problems.append("tolerances must be positive")
        if not (isinstance(max_iter, int) and max_iter >= 1):
            problems.append("tolerances.max_iter must be an integer >= 1")
        if problems:
            raise ScenarioValidationError(problems)

        self.nx, self.ny = nx, ny
        self.extents = (lx, ly)
        self.tau = float(tau)
        self.horizon = float(horizon)
        self.nu = float(nu)
        self.obstacle = obstacle
        self.obstacle_params = _plain_params(obstacle_params)
        self.ladder_indices = indices
        self.forcing = forcing
        self.forcing_params = _plain_params(forcing_params)
        self.initial = initial
        self.initial_params = _plain_params(initial_params)
        self.cadence = cadence
        self.feas_tol = float(feas_tol)
        self.kkt_tol = float(kkt_tol)
        self.max_iter = max_iter
        self.outdir = outdir

    @property
    def steps(self) -> int:
        return round(self.horizon / self.tau)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.tau

    def grid(self) -> MacGrid:
        return MacGrid(self.nx, self.ny, self.extents[0] / self.nx)

    def make_obstacle(self) -> ObstacleField:
        return make_obstacle(self.obstacle, self.obstacle_params,
                             self.extents, self.horizon)

    def split_params(self) -> SplitParams:
        return SplitParams(feas_tol=self.feas_tol, kkt_tol=self.kkt_tol,
                           max_iter=self.max_iter)

    def to_dict(self) -> dict:
        d = {
            "grid": {"nx": self.nx, "ny": self.ny,
                     "lx": self.extents[0], "ly": self.extents[1]},
            "time": {"tau": self.tau, "horizon": self.horizon},
            "physics": {"nu": self.nu},
            "obstacle": {"preset": self.obstacle, **self.obstacle_params},
            "ladder": {"indices": list(self.ladder_indices)},
            "forcing": {"preset": self.forcing, **self.forcing_params},
            "initial": {"preset": self.initial, **self.initial_params},
            "outputs": {"cadence": self.cadence},
            "tolerances": {"feas_tol": self.feas_tol,
                           "kkt_tol": self.kkt_tol,
                           "max_iter": self.max_iter},
        }
        if self.outdir is not None:
            d["outputs"]["directory"] = str(self.outdir)
        return d

    def __eq__(self, other):
        return (isinstance(other, SimulationConfig)
                and self.to_dict() == other.to_dict())

    def __repr__(self):
        return (f"SimulationConfig({self.obstacle!r}, {self.nx}x{self.ny}, "
                f"tau={self.tau}, T={self.horizon}, nu={self.nu}, "
                f"n={self.ladder_indices})")


# ============================================================
# trajectory records
# ============================================================

class TrajectoryRecord:
    """Complete state history of one marched trajectory.

    dofs[k] is the interior dof vector at t_k; g_dofs[k-1] is the forcing
    used for the step ending at t_k.  Scalars are per recorded time:
    iterations and residual are zero at k = 0.
    """

    def __init__(self, config, n, times, dofs, g_dofs, l2, h1,
                 violation, iters, residual, member=None):
        self.config = config
        self.n = n
        self.times = np.asarray(times, dtype=float)
        self.dofs = np.asarray(dofs, dtype=float)
        self.g_dofs = np.asarray(g_dofs, dtype=float)
        self.l2 = np.asarray(l2, dtype=float)
        self.h1 = np.asarray(h1, dtype=float)
        self.violation = np.asarray(violation, dtype=float)
        self.iters = np.asarray(iters, dtype=int)
        self.residual = np.asarray(residual, dtype=float)
        self.member = member
        scalars = np.concatenate([self.l2, self.h1, self.violation,
                                  self.residual])
        if not np.all(np.isfinite(scalars)):
            raise ConfigurationError("trajectory scalars must be finite")

    @property
    def grid(self) -> MacGrid:
        return self.config.grid()

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def field(self, k) -> VectorField:
        return VectorField.from_dof(self.grid, self.dofs[k])

    def forcing_field(self, k) -> VectorField:
        """Forcing used in the step from t_{k-1} to t_k (k >= 1)."""
        return VectorField.from_dof(self.grid, self.g_dofs[k - 1])

    def snapshot_indices(self):
        ks = list(range(0, self.steps + 1, self.config.cadence))
        if ks[-1] != self.steps:
            ks.append(self.steps)          # final state always recorded
        return ks

    def snapshots(self):
        return [(self.times[k], self.field(k)) for k in self.snapshot_indices()]

    def l2_distance(self, other: "TrajectoryRecord") -> float:
        """Discrete L2(space-time) distance, right-endpoint quadrature."""
        if self.dofs.shape != other.dofs.shape:
            raise ConfigurationError("trajectories live on different partitions")
        tau = self.config.tau
        h = self.grid.h
        diff = self.dofs[1:] - other.dofs[1:]
        return float(np.sqrt(tau * np.sum(h ** 2 * diff ** 2)))


class LadderRun:
    """Trajectories for every ladder index plus their distance matrix."""

    def __init__(self, config, records, distances):
        self.config = config
        self.records = records                # dict n -> TrajectoryRecord
        self.distances = np.asarray(distances, dtype=float)

    @property
    def indices(self):
        return sorted(self.records)

    def distance(self, n, m) -> float:
        idx = self.indices
        return float(self.distances[idx.index(n), idx.index(m)])

    def cauchy_pairs(self):
        """D(n, m) over consecutive index pairs, the Cauchy-sequence probe."""
        idx = self.indices
        return [(a, b, self.distance(a, b)) for a, b in zip(idx, idx[1:])]


# ============================================================
# initial data
# ============================================================

def build_initial_data(u0: VectorField, p: ObstacleField,
                       member: LadderMember) -> VectorField:
    """Shrink u0 into the regularized constraint set at t = 0.

    The support margin delta (largest level with supp(u0) inside
    {p(.,0) >= delta}) is found by a lattice scan; the returned field is
    (1 - delta_n)^+ u0 and never exceeds u0 in L2 norm.
    """
    grid = u0.grid
    p0 = p.sample(grid, 0.0)
    speeds = u0.center_speed()
    support = speeds > 0
    if support.any():
        if np.any(p0[support] <= 0):
            raise ConfigurationError(
                "initial data is supported where the obstacle vanishes at "
                "t = 0; no positive support margin exists")
        if np.any(speeds[support] > p0[support] * (1 + 1e-12)):
            raise ConfigurationError(
                "initial speed exceeds the obstacle at t = 0")
        margin = float(p0[support].min())
        if not np.isfinite(margin):
            margin = 1.0 + float(speeds.max())
    else:
        margin = 1.0
    _, u0n = shrink_test_function(u0, margin, p0, member.at(0))
    return u0n


# ============================================================
# marching
# ============================================================

def _march(config: SimulationConfig, member, u0n: VectorField,
           radii_of=None) -> TrajectoryRecord:
    """Backward-Euler march; radii_of(k) overrides the member slice lookup."""
    grid = u0n.grid
    times = config.times
    forcing = make_forcing(config.forcing, grid, config.forcing_params)
    params = config.split_params()
    if radii_of is None:
        radii_of = member.at

    def violation(field, radii):
        over = field.center_speed() - radii
        over = over[np.isfinite(radii)]          # (|u| - inf)+ is zero
        return float(np.maximum(over, 0.0).max()) if over.size else 0.0

    dofs = [u0n.dof()]
    g_dofs = []
    l2 = [norm_L2(u0n)]
    h1 = [seminorm_H1(u0n)]
    viol = [violation(u0n, radii_of(0))]
    iters = [0]
    resid = [0.0]

    u = u0n
    warm = None
    n_label = getattr(member, "n", 0)
    for k in range(config.steps):
        g_k = forcing(times[k + 1])
        radii = radii_of(k + 1)
        prob = StepProblem(u, radii, g_k, nu=config.nu, tau=config.tau)
        try:
            sol = solve_step(prob, params, warm=warm)
        except StepNonConvergence as exc:
            exc.partial = TrajectoryRecord(
                config, n_label, times[: k + 1], np.array(dofs),
                np.array(g_dofs) if g_dofs else np.zeros((0, grid.ndof)),
                l2, h1, viol, iters, resid, member=member)
            raise
        warm = sol.warm
        u = sol.u
        dofs.append(u.dof())
        g_dofs.append(g_k.dof())
        l2.append(norm_L2(u))
        h1.append(seminorm_H1(u))
        viol.append(violation(u, radii))
        iters.append(sol.iterations)
        resid.append(max(sol.primal_residual, sol.dual_residual))

    return TrajectoryRecord(config, n_label, times, np.array(dofs),
                            np.array(g_dofs), l2, h1, viol, iters, resid,
                            member=member)


def run(config: SimulationConfig, n: int,
        unconstrained: bool = False) -> TrajectoryRecord:
    """March one ladder member over [0, T].

    With unconstrained=True the obstacle is ignored entirely (every radius
    +inf and the raw initial data): the free-flow twin used as the
    regression oracle, sharing all linear algebra with the constrained path.
    """
    grid = config.grid()
    u0 = make_initial(config.initial, grid, config.initial_params)
    if unconstrained:
        inf_radii = np.full((grid.nx, grid.ny), np.inf)
        return _march(config, None, u0, radii_of=lambda k: inf_radii)
    obstacle = config.make_obstacle()
    ladder = build_ladder(obstacle, [n], grid, config.times)
    u0n = build_initial_data(u0, obstacle, ladder[n])
    return _march(config, ladder[n], u0n)


def run_ladder(config: SimulationConfig) -> LadderRun:
    indices = list(config.ladder_indices)
    if len(indices) < 2:
        raise ConfigurationError("ladder needs at least 2 indices")
    grid = config.grid()
    obstacle = config.make_obstacle()
    ladder = build_ladder(obstacle, indices, grid, config.times)
    u0 = make_initial(config.initial, grid, config.initial_params)
    records = {}
    for n in indices:
        u0n = build_initial_data(u0, obstacle, ladder[n])
        records[n] = _march(config, ladder[n], u0n)
    m = len(indices)
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = records[indices[i]].l2_distance(
                records[indices[j]])
    return LadderRun(config, records, D)
