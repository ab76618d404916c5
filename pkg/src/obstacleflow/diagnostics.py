"""Trajectory diagnostics.

Every check here re-derives a bound the marching scheme is supposed to obey
and evaluates it on recorded data: the running energy budget, the global
inequality residual against admissible comparison paths, the local total
variation of the velocity in a negative-order norm, the two-term structure of
the convection difference, and total flow blockage.  Checks are pure reads of
immutable trajectories; nothing here mutates solver state.

Each report serializes to CSV rows plus a one-line JSON-ready summary dict
(check name, status, worst value, threshold).
"""

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalError
from .grid import (
    VectorField,
    convection_form,
    dual_norm_W_star,
    max_center_speed,
    norm_L2,
    seminorm_H1,
)
from .obstacle import region_classify
from .stepper import make_initial
from .vi_step import divergence_inf, shrink_test_function


# ============================================================
# energy budget
# ============================================================

def energy_bound(u0_sq, nu, L_P, g_sq_integral) -> float:
    """Right side of the a priori energy estimate.

    u0_sq is the squared L2 norm of the raw initial data (before any shrink
    into a regularized constraint set: shrinking only lowers the norm, so the
    raw value bounds every regularized trajectory).  g_sq_integral is the
    time integral of the squared forcing L2 norm over the whole horizon.
    """
    return float(u0_sq) + L_P ** 2 / nu * float(g_sq_integral)


class EnergyLedger:
    """Running discrete energy balance of one trajectory.

    lhs(t_k) = |u_k|^2 + nu tau sum_{j<=k} |u_j|_1^2 (steps only, j >= 1)
    must stay below the horizon constant M0; margin(t_k) = M0 - lhs(t_k).
    Solver slack can push the margin slightly negative, at most kkt_tol per
    step, hence the K * kkt_tol allowance in the pass criterion.
    """

    def __init__(self, times, lhs, m0, kkt_tol, l2, h1, g_dot_u, nu, tau):
        self.times = np.asarray(times, dtype=float)
        self.lhs = np.asarray(lhs, dtype=float)
        self.m0 = float(m0)
        self.kkt_tol = float(kkt_tol)
        self._l2 = np.asarray(l2, dtype=float)
        self._h1 = np.asarray(h1, dtype=float)
        self._g_dot_u = np.asarray(g_dot_u, dtype=float)
        self._nu = float(nu)
        self._tau = float(tau)
        self.margin = self.m0 - self.lhs

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def allowance(self) -> float:
        return max(1, self.steps) * self.kkt_tol

    def flagged(self):
        """Time indices whose margin is negative beyond the slack allowance."""
        return [int(k) for k in np.flatnonzero(self.margin < -self.allowance)]

    def ok(self) -> bool:
        return not self.flagged()

    def zero_probe_residual(self) -> float:
        """Worst accumulated residual of the step inequality probed at z = 0.

        Rebuilt from the ledger's recorded scalars only:
        max_k [ (|u_k|^2 - |u_0|^2)/2 + nu tau sum |u_j|_1^2 - tau sum (g_j, u_j) ].
        The dof-level global-inequality evaluator must reproduce this number
        through its own code path when handed the zero comparison field.
        """
        h1sq = np.cumsum(self._h1[1:] ** 2)
        gsum = np.cumsum(self._g_dot_u)
        vals = (0.5 * (self._l2[1:] ** 2 - self._l2[0] ** 2)
                + self._nu * self._tau * h1sq - self._tau * gsum)
        return float(vals.max())

    def rows(self):
        return [("t", "lhs", "m0", "margin")] + [
            (self.times[k], self.lhs[k], self.m0, self.margin[k])
            for k in range(len(self.times))
        ]

    def summary(self):
        return {
            "check": "energy",
            "status": "pass" if self.ok() else "fail",
            "worst": float(self.margin.min()),
            "threshold": -self.allowance,
        }


def energy_check(traj, config, L_P) -> EnergyLedger:
    """Evaluate the energy budget of a completed trajectory.

    The bound constant uses the raw (pre-shrink) initial preset of the
    configuration and the whole-horizon forcing integral, so it is shared by
    every ladder index of the same scenario.
    """
    if len(traj.times) != traj.steps + 1:
        raise ConfigurationError("trajectory is incomplete")
    grid = traj.grid
    tau = config.tau
    u0 = make_initial(config.initial, grid, config.initial_params)
    g_sq = float(np.sum(grid.h ** 2 * traj.g_dofs ** 2))
    m0 = energy_bound(norm_L2(u0) ** 2, config.nu, L_P, tau * g_sq)
    h1sq = np.concatenate([[0.0], np.cumsum(traj.h1[1:] ** 2)])
    lhs = traj.l2 ** 2 + config.nu * tau * h1sq
    g_dot_u = np.array([
        float(grid.h ** 2 * (traj.g_dofs[j - 1] @ traj.dofs[j]))
        for j in range(1, traj.steps + 1)
    ])
    return EnergyLedger(traj.times, lhs, m0, config.kkt_tol,
                        traj.l2, traj.h1, g_dot_u, config.nu, tau)


# ============================================================
# admissible comparison paths
# ============================================================

class _FamilyMember:
    __slots__ = ("name", "fields", "delta")

    def __init__(self, name, fields, delta):
        self.name = name
        self.fields = fields
        self.delta = delta

    def speeds(self):
        return np.stack([v.center_speed() for v in self.fields])


class TestFunctionFamily:
    """Named time-sampled velocity paths inside the raw constraint tube.

    Each member is divergence-free at every node, satisfies |v| <= p up to
    the stated tolerance, and is supported where p is positive; the margin
    delta (infimum of p over the member's support) is what the shrink into
    a regularized tube divides by.  Admissibility is verified nodewise when
    the member is added, never later.
    """

    __test__ = False          # keeps pytest from collecting the class

    def __init__(self, p, grid, times, tol=1e-8, div_tol=1e-10):
        self.p = p
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ConfigurationError("family needs at least two time nodes")
        self.tol = float(tol)
        self.div_tol = float(div_tol)
        self.p_slices = p.sample_cylinder(grid, self.times)
        self.members = []

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def names(self):
        return [m.name for m in self.members]

    def add(self, name, path, delta=None):
        """Add a member; path is t -> VectorField or a per-node sequence."""
        if callable(path):
            fields = [path(float(t)) for t in self.times]
        else:
            fields = list(path)
            if len(fields) != len(self.times):
                raise ConfigurationError(
                    f"member '{name}' has {len(fields)} slices for "
                    f"{len(self.times)} time nodes")
        support_floor = np.inf
        peak = 0.0
        for j, v in enumerate(fields):
            if v.grid != self.grid:
                raise ConfigurationError(
                    f"member '{name}' slice {j} lives on a different grid")
            dv = divergence_inf(v)
            if dv > self.div_tol:
                raise DomainError(
                    f"member '{name}' slice {j} is not divergence-free "
                    f"(|div| = {dv:.3e})")
            speeds = v.center_speed()
            pj = self.p_slices[j]
            if np.any(speeds > pj * (1 + 1e-12) + self.tol):
                raise DomainError(
                    f"member '{name}' violates the speed bound at slice {j}")
            supp = speeds > 0
            if supp.any():
                if np.any(pj[supp] <= 0):
                    raise DomainError(
                        f"member '{name}' has support outside the open "
                        f"region at slice {j}")
                support_floor = min(support_floor, float(pj[supp].min()))
                peak = max(peak, float(speeds.max()))
        if delta is None:
            # margin of the support inside the open region; any positive
            # number works when the floor is infinite (unconstrained zone)
            delta = support_floor if np.isfinite(support_floor) else 1.0 + peak
        if delta <= 0:
            raise DomainError(f"member '{name}' margin must be positive")
        self.members.append(_FamilyMember(name, fields, float(delta)))


# ============================================================
# global inequality residual
# ============================================================

class GlobalViReport:
    """Worst residual of the time-integrated inequality over (member, time)."""

    def __init__(self, worst, per_member, tau, h, threshold=None):
        self.worst = float(worst)
        self.per_member = per_member          # dict name -> (worst, at time)
        self.tau = float(tau)
        self.h = float(h)
        self.scale = self.tau + self.h        # residuals are first-order small
        self.threshold = threshold

    def __float__(self):
        return self.worst

    def rows(self):
        return [("member", "worst_residual", "at_time")] + [
            (name, val, t) for name, (val, t) in sorted(self.per_member.items())
        ]

    def summary(self):
        status = "report"
        if self.threshold is not None:
            status = "pass" if self.worst <= self.threshold else "fail"
        return {
            "check": "global-vi",
            "status": status,
            "worst": self.worst,
            "threshold": self.threshold if self.threshold is not None else self.scale,
        }


def _shrink_path(member_fields, delta, p_slices, pn_values):
    """Uniform shrink of a sampled path into the regularized tube.

    The per-slice shrink factors are computed first and the worst one is
    applied to the whole path, so the scaled path stays as time-smooth as the
    input.  Already-admissible paths (shrink factor 0 everywhere) pass
    through bitwise unchanged.
    """
    peak = max(float(v.center_speed().max()) for v in member_fields)
    cap = delta + peak
    deltas = [
        shrink_test_function(v, delta, p_slices[j], pn_values[j], M=cap)[0]
        for j, v in enumerate(member_fields)
    ]
    dn = max(deltas)
    if dn == 0.0:
        return 0.0, member_fields
    factor = max(1.0 - dn, 0.0)
    scaled = [factor * v for v in member_fields]
    for j, v in enumerate(scaled):
        if np.any(v.center_speed() > pn_values[j] * (1 + 1e-12) + 1e-14):
            raise NumericalError(
                "uniformly shrunk path failed the admissibility scan")
    return dn, scaled


def global_vi_residual(traj, family: TestFunctionFamily, member,
                       threshold=None) -> GlobalViReport:
    """Residual of the accumulated inequality for every comparison path.

    For each family member v (shrunk into the regularized tube of the given
    ladder member) and each checkpoint k the evaluator computes

        tau sum_{j<=k} [ (dv_j, u_j - v_j) + nu <u_j, u_j - v_j>_1
                         + b(u_{j-1}, u_j, u_j - v_j) - (g_j, u_j - v_j) ]
        + |u_k - v_k|^2 / 2 - |u_0 - v_0|^2 / 2

    with dv_j the backward difference quotient of the comparison path.  A
    trajectory that solves every step inequality keeps this below the
    accumulated solver slack minus a nonnegative dissipation sum, so the
    maximum over (v, k) is reported and expected to be first-order small.
    """
    if not family.members:
        raise DomainError("comparison family is empty")
    if len(family.times) != len(traj.times) or not np.allclose(
            family.times, traj.times, rtol=0.0, atol=1e-12):
        raise ConfigurationError(
            "family and trajectory live on different time partitions")
    grid = traj.grid
    ops = grid.ops()
    tau = float(traj.times[1] - traj.times[0])
    nu = traj.config.nu
    h2 = grid.h ** 2
    K = traj.steps

    per_member = {}
    worst = -np.inf
    for fam in family.members:
        speeds_ok = all(
            np.all(fam.fields[j].center_speed()
                   <= member.at(j) * (1 + 1e-12) + family.tol)
            for j in range(K + 1)
        )
        if speeds_ok:
            fields = fam.fields
        else:
            _, fields = _shrink_path(fam.fields, fam.delta,
                                     family.p_slices, member.values)
        vdofs = [v.dof() for v in fields]
        running = 0.0
        best = -np.inf
        best_t = traj.times[0]
        a0 = traj.dofs[0] - vdofs[0]
        half_a0 = 0.5 * h2 * float(a0 @ a0)
        for j in range(1, K + 1):
            uj = traj.dofs[j]
            aj = uj - vdofs[j]
            dvj = (vdofs[j] - vdofs[j - 1]) / tau
            La = ops.L @ aj
            term = (h2 * float(dvj @ aj)
                    + nu * h2 * float(uj @ La)
                    + convection_form(traj.field(j - 1), traj.field(j),
                                      VectorField.from_dof(grid, aj))
                    - h2 * float(traj.g_dofs[j - 1] @ aj))
            running += tau * term
            value = running + 0.5 * h2 * float(aj @ aj) - half_a0
            if value > best:
                best = value
                best_t = traj.times[j]
        per_member[fam.name] = (float(best), float(best_t))
        worst = max(worst, best)
    return GlobalViReport(worst, per_member, tau, grid.h, threshold)


def standard_test_family(config, times=None) -> TestFunctionFamily:
    """The shipped comparison family: zero, decaying initial data, a pulse.

    All members sit inside the raw constraint tube by construction.  The
    zero path trivially; the initial data scaled by the heat decay
    e^(-sigma t), sigma = 2 nu pi^2, whose speeds only shrink from an
    admissible start; and a two-vortex pulse scaled to half the obstacle
    floor over its own support, gated off when that support touches a
    dead zone.
    """
    grid = config.grid()
    obstacle = config.make_obstacle()
    t_nodes = config.times if times is None else np.asarray(times, dtype=float)
    family = TestFunctionFamily(obstacle, grid, t_nodes)
    zero = VectorField(grid, np.zeros((grid.nx + 1, grid.ny)),
                       np.zeros((grid.nx, grid.ny + 1)))
    family.add("zero", lambda t: zero)

    # optional members: skipped silently when the scenario's tube rejects
    # them (a shrinking obstacle can outpace the heat decay of the initial
    # data, in which case that path is genuinely inadmissible)
    u0 = make_initial(config.initial, grid, config.initial_params)
    sigma = 2.0 * config.nu * np.pi ** 2
    if norm_L2(u0) > 0.0:
        try:
            family.add("decaying-initial",
                       lambda t: u0 * float(np.exp(-sigma * t)))
        except (ConfigurationError, DomainError):
            pass

    pulse = make_initial("double-bump", grid, {})
    speed = pulse.center_speed()
    support = speed > 1e-14
    floor = float(family.p_slices[:, support].min()) if support.any() else 0.0
    if floor > 0.0 and speed.max() > 0.0:
        horizon = float(t_nodes[-1])
        scale = 0.5 * min(floor, 1.0) / float(speed.max())
        try:
            family.add("pulsing-vortex",
                       lambda t: pulse * (scale * np.sin(np.pi * t / horizon)))
        except (ConfigurationError, DomainError):
            pass
    return family


# ============================================================
# local total variation
# ============================================================

class Subcylinder:
    """Space box times time window, sampled onto interior grid cells."""

    def __init__(self, grid, cell_mask, t_start, t_end, label=""):
        cell_mask = np.asarray(cell_mask, dtype=bool)
        if cell_mask.shape != (grid.nx, grid.ny):
            raise ConfigurationError("subcylinder mask shape mismatch")
        if not cell_mask.any():
            raise ConfigurationError("subcylinder selects no cells")
        if not t_start < t_end:
            raise ConfigurationError("subcylinder time window is empty")
        self.grid = grid
        self.cell_mask = cell_mask
        self.t_start = float(t_start)
        self.t_end = float(t_end)
        self.label = label or f"{int(cell_mask.sum())} cells"

    @classmethod
    def from_box(cls, grid, x0, x1, y0, y1, t_start, t_end):
        cx, cy = grid.cell_centers()
        mask = (cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)
        return cls(grid, mask, t_start, t_end,
                   label=f"[{x0},{x1}]x[{y0},{y1}]")

    def window(self, times):
        """Recorded node indices falling inside the time window."""
        t = np.asarray(times, dtype=float)
        return np.flatnonzero((t >= self.t_start - 1e-12)
                              & (t <= self.t_end + 1e-12))


class BvReport:
    """Per-index total variation in the local dual norm, with its budget.

    The discrete path's variation is computed on the recorded partition (for
    a piecewise description the supremum over partitions is attained at the
    finest one).  Difference quotients stand in for the distributional time
    derivative, so continuum and discrete agree only in the vanishing-step
    limit; the budget constant is assembled from discrete surrogate
    embedding constants and labeled accordingly.
    """

    def __init__(self, sub, kappa, tv, m_kappa, pieces, surrogate_note=None):
        self.subcylinder = sub
        self.kappa = float(kappa)
        self.tv = dict(tv)                    # n -> total variation
        self.m_kappa = float(m_kappa)
        self.pieces = dict(pieces)            # m0, m1, m2, m3, g_norm, horizon
        self.surrogate_note = surrogate_note or (
            "bound uses discrete surrogate constants, not continuum ones")

    def uniform(self) -> bool:
        return all(v <= self.m_kappa for v in self.tv.values())

    def spread(self) -> float:
        vals = list(self.tv.values())
        return float(max(vals) - min(vals)) if vals else 0.0

    def rows(self):
        return [("n", "tv", "m_kappa", "kappa", "window")] + [
            (n, self.tv[n], self.m_kappa, self.kappa, self.subcylinder.label)
            for n in sorted(self.tv)
        ]

    def summary(self):
        return {
            "check": "bv",
            "status": "pass" if self.uniform() else "fail",
            "worst": max(self.tv.values()) if self.tv else 0.0,
            "threshold": self.m_kappa,
        }


def _check_bv_hypothesis(p, grid, times, mask, kappa):
    region = region_classify(p, grid, times, kappa)
    good = region.super_level | region.infinite_set
    bad = []
    for k in range(len(times)):
        miss = mask & ~good[k]
        if miss.any():
            for i, j in zip(*np.nonzero(miss)):
                bad.append((float(times[k]), int(i), int(j)))
    if bad:
        shown = ", ".join(f"(t={t:g}, cell {i},{j})" for t, i, j in bad[:6])
        more = f" and {len(bad) - 6} more" if len(bad) > 6 else ""
        raise DomainError(
            f"subcylinder leaves the region above kappa={kappa:g}: "
            f"{shown}{more}")


def bv_estimate(records, sub: Subcylinder, kappa, constants,
                ascent_iters=600) -> BvReport:
    """Total variation of each trajectory inside the subcylinder vs its budget.

    records: dict n -> TrajectoryRecord (one per ladder index, same scenario).
    The subcylinder must sit above level kappa of the raw obstacle at every
    recorded node of its window; violations name the offending cells.
    """
    if not records:
        raise ConfigurationError("no trajectories to estimate")
    items = sorted(records.items())
    ref = items[0][1]
    grid = ref.grid
    config = ref.config
    window = sub.window(ref.times)
    if window.size < 2:
        raise ConfigurationError("subcylinder window contains no full step")
    p = config.make_obstacle()
    _check_bv_hypothesis(p, grid, ref.times[window], sub.cell_mask, kappa)

    tv = {}
    for n, rec in items:
        total = 0.0
        for a, b in zip(window, window[1:]):
            inc = rec.field(b) - rec.field(a)
            total += float(dual_norm_W_star(inc, sub.cell_mask,
                                            iters=ascent_iters))
        tv[n] = total

    tau = config.tau
    m0 = max(
        float(energy_check(rec, config, constants.L_P).m0) for _, rec in items
    )
    g_norm = max(
        float(np.sqrt(tau * np.sum(grid.h ** 2 * rec.g_dofs ** 2)))
        for _, rec in items
    )
    horizon = config.horizon
    m1 = np.sqrt(config.nu * m0) + constants.L1 * g_norm
    m2 = 9.0 * constants.L3 * m0 / np.sqrt(config.nu)
    m3 = m1 * np.sqrt(constants.L2) + m2
    m_kappa = 2.0 * constants.L0 * m0 / kappa + m3 * np.sqrt(horizon)
    pieces = {"m0": m0, "m1": float(m1), "m2": float(m2), "m3": float(m3),
              "g_norm": g_norm, "horizon": horizon}
    return BvReport(sub, kappa, tv, m_kappa, pieces)


# ============================================================
# convection difference structure
# ============================================================

class PerturbationReport:
    """Two-term decomposition of the convection difference pairing."""

    def __init__(self, lhs, first_sum, second_sum, bound, peak_speed):
        self.lhs = float(lhs)
        self.first_sum = float(first_sum)
        self.second_sum = float(second_sum)
        self.bound = float(bound)
        self.peak_speed = float(peak_speed)

    @property
    def second_sum_ok(self) -> bool:
        return abs(self.second_sum) <= 1e-12

    @property
    def bound_ok(self) -> bool:
        return abs(self.lhs) <= self.bound + 1e-12

    @property
    def decomposition_ok(self) -> bool:
        scale = 1.0 + abs(self.first_sum) + abs(self.second_sum)
        return abs(self.lhs - self.first_sum - self.second_sum) <= 1e-12 * scale

    def ok(self) -> bool:
        return self.second_sum_ok and self.bound_ok and self.decomposition_ok

    def rows(self):
        return [("quantity", "value")] + [
            ("lhs", self.lhs), ("first_sum", self.first_sum),
            ("second_sum", self.second_sum), ("bound", self.bound),
            ("peak_speed", self.peak_speed),
        ]

    def summary(self):
        return {
            "check": "perturbation",
            "status": "pass" if self.ok() else "fail",
            "worst": abs(self.second_sum),
            "threshold": 1e-12,
        }


def perturbation_structure_check(v: VectorField, w: VectorField,
                                 div_tol=1e-10) -> PerturbationReport:
    """Decompose (conv(v) - conv(w), v - w) and test both structural claims.

    With the skew-symmetrized trilinear form the pairing reduces to the
    single term b(d, v, d), d = v - w: the companion term b(w, d, d) vanishes
    by skewness, and the whole pairing obeys
    |pairing| <= 9 max|v| |d|_{1,2} |d|_{0,2}.
    """
    for name, f in (("first", v), ("second", w)):
        dv = divergence_inf(f)
        if dv > div_tol:
            raise DomainError(
                f"{name} field is not divergence-free (|div| = {dv:.3e})")
    d = v - w
    lhs = convection_form(v, v, d) - convection_form(w, w, d)
    first = convection_form(d, v, d)
    second = convection_form(w, d, d)
    peak = max_center_speed(v)
    bound = 9.0 * peak * seminorm_H1(d) * norm_L2(d)
    return PerturbationReport(lhs, first, second, bound, peak)


# ============================================================
# blockage
# ============================================================

class BlockageReport:
    """Decay record of a run whose obstacle closes completely."""

    def __init__(self, applicable, passed, threshold, t0, times, l2,
                 first_checked, monotone_ok, monotone_slack, reason=""):
        self.applicable = applicable
        self.passed = passed
        self.threshold = float(threshold)
        self.t0 = float(t0)
        self.times = np.asarray(times, dtype=float)
        self.l2 = np.asarray(l2, dtype=float)
        self.first_checked = first_checked
        self.monotone_ok = monotone_ok
        self.monotone_slack = float(monotone_slack)
        self.reason = reason

    @property
    def status(self) -> str:
        if not self.applicable:
            return "not-applicable"
        return "pass" if self.passed else "fail"

    def decay_curve(self):
        return self.times, self.l2

    def worst_after(self) -> float:
        if self.first_checked is None:
            return float("nan")
        return float(self.l2[self.first_checked:].max())

    def rows(self):
        return [("t", "l2_norm")] + [
            (self.times[k], self.l2[k]) for k in range(len(self.times))
        ]

    def summary(self):
        return {
            "check": "blockage",
            "status": self.status,
            "worst": self.worst_after() if self.applicable else 0.0,
            "threshold": self.threshold,
        }


def norm_is_nonincreasing(traj, slack=None) -> bool:
    """Unforced decay probe: |u(t_k)| may rise only by per-step solver slack.

    The zero comparison field in each step inequality forces the norm down
    whenever g = 0, but a splitting solve stopped at feas_tol carries that
    much constraint slack, so successive norms in a fully-saturated phase
    jitter at the tolerance level.  slack defaults to the run's feas_tol.
    """
    if np.any(traj.g_dofs != 0.0):
        raise DomainError("monotone decay probe needs zero forcing")
    if slack is None:
        slack = traj.config.feas_tol
    return bool(np.all(np.diff(traj.l2) <= slack))


def blockage_check(traj, t0, threshold=1e-8) -> BlockageReport:
    """Does a completely closing obstacle actually stop the flow.

    Applicable when the run is unforced and the regularized radii collapse to
    their ladder floor by t0 (a run that keeps an open channel, or any forced
    run, is reported not-applicable rather than failed).  Pass means the
    velocity norm stays under the threshold from t0 + tau onward, including
    any later re-opening of the obstacle.
    """
    g_zero = traj.g_dofs.size == 0 or not np.any(traj.g_dofs != 0.0)
    times = traj.times
    tau = traj.config.tau
    if not g_zero:
        return BlockageReport(False, False, threshold, t0, times, traj.l2,
                              None, None, 0.0, reason="forcing is not zero")
    if traj.member is None:
        return BlockageReport(False, False, threshold, t0, times, traj.l2,
                              None, None, 0.0,
                              reason="no regularized obstacle recorded")
    at_t0 = int(np.searchsorted(times, t0 - 1e-12))
    if at_t0 >= len(times):
        return BlockageReport(False, False, threshold, t0, times, traj.l2,
                              None, None, 0.0,
                              reason="t0 beyond the recorded horizon")
    floor = 2.0 / traj.member.n
    if float(traj.member.at(at_t0).max()) > floor:
        return BlockageReport(False, False, threshold, t0, times, traj.l2,
                              None, None, 0.0,
                              reason="obstacle does not close by t0")
    first = int(np.searchsorted(times, t0 + tau - 1e-12))
    passed = bool(np.all(traj.l2[first:] <= threshold))
    slack = traj.config.feas_tol
    monotone = norm_is_nonincreasing(traj, slack)
    return BlockageReport(True, passed, threshold, t0, times, traj.l2,
                          first, monotone, slack)
