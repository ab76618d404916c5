"""Obstacle fields, the regularization ladder, and region classification.

An obstacle is a map p(x, t) into [0, +inf] capping the pointwise speed.
Solvers never see p directly: they see ladder members, which are finite,
strictly positive, Lipschitz gridded fields built from p by clamping to
[1/n, n] and smoothing with a truncated space-time box average of radius
r_n = max(2h, 1/(4n)).  Each member is the pointwise minimum of the smoothed
field and the raw clamp; plain averaging can overshoot the raw obstacle at
local minima near a blow-up region, and the minimum restores the one-sided
bound p_n <= p wherever p >= 1/n without disturbing the Lipschitz property
(a min of Lipschitz functions is Lipschitz).

Infinity is represented by numpy's inf; arithmetic on it is confined to
alpha_transform and cutoff.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import binary_erosion

from .errors import ConfigurationError, DomainError

__all__ = [
    "ObstacleField",
    "ObstacleLadder",
    "LadderMember",
    "LadderReport",
    "RegionMask",
    "alpha_transform",
    "cutoff",
    "build_ladder",
    "validate_ladder",
    "region_classify",
    "make_obstacle",
    "OBSTACLE_PRESETS",
]


# ============================================================
# pointwise transforms
# ============================================================

def alpha_transform(p_value):
    """alpha = p/(1+p), with alpha = 1 at p = +inf.  Maps [0, inf] onto [0, 1]."""
    arr = np.asarray(p_value, dtype=float)
    if np.any(arr < 0):
        raise DomainError("obstacle values must be nonnegative")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(arr), 1.0, arr / (1.0 + arr))
    if np.isscalar(p_value) or arr.ndim == 0:
        return float(out)
    return out


def cutoff(p_value, n):
    """Clamp of p to [1/n, n]; +inf maps to n."""
    if n < 1:
        raise ConfigurationError(f"ladder index must be >= 1, got {n}")
    arr = np.asarray(p_value, dtype=float)
    if np.any(arr < 0):
        raise DomainError("obstacle values must be nonnegative")
    out = np.clip(arr, 1.0 / n, float(n))
    if np.isscalar(p_value) or arr.ndim == 0:
        return float(out)
    return out


# ============================================================
# obstacle fields
# ============================================================

class ObstacleField:
    """Analytic obstacle on a space-time cylinder.

    evaluate(X, Y, t) maps coordinate arrays plus a scalar time to values in
    [0, +inf].  alpha_lip is the declared Lipschitz constant of the
    alpha-transform in space-time (modulus omega(d) = alpha_lip * d); kappas
    and sandwich_levels drive ladder validation; blockage_t0 marks the first
    time p vanishes identically (None if it never does).
    """

    def __init__(self, kind, params, domain, horizon, evaluate, alpha_lip,
                 kappas, sandwich_levels, blockage_t0=None, uniform_in_space=False):
        self.kind = kind
        self.params = dict(params)
        self.domain = tuple(domain)
        self.horizon = float(horizon)
        self._evaluate = evaluate
        self.alpha_lip = float(alpha_lip)
        self.kappas = list(kappas)
        self.sandwich_levels = list(sandwich_levels)
        self.blockage_t0 = blockage_t0
        self.uniform_in_space = uniform_in_space

    def evaluate(self, X, Y, t):
        vals = np.asarray(self._evaluate(np.asarray(X, float), np.asarray(Y, float), float(t)), dtype=float)
        if np.any(vals < 0) or np.any(np.isnan(vals)):
            raise DomainError(f"preset '{self.kind}' produced invalid obstacle values")
        return vals

    def alpha_modulus(self, d):
        return self.alpha_lip * d

    def sample(self, grid, t):
        """Cell-centered values at one time."""
        X, Y = grid.cell_centers()
        return self.evaluate(X, Y, t)

    def sample_cylinder(self, grid, times):
        """(nt, nx, ny) values at cell centers over the given time nodes."""
        return np.stack([self.sample(grid, t) for t in times], axis=0)

    def __repr__(self):
        return f"ObstacleField(kind={self.kind!r}, params={self.params})"


def _preset_free_flow(params, domain, horizon):
    def ev(X, Y, t):
        return np.full(np.broadcast(X, Y).shape, np.inf)
    return ObstacleField("free-flow", params, domain, horizon, ev,
                         alpha_lip=0.0, kappas=[1.0], sandwich_levels=[10.0])


def _preset_uniform(params, domain, horizon):
    value = float(params.get("value", 1.0))
    if value < 0:
        raise ConfigurationError("uniform obstacle value must be >= 0")

    def ev(X, Y, t):
        return np.full(np.broadcast(X, Y).shape, value)
    ks = [k for k in (0.5, 1.0) if value <= 4 * k] or [value + 1.0]
    return ObstacleField("uniform", params, domain, horizon, ev,
                         alpha_lip=0.0, kappas=ks,
                         sandwich_levels=[value / 2] if value > 0 else [],
                         uniform_in_space=True)


def _preset_narrowing_channel(params, domain, horizon):
    lx, _ = domain
    p_out = float(params.get("p_out", 2.0))
    theta0 = float(params.get("theta0", 0.6))
    theta1 = float(params.get("theta1", 0.02))
    t_ramp = float(params.get("t_ramp", horizon))
    cx = float(params.get("cx", 0.5 * lx))
    width = float(params.get("width", 0.15))
    if not (0 < theta1 <= theta0 <= p_out) or width <= 0 or t_ramp <= 0:
        raise ConfigurationError("narrowing-channel parameters out of range")

    def theta(t):
        return theta0 + (theta1 - theta0) * min(max(t / t_ramp, 0.0), 1.0)

    def ev(X, Y, t):
        return p_out - (p_out - theta(t)) * np.exp(-((X - cx) / width) ** 2)

    # |grad_x p| <= (p_out - theta1) * (2/width) * max(s e^{-s^2}) and
    # |d/dt p| <= (theta0 - theta1)/t_ramp; alpha contracts (slope <= 1)
    lip = (p_out - theta1) * (2.0 / width) * 0.42888 + (theta0 - theta1) / t_ramp
    return ObstacleField("narrowing-channel", params, domain, horizon, ev,
                         alpha_lip=lip, kappas=[0.5, 1.0], sandwich_levels=[1.5])


def _preset_growing_disk(params, domain, horizon):
    lx, ly = domain
    cx = float(params.get("cx", 0.5 * lx))
    cy = float(params.get("cy", 0.5 * ly))
    r0 = float(params.get("r0", 0.15))
    rate = float(params.get("rate", 0.3))
    w = float(params.get("w", 0.2))
    if r0 < 0 or w <= 0 or rate < 0:
        raise ConfigurationError("growing-disk parameters out of range")

    def ev(X, Y, t):
        rho = r0 + rate * t
        d = np.hypot(X - cx, Y - cy)
        alpha = np.clip((d - rho) / w, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(alpha >= 1.0, np.inf, alpha / (1.0 - alpha))

    return ObstacleField("growing-disk", params, domain, horizon, ev,
                         alpha_lip=max(1.0, rate) / w,
                         kappas=[0.5, 1.0], sandwich_levels=[10.0])


def _preset_total_blockage(params, domain, horizon):
    B = float(params.get("p_max", 1.5))
    fr = params.get("fractions", (0.2, 0.4, 0.6, 0.8))
    t1, t2, t3, t4 = (float(f) * horizon for f in fr)
    if not (0 < t1 < t2 < t3 < t4 < horizon) or B <= 0:
        raise ConfigurationError("total-blockage parameters out of range")

    def ev(X, Y, t):
        if t <= t1:
            val = B
        elif t < t2:
            val = B * (t2 - t) / (t2 - t1)
        elif t <= t3:
            val = 0.0
        elif t < t4:
            val = B * (t - t3) / (t4 - t3)
        else:
            val = B
        return np.full(np.broadcast(X, Y).shape, val)

    lip = B / min(t2 - t1, t4 - t3)
    return ObstacleField("total-blockage", params, domain, horizon, ev,
                         alpha_lip=lip, kappas=[0.5], sandwich_levels=[1.0],
                         blockage_t0=t2, uniform_in_space=True)


def _preset_lid_free_check(params, domain, horizon):
    field = _preset_free_flow(params, domain, horizon)
    field.kind = "lid-free-check"
    return field


OBSTACLE_PRESETS = {
    "free-flow": _preset_free_flow,
    "uniform": _preset_uniform,
    "narrowing-channel": _preset_narrowing_channel,
    "growing-disk": _preset_growing_disk,
    "total-blockage": _preset_total_blockage,
    "lid-free-check": _preset_lid_free_check,
}


def make_obstacle(name, params, domain, horizon) -> ObstacleField:
    if name not in OBSTACLE_PRESETS:
        avail = ", ".join(sorted(OBSTACLE_PRESETS))
        raise ConfigurationError(f"unknown obstacle preset '{name}' (available: {avail})")
    return OBSTACLE_PRESETS[name](params, domain, horizon)


# ============================================================
# ladder
# ============================================================

class LadderMember:
    """One regularized obstacle: gridded values over (time node, cell, cell)."""

    def __init__(self, n, values, radius, window, lipschitz, min_value):
        self.n = n
        self.values = values                  # (nt, nx, ny)
        self.radius = radius                  # mollifier radius r_n
        self.window = window                  # (mt, mx, my) half-widths in lattice steps
        self.lipschitz = lipschitz            # exhaustive lattice estimate
        self.min_value = min_value            # mu_n > 0

    def at(self, k):
        """Cell radii at time node k."""
        return self.values[k]


class ObstacleLadder:
    def __init__(self, base, grid, times, members):
        self.base = base
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.members = members                # dict n -> LadderMember

    @property
    def indices(self):
        return sorted(self.members)

    def __getitem__(self, n) -> LadderMember:
        return self.members[n]

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.members)


def _sliding_sum(arr, m, axis):
    """Sum over a window of half-width m along axis, truncated at the edges."""
    if m == 0:
        return arr.copy()
    c = np.cumsum(arr, axis=axis)
    n = arr.shape[axis]
    hi = np.minimum(np.arange(n) + m, n - 1)
    lo = np.arange(n) - m - 1
    upper = np.take(c, hi, axis=axis)
    lower = np.take(c, np.maximum(lo, 0), axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = n
    return upper - np.where((lo >= 0).reshape(shape), lower, 0.0)


def _truncated_box_mean(arr, window):
    """Box average ignoring out-of-domain cells (sum/count, exact for dyadic
    constants so in-range constants are genuine fixed points)."""
    num = arr
    den = np.ones_like(arr)
    for ax, m in enumerate(window):
        num = _sliding_sum(num, m, ax)
        den = _sliding_sum(den, m, ax)
    return num / den


def _lattice_lipschitz(values, tau, h):
    worst = 0.0
    if values.shape[0] > 1:
        worst = max(worst, float(np.abs(np.diff(values, axis=0)).max()) / tau)
    worst = max(worst, float(np.abs(np.diff(values, axis=1)).max()) / h)
    worst = max(worst, float(np.abs(np.diff(values, axis=2)).max()) / h)
    return worst


def build_ladder(p: ObstacleField, indices, grid, times) -> ObstacleLadder:
    """Sample p on the space-time lattice and build the regularized members."""
    indices = list(indices)
    if not indices or any(n < 1 for n in indices):
        raise ConfigurationError("ladder indices must be positive")
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ConfigurationError("ladder indices must be strictly increasing")
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ConfigurationError("ladder needs at least two time nodes")
    dt = np.diff(times)
    tau = float(dt[0])
    if not np.allclose(dt, tau, rtol=1e-10, atol=1e-14):
        raise ConfigurationError("ladder time nodes must be uniformly spaced")

    raw = p.sample_cylinder(grid, times)      # (nt, nx, ny), may contain inf
    h = grid.h
    members = {}
    for n in indices:
        r_n = max(2.0 * h, 1.0 / (4.0 * n))
        if tau > r_n * (1 + 1e-12):
            raise ConfigurationError(
                f"time step {tau} exceeds mollifier radius {r_n} for ladder index {n}; "
                "refine the time grid or drop the index")
        mt = int(np.floor(r_n / tau + 1e-12))
        mx = int(np.floor(r_n / h + 1e-12))
        window = (mt, mx, mx)
        clamped = cutoff(raw, n)
        smooth = _truncated_box_mean(clamped, window)
        vals = np.minimum(smooth, clamped)
        members[n] = LadderMember(
            n, vals, r_n, window,
            lipschitz=_lattice_lipschitz(vals, tau, h),
            min_value=float(vals.min()),
        )
    return ObstacleLadder(p, grid, times, members)


# ============================================================
# ladder validation
# ============================================================

class LadderReport:
    """Lattice-scan validation of the ladder against its base obstacle.

    rows: (n, kappa, sup_distance, sandwich_ok) suitable for CSV output.
    sandwich_index: level M -> smallest ladder index from which the sandwich
    M <= p_n <= p holds on the eroded super-level lattice (None if never).
    """

    def __init__(self, rows, violations, sandwich_index, floors):
        self.rows = rows
        self.violations = list(violations)
        self.sandwich_index = sandwich_index
        self.floors = floors                  # n -> 2 L_n r_n resolution floor

    @property
    def ok(self):
        return not self.violations


def validate_ladder(p: ObstacleField, ladder: ObstacleLadder, kappas=None) -> LadderReport:
    if not ladder.members:
        raise ConfigurationError("cannot validate an empty ladder")
    kappas = list(kappas) if kappas is not None else list(p.kappas)
    grid, times = ladder.grid, ladder.times
    raw = p.sample_cylinder(grid, times)
    indices = ladder.indices
    floors = {n: 2.0 * ladder[n].lipschitz * ladder[n].radius for n in indices}

    violations = []

    # ---- member positivity / finiteness ------------------------------
    for n in indices:
        m = ladder[n]
        if not np.isfinite(m.values).all():
            violations.append(f"member {n}: non-finite values")
        if m.min_value <= 0:
            violations.append(f"member {n}: min value {m.min_value} not positive")
        lo, hi = 1.0 / (2 * n), 2.0 * n
        if m.values.min() < lo - 1e-15 or m.values.max() > hi + 1e-15:
            violations.append(f"member {n}: values leave [1/(2n), 2n]")

    # ---- sandwich on eroded super-level sets --------------------------
    sandwich_index = {}
    sandwich_by_n = {n: True for n in indices}
    for M in p.sandwich_levels:
        passing = {}
        for n in indices:
            m = ladder[n]
            mask = raw > M
            # erode by the mollifier window so every averaging stencil that
            # touches a surviving point lies inside the super-level set;
            # outside the cylinder counts as inside (the average truncates)
            struct = np.ones(tuple(2 * w + 1 for w in m.window), dtype=bool)
            core = binary_erosion(mask, structure=struct, border_value=1)
            if not core.any():
                passing[n] = None             # nothing left to check at this n
                continue
            lower = bool((m.values[core] >= M - 1e-12).all())
            finite_core = core & np.isfinite(raw)
            upper = True
            if finite_core.any():
                upper = bool((m.values[finite_core] <= raw[finite_core] + 1e-12).all())
            passing[n] = lower and upper and (n > M)
        # smallest index from which all later checked members pass
        n_M = None
        for i, n in enumerate(indices):
            tail = [passing[k] for k in indices[i:] if passing[k] is not None]
            if tail and all(tail):
                n_M = n
                break
        sandwich_index[M] = n_M
        if n_M is None and any(passing[k] is not None for k in indices):
            violations.append(f"sandwich level M={M}: no ladder index satisfies it")
        for n in indices:
            if passing[n] is False:
                sandwich_by_n[n] = False

    # ---- uniform convergence on sub-level sets -------------------------
    rows = []
    for kappa in kappas:
        sups = []
        for n in indices:
            sel = raw <= kappa
            if sel.any():
                sup = float(np.abs(ladder[n].values[sel] - raw[sel]).max())
            else:
                sup = 0.0
            sups.append(sup)
            rows.append((n, kappa, sup, sandwich_by_n[n]))
        for a, b, n_next in zip(sups, sups[1:], indices[1:]):
            if b > a + 1e-14 and b > floors[n_next]:
                violations.append(
                    f"kappa={kappa}: sup-distance rose from {a:.3e} to {b:.3e} "
                    f"at n={n_next} above the resolution floor {floors[n_next]:.3e}")

    return LadderReport(rows, violations, sandwich_index, floors)


# ============================================================
# region classification
# ============================================================

class RegionMask:
    """Partition of the sampled cylinder by obstacle magnitude."""

    def __init__(self, grid, times, kappa, zero_set, finite_band, super_level, infinite_set):
        self.grid = grid
        self.times = times
        self.kappa = kappa
        self.zero_set = zero_set
        self.finite_band = finite_band
        self.super_level = super_level
        self.infinite_set = infinite_set

    def is_partition(self):
        total = (self.zero_set.astype(int) + self.finite_band.astype(int)
                 + self.super_level.astype(int) + self.infinite_set.astype(int))
        return bool((total == 1).all())


def region_classify(p: ObstacleField, grid, times, kappa) -> RegionMask:
    if kappa <= 0:
        raise DomainError("classification threshold must be positive")
    raw = p.sample_cylinder(grid, np.asarray(times, dtype=float))
    zero = raw == 0.0
    infinite = np.isinf(raw)
    band = (raw > 0.0) & (raw <= kappa)
    sup = (raw > kappa) & ~infinite
    return RegionMask(grid, times, kappa, zero, band, sup, infinite)
