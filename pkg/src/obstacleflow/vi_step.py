"""One implicit time step of the obstacle-constrained flow.

The step problem: given the previous velocity u_prev, find u in

    K = { z : div z = 0,  |z(c)| <= p(c) at every cell center c }

satisfying the monotone linear variational inequality

    ((u - u_prev)/tau, u - z) + nu <u, u - z>_1 + b(u_prev, u, u - z)
        <= (g, u - z)        for all z in K,

where b is the skew advective form frozen at u_prev.  Equivalently
A u + G q + R^T mu = f with A = I/tau + nu L + C(u_prev) positive definite,
q the divergence multiplier and mu the (radial) obstacle multiplier.

Solver: consensus splitting (Douglas-Rachford / ADMM) on the copy y = R u.
The x-update solves a bordered sparse KKT system

    [ A + rho R^T R   G    0 ] [x]   [f + rho R^T (y - w)]
    [ D               0    e ] [q] = [0]
    [ 0               e^T  0 ] [s]   [0]

factorized once per step (e pins the pressure mean; s vanishes at the
solution because the columns of D sum to zero).  The y-update is a closed
form cellwise ball projection; w is the scaled dual.  Before splitting at
all, the plain equality-constrained solve is attempted: if its cell speeds
already respect the radii it is the exact VI solution (zero multiplier), so
unconstrained scenarios bypass the iteration entirely.

The reported multiplier is mu = rho (R x - y_in + w_in) with y_in, w_in the
values used in the final x-solve, which makes A x + G q + R^T mu = f hold to
factorization precision rather than splitting tolerance.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DomainError, NumericalError, StepNonConvergence
from .grid import ScalarField, VectorField, convection_form, inner_h, seminorm_H1

__all__ = [
    "StepProblem",
    "StepSolution",
    "SplitParams",
    "ball_project",
    "solve_step",
    "step_vi_residual",
    "shift_constraint_set",
    "shrink_test_function",
]


class StepProblem:
    """Immutable data for one implicit step."""

    def __init__(self, u_prev: VectorField, p_slice: np.ndarray,
                 g_slice: VectorField, nu: float, tau: float):
        grid = u_prev.grid
        p_slice = np.asarray(p_slice, dtype=float)
        if p_slice.shape != (grid.nx, grid.ny):
            raise DomainError("radius field must be cell-centered")
        if not np.all(p_slice > 0):
            raise ConfigurationError("step radii must be strictly positive "
                                     "(the solver only sees ladder members)")
        if not (tau > 0 and nu > 0):
            raise ConfigurationError("tau and nu must be positive")
        self.grid = grid
        self.u_prev = u_prev
        self.p_slice = p_slice
        self.g_slice = g_slice
        self.nu = float(nu)
        self.tau = float(tau)


class StepSolution:
    def __init__(self, u, pressure, radial_multiplier, iterations,
                 primal_residual, dual_residual, warm=None, multiplier_vec=None):
        self.u = u
        self.pressure = pressure
        self.radial_multiplier = radial_multiplier
        self.iterations = iterations
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.warm = warm                       # (y, w) for the next step
        self.multiplier_vec = multiplier_vec   # stacked (2 nc,) exact multiplier


class SplitParams:
    def __init__(self, rho=None, max_iter=4000, feas_tol=1e-8, kkt_tol=1e-7,
                 relaxation=1.8):
        if rho is not None and rho <= 0:
            raise ConfigurationError("splitting penalty must be positive")
        if not (0 < relaxation < 2):
            raise ConfigurationError("relaxation factor must lie in (0, 2)")
        if max_iter < 1 or feas_tol <= 0 or kkt_tol <= 0:
            raise ConfigurationError("invalid splitting parameters")
        self.rho = rho                         # None: use 1/tau at solve time
        self.max_iter = int(max_iter)
        self.feas_tol = float(feas_tol)
        self.kkt_tol = float(kkt_tol)
        self.relaxation = float(relaxation)


def ball_project(vec, radius):
    """Euclidean projection of 2-vectors onto balls of the given radii.

    Accepts a single (2,) vector or an (..., 2) array; radius is a scalar or
    matching array.  Inactive nodes are returned bitwise unchanged (scale
    factor exactly 1.0), and radius = +inf is a true no-op.
    """
    v = np.asarray(vec, dtype=float)
    r = np.asarray(radius, dtype=float)
    if np.any(r < 0):
        raise DomainError("ball radius must be nonnegative")
    speed = np.sqrt(np.sum(v * v, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(speed <= r, 1.0, np.where(speed > 0, r / speed, 0.0))
    out = v * scale[..., None]
    return out


def _project_cells(stacked, radii_flat):
    """Ball projection on (2 nc,) arrays laid out [all x parts, all y parts]."""
    nc = radii_flat.size
    vx, vy = stacked[:nc], stacked[nc:]
    speed = np.hypot(vx, vy)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(speed <= radii_flat, 1.0,
                         np.where(speed > 0, radii_flat / speed, 0.0))
    return np.concatenate([vx * scale, vy * scale])


def _step_matrix(prob: StepProblem):
    ops = prob.grid.ops()
    n = prob.grid.ndof
    A = (sp.identity(n, format="csr") / prob.tau
         + prob.nu * ops.L
         + ops.convection_matrix(prob.u_prev))
    return A.tocsr()


def _bordered_solve(A, ops, grid, rhs_x):
    """Solve [[A, G, 0], [D, 0, e], [0, e^T, 0]]; returns (x, q, lu)."""
    nc = grid.ncells
    e = sp.csr_matrix(np.ones((nc, 1)))
    K = sp.bmat([[A, ops.G, None],
                 [ops.D, None, e],
                 [None, e.T, None]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:                 # pragma: no cover
        raise NumericalError(f"step operator factorization failed: {exc}")
    rhs = np.concatenate([rhs_x, np.zeros(nc + 1)])
    sol = lu.solve(rhs)
    return sol[: grid.ndof], sol[grid.ndof: grid.ndof + nc], lu


def solve_step(prob: StepProblem, params: SplitParams | None = None,
               warm=None) -> StepSolution:
    params = params or SplitParams()
    grid = prob.grid
    ops = grid.ops()
    nc = grid.ncells
    tau, nu = prob.tau, prob.nu
    rho = params.rho if params.rho is not None else 1.0 / tau
    radii = prob.p_slice.ravel()

    f = prob.u_prev.dof() / tau + prob.g_slice.dof()
    A = _step_matrix(prob)

    # plain equality-constrained solve first: if the cell speeds already
    # respect the radii this IS the VI solution, with zero obstacle multiplier
    x0, q0, _ = _bordered_solve(A, ops, grid, f)
    rx0 = ops.R @ x0
    speed0 = np.hypot(rx0[:nc], rx0[nc:])
    if np.all(speed0 <= radii):
        return StepSolution(
            u=VectorField.from_dof(grid, x0),
            pressure=ScalarField(grid, q0.reshape(grid.nx, grid.ny)),
            radial_multiplier=np.zeros((grid.nx, grid.ny)),
            iterations=0,
            primal_residual=0.0,
            dual_residual=0.0,
            warm=(rx0.copy(), np.zeros(2 * nc)),
            multiplier_vec=np.zeros(2 * nc),
        )

    e = sp.csr_matrix(np.ones((nc, 1)))

    def factor(pen):
        K = sp.bmat([[(A + pen * ops.RtR).tocsr(), ops.G, None],
                     [ops.D, None, e],
                     [None, e.T, None]], format="csc")
        try:
            return spla.splu(K)
        except RuntimeError as exc:             # pragma: no cover
            raise NumericalError(f"step operator factorization failed: {exc}")

    lu = factor(rho)
    rho0 = rho

    if warm is not None:
        # warm data carries the unscaled dual so it is penalty-invariant
        y = _project_cells(warm[0].copy(), radii)
        w = warm[1] / rho
    else:
        y = _project_cells(ops.R @ prob.u_prev.dof(), radii)
        w = np.zeros(2 * nc)

    alpha = params.relaxation
    rhs_tail = np.zeros(nc + 1)
    x = x0
    q = q0
    primal = np.inf
    dual = np.inf
    y_in = y
    w_in = w
    window_resid = None
    escalate_on = True
    best_drop = None
    best_rho = rho
    for it in range(1, params.max_iter + 1):
        y_in, w_in = y, w
        rhs = np.concatenate([f + rho * (ops.R.T @ (y - w)), rhs_tail])
        sol = lu.solve(rhs)
        x = sol[: grid.ndof]
        q = sol[grid.ndof: grid.ndof + nc]
        rx = ops.R @ x
        rx_rel = alpha * rx + (1.0 - alpha) * y
        y_new = _project_cells(rx_rel + w, radii)
        w = w + rx_rel - y_new
        diff = rx - y_new
        primal = float(np.hypot(diff[:nc], diff[nc:]).max())
        dual = rho * float(np.abs(ops.R.T @ (y_new - y)).max())
        y = y_new
        if primal <= params.feas_tol and dual <= params.feas_tol:
            break
        # fixed slow-progress escalation: the linear rate is sharply U-shaped
        # in the penalty, and residual balance is a poor guide here (at the
        # optimum the dual residual can exceed the primal by 1e3).  Whenever a
        # 100-sweep window fails to halve max(primal, dual), double the
        # penalty; a healthy level (window halved) never escalates, so the
        # rule parks on the first level that converges briskly instead of
        # overshooting.  The window right after a penalty change only records,
        # so every drop ratio compares residuals measured at the same penalty
        # (the dual residual scales with the penalty, so cross-penalty ratios
        # are meaningless).  If every level up to the cap stalls, fall back to
        # the best level seen and stop adapting.  The rule is a fixed function
        # of the residual history, so runs stay deterministic
        if it % 100 == 0:
            r_now = max(primal, dual)
            if window_resid is None:
                window_resid = r_now
            else:
                drop = window_resid / r_now if r_now > 0 else np.inf
                window_resid = r_now
                if drop < 2.0 and escalate_on:
                    if best_drop is None or drop > best_drop:
                        best_drop = drop
                        best_rho = rho
                    if rho < rho0 * 2 ** 12:
                        w = w / 2.0
                        rho *= 2.0
                        lu = factor(rho)
                        window_resid = None
                    else:
                        if best_rho != rho:
                            w = w * (rho / best_rho)
                            rho = best_rho
                            lu = factor(rho)
                            window_resid = None
                        escalate_on = False
    else:
        raise StepNonConvergence(
            f"splitting did not reach feas_tol={params.feas_tol} in "
            f"{params.max_iter} iterations (primal {primal:.3e}, dual {dual:.3e})",
            residual=max(primal, dual))

    # multiplier consistent with the final x-solve: A x + G q + R^T mu = f
    mu = rho * ((ops.R @ x) - y_in + w_in)
    ynorm = np.hypot(y[:nc], y[nc:])
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = np.where(ynorm > 0, y[:nc] / ynorm, 0.0)
        sy = np.where(ynorm > 0, y[nc:] / ynorm, 0.0)
    radial = mu[:nc] * sx + mu[nc:] * sy
    lam = np.where(ynorm > 0, np.maximum(radial, 0.0), np.hypot(mu[:nc], mu[nc:]))

    return StepSolution(
        u=VectorField.from_dof(grid, x),
        pressure=ScalarField(grid, q.reshape(grid.nx, grid.ny)),
        radial_multiplier=lam.reshape(grid.nx, grid.ny),
        iterations=it,
        primal_residual=primal,
        dual_residual=dual,
        warm=(y.copy(), rho * w),
        multiplier_vec=mu,
    )


def step_vi_residual(sol: StepSolution, prob: StepProblem, probes,
                     feas_tol=1e-8) -> float:
    """Max signed residual of the discrete step inequality over the probes.

    For each admissible probe z the quantity

        ((u - u_prev)/tau, u - z) + nu <u, u - z>_1
            + b(u_prev, u, u - z) - (g, u - z)

    must be <= kkt_tol * (1 + |z|_{1,2}) for a converged solution.
    """
    grid = prob.grid
    ops = grid.ops()
    u = sol.u
    du = (u - prob.u_prev) * (1.0 / prob.tau)
    worst = -np.inf
    for z in probes:
        dv = divergence_inf(z)
        if dv > feas_tol:
            raise DomainError(f"probe is not divergence-free (|div| = {dv:.3e})")
        if np.any(z.center_speed() > prob.p_slice + feas_tol):
            raise DomainError("probe violates the radius constraint")
        d = u - z
        val = (inner_h(du, d)
               + prob.nu * grid.h ** 2 * float(u.dof() @ (ops.L @ d.dof()))
               + convection_form(prob.u_prev, u, d)
               - inner_h(prob.g_slice, d))
        worst = max(worst, val)
    return worst


def divergence_inf(z: VectorField) -> float:
    g = z.grid
    return float(np.abs(g.ops().D @ z.dof()).max())


def shift_constraint_set(z: VectorField, p_s: np.ndarray, p_t: np.ndarray,
                         mu_n: float) -> VectorField:
    """Carry an admissible field from the radius slice p_s to the slice p_t.

    Returns (1 - sup|p_s - p_t| / mu_n) z, which is admissible for p_t:
    the sup-shift cannot exceed the guaranteed floor mu_n, so the shrink
    compensates the worst shrinkage of the constraint ball.  Callers with a
    shift of mu_n or more must chain through intermediate slices.
    """
    p_s = np.asarray(p_s, dtype=float)
    p_t = np.asarray(p_t, dtype=float)
    if mu_n <= 0:
        raise ConfigurationError("floor mu_n must be positive")
    shift = float(np.abs(p_s - p_t).max())
    if shift >= mu_n:
        raise DomainError(
            f"slice distance {shift} >= floor {mu_n}; chain through "
            "intermediate times")
    speeds = z.center_speed()
    if np.any(speeds > p_s * (1 + 1e-12) + 1e-14):
        raise DomainError("input field is not admissible for the source slice")
    out = (1.0 - shift / mu_n) * z
    if np.any(out.center_speed() > p_t * (1 + 1e-12) + 1e-14):
        raise NumericalError("shifted field failed the target admissibility scan")
    return out


def shrink_test_function(v: VectorField, delta: float, p_slice: np.ndarray,
                         pn_slice: np.ndarray, M: float | None = None):
    """Scale v into the regularized constraint set K(p_n).

    v must satisfy |v| <= p on its support and p >= delta there.  With
    M = delta + sup|v| the shrink factor is
    delta_n = (1/delta) max_support |p^M - p_n^M| (capped differences), and
    (1 - delta_n)^+ v is admissible for p_n.  Returns (delta_n, scaled field).
    """
    if delta <= 0:
        raise DomainError("support margin delta must be positive")
    p_slice = np.asarray(p_slice, dtype=float)
    pn_slice = np.asarray(pn_slice, dtype=float)
    speeds = v.center_speed()
    support = speeds > 0
    if M is None:
        M = delta + float(speeds.max())
    if support.any():
        if np.any(p_slice[support] < delta * (1 - 1e-12)):
            raise DomainError("support of v leaves the region {p >= delta}")
        if np.any(speeds[support] > p_slice[support] * (1 + 1e-12) + 1e-14):
            raise DomainError("v is not admissible for p on its support")
        capped = np.abs(np.minimum(p_slice[support], M) - np.minimum(pn_slice[support], M))
        delta_n = float(capped.max()) / delta
    else:
        delta_n = 0.0
    factor = max(1.0 - delta_n, 0.0)
    out = factor * v
    if np.any(out.center_speed() > pn_slice * (1 + 1e-12) + 1e-14):
        raise NumericalError("shrunk field failed the admissibility scan")
    return delta_n, out
