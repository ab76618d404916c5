"""MAC staggered grid, discrete operators, norms, and discrete constants.

Layout on an nx-by-ny cell rectangle with uniform spacing h:

    u (x-velocity)  on vertical faces,   array shape (nx+1, ny), u[i,j] at (i*h, (j+1/2)*h)
    v (y-velocity)  on horizontal faces, array shape (nx, ny+1), v[i,j] at ((i+1/2)*h, j*h)
    scalars (pressure, obstacle radius) at cell centers, shape (nx, ny)

Homogeneous Dirichlet walls: normal boundary faces are stored but pinned to
zero; tangential wall values enter through ghost mirroring (ghost = -interior),
so the interpolated wall velocity vanishes.  The degree-of-freedom vector
stacks interior u faces then interior v faces.

All inner products carry the uniform cell weight h^2.  The H^1 seminorm is the
midpoint quadrature of the gradient samples (one-sided face/edge differences,
half-weight two-sided samples at walls); by summation by parts it equals
h^2 * x^T L x for the mirrored five-point vector Laplacian L exactly, which is
what the per-step energy inequality relies on.  The W^{1,4} norm co-locates
gradients at cell centers (x-derivative lands there natively, y-derivative is
the four-point average of the edge/wall samples).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DomainError, NumericalError

__all__ = [
    "MacGrid",
    "VectorField",
    "ScalarField",
    "ConstantsReport",
    "DualNormEstimate",
    "divergence",
    "gradient",
    "leray_project",
    "convection_tilde",
    "convection_form",
    "inner_h",
    "norm_L2",
    "seminorm_H1",
    "norm_W14",
    "norm_L4",
    "max_center_speed",
    "dual_norm_W_star",
    "poincare_constant",
    "embedding_constants",
]


# ============================================================
# grid and fields
# ============================================================

class MacGrid:
    """Uniform MAC grid on the rectangle [0, nx*h] x [0, ny*h]."""

    def __init__(self, nx: int, ny: int, h: float):
        if nx < 4 or ny < 4:
            raise ConfigurationError(f"grid must be at least 4x4 cells, got {nx}x{ny}")
        if not (h > 0):
            raise ConfigurationError(f"cell size must be positive, got {h}")
        self.nx = int(nx)
        self.ny = int(ny)
        self.h = float(h)
        self._ops = None
        self._null_basis = None
        self._sub_bases = {}

    @property
    def lx(self) -> float:
        return self.nx * self.h

    @property
    def ly(self) -> float:
        return self.ny * self.h

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def n_u(self) -> int:
        return (self.nx - 1) * self.ny

    @property
    def n_v(self) -> int:
        return self.nx * (self.ny - 1)

    @property
    def ndof(self) -> int:
        return self.n_u + self.n_v

    def cell_centers(self):
        """Coordinate arrays (X, Y), each (nx, ny)."""
        x = (np.arange(self.nx) + 0.5) * self.h
        y = (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def u_face_coords(self):
        x = np.arange(self.nx + 1) * self.h
        y = (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def v_face_coords(self):
        x = (np.arange(self.nx) + 0.5) * self.h
        y = np.arange(self.ny + 1) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def node_coords(self):
        x = np.arange(self.nx + 1) * self.h
        y = np.arange(self.ny + 1) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def interior_cell_mask(self) -> np.ndarray:
        """Cells not touching the outer wall; subdomain masks must live inside."""
        m = np.zeros((self.nx, self.ny), dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    def ops(self) -> "_Ops":
        if self._ops is None:
            self._ops = _Ops(self)
        return self._ops

    def divfree_basis(self) -> np.ndarray:
        """Orthonormal basis of the discrete divergence-free subspace (dense)."""
        if self._null_basis is None:
            D = self.ops().D.toarray()
            self._null_basis = scipy.linalg.null_space(D)
        return self._null_basis

    def subdomain_faces(self, cell_mask: np.ndarray):
        """Dof indices of faces strictly interior to the masked cell set.

        A u face belongs iff both x-neighbour cells are masked, a v face iff
        both y-neighbour cells are.  Fields supported on these faces vanish on
        and outside the subdomain boundary.
        """
        cell_mask = np.asarray(cell_mask, dtype=bool)
        if cell_mask.shape != (self.nx, self.ny):
            raise DomainError("subdomain mask shape does not match the grid")
        if np.any(cell_mask & ~self.interior_cell_mask()):
            raise DomainError("subdomain masks must select interior cells only")
        ops = self.ops()
        keep_u = cell_mask[:-1, :] & cell_mask[1:, :]           # (nx-1, ny), face i=1..nx-1
        keep_v = cell_mask[:, :-1] & cell_mask[:, 1:]           # (nx, ny-1), face j=1..ny-1
        idx = np.concatenate(
            [np.flatnonzero(keep_u.ravel()), self.n_u + np.flatnonzero(keep_v.ravel())]
        )
        return idx

    def subdomain_divfree_basis(self, cell_mask: np.ndarray) -> tuple:
        """(face dof indices, orthonormal null-space basis of D restricted)."""
        key = np.packbits(np.asarray(cell_mask, dtype=bool)).tobytes()
        if key not in self._sub_bases:
            idx = self.subdomain_faces(cell_mask)
            if idx.size == 0:
                self._sub_bases[key] = (idx, np.zeros((0, 0)))
            else:
                Dsub = self.ops().D.toarray()[:, idx]
                self._sub_bases[key] = (idx, scipy.linalg.null_space(Dsub))
        return self._sub_bases[key]

    def key(self):
        return (self.nx, self.ny, self.h)

    def __eq__(self, other):
        return isinstance(other, MacGrid) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"MacGrid(nx={self.nx}, ny={self.ny}, h={self.h})"


class VectorField:
    """Discrete velocity field on the MAC faces of a grid.

    Normal boundary faces are forced to zero on construction (the trace
    entries are not degrees of freedom).
    """

    def __init__(self, grid: MacGrid, u: np.ndarray, v: np.ndarray):
        u = np.array(u, dtype=float)
        v = np.array(v, dtype=float)
        if u.shape != (grid.nx + 1, grid.ny) or v.shape != (grid.nx, grid.ny + 1):
            raise DomainError("component arrays do not match the grid's face layout")
        u[0, :] = 0.0
        u[-1, :] = 0.0
        v[:, 0] = 0.0
        v[:, -1] = 0.0
        self.grid = grid
        self.u = u
        self.v = v

    @classmethod
    def zeros(cls, grid: MacGrid) -> "VectorField":
        return cls(grid, np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))

    @classmethod
    def from_dof(cls, grid: MacGrid, x: np.ndarray) -> "VectorField":
        x = np.asarray(x, dtype=float)
        if x.shape != (grid.ndof,):
            raise DomainError("dof vector has the wrong length for this grid")
        u = np.zeros((grid.nx + 1, grid.ny))
        v = np.zeros((grid.nx, grid.ny + 1))
        u[1:grid.nx, :] = x[: grid.n_u].reshape(grid.nx - 1, grid.ny)
        v[:, 1:grid.ny] = x[grid.n_u:].reshape(grid.nx, grid.ny - 1)
        return cls(grid, u, v)

    @classmethod
    def from_stream(cls, grid: MacGrid, psi: np.ndarray) -> "VectorField":
        """Exactly divergence-free field from a stream function on grid nodes.

        u = d(psi)/dy, v = -d(psi)/dx by one-sided differences; the discrete
        divergence telescopes to zero in exact arithmetic.
        """
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (grid.nx + 1, grid.ny + 1):
            raise DomainError("stream function must live on grid nodes")
        u = (psi[:, 1:] - psi[:, :-1]) / grid.h
        v = -(psi[1:, :] - psi[:-1, :]) / grid.h
        return cls(grid, u, v)

    def dof(self) -> np.ndarray:
        g = self.grid
        return np.concatenate([self.u[1:g.nx, :].ravel(), self.v[:, 1:g.ny].ravel()])

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.u.copy(), self.v.copy())

    def center_vectors(self) -> np.ndarray:
        """(nx, ny, 2) velocity vectors reconstructed at cell centers."""
        uc = 0.5 * (self.u[:-1, :] + self.u[1:, :])
        vc = 0.5 * (self.v[:, :-1] + self.v[:, 1:])
        return np.stack([uc, vc], axis=-1)

    def center_speed(self) -> np.ndarray:
        c = self.center_vectors()
        return np.hypot(c[..., 0], c[..., 1])

    def __add__(self, other):
        return VectorField(self.grid, self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return VectorField(self.grid, self.u - other.u, self.v - other.v)

    def __mul__(self, s: float):
        return VectorField(self.grid, self.u * s, self.v * s)

    __rmul__ = __mul__


class ScalarField:
    """Cell-centered scalar (pressure, obstacle slice, multiplier)."""

    def __init__(self, grid: MacGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.nx, grid.ny):
            raise DomainError("scalar values must be cell-centered (nx, ny)")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: MacGrid) -> "ScalarField":
        return cls(grid, np.zeros((grid.nx, grid.ny)))


# ============================================================
# operator assembly (built once per grid, cached)
# ============================================================

class _Ops:
    """Sparse matrices realizing the discrete operators for one grid."""

    def __init__(self, g: MacGrid):
        self.grid = g
        nx, ny, h = g.nx, g.ny, g.h
        nu, nv, nc = g.n_u, g.n_v, g.ncells

        def uidx(i, j):
            return (i - 1) * ny + j

        def vidx(i, j):
            return nu + i * (ny - 1) + (j - 1)

        def cidx(i, j):
            return i * ny + j

        # ---- divergence D: cells x dof --------------------------------
        rows, cols, vals = [], [], []
        for i in range(nx):
            for j in range(ny):
                c = cidx(i, j)
                if i + 1 <= nx - 1:
                    rows.append(c); cols.append(uidx(i + 1, j)); vals.append(1.0 / h)
                if i >= 1:
                    rows.append(c); cols.append(uidx(i, j)); vals.append(-1.0 / h)
                if j + 1 <= ny - 1:
                    rows.append(c); cols.append(vidx(i, j + 1)); vals.append(1.0 / h)
                if j >= 1:
                    rows.append(c); cols.append(vidx(i, j)); vals.append(-1.0 / h)
        self.D = sp.csr_matrix((vals, (rows, cols)), shape=(nc, g.ndof))
        self.G = (-self.D.T).tocsr()            # discrete gradient, exact adjoint

        # ---- vector Laplacian L (positive), ghost-mirrored walls ------
        rows, cols, vals = [], [], []
        inv2 = 1.0 / (h * h)
        for i in range(1, nx):
            for j in range(ny):
                r = uidx(i, j)
                diag = 4.0
                for ii in (i - 1, i + 1):
                    if 1 <= ii <= nx - 1:
                        rows.append(r); cols.append(uidx(ii, j)); vals.append(-inv2)
                    # ii == 0 or nx: boundary face is zero, term drops
                for jj in (j - 1, j + 1):
                    if 0 <= jj <= ny - 1:
                        rows.append(r); cols.append(uidx(i, jj)); vals.append(-inv2)
                    else:
                        diag += 1.0                     # mirror ghost folds in
                rows.append(r); cols.append(r); vals.append(diag * inv2)
        for i in range(nx):
            for j in range(1, ny):
                r = vidx(i, j)
                diag = 4.0
                for jj in (j - 1, j + 1):
                    if 1 <= jj <= ny - 1:
                        rows.append(r); cols.append(vidx(i, jj)); vals.append(-inv2)
                for ii in (i - 1, i + 1):
                    if 0 <= ii <= nx - 1:
                        rows.append(r); cols.append(vidx(ii, j)); vals.append(-inv2)
                    else:
                        diag += 1.0
                rows.append(r); cols.append(r); vals.append(diag * inv2)
        self.L = sp.csr_matrix((vals, (rows, cols)), shape=(g.ndof, g.ndof))

        # ---- cell-center reconstruction R: (2 nc) x dof ----------------
        rows, cols, vals = [], [], []
        for i in range(nx):
            for j in range(ny):
                c = cidx(i, j)
                if i >= 1:
                    rows.append(c); cols.append(uidx(i, j)); vals.append(0.5)
                if i + 1 <= nx - 1:
                    rows.append(c); cols.append(uidx(i + 1, j)); vals.append(0.5)
                if j >= 1:
                    rows.append(nc + c); cols.append(vidx(i, j)); vals.append(0.5)
                if j + 1 <= ny - 1:
                    rows.append(nc + c); cols.append(vidx(i, j + 1)); vals.append(0.5)
        self.R = sp.csr_matrix((vals, (rows, cols)), shape=(2 * nc, g.ndof))
        self.RtR = (self.R.T @ self.R).tocsr()

        # ---- centered first derivatives for the convection form --------
        # d/dx u at u faces (zero boundary faces dropped)
        rows, cols, vals = [], [], []
        c2 = 1.0 / (2.0 * h)
        for i in range(1, nx):
            for j in range(ny):
                r = uidx(i, j)
                if i + 1 <= nx - 1:
                    rows.append(r); cols.append(uidx(i + 1, j)); vals.append(c2)
                if i - 1 >= 1:
                    rows.append(r); cols.append(uidx(i - 1, j)); vals.append(-c2)
        self.Dxu = sp.csr_matrix((vals, (rows, cols)), shape=(nu, g.ndof))

        # d/dy u at u faces, mirror ghosts at walls
        rows, cols, vals = [], [], []
        for i in range(1, nx):
            for j in range(ny):
                r = uidx(i, j)
                if j + 1 <= ny - 1:
                    rows.append(r); cols.append(uidx(i, j + 1)); vals.append(c2)
                else:                                   # ghost = -u[i, ny-1]
                    rows.append(r); cols.append(uidx(i, ny - 1)); vals.append(-c2)
                if j - 1 >= 0:
                    rows.append(r); cols.append(uidx(i, j - 1)); vals.append(-c2)
                else:                                   # ghost = -u[i, 0]
                    rows.append(r); cols.append(uidx(i, 0)); vals.append(c2)
        self.Dyu = sp.csr_matrix((vals, (rows, cols)), shape=(nu, g.ndof))

        # d/dx v at v faces, mirror ghosts at walls
        rows, cols, vals = [], [], []
        for i in range(nx):
            for j in range(1, ny):
                r = vidx(i, j) - nu
                if i + 1 <= nx - 1:
                    rows.append(r); cols.append(vidx(i + 1, j)); vals.append(c2)
                else:
                    rows.append(r); cols.append(vidx(nx - 1, j)); vals.append(-c2)
                if i - 1 >= 0:
                    rows.append(r); cols.append(vidx(i - 1, j)); vals.append(-c2)
                else:
                    rows.append(r); cols.append(vidx(0, j)); vals.append(c2)
        self.Dxv = sp.csr_matrix((vals, (rows, cols)), shape=(nv, g.ndof))

        # d/dy v at v faces (zero boundary faces dropped)
        rows, cols, vals = [], [], []
        for i in range(nx):
            for j in range(1, ny):
                r = vidx(i, j) - nu
                if j + 1 <= ny - 1:
                    rows.append(r); cols.append(vidx(i, j + 1)); vals.append(c2)
                if j - 1 >= 1:
                    rows.append(r); cols.append(vidx(i, j - 1)); vals.append(-c2)
        self.Dyv = sp.csr_matrix((vals, (rows, cols)), shape=(nv, g.ndof))

        # v interpolated to u faces and u interpolated to v faces
        rows, cols, vals = [], [], []
        for i in range(1, nx):
            for j in range(ny):
                r = uidx(i, j)
                for (ii, jj) in ((i - 1, j), (i - 1, j + 1), (i, j), (i, j + 1)):
                    if 1 <= jj <= ny - 1:
                        rows.append(r); cols.append(vidx(ii, jj)); vals.append(0.25)
        self.Av2u = sp.csr_matrix((vals, (rows, cols)), shape=(nu, g.ndof))

        rows, cols, vals = [], [], []
        for i in range(nx):
            for j in range(1, ny):
                r = vidx(i, j) - nu
                for (ii, jj) in ((i, j - 1), (i, j), (i + 1, j - 1), (i + 1, j)):
                    if 1 <= ii <= nx - 1:
                        rows.append(r); cols.append(uidx(ii, jj)); vals.append(0.25)
        self.Au2v = sp.csr_matrix((vals, (rows, cols)), shape=(nv, g.ndof))

        # ---- gradient samples for the H^1 seminorm ---------------------
        # u: x-samples at centers (weight h^2), y-samples at interior nodes
        # (h^2) and walls (sample 2u/h, weight h^2/2); mirrored signs at the
        # top wall.  v symmetric.  The total quadratic form equals
        # h^2 x^T L x exactly.
        blocks, weights = [], []

        rows, cols, vals = [], [], []
        for i in range(nx):
            for j in range(ny):
                r = cidx(i, j)
                if i + 1 <= nx - 1:
                    rows.append(r); cols.append(uidx(i + 1, j)); vals.append(1.0 / h)
                if i >= 1:
                    rows.append(r); cols.append(uidx(i, j)); vals.append(-1.0 / h)
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(nc, g.ndof)))
        weights.append(np.full(nc, h * h))
        self.Gxu_c = blocks[-1]

        # y-derivative node samples for u, rows laid out (i, jn), jn = 0..ny
        rows, cols, vals = [], [], []
        nrow = (nx + 1) * (ny + 1)
        wt = np.zeros(nrow)
        for i in range(1, nx):
            for jn in range(ny + 1):
                r = i * (ny + 1) + jn
                if jn == 0:
                    rows.append(r); cols.append(uidx(i, 0)); vals.append(2.0 / h)
                    wt[r] = h * h / 2.0
                elif jn == ny:
                    rows.append(r); cols.append(uidx(i, ny - 1)); vals.append(-2.0 / h)
                    wt[r] = h * h / 2.0
                else:
                    rows.append(r); cols.append(uidx(i, jn)); vals.append(1.0 / h)
                    rows.append(r); cols.append(uidx(i, jn - 1)); vals.append(-1.0 / h)
                    wt[r] = h * h
        self.Gyu_nodes = sp.csr_matrix((vals, (rows, cols)), shape=(nrow, g.ndof))
        blocks.append(self.Gyu_nodes)
        weights.append(wt)

        rows, cols, vals = [], [], []
        for i in range(nx):
            for j in range(ny):
                r = cidx(i, j)
                if j + 1 <= ny - 1:
                    rows.append(r); cols.append(vidx(i, j + 1)); vals.append(1.0 / h)
                if j >= 1:
                    rows.append(r); cols.append(vidx(i, j)); vals.append(-1.0 / h)
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(nc, g.ndof)))
        weights.append(np.full(nc, h * h))
        self.Gyv_c = blocks[-1]

        rows, cols, vals = [], [], []
        nrow = (nx + 1) * (ny + 1)
        wt = np.zeros(nrow)
        for j in range(1, ny):
            for i_n in range(nx + 1):
                r = i_n * (ny + 1) + j
                if i_n == 0:
                    rows.append(r); cols.append(vidx(0, j)); vals.append(2.0 / h)
                    wt[r] = h * h / 2.0
                elif i_n == nx:
                    rows.append(r); cols.append(vidx(nx - 1, j)); vals.append(-2.0 / h)
                    wt[r] = h * h / 2.0
                else:
                    rows.append(r); cols.append(vidx(i_n, j)); vals.append(1.0 / h)
                    rows.append(r); cols.append(vidx(i_n - 1, j)); vals.append(-1.0 / h)
                    wt[r] = h * h
        self.Gxv_nodes = sp.csr_matrix((vals, (rows, cols)), shape=(nrow, g.ndof))
        blocks.append(self.Gxv_nodes)
        weights.append(wt)

        self.semi_blocks = blocks
        self.semi_weights = weights

        # node -> cell-center four-point average.  The W^{1,4} quadrature
        # averages the SQUARES of the node samples to centers; averaging the
        # values instead would let checkerboard modes cancel and the ratio
        # |z|_{1,2}/|z|_{1,4} blow up like 1/h.
        rows, cols, vals = [], [], []
        for i in range(nx):
            for j in range(ny):
                r = cidx(i, j)
                for (ii, jj) in ((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)):
                    rows.append(r); cols.append(ii * (ny + 1) + jj); vals.append(0.25)
        self.node2cell = sp.csr_matrix((vals, (rows, cols)), shape=(nc, (nx + 1) * (ny + 1)))

        # ---- pressure Poisson operator (SPD, singular on constants) ----
        self.Lp = (self.D @ self.D.T).tocsr()

        self._lu_L = None

    def laplacian_solver(self):
        if self._lu_L is None:
            self._lu_L = spla.splu(self.L.tocsc())
        return self._lu_L

    def convection_matrix(self, a: "VectorField") -> sp.csr_matrix:
        """Skew part C(a) of the centered advection operator frozen at a."""
        At = self.advection_matrix(a)
        return ((At - At.T) * 0.5).tocsr()

    def advection_matrix(self, a: "VectorField") -> sp.csr_matrix:
        g = self.grid
        ad = a.dof()
        a1u = ad[: g.n_u]
        a2u = self.Av2u @ ad
        a1v = self.Au2v @ ad
        a2v = ad[g.n_u:]
        upart = sp.diags(a1u) @ self.Dxu + sp.diags(a2u) @ self.Dyu
        vpart = sp.diags(a1v) @ self.Dxv + sp.diags(a2v) @ self.Dyv
        return sp.vstack([upart, vpart]).tocsr()


# ============================================================
# basic operators
# ============================================================

def divergence(f: VectorField) -> ScalarField:
    g = f.grid
    vals = (g.ops().D @ f.dof()).reshape(g.nx, g.ny)
    return ScalarField(g, vals)


def gradient(p: ScalarField) -> VectorField:
    g = p.grid
    return VectorField.from_dof(g, g.ops().G @ p.values.ravel())


def _cg(A, b, tol, maxiter):
    """Plain conjugate gradients to absolute residual tol; deterministic."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    tol2 = tol * tol
    converged = rs <= tol2
    for _ in range(maxiter):
        if converged:
            break
        Ap = A @ p
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        converged = rs <= tol2
    return x, np.sqrt(rs), converged


def leray_project(f: VectorField, rtol: float = 1e-13, maxiter: int | None = None) -> VectorField:
    """Discrete Leray projection onto divergence-free fields.

    Solves the cell-centered Poisson problem D D^T phi = D f by conjugate
    gradients (the right side has zero mean exactly, so the singular Neumann
    operator poses no compatibility issue) and removes the gradient part.
    The CG residual is the divergence of the projected iterate, so the
    stopping rule floors the relative tolerance at the rounding level
    eps*|x|/h attainable by applying D at all.
    """
    g = f.grid
    ops = g.ops()
    x = f.dof()
    b = ops.D @ x
    if maxiter is None:
        maxiter = 40 * g.ncells
    bnorm = float(np.sqrt(b @ b))
    floor = 200.0 * np.finfo(float).eps * float(np.sqrt(x @ x)) / g.h
    tol = max(rtol * bnorm, floor)
    if bnorm <= tol:
        return VectorField.from_dof(g, x)
    phi, resid, ok = _cg(ops.Lp, b, tol, maxiter)
    if not ok:
        raise NumericalError("pressure Poisson iteration did not converge",
                             residual=resid / max(bnorm, 1e-300))
    return VectorField.from_dof(g, x - ops.D.T @ phi)


# ============================================================
# convection forms
# ============================================================

def convection_tilde(a: VectorField, v: VectorField, w: VectorField) -> float:
    """b~(a, v, w) = sum_k integral (a . grad v^k) w^k, centered samples."""
    g = a.grid
    ops = g.ops()
    ad, vd, wd = a.dof(), v.dof(), w.dof()
    a2u = ops.Av2u @ ad
    a1v = ops.Au2v @ ad
    conv_u = ad[: g.n_u] * (ops.Dxu @ vd) + a2u * (ops.Dyu @ vd)
    conv_v = a1v * (ops.Dxv @ vd) + ad[g.n_u:] * (ops.Dyv @ vd)
    return g.h ** 2 * (float(wd[: g.n_u] @ conv_u) + float(wd[g.n_u:] @ conv_v))


def convection_form(a: VectorField, v: VectorField, w: VectorField) -> float:
    """Skew-symmetrized trilinear form b(a, v, w); b(a, z, z) vanishes exactly."""
    return 0.5 * (convection_tilde(a, v, w) - convection_tilde(a, w, v))


# ============================================================
# norms
# ============================================================

def inner_h(f: VectorField, w: VectorField) -> float:
    return f.grid.h ** 2 * float(f.dof() @ w.dof())


def norm_L2(f: VectorField) -> float:
    x = f.dof()
    return f.grid.h * float(np.sqrt(x @ x))


def seminorm_H1(f: VectorField) -> float:
    ops = f.grid.ops()
    x = f.dof()
    total = 0.0
    for B, w in zip(ops.semi_blocks, ops.semi_weights):
        s = B @ x
        total += float(w @ (s * s))
    return np.sqrt(total)


def _w14_fourth(f: VectorField) -> float:
    ops = f.grid.ops()
    x = f.dof()
    gu2 = (ops.Gxu_c @ x) ** 2 + ops.node2cell @ ((ops.Gyu_nodes @ x) ** 2)
    gv2 = ops.node2cell @ ((ops.Gxv_nodes @ x) ** 2) + (ops.Gyv_c @ x) ** 2
    return f.grid.h ** 2 * float(np.sum(gu2 * gu2) + np.sum(gv2 * gv2))


def norm_W14(f: VectorField) -> float:
    """| . |_{1,4}: cell-centered quadrature of |grad v|^4 per component.

    The squared x-derivative is native at centers; the squared y-derivative is
    the four-point average of the node/wall samples (squares averaged, not
    values).  Cell sums of the squared samples reproduce the H^1 seminorm
    exactly, so the discrete Cauchy-Schwarz |z|_{1,2} <= 2^{1/4} |Q|^{1/4}
    |z|_{1,4} holds uniformly in h.
    """
    return _w14_fourth(f) ** 0.25


def norm_L4(f: VectorField) -> float:
    s2 = np.sum(f.center_vectors() ** 2, axis=-1)
    return (f.grid.h ** 2 * float(np.sum(s2 * s2))) ** 0.25


def max_center_speed(f: VectorField) -> float:
    return float(np.max(f.center_speed()))


# ============================================================
# dual norm on a subdomain
# ============================================================

class DualNormEstimate(float):
    """Certified lower bound for | . |_{W*}; carries the last ascent increment."""

    def __new__(cls, value: float, last_increment: float):
        obj = super().__new__(cls, value)
        obj.last_increment = float(last_increment)
        return obj

    @property
    def value(self) -> float:
        return float(self)


def _w14_grad_fourth(grid, x):
    """(Q, grad Q) for Q(x) = |field|_{1,4}^4 on dof vectors."""
    ops = grid.ops()
    gxu = ops.Gxu_c @ x
    byu = ops.Gyu_nodes @ x
    bxv = ops.Gxv_nodes @ x
    gyv = ops.Gyv_c @ x
    su = gxu * gxu + ops.node2cell @ (byu * byu)
    sv = ops.node2cell @ (bxv * bxv) + gyv * gyv
    Q = grid.h ** 2 * float(np.sum(su * su) + np.sum(sv * sv))
    gQ = 4.0 * grid.h ** 2 * (
        ops.Gxu_c.T @ (su * gxu) + ops.Gyu_nodes.T @ ((ops.node2cell.T @ su) * byu)
        + ops.Gxv_nodes.T @ ((ops.node2cell.T @ sv) * bxv) + ops.Gyv_c.T @ (sv * gyv)
    )
    return Q, gQ


def dual_norm_W_star(f: VectorField, cell_mask: np.ndarray,
                     iters: int = 600, tol: float = 1e-10) -> DualNormEstimate:
    """Estimate sup <f, z> / |z|_{1,4} over divergence-free z supported in the
    masked subdomain (extended by zero; wall samples act as the zero trace).

    Projected gradient ascent on the scale-invariant ratio in the reduced
    divergence-free basis of the subdomain.  Deterministic start: the reduced
    projection of f restricted to the subdomain.  Every evaluated ratio is a
    rigorous lower bound; the best one is returned.
    """
    g = f.grid
    idx, Z = g.subdomain_divfree_basis(cell_mask)
    if idx.size == 0 or Z.shape[1] == 0:
        raise DomainError("subdomain has no divergence-free degrees of freedom")
    fd = f.dof()
    # linear functional l(c) = <f, embed(Z c)>_h
    lin = g.h ** 2 * (Z.T @ fd[idx])
    if float(np.max(np.abs(lin))) == 0.0:
        return DualNormEstimate(0.0, 0.0)

    def ratio_and_grad(c):
        x = np.zeros(g.ndof)
        x[idx] = Z @ c
        Q, gQ = _w14_grad_fourth(g, x)
        den = Q ** 0.25
        num = float(lin @ c)
        r = num / den
        # d/dc [num/den] = lin/den - num * (gQ/(4 Q)) * den / den^2
        gc = lin / den - (num / (4.0 * Q * den)) * (Z.T @ gQ[idx])
        return r, gc

    c = Z.T @ fd[idx]
    if float(np.linalg.norm(c)) < 1e-300:
        c = lin.copy()
    c = c / np.linalg.norm(c)
    best, gc = ratio_and_grad(c)
    if best < 0:
        c = -c
        best, gc = ratio_and_grad(c)
    step = 1.0
    last_inc = np.inf
    for _ in range(iters):
        trial = c + step * gc / max(np.linalg.norm(gc), 1e-300)
        trial /= np.linalg.norm(trial)
        r_t, g_t = ratio_and_grad(trial)
        if r_t > best:
            last_inc = (r_t - best) / max(abs(best), 1e-300)
            c, best, gc = trial, r_t, g_t
            step = min(step * 1.3, 1.0)
            if last_inc < tol:
                break
        else:
            step *= 0.5
            if step < 1e-14:
                break
    return DualNormEstimate(best, 0.0 if not np.isfinite(last_inc) else last_inc)


# ============================================================
# discrete constants
# ============================================================

class ConstantsReport:
    """Discrete surrogates for the embedding constants.

    L0: sup-norm vs |.|_{1,4};  L1 = L_P (Poincare, divergence-free);
    L2: |.|_{1,2} vs |.|_{1,4};  L3: |.|_{0,4} vs |.|_{1,2}.
    Values are projected-gradient-ascent lower estimates of the discrete
    maxima on this grid, not continuum constants.
    """

    def __init__(self, grid, L0, L1, L2, L3, restarts, poincare_sweeps):
        self.grid = grid
        self.L0 = L0
        self.L1 = L1
        self.L2 = L2
        self.L3 = L3
        self.restarts = restarts
        self.poincare_sweeps = poincare_sweeps
        self.method = "projected-gradient-ascent lower estimate"

    @property
    def L_P(self) -> float:
        return self.L1

    def as_dict(self):
        return {"L0": self.L0, "L1": self.L1, "L2": self.L2, "L3": self.L3}

    def rows(self):
        """(name, value, method, iters) rows for CSV serialization."""
        asc = self.method
        return [
            ("L0", self.L0, asc, self.restarts),
            ("L1", self.L1, "projected inverse power iteration", self.poincare_sweeps),
            ("L2", self.L2, asc, self.restarts),
            ("L3", self.L3, asc, self.restarts),
            ("L_P", self.L_P, "projected inverse power iteration", self.poincare_sweeps),
        ]

    def __repr__(self):
        return ("ConstantsReport(L0={L0:.6g}, L1={L1:.6g}, L2={L2:.6g}, L3={L3:.6g})"
                .format(**self.as_dict()))


def poincare_constant(grid: MacGrid, tol: float = 1e-8, max_sweeps: int = 5000) -> float:
    """L_P = sqrt of the dominant eigenvalue of P (-Lap)^-1 P on divergence-free
    fields, by inverse power iteration with a Leray projection every sweep.

    Dominates the sharp discrete constant (Cauchy-Schwarz) and is bounded by
    the unconstrained-Laplacian value, so |z|_{0,2} <= L_P |z|_{1,2} holds for
    every discrete divergence-free z.
    """
    ops = grid.ops()
    lu = ops.laplacian_solver()
    rng = np.random.default_rng(1234)
    z = leray_project(VectorField(grid,
                                  rng.standard_normal((grid.nx + 1, grid.ny)),
                                  rng.standard_normal((grid.nx, grid.ny + 1)))).dof()
    z /= np.linalg.norm(z)
    mu_old = 0.0
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        w = leray_project(VectorField.from_dof(grid, lu.solve(z))).dof()
        mu = float(w @ z)                       # Rayleigh quotient of the iterate
        nw = np.linalg.norm(w)
        if nw == 0.0:
            raise NumericalError("inverse power iteration collapsed to zero")
        z = w / nw
        if abs(mu - mu_old) <= tol * abs(mu):
            mu_old = mu
            converged = True
            break
        mu_old = mu
    if not converged:
        raise NumericalError("inverse power iteration did not converge",
                             residual=abs(mu_old))
    poincare_constant._last_sweeps = sweeps
    return float(np.sqrt(mu_old))


def _ascend_ratio(grid, Z, num_fn, den_fn, c0, iters=400, tol=1e-9):
    """Maximize num(x)/den(x) over x = Z c, |c| = 1.  Returns the best ratio."""

    def ev(c):
        x = Z @ c
        n, gn = num_fn(x)
        d, gd = den_fn(x)
        r = n / d
        gc = Z.T @ (gn / d - (n / (d * d)) * gd)
        return r, gc

    c = c0 / np.linalg.norm(c0)
    best, gc = ev(c)
    step = 1.0
    for _ in range(iters):
        trial = c + step * gc / max(np.linalg.norm(gc), 1e-300)
        trial /= np.linalg.norm(trial)
        r_t, g_t = ev(trial)
        if r_t > best:
            if (r_t - best) < tol * abs(best):
                best, c, gc = r_t, trial, g_t
                break
            best, c, gc = r_t, trial, g_t
            step = min(step * 1.3, 1.0)
        else:
            step *= 0.5
            if step < 1e-14:
                break
    return best


_CONSTANTS_MEMO: dict = {}


def embedding_constants(grid: MacGrid, restarts: int = 8, iters: int = 400,
                        seed: int = 2024) -> ConstantsReport:
    """Ascent estimates for L0, L2, L3 plus the Poincare constant as L1.

    Memoized: the estimate is seeded and deterministic, a pure function of
    the grid and the search budget, and every command needs it per run.
    """
    key = (grid.nx, grid.ny, grid.h, restarts, iters, seed)
    hit = _CONSTANTS_MEMO.get(key)
    if hit is not None:
        return hit
    ops = grid.ops()
    Z = grid.divfree_basis()
    h2 = grid.h ** 2
    R = ops.R
    nc = grid.ncells

    def num_sup(x):
        rx = R @ x
        sx, sy = rx[:nc], rx[nc:]
        sp_ = np.hypot(sx, sy)
        k = int(np.argmax(sp_))
        val = sp_[k]
        gr = np.zeros_like(rx)
        if val > 0:
            gr[k] = sx[k] / val
            gr[nc + k] = sy[k] / val
        else:
            gr[k] = 1.0
        return val, R.T @ gr

    def num_semi(x):
        total = np.zeros_like(x)
        val2 = 0.0
        for B, w in zip(ops.semi_blocks, ops.semi_weights):
            s = B @ x
            val2 += float(w @ (s * s))
            total += B.T @ (w * s) * 2.0
        val = np.sqrt(val2)
        return val, total / (2.0 * val)

    def num_l4(x):
        rx = R @ x
        sx, sy = rx[:nc], rx[nc:]
        s2 = sx * sx + sy * sy
        q = h2 * float(np.sum(s2 * s2))
        val = q ** 0.25
        gr = np.concatenate([s2 * sx, s2 * sy]) * (4.0 * h2)
        return val, (R.T @ gr) / (4.0 * q ** 0.75)

    def den_w14(x):
        Q, gQ = _w14_grad_fourth(grid, x)
        val = Q ** 0.25
        return val, gQ / (4.0 * Q ** 0.75)

    def den_semi(x):
        return num_semi(x)

    rng = np.random.default_rng(seed)
    dim = Z.shape[1]
    L0 = L2 = L3 = 0.0
    for _ in range(restarts):
        c0 = rng.standard_normal(dim)
        L0 = max(L0, _ascend_ratio(grid, Z, num_sup, den_w14, c0, iters))
        L2 = max(L2, _ascend_ratio(grid, Z, num_semi, den_w14, c0, iters))
        L3 = max(L3, _ascend_ratio(grid, Z, num_l4, den_semi, c0, iters))
    L1 = poincare_constant(grid)
    sweeps = getattr(poincare_constant, "_last_sweeps", 0)
    report = ConstantsReport(grid, L0, L1, L2, L3, restarts, sweeps)
    _CONSTANTS_MEMO[key] = report
    return report
