"""Discrete operators on the staggered grid.

All bilinear forms are assembled as sparse matrices over the full flat face
layout. Faces pinned by the essential conditions (normal velocity on Gamma
and on S) carry empty rows and columns in the stiffness form, so the same
matrices serve constrained and unconstrained fields.

The viscous form is assembled as ``R.T @ diag(w) @ R`` from weighted
difference rows. That makes it symmetric positive semidefinite by
construction; the tangential velocity on S has no wall row (zero Neumann),
and the tangential velocity on Gamma gets a half-cell row to the wall
(homogeneous Dirichlet).
"""
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Grid2D, build_grid

__all__ = [
    "DiscreteOps",
    "get_ops",
    "apply_divergence",
    "apply_gradient",
    "apply_laplacian",
    "inner",
    "norm_lp",
    "grad_norm_sq",
    "trace_tangential",
    "compute_lambda_min",
    "EigenResult",
]


class DiscreteOps:
    def __init__(self, grid):
        self.grid = grid
        self.weights = grid.face_weights
        self.free = grid.free
        self.div = self._assemble_div()
        self.stiffness = self._assemble_stiffness()
        self.avg = self._assemble_cell_average()
        self.trace = self._assemble_trace()

    # --- assembly --------------------------------------------------------

    def _assemble_div(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        c = g.cell_index(i, j).ravel()
        rows = np.concatenate([c, c, c, c])
        cols = np.concatenate([
            g.u_index(i + 1, j).ravel(), g.u_index(i, j).ravel(),
            g.v_index(i, j + 1).ravel(), g.v_index(i, j).ravel(),
        ])
        n = c.size
        vals = np.concatenate([
            np.full(n, 1.0 / g.dx), np.full(n, -1.0 / g.dx),
            np.full(n, 1.0 / g.dy), np.full(n, -1.0 / g.dy),
        ])
        return sp.csr_matrix((vals, (rows, cols)), shape=(g.n_cells, g.n_faces))

    def _assemble_stiffness(self):
        g = self.grid
        nx, ny, dx, dy, area = g.nx, g.ny, g.dx, g.dy, g.cell_area
        rows, cols, vals, wts = [], [], [], []
        nrow = 0

        def add(plus, minus, h, w):
            # rows (x[plus] - x[minus]) / h with weight w; minus=None means wall value 0
            nonlocal nrow
            plus = np.ravel(plus)
            k = plus.size
            r = np.arange(nrow, nrow + k)
            rows.append(r)
            cols.append(plus)
            vals.append(np.full(k, 1.0 / h))
            if minus is not None:
                rows.append(r)
                cols.append(np.ravel(minus))
                vals.append(np.full(k, -1.0 / h))
            wts.append(np.full(k, w))
            nrow += k

        # x-velocity: d/dx at cell centres, d/dy between interior rows
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        add(g.u_index(i + 1, j), g.u_index(i, j), dx, area)
        i, j = np.meshgrid(np.arange(1, nx), np.arange(ny - 1), indexing="ij")
        add(g.u_index(i, j + 1), g.u_index(i, j), dy, area)
        # y-velocity: d/dy at cell centres, d/dx between columns, half cells to Gamma
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        add(g.v_index(i, j + 1), g.v_index(i, j), dy, area)
        i, j = np.meshgrid(np.arange(nx - 1), np.arange(1, ny), indexing="ij")
        add(g.v_index(i + 1, j), g.v_index(i, j), dx, area)
        jj = np.arange(1, ny)
        add(g.v_index(0, jj), None, 0.5 * dx, 0.5 * area)
        add(g.v_index(nx - 1, jj), None, 0.5 * dx, 0.5 * area)

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        keep = g.admissible[cols]
        R = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nrow, g.n_faces))
        self.diff_rows = R
        self.diff_weights = np.concatenate(wts)
        A = (R.T @ sp.diags(self.diff_weights) @ R).tocsr()
        A.sum_duplicates()
        return A

    def _assemble_cell_average(self):
        g = self.grid
        nx, ny, nc = g.nx, g.ny, g.n_cells
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        c = g.cell_index(i, j).ravel()
        rows = np.concatenate([c, c, nc + c, nc + c])
        cols = np.concatenate([
            g.u_index(i, j).ravel(), g.u_index(i + 1, j).ravel(),
            g.v_index(i, j).ravel(), g.v_index(i, j + 1).ravel(),
        ])
        return sp.csr_matrix((np.full(rows.size, 0.5), (rows, cols)), shape=(2 * nc, g.n_faces))

    def _assemble_trace(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        i = np.arange(nx)
        r = np.arange(2 * nx)
        rows = np.concatenate([r, r])
        cols = np.concatenate([
            g.u_index(i, 0), g.u_index(i, ny - 1),
            g.u_index(i + 1, 0), g.u_index(i + 1, ny - 1),
        ])
        return sp.csr_matrix((np.full(rows.size, 0.5), (rows, cols)), shape=(2 * nx, g.n_faces))

    # --- restricted blocks -----------------------------------------------

    @cached_property
    def div_free(self):
        """Divergence acting on admissible faces only (cells x free)."""
        return self.div[:, self.free].tocsr()

    @cached_property
    def constraint(self):
        """Cell-weighted divergence ``|cell| * div`` on free faces; the saddle constraint block."""
        return (self.grid.cell_area * self.div_free).tocsr()

    @cached_property
    def stiffness_free(self):
        return self.stiffness[self.free][:, self.free].tocsc()

    @cached_property
    def weights_free(self):
        return self.weights[self.free]

    @cached_property
    def pressure_poisson(self):
        """Factor of ``B W^-1 B^T`` with the last cell pinned (constants are its kernel)."""
        B = self.constraint
        L = (B @ sp.diags(1.0 / self.weights_free) @ B.T).tocsc()
        return spla.splu(L[:-1, :-1].tocsc())

    def solve_pressure_poisson(self, rhs):
        out = np.zeros(self.grid.n_cells)
        out[:-1] = self.pressure_poisson.solve(np.asarray(rhs[:-1], dtype=float))
        return out - out.mean()

    # --- fields ----------------------------------------------------------

    def restrict(self, w):
        return np.asarray(w, dtype=float)[self.free]

    def extend(self, wf):
        out = np.zeros(self.grid.n_faces)
        out[self.free] = wf
        return out

    def project_divfree(self, w):
        """W-orthogonal projection onto admissible, discretely divergence-free fields."""
        w = self.grid.check_faces(w)
        wf = self.restrict(w)
        # second pass mops up the residual the pinned cell collects
        for _ in range(2):
            phi = self.solve_pressure_poisson(self.constraint @ wf)
            wf = wf - (self.constraint.T @ phi) / self.weights_free
        return self.extend(wf)

    def inner(self, u, v):
        return float(np.dot(self.weights * u, v))

    def cell_vectors(self, w):
        """Cell-centred velocity vectors, shape (n_cells, 2)."""
        c = self.avg @ w
        return c.reshape(2, -1).T

    def cell_magnitude(self, w):
        c = self.avg @ w
        n = self.grid.n_cells
        return np.hypot(c[:n], c[n:])

    def lp_norm(self, w, p):
        if p == 2:
            return float(np.sqrt(max(self.inner(w, w), 0.0)))
        mag = self.cell_magnitude(w)
        if np.isinf(p):
            return float(mag.max(initial=0.0))
        if not 3.0 <= p <= 4.0:
            raise ValueError(f"unsupported exponent {p!r}; use 2, alpha+2 with alpha in [1,2], or inf")
        return float((self.grid.cell_area * np.sum(mag ** p)) ** (1.0 / p))

    def grad_norm_sq(self, w):
        wf = self.restrict(w)
        return float(wf @ (self.stiffness_free @ wf))


@lru_cache(maxsize=16)
def _ops_for(nx, ny, lx, ly):
    return DiscreteOps(build_grid(nx, ny, lx, ly))


def get_ops(grid):
    return _ops_for(grid.nx, grid.ny, grid.lx, grid.ly)


# --- functional interface ------------------------------------------------

def apply_divergence(u, grid):
    """Two-point MAC divergence at every cell centre."""
    u = grid.check_faces(u)
    return get_ops(grid).div @ u


def apply_gradient(q, grid):
    """Pressure gradient on admissible faces, zero on boundary-normal faces.

    Defined as the negative W-adjoint of the divergence, so that
    ``(div v, q) = -(v, grad q)`` for every admissible ``v``.
    """
    q = grid.check_cells(q)
    ops = get_ops(grid)
    out = np.zeros(grid.n_faces)
    out[ops.free] = -(ops.constraint.T @ q) / ops.weights_free
    return out


def apply_laplacian(u, grid, tol=1e-10):
    """Vector Laplacian with Dirichlet walls on Gamma and zero-Neumann slip on S.

    Returns zero on pinned faces. Raises if ``u`` does not vanish on them.
    """
    u = grid.check_faces(u)
    pinned = ~grid.admissible
    scale = max(1.0, float(np.abs(u).max(initial=0.0)))
    if np.any(np.abs(u[pinned]) > tol * scale):
        raise ValueError("field violates u|Gamma = 0 or u.n|S = 0")
    ops = get_ops(grid)
    out = np.zeros(grid.n_faces)
    out[ops.free] = -(ops.stiffness_free @ ops.restrict(u)) / ops.weights_free
    return out


def inner(u, v, grid):
    return get_ops(grid).inner(grid.check_faces(u), grid.check_faces(v))


def norm_lp(u, p, grid):
    """Discrete L^p norm of a face field.

    p = 2 uses the face inner product; other exponents integrate the
    cell-centred velocity magnitude with cell-area weights, which is the
    quadrature shared with the Forchheimer term.
    """
    return get_ops(grid).lp_norm(grid.check_faces(u), p)


def grad_norm_sq(u, grid):
    """||grad_h u||^2 := -(Laplacian u, u) on the admissible part of ``u``."""
    return get_ops(grid).grad_norm_sq(grid.check_faces(u))


def trace_tangential(u, grid, partition=None):
    """Tangential velocity on each S face and the face quadrature weights.

    With the zero-Neumann ghost on S the wall value of the x-velocity equals
    the adjacent stored value, so each S edge gets the mean of the two
    x-velocity faces sitting at its ends in the first (or last) row.
    """
    u = grid.check_faces(u)
    tr = get_ops(grid).trace @ u
    if partition is None:
        return tr, np.full(tr.size, grid.dx)
    return tr * partition.tangent_sign, partition.s_weights


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    iterations: int
    residual: float
    converged: bool

    @property
    def poincare_constant(self):
        return 1.0 / np.sqrt(self.value)


@lru_cache(maxsize=8)
def _kkt_factor(nx, ny, lx, ly):
    ops = _ops_for(nx, ny, lx, ly)
    B = ops.constraint[:-1]
    K = sp.bmat([[ops.stiffness_free, B.T], [B, None]]).tocsc()
    return spla.splu(K)


def compute_lambda_min(grid, partition=None, tol=1e-11, maxiter=2000, seed=0):
    """Smallest eigenvalue of the Stokes operator on admissible divergence-free fields.

    Inverse iteration on the generalized problem ``A x = lam W x`` with the
    divergence constraint imposed through the saddle-point system. The
    operator does not depend on the barrier g, so ``partition`` is only
    checked for consistency.
    """
    if partition is not None and partition.grid.n_faces != grid.n_faces:
        raise ValueError("partition does not belong to this grid")
    ops = get_ops(grid)
    lu = _kkt_factor(grid.nx, grid.ny, grid.lx, grid.ly)
    nf = ops.free.size
    W = ops.weights_free
    A = ops.stiffness_free
    rng = np.random.default_rng(seed)
    x = ops.restrict(ops.project_divfree(ops.extend(rng.standard_normal(nf))))
    x /= np.sqrt(x @ (W * x))
    lam = x @ (A @ x)
    rhs = np.zeros(nf + grid.n_cells - 1)
    converged = False
    resid = np.inf
    for it in range(1, maxiter + 1):
        rhs[:nf] = W * x
        y = lu.solve(rhs)[:nf]
        y /= np.sqrt(y @ (W * y))
        if y @ (W * x) < 0:
            y = -y
        lam_new = y @ (A @ y)
        step = np.sqrt(max((y - x) @ (W * (y - x)), 0.0))
        x, lam = y, lam_new
        resid = step
        if step <= tol:
            converged = True
            break
    if not converged and resid > 1e-6:
        raise RuntimeError(
            f"inverse iteration did not converge after {maxiter} iterations (step {resid:.3e})"
        )
    return EigenResult(float(lam), ops.extend(x), it, float(resid), converged)
