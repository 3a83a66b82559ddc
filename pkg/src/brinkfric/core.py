"""Physical parameters, the staggered grid, boundary partition and presets.

Face fields are flat float arrays of length ``grid.n_faces``: the first
``(nx+1)*ny`` entries are x-velocities on vertical faces (C order over
``(i, j)``), followed by ``nx*(ny+1)`` y-velocities on horizontal faces.
Cell fields are flat arrays of length ``nx*ny``.

Gamma (Dirichlet wall) is the pair of vertical walls x=0 and x=lx; S
(friction slip wall) is the pair of horizontal walls y=0 and y=ly.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "PhysicalParams",
    "Grid2D",
    "BoundaryPartition",
    "State",
    "InitSpec",
    "ForcingSpec",
    "build_grid",
    "make_partition",
    "make_initial",
    "eval_forcing",
    "INIT_PRESETS",
    "FORCING_PRESETS",
]


@dataclass(frozen=True)
class PhysicalParams:
    """Coefficients of the regularized Brinkman-Forchheimer problem."""

    nu: float
    a: float
    b: float
    alpha: float
    eps: float

    def __post_init__(self):
        for name in ("nu", "a", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not self.b >= 0:
            raise ValueError(f"b must be >= 0, got {self.b!r}")
        if not 1.0 <= self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in [1, 2], got {self.alpha!r}")

    def replace(self, **changes):
        kw = dict(nu=self.nu, a=self.a, b=self.b, alpha=self.alpha, eps=self.eps)
        kw.update(changes)
        return PhysicalParams(**kw)


@dataclass(frozen=True, eq=False)
class Grid2D:
    nx: int
    ny: int
    lx: float
    ly: float

    @property
    def dx(self):
        return self.lx / self.nx

    @property
    def dy(self):
        return self.ly / self.ny

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def u_shape(self):
        return (self.nx + 1, self.ny)

    @property
    def v_shape(self):
        return (self.nx, self.ny + 1)

    @property
    def n_u(self):
        return (self.nx + 1) * self.ny

    @property
    def n_v(self):
        return self.nx * (self.ny + 1)

    @property
    def n_faces(self):
        return self.n_u + self.n_v

    @property
    def n_cells(self):
        return self.nx * self.ny

    def u_index(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)

    def v_index(self, i, j):
        return self.n_u + np.asarray(i) * (self.ny + 1) + np.asarray(j)

    def cell_index(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)

    def split(self, w):
        """View a flat face field as ``(u, v)`` arrays."""
        w = np.asarray(w)
        if w.shape != (self.n_faces,):
            raise ValueError(f"face field must have shape ({self.n_faces},), got {w.shape}")
        return w[: self.n_u].reshape(self.u_shape), w[self.n_u:].reshape(self.v_shape)

    def join(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape != self.u_shape or v.shape != self.v_shape:
            raise ValueError("component shapes do not match the grid")
        return np.concatenate([u.ravel(), v.ravel()])

    def check_faces(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n_faces,):
            raise ValueError(f"face field must have shape ({self.n_faces},), got {w.shape}")
        return w

    def check_cells(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_cells,):
            raise ValueError(f"cell field must have shape ({self.n_cells},), got {q.shape}")
        return q

    @cached_property
    def u_coords(self):
        x = np.arange(self.nx + 1) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    @cached_property
    def v_coords(self):
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = np.arange(self.ny + 1) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    @cached_property
    def cell_coords(self):
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    @cached_property
    def face_weights(self):
        """Quadrature weights of the discrete L2 inner product on faces."""
        wu = np.full(self.u_shape, self.cell_area)
        wu[0, :] *= 0.5
        wu[-1, :] *= 0.5
        wv = np.full(self.v_shape, self.cell_area)
        wv[:, 0] *= 0.5
        wv[:, -1] *= 0.5
        return np.concatenate([wu.ravel(), wv.ravel()])

    @cached_property
    def admissible(self):
        """Boolean mask of faces not fixed by u|Gamma = 0 or u.n|S = 0."""
        mu = np.ones(self.u_shape, dtype=bool)
        mu[0, :] = mu[-1, :] = False
        mv = np.ones(self.v_shape, dtype=bool)
        mv[:, 0] = mv[:, -1] = False
        return np.concatenate([mu.ravel(), mv.ravel()])

    @cached_property
    def free(self):
        """Indices of admissible faces, in increasing order."""
        return np.flatnonzero(self.admissible)

    def __repr__(self):
        return f"Grid2D(nx={self.nx}, ny={self.ny}, lx={self.lx}, ly={self.ly})"


def build_grid(nx, ny, lx=1.0, ly=1.0):
    """Build a staggered grid on [0, lx] x [0, ly]."""
    if int(nx) != nx or int(ny) != ny:
        raise ValueError("cell counts must be integers")
    if nx < 2 or ny < 2:
        raise ValueError(f"need nx, ny >= 2, got ({nx}, {ny})")
    if not (lx > 0 and ly > 0):
        raise ValueError(f"extents must be positive, got ({lx}, {ly})")
    return Grid2D(int(nx), int(ny), float(lx), float(ly))


@dataclass(frozen=True, eq=False)
class BoundaryPartition:
    """Split of the boundary edges into Gamma and S, with the barrier g on S.

    Boundary faces are the edge segments of boundary cells, identified by
    their face index in the flat face layout: Gamma faces are the vertical
    edges on x=0 and x=lx, S faces the horizontal edges on y=0 and y=ly.
    S faces are ordered bottom wall first, then top wall, each by increasing x.
    """

    grid: Grid2D
    gamma_faces: np.ndarray
    s_faces: np.ndarray
    g_values: np.ndarray
    # +1 means the tangent is +x; the outward normals are -y (bottom), +y (top)
    tangent_sign: np.ndarray
    normal_sign: np.ndarray

    @property
    def n_s(self):
        return len(self.s_faces)

    @cached_property
    def s_weights(self):
        return np.full(self.n_s, self.grid.dx)

    @property
    def s_measure(self):
        return 2.0 * self.grid.lx

    @property
    def frictionless(self):
        return not np.any(self.g_values > 0)


def make_partition(grid, g=0.0):
    """Standard partition. ``g`` is a scalar, a ``(bottom, top)`` pair or a per-face array."""
    nx, ny = grid.nx, grid.ny
    j_wall = np.arange(ny)
    gamma = np.concatenate([grid.u_index(0, j_wall), grid.u_index(nx, j_wall)])
    i_wall = np.arange(nx)
    s = np.concatenate([grid.v_index(i_wall, 0), grid.v_index(i_wall, ny)])
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        g_values = np.full(2 * nx, float(g))
    elif g.shape == (2,):
        g_values = np.repeat(g, nx)
    elif g.shape == (2 * nx,):
        g_values = g.copy()
    else:
        raise ValueError(f"cannot broadcast g of shape {g.shape} onto {2 * nx} S faces")
    if np.any(g_values < 0) or not np.all(np.isfinite(g_values)):
        raise ValueError("barrier g must be finite and >= 0")
    g_values.setflags(write=False)
    return BoundaryPartition(
        grid=grid,
        gamma_faces=gamma,
        s_faces=s,
        g_values=g_values,
        tangent_sign=np.ones(2 * nx),
        normal_sign=np.concatenate([-np.ones(nx), np.ones(nx)]),
    )


@dataclass(frozen=True, eq=False)
class State:
    """Velocity on faces, mean-zero pressure on cells, and the time stamp.

    ``t = inf`` marks a stationary solution.
    """

    u: np.ndarray
    p: np.ndarray
    t: float = 0.0
    info: dict = field(default_factory=dict)


# --- presets -------------------------------------------------------------

@dataclass(frozen=True)
class InitSpec:
    preset: str = "zero"
    amplitude: float = 1.0


@dataclass(frozen=True)
class ForcingSpec:
    preset: str = "zero"
    amplitude: float = 1.0
    amplitude_y: float = 0.0
    rate: float = 1.0

    @property
    def time_dependent(self):
        return self.preset == "decaying"


def _taylor_vortex(grid, amp):
    kx, ky = np.pi / grid.lx, np.pi / grid.ly
    xu, yu = grid.u_coords
    xv, yv = grid.v_coords
    u = amp * np.sin(kx * xu) * np.cos(ky * yu)
    v = -amp * (kx / ky) * np.cos(kx * xv) * np.sin(ky * yv)
    return u, v


def _shear_profile(grid, amp):
    _, yu = grid.u_coords
    u = amp * yu * (grid.ly - yu)
    return u, np.zeros(grid.v_shape)


def _eigenmode(grid, amp):
    # lowest Stokes mode, unit norm, sign fixed by its largest entry
    from .operators import compute_lambda_min

    x = compute_lambda_min(grid).vector
    k = int(np.argmax(np.abs(x)))
    x = x * (amp * np.sign(x[k]))
    return x[: grid.n_u].reshape(grid.u_shape), x[grid.n_u:].reshape(grid.v_shape)


INIT_PRESETS = {
    "zero": lambda grid, amp: (np.zeros(grid.u_shape), np.zeros(grid.v_shape)),
    "taylor-vortex": _taylor_vortex,
    "shear-profile": _shear_profile,
    "eigenmode": _eigenmode,
}


def sample_init(spec, grid):
    """Closed-form preset sampled at face centres, before any projection."""
    try:
        fn = INIT_PRESETS[spec.preset]
    except KeyError:
        raise ValueError(
            f"unknown init preset {spec.preset!r}; choose from {sorted(INIT_PRESETS)}"
        ) from None
    return grid.join(*fn(grid, spec.amplitude))


def make_initial(spec, grid):
    """Sample an init preset and project it onto the admissible divergence-free space."""
    from .operators import get_ops

    w = sample_init(spec, grid)
    w = get_ops(grid).project_divfree(w)
    return State(u=w, p=np.zeros(grid.n_cells), t=0.0)


def _forcing_components(spec, grid, t):
    a, ay = spec.amplitude, spec.amplitude_y
    _, yu = grid.u_coords
    if spec.preset == "zero":
        return np.zeros(grid.u_shape), np.zeros(grid.v_shape)
    if spec.preset == "constant":
        return np.full(grid.u_shape, a), np.full(grid.v_shape, ay)
    if spec.preset == "decaying":
        s = np.exp(-spec.rate * t)
        return np.full(grid.u_shape, a * s), np.full(grid.v_shape, ay * s)
    if spec.preset == "sine-y":
        return a * np.sin(np.pi * yu / grid.ly), np.zeros(grid.v_shape)
    if spec.preset == "shear":
        return a * (2.0 * yu / grid.ly - 1.0), np.zeros(grid.v_shape)
    raise ValueError(f"unknown forcing preset {spec.preset!r}; choose from {FORCING_PRESETS}")


FORCING_PRESETS = ("zero", "constant", "decaying", "sine-y", "shear")


def eval_forcing(spec, grid, t=0.0):
    """Body force sampled at every face centre at time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return grid.join(*_forcing_components(spec, grid, t))
