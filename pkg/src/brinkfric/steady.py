"""Stationary regularized problem: the lagged fixed-point solver and a minimization oracle."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import forchheimer, friction
from .core import State, eval_forcing
from .nonlinear import ImplicitSystem, solve_implicit
from .operators import get_ops, grad_norm_sq, inner, trace_tangential

__all__ = [
    "SteadyConfig",
    "solve_steady",
    "divfree_basis",
    "steady_energy",
    "OracleResult",
    "steady_oracle",
    "DENSE_CAP",
]

DENSE_CAP = 16 * 16


@dataclass(frozen=True)
class SteadyConfig:
    picard_tol: float = 1e-10
    picard_max: int = 200
    uzawa_tol: float = 1e-10
    uzawa_max: int = 500
    predictor: str = "newton"

    def __post_init__(self):
        if not (self.picard_tol > 0 and self.uzawa_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.picard_max < 1 or self.uzawa_max < 1:
            raise ValueError("iteration caps must be >= 1")


def solve_steady(params, forcing, grid, partition, config=SteadyConfig(), u0=None):
    """Fixed point of ``nu A + a W + b D_N(u) + B_K(u)`` with ``div u = 0``.

    Returns a State with ``t = inf``; ``info["converged"]`` is False when the
    iteration cap was hit.
    """
    if getattr(forcing, "time_dependent", False):
        raise ValueError("stationary problem needs a time-independent forcing")
    f = eval_forcing(forcing, grid, 0.0)
    system = ImplicitSystem(grid=grid, partition=partition, params=params, sigma=params.a, rhs=f)
    if not np.any(system.rhs_form):
        info = dict(converged=True, picard_iters=0, newton_iters=0, picard_diff=0.0, max_div=0.0)
        return State(np.zeros(grid.n_faces), np.zeros(grid.n_cells), np.inf, info)
    if u0 is None:
        u0 = np.zeros(grid.n_faces)
    res = solve_implicit(system, u0, config.picard_tol, config.picard_max,
                         config.uzawa_tol, config.uzawa_max, predictor=config.predictor)
    info = dict(
        converged=res.picard_converged and res.uzawa_converged,
        picard_iters=res.iterations,
        newton_iters=res.newton_iterations,
        picard_diff=res.picard_diff,
        max_div=res.max_div,
    )
    return State(res.u, res.p, np.inf, info)


def divfree_basis(grid, partition=None):
    """Columns span the admissible divergence-free fields, orthonormal in the face inner product.

    Dense; only for grids with at most ``DENSE_CAP`` cells.
    """
    if grid.n_cells > DENSE_CAP:
        raise ValueError(f"dense basis limited to {DENSE_CAP} cells, grid has {grid.n_cells}")
    ops = get_ops(grid)
    s = 1.0 / np.sqrt(ops.weights_free)
    N = sla.null_space(ops.div_free.toarray() * s[None, :])
    Q = np.zeros((grid.n_faces, N.shape[1]))
    Q[ops.free] = s[:, None] * N
    return Q


def steady_energy(v, params, f, grid, partition):
    """F(v) = nu/2 |grad v|^2 + a/2 |v|^2 + b/(alpha+2) |v|_{alpha+2}^{alpha+2} + J_eps(v) - (f, v)."""
    pr = params
    tau, w = trace_tangential(v, grid, partition)
    fa = friction.FrictionAssembly(g=np.asarray(partition.g_values, float), weights=w)
    return (
        0.5 * pr.nu * grad_norm_sq(v, grid)
        + 0.5 * pr.a * inner(v, v, grid)
        + pr.b * forchheimer.forchheimer_energy(v, grid, pr.alpha) / (pr.alpha + 2.0)
        + friction.eval_J_eps(tau, fa, pr.eps)
        - inner(f, v, grid)
    )


def _steady_gradient(v, params, f, grid, partition):
    # W-representation of dF: the face field G with dF(v)[h] = (G, h)
    pr = params
    ops = get_ops(grid)
    G = -pr.nu * _laplacian_unchecked(v, ops) + pr.a * v + pr.b * forchheimer.eval_N(v, grid, pr.alpha) - f
    tau, w = trace_tangential(v, grid, partition)
    fa = friction.FrictionAssembly(g=np.asarray(partition.g_values, float), weights=w)
    lam = friction.eval_K_eps(tau, fa, pr.eps)
    G = G + (ops.trace.T @ (w * lam * partition.tangent_sign)) / ops.weights
    return G


def _laplacian_unchecked(v, ops):
    out = np.zeros(ops.grid.n_faces)
    out[ops.free] = -(ops.stiffness_free @ ops.restrict(v)) / ops.weights_free
    return out


@dataclass
class OracleResult:
    u: np.ndarray
    energy: float
    grad_norm: float
    iterations: int
    converged: bool
    history: np.ndarray


def steady_oracle(params, forcing, grid, partition, oracle_tol=1e-10, maxiter=100000, basis=None):
    """Minimize F over coordinates in ``divfree_basis`` by gradient descent.

    Trial step lengths follow the Barzilai-Borwein rule and Armijo
    backtracking keeps every accepted step strictly decreasing F. Energy
    decrements are evaluated term by term as differences, so the descent test
    stays meaningful far below the rounding level of F itself. Stops when the
    coordinate gradient norm is at most ``oracle_tol``; since F is
    ``a``-strongly convex in these coordinates the L2 error is then at most
    ``oracle_tol / a``.
    """
    Q = divfree_basis(grid, partition) if basis is None else basis
    ops = get_ops(grid)
    pr = params
    f = eval_forcing(forcing, grid, 0.0)
    W = ops.weights
    Qf = Q[ops.free]
    H = pr.nu * (Qf.T @ (ops.stiffness_free @ Qf)) + pr.a * np.eye(Q.shape[1])
    H = 0.5 * (H + H.T)
    rhs = Q.T @ (W * f)
    tau_of = ops.trace @ Q * partition.tangent_sign[:, None]
    avg_of = ops.avg @ Q
    fa = friction.assemble_friction(partition)
    wg = fa.weights * fa.g
    n = grid.n_cells
    area = grid.cell_area
    p_exp = pr.alpha + 2.0

    def pieces(c):
        return avg_of @ c, tau_of @ c

    def energy(c):
        U, tau = pieces(c)
        m2 = U[:n] ** 2 + U[n:] ** 2
        return (0.5 * c @ (H @ c) - rhs @ c + pr.b * area * np.sum(m2 ** (p_exp / 2)) / p_exp
                + np.dot(wg, np.sqrt(tau * tau + pr.eps ** 2)))

    def decrement(c, s, old):
        # F(c + s) - F(c), built from the increments so it keeps full relative
        # accuracy when far smaller than F
        U0, t0 = old
        dU, dt = avg_of @ s, tau_of @ s
        dq = s @ (H @ c - rhs) + 0.5 * s @ (H @ s)
        m0 = U0[:n] ** 2 + U0[n:] ** 2
        dm = 2.0 * (U0[:n] * dU[:n] + U0[n:] * dU[n:]) + dU[:n] ** 2 + dU[n:] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(m0 > 0, m0 ** (p_exp / 2) * np.expm1((p_exp / 2) * np.log1p(dm / m0)),
                           np.abs(dm) ** (p_exp / 2))
        dn = pr.b * area * np.sum(rel) / p_exp
        r0 = np.sqrt(t0 * t0 + pr.eps ** 2)
        r1 = np.sqrt((t0 + dt) ** 2 + pr.eps ** 2)
        dj = np.dot(wg, dt * (2.0 * t0 + dt) / (r0 + r1))
        return dq + dn + dj

    def gradient(c):
        U, tau = pieces(c)
        s = np.tile(area * np.hypot(U[:n], U[n:]) ** pr.alpha, 2)
        lam = friction.eval_K_eps(tau, fa, pr.eps)
        return H @ c - rhs + pr.b * (avg_of.T @ (s * U)) + tau_of.T @ (fa.weights * lam)

    c = np.zeros(Q.shape[1])
    pc = pieces(c)
    fc = energy(c)
    g = gradient(c)
    history = [fc]
    step = 1.0 / np.linalg.eigvalsh(H)[-1]
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        gn = float(np.linalg.norm(g))
        if gn <= oracle_tol:
            converged = True
            break
        t = step
        while True:
            c_new = c - t * g
            s = c_new - c  # the step actually taken after rounding
            pn = pieces(c_new)
            drop = decrement(c, s, pc)
            if drop <= 1e-4 * (g @ s) and drop < 0:
                break
            t *= 0.5
            if t < 1e-20:
                return OracleResult(Q @ c, fc, gn, it, False, np.array(history))
        g_new = gradient(c_new)
        y = g_new - g
        sy = s @ y
        step = (s @ s) / sy if sy > 0 else 2.0 * t
        c, pc, g = c_new, pn, g_new
        fc = fc + drop
        history.append(fc)
    return OracleResult(Q @ c, energy(c), float(np.linalg.norm(g)), it, converged, np.array(history))
