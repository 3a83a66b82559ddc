"""Backward Euler time stepping of the regularized problem.

Each step solves the saddle system

    (W/dt + nu A + a W + b D_N(u*) + B_K(u*)) u + W grad p = W u_old/dt + W f,
    div u = 0,

with the Forchheimer and friction coefficients lagged at ``u*`` and
refreshed by Picard iteration. The linear saddle problems are solved by
conjugate gradients on the pressure Schur complement (Uzawa-CG).
"""
from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import forchheimer, friction
from .core import State, eval_forcing
from .operators import get_ops

__all__ = [
    "StepConfig",
    "VelocityBlock",
    "SaddleResult",
    "solve_saddle",
    "LedgerEntry",
    "Trajectory",
    "Problem",
    "step",
    "run_transient",
    "energy_terms",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1e-3
    t_end: float = 0.1
    picard_tol: float = 1e-10
    picard_max: int = 200
    uzawa_tol: float = 1e-10
    uzawa_max: int = 500
    lag_mode: bool = True
    predictor: str = "newton"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not (self.picard_tol > 0 and self.uzawa_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.picard_max < 1 or self.uzawa_max < 1:
            raise ValueError("iteration caps must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


# --- saddle point solver -------------------------------------------------

@dataclass
class VelocityBlock:
    """SPD velocity block on admissible faces, with hints for the preconditioner.

    ``mass`` and ``visc`` are the coefficients of W and A in the constant
    part of the block; they set the Cahouet-Chabard Schur preconditioner.
    """

    matrix: sp.spmatrix
    mass: float
    visc: float
    _lu: object = field(default=None, repr=False)

    def factor(self):
        if self._lu is None:
            self._lu = spla.splu(sp.csc_matrix(self.matrix), permc_spec="MMD_AT_PLUS_A")
        return self._lu


@dataclass
class SaddleResult:
    u: np.ndarray
    p: np.ndarray
    iterations: int
    max_div: float
    converged: bool


def solve_saddle(block, rhs, grid, tol=1e-10, maxiter=500, u_guess=None):
    """Solve ``K u + W grad p = rhs, div u = 0`` by CG on the pressure Schur complement.

    ``rhs`` is a form on admissible faces (already multiplied by the face
    weights). Returns the full face velocity and a mean-zero pressure.
    Iteration stops once ``max |div u| <= tol``.
    """
    ops = get_ops(grid)
    B = ops.constraint
    area = grid.cell_area
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (ops.free.size,):
        raise ValueError("rhs must live on admissible faces")
    p = np.zeros(grid.n_cells)
    if not np.any(rhs):
        return SaddleResult(np.zeros(grid.n_faces), p, 0, 0.0, True)

    lu = block.factor()
    u = lu.solve(rhs)
    # W grad p = -B^T p, so K u - B^T p = rhs and u = K^-1 (rhs + B^T p)
    r = -(B @ u)
    max_div = np.abs(r).max() / area

    def precond(res):
        z = block.mass * ops.solve_pressure_poisson(res) + block.visc * res / area
        return z - z.mean()

    it = 0
    if max_div > tol:
        z = precond(r)
        d = z.copy()
        rz = r @ z
        for it in range(1, maxiter + 1):
            kd = lu.solve(B.T @ d)
            sd = B @ kd
            step_len = rz / (d @ sd)
            p += step_len * d
            u += step_len * kd
            r -= step_len * sd
            max_div = np.abs(B @ u).max() / area
            if max_div <= tol:
                break
            z = precond(r)
            rz_new = r @ z
            d = z + (rz_new / rz) * d
            rz = rz_new
    p -= p.mean()
    return SaddleResult(ops.extend(u), p, it, float(max_div), bool(max_div <= tol))


# --- problem description and ledger --------------------------------------

@dataclass(frozen=True, eq=False)
class Problem:
    grid: object
    partition: object
    params: object
    forcing: object

    @property
    def fa(self):
        return friction.assemble_friction(self.partition)


def energy_terms(u, prob):
    """Nonnegative dissipation terms at ``u``: grad, darcy, forch, friction."""
    ops = get_ops(prob.grid)
    pr = prob.params
    tau, _ = _trace(u, prob)
    fa = prob.fa
    lam = friction.eval_K_eps(tau, fa, pr.eps)
    return dict(
        kinetic=ops.inner(u, u),
        grad=2.0 * pr.nu * ops.grad_norm_sq(u),
        darcy=pr.a * ops.inner(u, u),
        forch=2.0 * pr.b * forchheimer.forchheimer_energy(u, prob.grid, pr.alpha),
        friction=2.0 * friction.pairing(lam, tau, fa),
    )


def _trace(u, prob):
    from .operators import trace_tangential

    return trace_tangential(u, prob.grid, prob.partition)


@dataclass
class LedgerEntry:
    t: float
    kinetic: float
    grad: float
    darcy: float
    forch: float
    friction: float
    source: float
    ddt_kinetic: float
    slack: float
    allowance: float

    @property
    def scale(self):
        return max(
            1.0,
            abs(self.ddt_kinetic) + self.grad + self.darcy + self.forch + self.friction + self.source,
        )


@dataclass
class Trajectory:
    problem: Problem
    config: StepConfig
    states: list = field(default_factory=list)
    ledger: list = field(default_factory=list)
    forcing_sq: list = field(default_factory=list)
    picard_iters: list = field(default_factory=list)
    uzawa_iters: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    @property
    def ok(self):
        return not any(self.flags)

    def pressure_time_sum(self):
        area = self.problem.grid.cell_area
        return self.config.dt * sum(area * float(s.p @ s.p) for s in self.states[1:])

    def pressure_primitive(self):
        """Time-integrated pressure dt * sum p^k (diagnostic only)."""
        out = np.zeros(self.problem.grid.n_cells)
        prim = [out.copy()]
        for s in self.states[1:]:
            out = out + self.config.dt * s.p
            prim.append(out.copy())
        return prim


def _ledger_entry(u_new, u_old, f_sq, t, prob, cfg, picard_diff):
    pr = prob.params
    terms = energy_terms(u_new, prob)
    ops = get_ops(prob.grid)
    ddt = (terms["kinetic"] - ops.inner(u_old, u_old)) / cfg.dt
    source = f_sq / pr.a
    lhs = ddt + terms["grad"] + terms["darcy"] + terms["forch"] + terms["friction"]
    norm_u = np.sqrt(terms["kinetic"])
    return LedgerEntry(
        t=t,
        source=source,
        ddt_kinetic=ddt,
        slack=source - lhs,
        allowance=10.0 * max(picard_diff, 0.0) * norm_u,
        **terms,
    )


# --- time stepping -------------------------------------------------------

def implicit_system(u_old, f, prob, cfg):
    from .nonlinear import ImplicitSystem

    return ImplicitSystem(
        grid=prob.grid,
        partition=prob.partition,
        params=prob.params,
        sigma=1.0 / cfg.dt + prob.params.a,
        rhs=u_old / cfg.dt + f,
    )


def step(state, prob, cfg, forcing=None, cache=None):
    """Advance one backward Euler step; solver diagnostics land in ``State.info``.

    ``forcing`` is the face field f(t + dt); it is evaluated from the problem's
    forcing spec when omitted.
    """
    from .nonlinear import solve_implicit

    grid = prob.grid
    t_new = state.t + cfg.dt
    f = eval_forcing(prob.forcing, grid, t_new) if forcing is None else grid.check_faces(forcing)
    u_old = grid.check_faces(state.u)
    system = implicit_system(u_old, f, prob, cfg)
    if not np.any(u_old) and not np.any(system.rhs_form):
        info = dict(picard_iters=0, newton_iters=0, uzawa_iters=0, picard_diff=0.0,
                    max_div=0.0, picard_converged=True, uzawa_converged=True)
        return State(np.zeros(grid.n_faces), np.zeros(grid.n_cells), t_new, info)

    res = solve_implicit(
        system, u_old, cfg.picard_tol, cfg.picard_max if cfg.lag_mode else 1,
        cfg.uzawa_tol, cfg.uzawa_max, predictor=cfg.predictor, cache=cache,
    )
    info = dict(
        picard_iters=res.iterations,
        newton_iters=res.newton_iterations,
        uzawa_iters=res.uzawa_iterations,
        picard_diff=res.picard_diff,
        max_div=res.max_div,
        picard_converged=res.picard_converged or not cfg.lag_mode,
        uzawa_converged=res.uzawa_converged,
    )
    return State(res.u, res.p, t_new, info)


def run_transient(init, prob, cfg):
    """March from ``init`` (a State) to ``cfg.t_end`` with fixed steps."""
    grid = prob.grid
    ops = get_ops(grid)
    n = cfg.n_steps
    if n < 1:
        raise ValueError("t_end must be >= dt")
    traj = Trajectory(problem=prob, config=cfg)
    state = State(np.array(init.u, dtype=float), np.array(init.p, dtype=float), float(init.t))
    traj.states.append(state)
    f0 = eval_forcing(prob.forcing, grid, state.t)
    traj.forcing_sq.append(ops.inner(f0, f0))
    cache = {}
    for k in range(1, n + 1):
        f = eval_forcing(prob.forcing, grid, state.t + cfg.dt)
        try:
            new = step(state, prob, cfg, f, cache)
        except Exception as exc:
            raise RuntimeError(f"step {k} failed: {exc}") from exc
        info = new.info
        f_sq = ops.inner(f, f)
        traj.forcing_sq.append(f_sq)
        traj.ledger.append(_ledger_entry(new.u, state.u, f_sq, new.t, prob, cfg, info["picard_diff"]))
        traj.picard_iters.append(info["picard_iters"])
        traj.uzawa_iters.append(info["uzawa_iters"])
        flagged = not (info["picard_converged"] and info["uzawa_converged"])
        traj.flags.append(flagged)
        if flagged:
            log.debug("step %d: picard_converged=%s uzawa_converged=%s",
                      k, info["picard_converged"], info["uzawa_converged"])
        traj.states.append(new)
        state = new
    if not traj.ok:
        first = traj.flags.index(True) + 1
        log.warning("%d of %d steps flagged (first at step %d)", sum(traj.flags), n, first)
    return traj
