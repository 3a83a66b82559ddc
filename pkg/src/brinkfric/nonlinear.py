"""The implicit nonlinear problem shared by the time step and the steady solver.

Both solve: find divergence-free admissible u minimizing

    E(u) = sigma/2 ||u||^2 - (r, u) + nu/2 ||grad u||^2 + b Phi(u) + J_eps(u)

where sigma = 1/dt + a and r = u_old/dt + f for a time step, and
sigma = a, r = f for the stationary problem. The Euler-Lagrange equation is
the lagged saddle system at its fixed point.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import forchheimer, friction
from .operators import get_ops

__all__ = ["ImplicitSystem", "NonlinearResult", "solve_implicit", "fixed_point_bound"]


@dataclass(eq=False)
class ImplicitSystem:
    grid: object
    partition: object
    params: object
    sigma: float
    rhs: np.ndarray  # face field r, so the linear source term is (r, u)

    @cached_property
    def ops(self):
        return get_ops(self.grid)

    @cached_property
    def fa(self):
        return friction.assemble_friction(self.partition)

    @cached_property
    def rhs_form(self):
        return self.ops.weights_free * self.ops.restrict(self.rhs)

    @cached_property
    def _avg_free(self):
        return self.ops.avg[:, self.ops.free].tocsr()

    @cached_property
    def _trace_free(self):
        return self.ops.trace[:, self.ops.free].tocsr()

    @cached_property
    def base(self):
        ops = self.ops
        return (self.sigma * sp.diags(ops.weights_free) + self.params.nu * ops.stiffness_free).tocsr()

    @property
    def has_friction(self):
        return not self.partition.frictionless

    def _tau(self, uf):
        return (self._trace_free @ uf) * self.partition.tangent_sign

    def energy(self, uf):
        ops, pr = self.ops, self.params
        u = ops.extend(uf)
        e = 0.5 * uf @ (self.base @ uf) - self.rhs_form @ uf
        e += pr.b * forchheimer.forchheimer_potential(u, self.grid, pr.alpha)
        if self.has_friction:
            e += friction.eval_J_eps(self._tau(uf), self.fa, pr.eps)
        return float(e)

    def gradient(self, uf):
        ops, pr = self.ops, self.params
        g = self.base @ uf - self.rhs_form
        c = self._avg_free @ uf
        n = self.grid.n_cells
        mag = np.hypot(c[:n], c[n:])
        s = np.tile(self.grid.cell_area * mag ** pr.alpha, 2)
        g += pr.b * (self._avg_free.T @ (s * c))
        if self.has_friction:
            lam = friction.eval_K_eps(self._tau(uf), self.fa, pr.eps)
            g += self._trace_free.T @ (self.fa.weights * lam * self.partition.tangent_sign)
        return g

    def lagged(self, uf):
        """Velocity block with coefficients frozen at ``uf``."""
        pr = self.params
        c = self._avg_free @ uf
        n = self.grid.n_cells
        mag = np.hypot(c[:n], c[n:])
        s = np.tile(self.grid.cell_area * mag ** pr.alpha, 2)
        K = self.base + pr.b * (self._avg_free.T @ sp.diags(s) @ self._avg_free)
        if self.has_friction:
            tau = self._tau(uf)
            coeff = self.fa.weights * self.fa.g / np.sqrt(tau * tau + pr.eps ** 2)
            K = K + self._trace_free.T @ sp.diags(coeff) @ self._trace_free
        return K.tocsc()

    def hessian(self, uf):
        pr = self.params
        c = self._avg_free @ uf
        n = self.grid.n_cells
        ux, uy = c[:n], c[n:]
        mag = np.hypot(ux, uy)
        area = self.grid.cell_area
        base = area * mag ** pr.alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = np.where(mag > 0, area * pr.alpha * mag ** (pr.alpha - 2.0), 0.0)
        hxx = base + extra * ux * ux
        hyy = base + extra * uy * uy
        hxy = extra * ux * uy
        idx = np.arange(n)
        rows = np.concatenate([idx, n + idx, idx, n + idx])
        cols = np.concatenate([idx, n + idx, n + idx, idx])
        Hc = sp.csr_matrix((np.concatenate([hxx, hyy, hxy, hxy]), (rows, cols)), shape=(2 * n, 2 * n))
        H = self.base + pr.b * (self._avg_free.T @ Hc @ self._avg_free)
        if self.has_friction:
            tau = self._tau(uf)
            e2 = pr.eps ** 2
            coeff = self.fa.weights * self.fa.g * e2 / (tau * tau + e2) ** 1.5
            H = H + self._trace_free.T @ sp.diags(coeff) @ self._trace_free
        return H.tocsc()


@dataclass
class NonlinearResult:
    u: np.ndarray
    p: np.ndarray
    iterations: int
    newton_iterations: int
    uzawa_iterations: int
    picard_diff: float
    max_div: float
    picard_converged: bool
    uzawa_converged: bool


def fixed_point_bound(system, uf):
    """Pressure fit and a certified bound on one lagged update from ``uf``.

    With the coefficients frozen at ``uf`` the lagged saddle solve returns
    ``u_lag``; since the frozen block dominates ``sigma W``,

        ||u_lag - uf||_W <= ||g(uf) - B^T p||_{W^-1} / sigma

    for any p, where g is the gradient of E. The p minimizing the right-hand
    side is returned as the pressure.
    """
    ops = system.ops
    Winv = 1.0 / ops.weights_free
    g = system.gradient(uf)
    B = ops.constraint
    p = ops.solve_pressure_poisson(B @ (Winv * g))
    r = g - B.T @ p
    return p, float(np.sqrt(r @ (Winv * r))) / system.sigma


def solve_implicit(system, u0, picard_tol, picard_max, uzawa_tol, uzawa_max,
                   predictor="newton", newton_max=50, cache=None):
    """Fixed point of the lagged saddle system, started from the face field ``u0``.

    With ``predictor="newton"`` damped Newton steps on E drive the iterate to
    the fixed point; the iteration stops once the certified bound of
    ``fixed_point_bound`` on the next lagged update is at most ``picard_tol``.
    Otherwise (or without a predictor) lagged solves run until successive
    iterates differ by at most ``picard_tol`` in L2, and the pressure is the
    multiplier of the last lagged solve.

    Newton steps reuse a factored Hessian while the residual bound contracts
    by at least a factor 20 per step; ``cache`` (a dict) carries that factor
    across calls with the same ``sigma``. A direction that fails the line
    search is recomputed with a tight saddle tolerance, then with a fresh
    Hessian, before falling back to lagged solves. The reported iteration
    count is the number of Newton steps when they succeed.
    """
    from .transient import VelocityBlock, solve_saddle

    grid = system.grid
    ops = system.ops
    W = ops.weights_free
    visc = system.params.nu
    uf = ops.restrict(u0)
    n_newton = n_uzawa = 0
    uzawa_ok = True

    def wnorm(x):
        return float(np.sqrt(x @ (W * x)))

    def result(uf, p, k, diff, converged):
        u = ops.extend(uf)
        max_div = float(np.abs(ops.div @ u).max())
        return NonlinearResult(u, p, k, n_newton, n_uzawa, float(diff), max_div,
                               converged, bool(uzawa_ok))

    if predictor == "newton":
        if cache is None:
            cache = {}
        if cache.get("sigma") != system.sigma:
            cache.clear()
        e_cur = system.energy(uf)
        _, bound = fixed_point_bound(system, uf)
        fresh = tight = False
        for _ in range(newton_max):
            block = cache.get("block")
            if block is None:
                block = VelocityBlock(system.hessian(uf), mass=system.sigma, visc=visc)
                cache.update(block=block, sigma=system.sigma)
                fresh = True
            g = system.gradient(uf)
            # the direction is projected below, so the saddle solve only needs
            # to be as divergence-free as the current residual warrants
            dir_tol = uzawa_tol if tight else max(uzawa_tol, 1e-2 * bound / min(grid.dx, grid.dy))
            res = solve_saddle(block, -g, grid, dir_tol, uzawa_max)
            n_newton += 1
            n_uzawa += res.iterations
            uzawa_ok &= res.converged
            d = ops.restrict(ops.project_divfree(res.u))
            slope = g @ d
            s = 1.0
            accepted = slope < 0
            while accepted:
                trial = uf + s * d
                e_new = system.energy(trial)
                p_new, b_new = fixed_point_bound(system, trial)
                # near the minimizer energy decrements drop below rounding; fall
                # back on the residual bound there
                if e_new <= e_cur + 1e-4 * s * slope or (s == 1.0 and b_new <= 0.5 * bound):
                    break
                s *= 0.5
                accepted = s >= 1e-8
            if not accepted:
                if not tight:
                    # the loose direction was not a descent direction
                    tight = True
                elif not fresh:
                    # stale Hessian: refactor at the current iterate
                    cache.pop("block", None)
                else:
                    break
                continue
            fresh = tight = False
            if b_new > 0.05 * bound:
                cache.pop("block", None)
            uf, e_cur, p, bound = trial, e_new, p_new, b_new
            if bound <= picard_tol:
                return result(uf, p, n_newton, bound, True)
    elif predictor not in (None, "none"):
        raise ValueError(f"unknown predictor {predictor!r}")

    converged = False
    diff = np.inf
    k = 0
    p = np.zeros(grid.n_cells)
    for k in range(1, picard_max + 1):
        block = VelocityBlock(system.lagged(uf), mass=system.sigma, visc=visc)
        res = solve_saddle(block, system.rhs_form, grid, uzawa_tol, uzawa_max)
        n_uzawa += res.iterations
        uzawa_ok &= res.converged
        new = ops.restrict(res.u)
        diff = wnorm(new - uf)
        uf, p = new, res.p
        if diff <= picard_tol:
            converged = True
            break
    return result(uf, p, k, diff, converged)
