"""Friction functional on the slip wall S and its smooth regularization.

Every function here works on arrays of per-S-face tangential velocities
(see ``operators.trace_tangential``). ``FrictionAssembly`` carries the
barrier and quadrature weights so callers do not pass them around.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .operators import get_ops

__all__ = [
    "FrictionAssembly",
    "assemble_friction",
    "eval_J",
    "eval_J_eps",
    "eval_K_eps",
    "pairing",
    "monotonicity_check_K",
    "lagged_matrix",
    "SlipReport",
    "slip_residual",
    "TOL_ACTIVE",
    "TOL_DIR",
]

TOL_ACTIVE = 1e-3
TOL_DIR = 1e-6


@dataclass(frozen=True, eq=False)
class FrictionAssembly:
    g: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.g.shape != self.weights.shape:
            raise ValueError("g and weights must match")
        if np.any(self.weights <= 0):
            raise ValueError("S-face weights must be positive")
        if np.any(self.g < 0):
            raise ValueError("barrier g must be >= 0")

    @property
    def n(self):
        return self.g.size

    @property
    def measure(self):
        return float(self.weights.sum())

    @property
    def barrier_mass(self):
        """sum(weight * g): the largest possible gap J_eps - J per unit eps."""
        return float(np.dot(self.weights, self.g))

    def _check(self, u_tau):
        u_tau = np.asarray(u_tau, dtype=float)
        if u_tau.shape != self.g.shape:
            raise ValueError(f"expected {self.g.size} S-face values, got shape {u_tau.shape}")
        return u_tau


def assemble_friction(partition):
    return FrictionAssembly(
        g=np.asarray(partition.g_values, dtype=float),
        weights=np.asarray(partition.s_weights, dtype=float),
    )


def _check_eps(eps):
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps!r}")


def eval_J(u_tau, fa):
    """J(v) = sum over S of weight * g * |v_tau|."""
    u_tau = fa._check(u_tau)
    return float(np.dot(fa.weights * fa.g, np.abs(u_tau)))


def eval_J_eps(u_tau, fa, eps):
    _check_eps(eps)
    u_tau = fa._check(u_tau)
    return float(np.dot(fa.weights * fa.g, np.sqrt(u_tau * u_tau + eps * eps)))


def eval_K_eps(u_tau, fa, eps):
    """Regularized traction multiplier ``g u / sqrt(u^2 + eps^2)`` per S face.

    The boundary pairing with a test trace is ``pairing(lam, v_tau, fa)``.
    """
    _check_eps(eps)
    u_tau = fa._check(u_tau)
    # the clip only removes last-ulp overshoot, so |lam| <= g holds exactly
    ratio = np.clip(u_tau / np.sqrt(u_tau * u_tau + eps * eps), -1.0, 1.0)
    return fa.g * ratio


def pairing(lam, v_tau, fa):
    return float(np.dot(fa.weights * fa._check(lam), fa._check(v_tau)))


def monotonicity_check_K(u_tau, v_tau, fa, eps):
    """<K_eps(u) - K_eps(v), u - v>; nonnegative up to rounding."""
    du = fa._check(u_tau) - fa._check(v_tau)
    dk = eval_K_eps(u_tau, fa, eps) - eval_K_eps(v_tau, fa, eps)
    return pairing(dk, du, fa)


def lagged_matrix(u_star, grid, partition, eps):
    """Face-space form ``T^T diag(w g / sqrt(u*_tau^2 + eps^2)) T``.

    At ``u = u_star`` its action reproduces the K_eps pairing exactly.
    """
    _check_eps(eps)
    T = get_ops(grid).trace
    tau = (T @ u_star) * partition.tangent_sign
    coeff = partition.s_weights * partition.g_values / np.sqrt(tau * tau + eps * eps)
    return (T.T @ sp.diags(coeff) @ T).tocsr()


@dataclass
class SlipReport:
    stick: np.ndarray
    slip: np.ndarray
    bound_violation: float
    stick_violation: float
    sign_violation: float
    direction_residual: float
    magnitude_gap: float
    tol_stick: np.ndarray

    @property
    def ok(self):
        return (
            self.bound_violation <= 0.0
            and self.stick_violation <= 0.0
            and self.sign_violation <= 0.0
            and self.direction_residual <= TOL_DIR
        )

    @property
    def n_stick(self):
        return int(self.stick.sum())

    @property
    def n_slip(self):
        return int(self.slip.sum())


def slip_residual(u_tau, lam, g, weights=None, eps=0.0, tol_active=TOL_ACTIVE):
    """Classify S faces by the threshold law and report the worst violations.

    A face sticks when ``|lam| < g (1 - tol_active)``; its tangential velocity
    must then lie below ``tol_stick = 10 eps sqrt(face measure)``. Otherwise it
    slips: ``lam`` must point along ``u_tau`` and ``g - |lam|`` is reported as
    the magnitude gap (which tends to zero with eps). ``|lam| <= g`` must hold
    on every face.

    ``direction_residual`` is the largest ``|lam/|lam| - u_tau/|u_tau||`` over
    slipping faces with nonzero velocity.
    """
    u_tau = np.asarray(u_tau, dtype=float)
    lam = np.asarray(lam, dtype=float)
    g = np.broadcast_to(np.asarray(g, dtype=float), u_tau.shape)
    if lam.shape != u_tau.shape:
        raise ValueError("traction and velocity arrays differ in size")
    if weights is None:
        weights = np.ones_like(u_tau)
    tol_stick = 10.0 * eps * np.sqrt(np.asarray(weights, dtype=float))

    alam = np.abs(lam)
    bound = alam - g * (1.0 + 1e-12)
    bound_violation = float(np.max(bound, initial=-np.inf))
    slip = alam >= g * (1.0 - tol_active)
    stick = ~slip

    stick_violation = float(np.max((np.abs(u_tau) - tol_stick)[stick], initial=-np.inf))
    sign_violation = float(np.max((-lam * u_tau)[slip], initial=-np.inf))
    moving = slip & (np.abs(u_tau) > 0) & (alam > 0)
    if np.any(moving):
        dres = np.abs(np.sign(lam[moving]) - np.sign(u_tau[moving]))
        direction_residual = float(dres.max())
        magnitude_gap = float(np.max(g[moving] - alam[moving]))
    else:
        direction_residual = 0.0
        magnitude_gap = 0.0
    return SlipReport(
        stick=stick,
        slip=slip,
        bound_violation=max(bound_violation, 0.0),
        stick_violation=max(stick_violation, 0.0),
        sign_violation=max(sign_violation, 0.0),
        direction_residual=direction_residual,
        magnitude_gap=magnitude_gap,
        tol_stick=tol_stick,
    )
