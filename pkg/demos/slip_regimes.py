"""
Stick and slip on the friction walls.

Sweeps the barrier g for a fixed shear forcing and reports, per value, how
many wall faces stick (traction below the barrier, almost no tangential
velocity) and how many slip (traction at the barrier, pointing along the
wall velocity). Small g lets most of each wall slide; large g pins the
whole wall.
"""
import numpy as np

from brinkfric import ForcingSpec, PhysicalParams, Problem, build_grid, make_partition, solve_steady
from brinkfric.analysis import check_slip
from brinkfric.friction import eval_K_eps
from brinkfric.operators import trace_tangential

params = PhysicalParams(nu=0.1, a=1.0, b=1.0, alpha=2.0, eps=1e-3)
forcing = ForcingSpec("shear", 1.0)
grid = build_grid(16, 16)

print(f"{'g':>8} {'stick':>6} {'slip':>6} {'max |u_tau|':>12} {'max |lam|/g':>12}")
for g in (0.001, 0.005, 0.02, 0.1, 0.5, 5.0):
    part = make_partition(grid, g)
    prob = Problem(grid, part, params, forcing)
    sol = solve_steady(params, forcing, grid, part)
    _, report = check_slip(sol, prob)
    tau, _ = trace_tangential(sol.u, grid, part)
    lam = eval_K_eps(tau, prob.fa, params.eps)
    print(f"{g:8.3f} {report.n_stick:6d} {report.n_slip:6d} {np.abs(tau).max():12.3e} "
          f"{np.max(np.abs(lam)) / g:12.6f}")
