"""
Exponential approach to the stationary state.

Solves the steady friction problem once, checks it against the independent
minimization oracle on a coarse grid, then follows a transient run and fits
the decay rate of |u(t) - u_s|^2. The Darcy term alone guarantees a rate of
at least 2a; the measured rate is usually larger because viscosity,
Forchheimer drag and wall friction all help.
"""
import os
import sys

import numpy as np

from brinkfric import (ForcingSpec, InitSpec, PhysicalParams, Problem, StepConfig, build_grid,
                       compute_lambda_min, make_initial, make_partition, run_transient, solve_steady,
                       steady_oracle)
from brinkfric.analysis import check_decay
from brinkfric.cli import emit_svg
from brinkfric.operators import inner

params = PhysicalParams(nu=0.1, a=1.0, b=1.0, alpha=2.0, eps=1e-3)
forcing = ForcingSpec("shear", 1.0)

out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

# coarse cross-check: Picard/Newton fixed point vs gradient descent on the energy
g8 = build_grid(8, 8)
p8 = make_partition(g8, 0.5)
fixed = solve_steady(params, forcing, g8, p8)
oracle = steady_oracle(params, forcing, g8, p8, oracle_tol=1e-10)
diff = np.sqrt(inner(fixed.u - oracle.u, fixed.u - oracle.u, g8))
print(f"8x8: fixed point vs oracle L2 difference {diff:.2e} ({oracle.iterations} descent steps)")

grid = build_grid(16, 16)
part = make_partition(grid, 0.5)
prob = Problem(grid, part, params, forcing)
steady = solve_steady(params, forcing, grid, part)
lam = compute_lambda_min(grid).value

traj = run_transient(make_initial(InitSpec("shear-profile", 4.0), grid), prob, StepConfig(dt=3e-3, t_end=3.0))
rep, fit = check_decay(traj, steady, lam=lam)
print(f"fitted rate {fit.rate:.4f} over steps {fit.window}, residual {fit.residual:.2e}")
print(f"guaranteed 2a = {2 * params.a:.3f}; 2(a+nu) = {2 * (params.a + params.nu):.3f}; "
      f"2(a+nu*lambda_min) = {2 * (params.a + params.nu * lam):.3f}")
print("decay check:", rep.rows[0].status)

dist = [inner(s.u - steady.u, s.u - steady.u, grid) for s in traj.states]
t = traj.times
emit_svg([("|u - u_s|^2", t, dist),
          ("guaranteed e^{-2at}", t, dist[0] * np.exp(-2 * params.a * t))],
         os.path.join(out_dir, "decay.svg"), log_y=True, title="decay to the steady state")
