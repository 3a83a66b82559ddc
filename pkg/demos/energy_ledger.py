"""
Energy bookkeeping for a sheared porous channel with friction slip walls.

Marches the regularized Brinkman-Forchheimer system with backward Euler and
prints, every few steps, how the power balance

    d/dt |u|^2 + 2 nu |grad u|^2 + a |u|^2 + 2b |u|^4_4 + 2 <K_eps u, u> <= |f|^2 / a

splits between its terms. Writes ledger.csv and energy.svg next to the script.
"""
import os
import sys

import numpy as np

from brinkfric import (ForcingSpec, InitSpec, PhysicalParams, Problem, StepConfig, build_grid,
                       make_initial, make_partition, run_transient)
from brinkfric.analysis import check_energy_ledger, check_uprime_bound
from brinkfric.cli import LEDGER_COLUMNS, emit_svg, ledger_table, write_csv

N = 16             # cells per direction
DT = 1e-3          # time step
T_END = 0.2        # final time
G = 0.5            # friction barrier on the top and bottom walls

out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

grid = build_grid(N, N)
params = PhysicalParams(nu=0.1, a=1.0, b=1.0, alpha=2.0, eps=1e-3)
prob = Problem(grid, make_partition(grid, G), params, ForcingSpec("shear", 1.0))
u0 = make_initial(InitSpec("shear-profile", 4.0), grid)

traj = run_transient(u0, prob, StepConfig(dt=DT, t_end=T_END))

print(f"{'t':>6} {'d/dt|u|^2':>11} {'viscous':>10} {'darcy':>10} {'forch':>10} {'friction':>10} {'source':>10}")
for e in traj.ledger[::20]:
    print(f"{e.t:6.3f} {e.ddt_kinetic:11.4e} {e.grad:10.4e} {e.darcy:10.4e} {e.forch:10.4e} "
          f"{e.friction:10.4e} {e.source:10.4e}")

rep = check_energy_ledger(traj)
rep.extend(check_uprime_bound(traj))
for row in rep.rows:
    print(f"{row.name:20s} {row.status:18s} slack {row.slack:+.3e}")

write_csv(LEDGER_COLUMNS, ledger_table(traj), os.path.join(out_dir, "ledger.csv"))
t = np.array([e.t for e in traj.ledger])
emit_svg([("viscous", t, [e.grad for e in traj.ledger]),
          ("forchheimer", t, [e.forch for e in traj.ledger]),
          ("friction", t, [e.friction for e in traj.ledger]),
          ("source |f|^2/a", t, [e.source for e in traj.ledger])],
         os.path.join(out_dir, "energy.svg"), log_y=True, title="dissipation terms")
