"""Brinkman-Forchheimer flow with Tresca-type slip on a staggered grid."""
from .core import (
    PhysicalParams, Grid2D, BoundaryPartition, State, InitSpec, ForcingSpec,
    build_grid, make_partition, make_initial, eval_forcing,
)
from .operators import compute_lambda_min, get_ops, inner, norm_lp, grad_norm_sq
from .transient import StepConfig, Problem, Trajectory, step, run_transient
from .steady import SteadyConfig, solve_steady, steady_oracle
from .analysis import CertReport, check_energy_ledger, structural_stability
from .config import ConfigError, parse_config, load_config

__version__ = "0.1.0"
