import numpy as np
import pytest

from brinkfric import ForcingSpec, PhysicalParams, build_grid, make_partition, solve_steady, steady_oracle
from brinkfric.analysis import check_slip
from brinkfric.core import eval_forcing
from brinkfric.forchheimer import eval_N
from brinkfric.friction import assemble_friction, eval_J_eps
from brinkfric.operators import apply_divergence, get_ops, grad_norm_sq, inner, trace_tangential
from brinkfric.steady import SteadyConfig, divfree_basis, steady_energy
from brinkfric.transient import Problem

from conftest import random_admissible

PARAMS = PhysicalParams(nu=0.1, a=1.0, b=1.0, alpha=2.0, eps=1e-3)
SHEAR = ForcingSpec("shear", 1.0)


@pytest.fixture(scope="module")
def setup8():
    g = build_grid(8, 8)
    p = make_partition(g, 0.5)
    return g, p, solve_steady(PARAMS, SHEAR, g, p)


def test_zero_forcing(grid8):
    s = solve_steady(PARAMS, ForcingSpec("zero"), grid8, make_partition(grid8, 0.5))
    assert not np.any(s.u) and not np.any(s.p) and s.t == np.inf


def test_rejects_time_dependent(grid8):
    with pytest.raises(ValueError):
        solve_steady(PARAMS, ForcingSpec("decaying"), grid8, make_partition(grid8))


def test_config_validation():
    with pytest.raises(ValueError):
        SteadyConfig(picard_tol=0)
    with pytest.raises(ValueError):
        SteadyConfig(picard_max=0)


def test_converged_divfree(setup8):
    g, _, s = setup8
    assert s.info["converged"]
    assert np.abs(apply_divergence(s.u, g)).max() <= 1e-10
    assert abs(s.p.mean()) < 1e-12


def test_matches_oracle(setup8):
    g, p, s = setup8
    cfg = SteadyConfig()
    tol = cfg.picard_tol
    orc = steady_oracle(PARAMS, SHEAR, g, p, oracle_tol=tol * PARAMS.a)
    assert orc.converged
    d = np.sqrt(inner(s.u - orc.u, s.u - orc.u, g))
    assert d <= 10 * max(cfg.picard_tol, tol)


def test_picard_path_matches(setup8):
    g, p, s = setup8
    s2 = solve_steady(PARAMS, SHEAR, g, p, SteadyConfig(predictor="none", picard_max=2000))
    assert s2.info["converged"]
    # successive-iterate criterion: the error is at most tol / (1 - contraction)
    assert np.sqrt(inner(s.u - s2.u, s.u - s2.u, g)) < 1e-8


def test_uniqueness_probe(setup8, rng):
    g, p, s = setup8
    u0 = 3.0 * random_admissible(g, rng, divfree=True)
    s2 = solve_steady(PARAMS, SHEAR, g, p, u0=u0)
    assert np.sqrt(inner(s.u - s2.u, s.u - s2.u, g)) <= 10 * SteadyConfig().picard_tol


def test_variational_inequality(setup8, rng):
    g, p, s = setup8
    u = s.u
    f = eval_forcing(SHEAR, g)
    fa = assemble_friction(p)
    ops = get_ops(g)
    tau_u, _ = trace_tangential(u, g, p)
    N = eval_N(u, g, PARAMS.alpha)
    for _ in range(50):
        v = random_admissible(g, rng, divfree=True) * rng.choice([0.01, 0.1, 1.0])
        h = v - u
        hf = ops.restrict(h)
        grad_pair = ops.restrict(u) @ (ops.stiffness_free @ hf)
        tau_v, _ = trace_tangential(v, g, p)
        val = (PARAMS.nu * grad_pair + PARAMS.a * inner(u, h, g) + PARAMS.b * inner(N, h, g)
               + eval_J_eps(tau_v, fa, PARAMS.eps) - eval_J_eps(tau_u, fa, PARAMS.eps) - inner(f, h, g))
        tol_vi = 100 * SteadyConfig().picard_tol * (np.sqrt(inner(v, v, g)) + np.sqrt(inner(u, u, g)))
        assert val >= -tol_vi


def test_large_barrier_sticks():
    g = build_grid(16, 16)
    p = make_partition(g, 5.0)
    s = solve_steady(PARAMS, SHEAR, g, p)
    rep, report = check_slip(s, Problem(g, p, PARAMS, SHEAR), expect="stick")
    assert rep.ok, rep.table()
    tau, _ = trace_tangential(s.u, g, p)
    assert np.abs(tau).max() <= 100 * PARAMS.eps


def test_divfree_basis_properties():
    g = build_grid(6, 5)
    ops = get_ops(g)
    Q = divfree_basis(g)
    nfree = ops.free.size
    rank = np.linalg.matrix_rank(ops.div_free.toarray())
    assert Q.shape[1] == nfree - rank
    assert np.abs(ops.div @ Q).max() <= 1e-12
    G = Q.T @ (ops.weights[:, None] * Q)
    assert np.abs(G - np.eye(Q.shape[1])).max() <= 1e-12
    assert np.all(Q[~g.admissible] == 0)


def test_dense_cap():
    with pytest.raises(ValueError):
        divfree_basis(build_grid(17, 16))


def test_oracle_zero_forcing(grid8):
    p = make_partition(grid8, 0.5)
    orc = steady_oracle(PARAMS, ForcingSpec("zero"), grid8, p)
    assert not np.any(orc.u)
    assert orc.energy == pytest.approx(PARAMS.eps * assemble_friction(p).barrier_mass, rel=1e-14)


def test_oracle_monotone_and_energy(setup8):
    g, p, _ = setup8
    orc = steady_oracle(PARAMS, SHEAR, g, p, oracle_tol=1e-8)
    # accepted drops are strictly negative; near the minimum F + drop can round to F
    assert np.all(np.diff(orc.history) <= 0) and orc.history[-1] < orc.history[0]
    f = eval_forcing(SHEAR, g)
    assert orc.energy == pytest.approx(steady_energy(orc.u, PARAMS, f, g, p), rel=1e-10)
    # F at the minimizer is below F at nearby admissible fields
    rng = np.random.default_rng(5)
    for _ in range(10):
        v = orc.u + 1e-3 * random_admissible(g, rng, divfree=True)
        assert steady_energy(v, PARAMS, f, g, p) > orc.energy


def test_steady_energy_pieces(grid8, rng):
    p = make_partition(grid8, 0.5)
    v = random_admissible(grid8, rng, divfree=True)
    f = eval_forcing(SHEAR, grid8)
    tau, _ = trace_tangential(v, grid8, p)
    expect = (0.05 * grad_norm_sq(v, grid8) + 0.5 * inner(v, v, grid8)
              + 0.25 * get_ops(grid8).lp_norm(v, 4) ** 4
              + eval_J_eps(tau, assemble_friction(p), 1e-3) - inner(f, v, grid8))
    assert steady_energy(v, PARAMS, f, grid8, p) == pytest.approx(expect, rel=1e-12)
