import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from brinkfric import build_grid, make_partition
from brinkfric.analysis import check_operator_algebra
from brinkfric.core import InitSpec, make_initial
from brinkfric.operators import (
    apply_divergence, apply_gradient, apply_laplacian, compute_lambda_min, get_ops, grad_norm_sq,
    inner, norm_lp, trace_tangential,
)

from conftest import random_admissible

# smallest Stokes eigenvalue on the unit square, from a dense generalized
# eigenproblem on an explicit null-space basis (scipy.linalg.eigh)
LAMBDA_DENSE = {8: 35.86532819972146, 16: 37.301895342470985}


def dense_divergence(grid):
    # MAC divergence written out cell by cell
    D = np.zeros((grid.n_cells, grid.n_faces))
    for i in range(grid.nx):
        for j in range(grid.ny):
            c = grid.cell_index(i, j)
            D[c, grid.u_index(i + 1, j)] += 1 / grid.dx
            D[c, grid.u_index(i, j)] -= 1 / grid.dx
            D[c, grid.v_index(i, j + 1)] += 1 / grid.dy
            D[c, grid.v_index(i, j)] -= 1 / grid.dy
    return D


def test_divergence_of_uniform_field(grid8):
    w = np.full(grid8.n_faces, 2.0)
    assert np.abs(apply_divergence(w, grid8)).max() < 1e-12


def test_divergence_of_linear_field():
    g = build_grid(5, 4, 2.0, 1.0)
    xu, _ = g.u_coords
    w = g.join(xu, np.zeros(g.v_shape))
    assert np.allclose(apply_divergence(w, g), 1.0, atol=1e-13)


def test_divergence_matches_dense(rng):
    g = build_grid(4, 4)
    w = rng.standard_normal(g.n_faces)
    assert np.allclose(apply_divergence(w, g), dense_divergence(g) @ w, atol=1e-12)


def test_gradient_of_constant(grid8):
    assert np.abs(apply_gradient(np.full(grid8.n_cells, 3.0), grid8)).max() < 1e-12


def test_gradient_of_linear():
    g = build_grid(6, 5)
    xc, _ = g.cell_coords
    out, v = g.split(apply_gradient(xc.ravel(), g))
    assert np.allclose(out[1:-1, :], 1.0, atol=1e-12)
    assert np.all(out[[0, -1], :] == 0) and np.all(v[:, [0, -1]] == 0)


def test_adjointness_random(rng):
    g = build_grid(9, 7, 1.3, 0.7)
    for _ in range(100):
        v = random_admissible(g, rng)
        q = rng.standard_normal(g.n_cells)
        lhs = g.cell_area * apply_divergence(v, g) @ q
        rhs = inner(v, apply_gradient(q, g), g)
        scale = np.sqrt(inner(v, v, g)) * np.sqrt(g.cell_area * q @ q)
        assert abs(lhs + rhs) <= 1e-13 * scale


def test_laplacian_linear_profile_interior():
    # u_x = x, cut to zero on the x=lx wall, so only faces away from it are linear
    g = build_grid(8, 6)
    xu, _ = g.u_coords
    w = g.join(np.where(xu < g.lx, xu, 0.0), np.zeros(g.v_shape))
    out, _ = g.split(apply_laplacian(w, g))
    assert np.allclose(out[1:-2, :], 0.0, atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_laplacian_1d_eigenvalue(k):
    g = build_grid(10, 6, 2.0, 1.0)
    xu, _ = g.u_coords
    w = g.join(np.sin(k * np.pi * xu / g.lx), np.zeros(g.v_shape))
    w[~g.admissible] = 0.0
    mu = (2 / g.dx ** 2) * (1 - np.cos(k * np.pi * g.dx / g.lx))
    out, _ = g.split(apply_laplacian(w, g))
    u, _ = g.split(w)
    assert np.allclose(out[1:-1], -mu * u[1:-1], rtol=0, atol=1e-11 * mu)


def test_laplacian_matches_hand_stencil(rng):
    # interior u-faces away from every wall see the plain 5-point stencil
    g = build_grid(7, 6, 1.0, 0.9)
    w = random_admissible(g, rng)
    u, _ = g.split(w)
    out, _ = g.split(apply_laplacian(w, g))
    for i in range(1, g.nx):
        for j in range(1, g.ny - 1):
            ref = ((u[i + 1, j] - 2 * u[i, j] + u[i - 1, j]) / g.dx ** 2
                   + (u[i, j + 1] - 2 * u[i, j] + u[i, j - 1]) / g.dy ** 2)
            assert out[i, j] == pytest.approx(ref, rel=1e-12, abs=1e-9)


def test_laplacian_rejects_constraint_violation(grid8):
    w = np.zeros(grid8.n_faces)
    w[grid8.u_index(0, 3)] = 1.0
    with pytest.raises(ValueError):
        apply_laplacian(w, grid8)


def test_laplacian_symmetric_and_semidefinite(rng):
    g = build_grid(10, 8)
    for _ in range(50):
        u, v = random_admissible(g, rng), random_admissible(g, rng)
        Lu, Lv = apply_laplacian(u, g), apply_laplacian(v, g)
        scale = np.sqrt(inner(Lu, Lu, g) * inner(v, v, g)) + np.sqrt(inner(Lv, Lv, g) * inner(u, u, g))
        assert abs(inner(Lu, v, g) - inner(u, Lv, g)) <= 1e-13 * scale
        assert inner(Lu, u, g) < 0
        assert grad_norm_sq(u, g) == pytest.approx(-inner(Lu, u, g), rel=1e-12)


def test_norms_unit_field():
    g = build_grid(6, 6)
    w = g.join(np.ones(g.u_shape), np.zeros(g.v_shape))
    for p in (2, 3.5, 4, np.inf):
        assert norm_lp(w, p, g) == pytest.approx(1.0, rel=1e-13)


def test_norm_homogeneity_and_bruteforce(rng, grid8):
    w = rng.standard_normal(grid8.n_faces)
    for p in (2, 3, 4, np.inf):
        assert norm_lp(-2.5 * w, p, grid8) == pytest.approx(2.5 * norm_lp(w, p, grid8), rel=1e-13)
    brute = np.sqrt(sum(wt * x * x for wt, x in zip(grid8.face_weights, w)))
    assert norm_lp(w, 2, grid8) == pytest.approx(brute, rel=1e-13)
    with pytest.raises(ValueError):
        norm_lp(w, 5, grid8)


def test_trace_shear_and_uniform():
    g = build_grid(8, 8)
    p = make_partition(g, 1.0)
    s = make_initial(InitSpec("shear-profile", 1.0), g)
    tau, w = trace_tangential(s.u, g, p)
    # the stored first-row values sit at y = dy/2, not on the wall
    u, _ = g.split(s.u)
    assert np.allclose(tau[:8], 0.5 * (u[:-1, 0] + u[1:, 0]))
    assert np.allclose(w, g.dx) and np.isclose(w.sum(), 2 * g.lx)
    c = g.join(np.full(g.u_shape, 0.7), np.zeros(g.v_shape))
    c[~g.admissible] = 0.0
    tau, _ = trace_tangential(c, g, p)
    assert np.allclose(tau[1:7], 0.7) and np.allclose(tau[9:15], 0.7)


def test_trace_is_index_arithmetic(rng):
    g = build_grid(5, 4)
    w = rng.standard_normal(g.n_faces)
    tau, _ = trace_tangential(w, g)
    u, _ = g.split(w)
    expect = np.concatenate([0.5 * (u[:-1, 0] + u[1:, 0]), 0.5 * (u[:-1, -1] + u[1:, -1])])
    assert np.allclose(tau, expect, rtol=0, atol=1e-15)


@pytest.mark.parametrize("n", [8, 16])
def test_lambda_min_matches_dense(n):
    assert compute_lambda_min(build_grid(n, n)).value == pytest.approx(LAMBDA_DENSE[n], rel=1e-10)


def test_lambda_min_dense_oracle_recomputed():
    g = build_grid(6, 5, 1.0, 0.7)
    ops = get_ops(g)
    N = sla.null_space(ops.div_free.toarray())
    A = N.T @ ops.stiffness_free.toarray() @ N
    M = N.T @ np.diag(ops.weights_free) @ N
    ref = sla.eigh(A, M, eigvals_only=True)[0]
    assert compute_lambda_min(g).value == pytest.approx(ref, rel=1e-10)


def test_lambda_min_refinement_and_scaling():
    l16 = compute_lambda_min(build_grid(16, 16)).value
    l32 = compute_lambda_min(build_grid(32, 32)).value
    assert abs(l32 - l16) / l32 < 0.05
    big = compute_lambda_min(build_grid(8, 8, 2.0, 2.0)).value
    assert 0 < big < LAMBDA_DENSE[8]
    # eigenvalues scale like 1 / length^2 at fixed cell counts
    assert big == pytest.approx(LAMBDA_DENSE[8] / 4, rel=1e-9)


def test_poincare_random(rng, grid16):
    lam = compute_lambda_min(grid16).value
    for _ in range(100):
        u = random_admissible(grid16, rng, divfree=True)
        assert inner(u, u, grid16) <= grad_norm_sq(u, grid16) / lam * (1 + 1e-10)


@pytest.mark.parametrize("shape", [(8, 8), (16, 16), (12, 7)])
def test_operator_algebra_report(shape):
    assert check_operator_algebra(build_grid(*shape)).ok


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.integers(0, 2**31))
def test_summation_by_parts_property(nx, ny, lx, ly, seed):
    g = build_grid(nx, ny, lx, ly)
    r = np.random.default_rng(seed)
    v = random_admissible(g, r)
    q = r.standard_normal(g.n_cells)
    lhs = g.cell_area * apply_divergence(v, g) @ q
    rhs = inner(v, apply_gradient(q, g), g)
    assert abs(lhs + rhs) <= 1e-13 * np.sqrt(inner(v, v, g) * g.cell_area * (q @ q))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.integers(0, 2**31))
def test_projection_idempotent_property(nx, ny, seed):
    g = build_grid(nx, ny)
    ops = get_ops(g)
    r = np.random.default_rng(seed)
    u = ops.project_divfree(r.standard_normal(g.n_faces))
    scale = max(np.abs(u).max(), 1e-300)
    assert np.abs(apply_divergence(u, g)).max() <= 1e-11 * scale / min(g.dx, g.dy)
    assert np.allclose(ops.project_divfree(u), u, atol=1e-13 * scale)
