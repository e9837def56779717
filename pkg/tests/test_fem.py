import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.sparse.linalg import spsolve

from meyers_lab.coeff import CoefficientField, OracleSolution
from meyers_lab.experiments import manufactured_convergence, skew_annihilation
from meyers_lab.fem import (CoefficientUndefinedError, QUADRATURE, apply_dirichlet,
                            assemble_load, assemble_parts, assemble_stiffness, check_csr,
                            gmres_solve, quadrature_rule, solve_problem, weak_residual)
from meyers_lab.mesh import MeshTri, build_disk_mesh, build_square_mesh, graded_disk, refine

IDENT = CoefficientField.identity()


def _reference_triangle():
    return MeshTri(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                   np.ones(3, bool), domain="square")


def _two_triangles():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return MeshTri(pts, np.array([[0, 1, 2], [0, 2, 3]]), np.ones(4, bool), domain="square")


def test_quadrature_rules_integrate_polynomials():
    # Exact moments of the reference simplex in barycentric coordinates.
    for n, degree in ((1, 1), (3, 2), (6, 4)):
        bary, w = quadrature_rule(n)
        assert w.sum() == pytest.approx(1.0, abs=1e-15)
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                exact = 2.0 * math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)
                assert w @ (bary[:, 1] ** i * bary[:, 2] ** j) == pytest.approx(exact, rel=1e-13)
    with pytest.raises(ValueError):
        quadrature_rule(4)
    assert sorted(QUADRATURE) == [1, 3, 6]


def test_reference_element_matrix():
    K = assemble_stiffness(_reference_triangle(), IDENT).toarray()
    np.testing.assert_allclose(K, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)


def test_identity_field_is_symmetric_with_zero_skew():
    m = graded_disk(1, 2.0)
    Ks, S = assemble_parts(m, IDENT)
    assert S.nnz == 0 or np.abs(S.data).max() == 0.0
    assert abs(Ks - Ks.T).max() == 0.0
    # Constants are in the kernel before boundary conditions.
    assert np.abs(Ks @ np.ones(m.n_vertices)).max() <= 1e-12


def test_skew_part_is_antisymmetric():
    m = graded_disk(1, 2.0)
    _, S = assemble_parts(m, CoefficientField.example(0.5))
    assert abs(S + S.T).max() == 0.0
    assert np.abs(S.data).max() > 0


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 0.9), st.integers(0, 2 ** 31))
def test_skew_annihilation_property(mu, seed):
    rng = np.random.default_rng(seed)
    worst = skew_annihilation([build_disk_mesh(3, 12, 1.5)], mu, 10, rng)
    assert worst <= 1e-12


def test_coercivity_on_interior_block():
    m = graded_disk(1, 2.0)
    Ks, _ = assemble_parts(m, CoefficientField.example(0.5))
    inner = m.interior_vertices()
    block = Ks[inner][:, inner].toarray()
    assert np.linalg.eigvalsh(block).min() > 0


def test_origin_vertex_does_not_produce_nan():
    m = build_disk_mesh(2, 8)
    K = assemble_stiffness(m, CoefficientField.example(0.5))
    assert np.isfinite(K.data).all()


def test_undefined_coefficient_raises():
    sym = lambda x, y: np.full(np.shape(x) + (2, 2), np.nan)  # noqa: E731
    with pytest.raises(CoefficientUndefinedError):
        assemble_stiffness(build_square_mesh(2), CoefficientField.custom(sym, None, 0.5))


def test_load_vector_examples():
    m = _reference_triangle()
    b = assemble_load(m, lambda x, y: np.broadcast_to([1.0, 0.0], np.shape(x) + (2,)))
    np.testing.assert_allclose(b, [-0.5, 0.5, 0.0], atol=1e-15)
    np.testing.assert_array_equal(assemble_load(m, None), np.zeros(3))


def test_load_of_gradient_matches_stiffness():
    # F = grad v for linear v gives b = K v exactly.
    m = _two_triangles()
    c = np.array([0.7, -1.3])
    v = m.points @ c
    b = assemble_load(m, lambda x, y: np.broadcast_to(c, np.shape(x) + (2,)))
    np.testing.assert_allclose(b, assemble_stiffness(m, IDENT) @ v, atol=1e-14)


def test_dirichlet_constant_data():
    m = build_disk_mesh(3, 12)
    sol, rep = solve_problem(m, CoefficientField.example(0.5), None, 1.0)
    assert rep.converged
    np.testing.assert_allclose(sol.coeffs, 1.0, atol=1e-9)


def test_apply_dirichlet_shape():
    m = build_disk_mesh(2, 8)
    K = assemble_stiffness(m, IDENT)
    K2, b2 = apply_dirichlet(K, np.zeros(m.n_vertices), m, 2.0)
    bnd = m.boundary_vertices()
    np.testing.assert_array_equal(b2[bnd], 2.0)
    dense = K2.toarray()
    np.testing.assert_array_equal(dense[bnd][:, bnd], np.eye(len(bnd)))
    inner = m.interior_vertices()
    assert np.all(dense[np.ix_(inner, bnd)] == 0)
    check_csr(K2)


def test_gmres_identity_one_iteration():
    x, rep = gmres_solve(sp.identity(10, format="csr"), np.arange(10.0))
    assert rep.converged and rep.iterations == 1
    np.testing.assert_allclose(x, np.arange(10.0))


def test_gmres_small_nonsymmetric():
    K = sp.csr_matrix([[2.0, 1.0], [-1.0, 2.0]])
    x, rep = gmres_solve(K, np.array([3.0, 1.0]))
    assert rep.converged
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)


def test_gmres_matches_direct_solver():
    m = graded_disk(1, 2.0)
    field = CoefficientField.example(0.3)
    K, b = apply_dirichlet(assemble_stiffness(m, field), np.zeros(m.n_vertices), m,
                           OracleSolution(0.3).u)
    x, rep = gmres_solve(K, b, tol=1e-12, max_iter=5000)
    assert rep.converged and rep.relative_residual <= 1e-12
    np.testing.assert_allclose(x, spsolve(K.tocsc(), b), atol=1e-9)


def test_gmres_reports_nonconvergence():
    m = graded_disk(2, 2.0)
    K, b = apply_dirichlet(assemble_stiffness(m, IDENT), np.zeros(m.n_vertices), m,
                           lambda x, y: x * y)
    _, rep = gmres_solve(K, b, tol=1e-14, restart=5, max_iter=10, precond="none")
    assert not rep.converged and rep.iterations == 10 and rep.relative_residual > 1e-14


def test_gmres_zero_rhs_and_bad_shape():
    x, rep = gmres_solve(sp.identity(4, format="csr"), np.zeros(4))
    assert rep.converged and rep.iterations == 0 and not x.any()
    with pytest.raises(ValueError):
        gmres_solve(sp.identity(4, format="csr"), np.zeros(3))


def test_zero_data_gives_zero_solution():
    sol, rep = solve_problem(build_disk_mesh(3, 12), CoefficientField.example(0.5))
    assert rep.converged and not sol.coeffs.any()


def test_galerkin_consistency_for_linear_solution():
    # Linear data is reproduced exactly by P1 when A = I.
    m = refine(build_disk_mesh(3, 12))
    sol, rep = solve_problem(m, IDENT, None, lambda x, y: 2 * x - y + 0.5)
    assert rep.converged
    np.testing.assert_allclose(sol.coeffs, 2 * m.points[:, 0] - m.points[:, 1] + 0.5, atol=1e-9)
    np.testing.assert_allclose(sol(np.array([0.3]), np.array([-0.2])), [1.3], atol=1e-9)


def test_manufactured_convergence_rate():
    rows = manufactured_convergence(0.5, levels=2)
    assert all(r["converged"] for r in rows)
    assert all(r["rate"] >= 0.9 for r in rows[1:])


def test_weak_residual_cases():
    m = graded_disk(1, 1.0)
    # Constants have zero gradient.
    r = weak_residual(m, CoefficientField.example(0.5), lambda x, y: np.zeros(np.shape(x) + (2,)))
    assert not r.any()
    # Linear u under A = I: integration by parts leaves only boundary terms.
    r = weak_residual(m, IDENT, lambda x, y: np.broadcast_to([1.0, 2.0], np.shape(x) + (2,)))
    assert np.abs(r).max() <= 1e-13
    assert not r[m.on_boundary].any()


def test_check_csr_rejects_broken_layouts():
    K = assemble_stiffness(build_disk_mesh(2, 8), IDENT)
    check_csr(K)
    bad = K.copy()
    bad.indices = bad.indices.copy()
    bad.indices[0] = K.shape[1]
    with pytest.raises(ValueError):
        check_csr(bad)
    bad = K.copy()
    bad.indptr = bad.indptr.copy()
    bad.indptr[1] = bad.indptr[2] + 1
    with pytest.raises(ValueError):
        check_csr(bad)


def test_assembly_is_deterministic():
    m = graded_disk(2, 2.0)
    f = CoefficientField.example(0.5)
    a, b = assemble_stiffness(m, f), assemble_stiffness(m, f)
    np.testing.assert_array_equal(a.indptr, b.indptr)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.data, b.data)
