"""Canned experiments shared by the CLI, the reproduction report and the tests."""
from __future__ import annotations

import numpy as np

from . import analysis as an
from .coeff import (CoefficientField, OracleSolution, bmo_seminorm, d_sup_norm,
                    default_bmo_sampling, eval_example_d, eval_matrix_A)
from .fem import (assemble_parts, h1_seminorm_error, l2_error, solve_problem, weak_residual)
from .mesh import build_disk_mesh, graded_disk, refine


def critical_p(mu: float) -> float:
    return 2.0 / (1.0 - mu)


def threshold_grid(mu: float, step: float = 0.25) -> np.ndarray:
    return np.arange(2.0, critical_p(mu) + 2.0 + 1e-9, step)


def manufactured_case(field: CoefficientField):
    """``u* = 1 - x^2 - y^2`` with ``F = A grad u*`` and zero boundary data."""

    def u(x, y):
        return 1.0 - x * x - y * y

    def grad(x, y):
        return np.stack([-2.0 * np.asarray(x, float), -2.0 * np.asarray(y, float)], axis=-1)

    def F(x, y):
        return np.einsum("...ij,...j->...i", eval_matrix_A(field, x, y), grad(x, y))

    return u, grad, F


def manufactured_convergence(mu: float = 0.5, levels: int = 3, base=(4, 16), tol: float = 1e-10,
                             max_iter: int = 2000):
    """Relative H1 errors on ``levels`` uniform refinements of a base disk mesh."""
    field = CoefficientField.example(mu)
    _, grad, F = manufactured_case(field)
    mesh = build_disk_mesh(base[0], base[1], 1.0)
    rows = []
    for level in range(levels + 1):
        sol, rep = solve_problem(mesh, field, F, None, tol=tol, max_iter=max_iter)
        err, ref = h1_seminorm_error(sol, grad)
        rows.append(dict(level=level, h=mesh.h_max(), n_vertices=mesh.n_vertices,
                         error=err / ref, iterations=rep.iterations, converged=rep.converged))
        mesh = refine(mesh)
    _add_rates(rows)
    return rows


def oracle_convergence(mu: float = 0.5, levels: int = 3, grading: float | None = None,
                       tol: float = 1e-10, max_iter: int = 5000):
    """L2 errors of the FEM solution with the exact solution as boundary data."""
    field = CoefficientField.example(mu)
    oracle = OracleSolution(mu)
    grading = 1.0 / mu if grading is None else grading
    rows = []
    for level in range(levels + 1):
        mesh = graded_disk(level, grading)
        sol, rep = solve_problem(mesh, field, None, oracle.u, tol=tol, max_iter=max_iter)
        rows.append(dict(level=level, h=mesh.h_max(), n_vertices=mesh.n_vertices,
                         error=l2_error(sol, oracle.u), iterations=rep.iterations,
                         converged=rep.converged))
    _add_rates(rows)
    return rows


def _add_rates(rows):
    rows[0]["rate"] = float("nan")
    for prev, cur in zip(rows, rows[1:]):
        cur["rate"] = float(np.log(prev["error"] / cur["error"]) / np.log(prev["h"] / cur["h"]))


def weak_residual_levels(mu: float, levels: int = 3, grading: float = 1.0):
    """Max interior weak residual of the exact solution on graded meshes ``0..levels``."""
    field = CoefficientField.example(mu)
    oracle = OracleSolution(mu)
    return [float(np.abs(weak_residual(graded_disk(k, grading), field, oracle.grad)).max())
            for k in range(levels + 1)]


def oracle_fem_solution(mu: float, level: int = 3, grading: float = 2.0, max_iter: int = 5000):
    field = CoefficientField.example(mu)
    oracle = OracleSolution(mu)
    return solve_problem(graded_disk(level, grading), field, None, oracle.u, max_iter=max_iter)


def skew_annihilation(meshes, mu: float, n_vectors: int, rng) -> float:
    """Worst ``|z^T K_skew z| / (||z||^2 max|K_skew|)`` over meshes and random vectors."""
    field = CoefficientField.example(mu)
    worst = 0.0
    for mesh in meshes:
        _, S = assemble_parts(mesh, field)
        scale = np.abs(S.data).max()
        for _ in range(n_vectors):
            z = rng.standard_normal(mesh.n_vertices)
            worst = max(worst, abs(z @ (S @ z)) / (z @ z * scale))
    return worst


def dyadic_origin_balls(n: int = 7):
    """Balls ``B_{2^-k}(0)``, ``k = 1..n``; their doubles stay inside the unit disk."""
    return [(0.0, 0.0)], [2.0 ** -k for k in range(1, n + 1)]


def meyers_growth(g, f, p: float, n_balls: int = 7, quad_n: int = 64):
    """Running max of the reverse-Hölder ratio at ``p`` along shrinking origin balls.

    Returns ``(ratios, growth)`` where ``growth`` is the final running max over
    the first ball's ratio.
    """
    centers, radii = dyadic_origin_balls(n_balls)
    ratios = np.array([an.ball_ratios(g, f, centers[0], r, [p], quad_n)[0] for r in radii])
    running = np.maximum.accumulate(ratios)
    return ratios, float(running[-1] / running[0])


def identity_control(level: int = 3, p_max: float = 8.0, step: float = 0.5):
    """Reverse-Hölder scan for ``A = I`` and the smooth load ``F = (x, y)``."""
    field = CoefficientField.identity()

    def F(x, y):
        return np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), axis=-1)

    sol, _ = solve_problem(graded_disk(level, 1.0), field, F, None)
    centers, radii = dyadic_origin_balls()
    p_grid = np.arange(2.0, p_max + 1e-9, step)
    return an.reverse_holder_scan(sol.grad_norm, lambda x, y: np.linalg.norm(F(x, y), axis=-1),
                                  centers, radii, p_grid)


def bmo_example(mu: float, grid: int = 21, radii_min_exp: int = 6, quad_n: int = 64):
    centers, radii = default_bmo_sampling(grid, radii_min_exp)
    return bmo_seminorm(lambda x, y: eval_example_d(x, y, mu), centers, radii, quad_n)


def bmo_bound(mu: float) -> float:
    return 2.0 * d_sup_norm(mu)
