"""P1 finite elements for ``div[A grad u] = div F`` with a nonsymmetric ``A``.

The stiffness matrix is ``K[i, j] = int <A grad phi_j, grad phi_i>`` and the load
is ``b[i] = int F . grad phi_i``, so ``F = A grad v`` reproduces ``K v = b``.
Matrices are :class:`scipy.sparse.csr_matrix` with sorted, duplicate-free
column indices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .coeff import CoefficientField, eval_matrix_A
from .mesh import MeshTri

log = logging.getLogger(__name__)

_A1, _W1 = 0.44594849091596488632, 0.22338158967801146570
_A2, _W2 = 0.09157621350977074346, 0.10995174365532186764

# Barycentric nodes and weights (summing to 1) keyed by node count.
QUADRATURE = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    3: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3)),
    6: (np.array([[1 - 2 * _A1, _A1, _A1], [_A1, 1 - 2 * _A1, _A1], [_A1, _A1, 1 - 2 * _A1],
                  [1 - 2 * _A2, _A2, _A2], [_A2, 1 - 2 * _A2, _A2], [_A2, _A2, 1 - 2 * _A2]]),
        np.array([_W1] * 3 + [_W2] * 3)),
}


class CoefficientUndefinedError(RuntimeError):
    pass


def quadrature_rule(order: int):
    try:
        return QUADRATURE[order]
    except KeyError:
        raise ValueError(f"quadrature order must be one of {sorted(QUADRATURE)}") from None


def origin_elements(mesh: MeshTri) -> np.ndarray:
    """Mask of elements with a vertex at the origin."""
    at_origin = np.all(np.abs(mesh.points) <= 1e-14, axis=1)
    return at_origin[mesh.triangles].any(axis=1)


def quadrature_points(mesh: MeshTri, order: int):
    """Physical nodes ``(T, Q, 2)`` and weights ``(T, Q)`` (fractions of the element area).

    Elements touching the origin get the centroid rule, padded with zero weights.
    """
    bary, w = quadrature_rule(order)
    verts = mesh.points[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", bary, verts)
    weights = np.broadcast_to(w, pts.shape[:2]).copy()
    touch = origin_elements(mesh)
    if touch.any() and order != 1:
        pts[touch] = verts[touch].mean(axis=1)[:, None, :]
        weights[touch] = 0.0
        weights[touch, 0] = 1.0
    return pts, weights


def _coo(mesh, local):
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _canonical(K):
    K = K.tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def assemble_parts(mesh: MeshTri, field: CoefficientField, quad_order: int = 3):
    """Symmetric-part and skew-part stiffness matrices ``(K_sym, K_skew)``.

    ``K_skew`` is antisymmetrized after assembly so ``K_skew.T == -K_skew`` holds
    bit for bit.
    """
    pts, w = quadrature_points(mesh, quad_order)
    x, y = pts[..., 0], pts[..., 1]
    area, G = mesh.areas, mesh.grads

    a = field.a(x, y)
    if not np.all(np.isfinite(a[w > 0])):
        raise CoefficientUndefinedError("symmetric coefficient undefined at a quadrature node")
    a_bar = np.einsum("tq,tqij->tij", w, a)
    k_sym = area[:, None, None] * np.einsum("tid,tde,tje->tij", G, a_bar, G)
    K_sym = _canonical(_coo(mesh, k_sym))

    if not field.has_skew:
        return K_sym, _canonical(sp.csr_matrix(K_sym.shape))
    d = field.d(x, y)
    if not np.all(np.isfinite(d[w > 0])):
        raise CoefficientUndefinedError("skew coefficient undefined at a quadrature node")
    d_bar = np.einsum("tq,tq->t", w, np.where(w > 0, d, 0.0))
    cross = G[:, :, None, 0] * G[:, None, :, 1] - G[:, :, None, 1] * G[:, None, :, 0]
    k_skew = (area * d_bar)[:, None, None] * cross
    S = _coo(mesh, k_skew)
    K_skew = _canonical(0.5 * (S - S.T))
    return K_sym, K_skew


def assemble_stiffness(mesh: MeshTri, field: CoefficientField, quad_order: int = 3):
    K_sym, K_skew = assemble_parts(mesh, field, quad_order)
    return _canonical(K_sym + K_skew)


def assemble_load(mesh: MeshTri, F: Callable | None, quad_order: int = 3) -> np.ndarray:
    """``b[i] = sum_T int_T F . grad phi_i``.

    ``F(x, y)`` receives arrays of shape ``(T, Q)`` and returns ``(T, Q, 2)``.
    """
    n = mesh.n_vertices
    if F is None:
        return np.zeros(n)
    pts, w = quadrature_points(mesh, quad_order)
    vals = np.asarray(F(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, pts.shape)
    f_bar = np.einsum("tq,tqd->td", w, np.where(w[..., None] > 0, vals, 0.0))
    local = mesh.areas[:, None] * np.einsum("tid,td->ti", mesh.grads, f_bar)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=n)


def boundary_values(mesh: MeshTri, g) -> np.ndarray:
    idx = mesh.boundary_vertices()
    if g is None:
        return np.zeros(len(idx))
    if callable(g):
        return np.asarray(g(mesh.points[idx, 0], mesh.points[idx, 1]), dtype=float)
    g = np.asarray(g, dtype=float)
    return g[idx] if g.shape == (mesh.n_vertices,) else np.broadcast_to(g, idx.shape).copy()


def apply_dirichlet(K, b, mesh: MeshTri, g=None):
    """Identity rows on the boundary, known values moved to the right side.

    Boundary columns are zeroed as well, so the interior block is untouched.
    """
    bnd = mesh.on_boundary
    gb = boundary_values(mesh, g)
    u_b = np.zeros(mesh.n_vertices)
    u_b[bnd] = gb
    b2 = np.asarray(b, dtype=float) - K @ u_b
    b2[bnd] = gb
    keep = sp.diags((~bnd).astype(float))
    K2 = _canonical(keep @ K @ keep + sp.diags(bnd.astype(float)))
    return K2, b2


# -- linear solver ------------------------------------------------------------

@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    breakdown: bool = False


def gmres_solve(K, b, tol: float = 1e-10, restart: int = 50, max_iter: int = 2000,
                precond: str = "jacobi", x0=None):
    """Restarted GMRES with right preconditioning.

    Right preconditioning keeps the Arnoldi residual equal to the true residual,
    so ``converged`` certifies ``||K x - b|| <= tol ||b||``.  ``iterations``
    counts matrix-vector products inside Arnoldi cycles.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if K.shape != (n, n):
        raise ValueError(f"matrix shape {K.shape} does not match rhs length {n}")
    if precond == "jacobi":
        diag = K.diagonal()
        minv = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)
    elif precond == "none":
        minv = np.ones(n)
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), LinearSolveReport(0, 0.0, True)
    r = b - K @ x
    beta = np.linalg.norm(r)
    total = 0
    breakdown = False
    while beta > tol * bnorm and total < max_iter and not breakdown:
        m = min(restart, max_iter - total)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for j in range(m):
            w = K @ (minv * V[j])
            wnorm0 = np.linalg.norm(w)
            h = V[:j + 1] @ w
            w = w - h @ V[:j + 1]
            h2 = V[:j + 1] @ w
            w = w - h2 @ V[:j + 1]
            h = h + h2
            hn = np.linalg.norm(w)
            col = np.concatenate([h, [hn]])
            for i in range(j):
                t = cs[i] * col[i] + sn[i] * col[i + 1]
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1]
                col[i] = t
            denom = np.hypot(col[j], col[j + 1])
            if denom == 0.0:
                breakdown = True
                break
            cs[j], sn[j] = col[j] / denom, col[j + 1] / denom
            col[j], col[j + 1] = denom, 0.0
            H[:j + 2, j] = col
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            k = j + 1
            if hn <= 1e-14 * max(wnorm0, np.finfo(float).tiny):
                breakdown = True
                break
            V[j + 1] = w / hn
            if abs(g[j + 1]) <= tol * bnorm:
                break
        if k:
            y = _back_substitute(H[:k, :k], g[:k])
            x = x + minv * (y @ V[:k])
        r = b - K @ x
        beta = np.linalg.norm(r)
        if breakdown and beta <= tol * bnorm:
            breakdown = False  # lucky breakdown: exact solution in the Krylov space
            break
    rel = beta / bnorm
    converged = bool(rel <= tol)
    if not converged:
        log.warning("GMRES stopped after %d iterations, relative residual %.3e", total, rel)
    return x, LinearSolveReport(total, float(rel), converged, breakdown)


def _back_substitute(R, g):
    k = len(g)
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


# -- solutions ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FemSolution:
    mesh: MeshTri
    coeffs: np.ndarray
    field: CoefficientField
    _cache: dict = dc_field(default_factory=dict, repr=False)

    def element_gradients(self) -> np.ndarray:
        """Constant gradient of ``u_h`` on each element, ``(T, 2)``."""
        return np.einsum("ti,tid->td", self.coeffs[self.mesh.triangles], self.mesh.grads)

    def locator(self) -> "PointLocator":
        if "locator" not in self._cache:
            self._cache["locator"] = PointLocator(self.mesh)
        return self._cache["locator"]

    def __call__(self, x, y):
        """Evaluate ``u_h``; NaN outside the mesh."""
        t, bary = self.locator().locate(x, y)
        vals = np.einsum("...k,...k->...", bary, self.coeffs[self.mesh.triangles[np.maximum(t, 0)]])
        return np.where(t >= 0, vals, np.nan)

    def grad(self, x, y):
        t, _ = self.locator().locate(x, y)
        g = self.element_gradients()[np.maximum(t, 0)]
        return np.where((t >= 0)[..., None], g, np.nan)

    def grad_norm(self, x, y):
        g = self.grad(x, y)
        return np.hypot(g[..., 0], g[..., 1])


class PointLocator:
    """Find the containing triangle and barycentric coordinates of query points."""

    def __init__(self, mesh: MeshTri, k: int = 12):
        self.mesh = mesh
        self.k = min(k, mesh.n_triangles)
        self.tree = cKDTree(mesh.centroids)
        p = mesh.points[mesh.triangles]
        # Affine map from (x, y) to the last two barycentric coordinates.
        self.origin = p[:, 0]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.inv = np.linalg.inv(e)

    def _bary(self, t, q):
        l12 = np.einsum("nij,nj->ni", self.inv[t], q - self.origin[t])
        return np.column_stack([1.0 - l12.sum(axis=1), l12])

    def locate(self, x, y, eps: float = 1e-10):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        shape = x.shape
        q = np.column_stack([x.ravel(), y.ravel()])
        n = len(q)
        tri = np.full(n, -1)
        bary = np.zeros((n, 3))
        _, cand = self.tree.query(q, k=self.k)
        cand = cand.reshape(n, -1)
        todo = np.arange(n)
        for c in range(cand.shape[1]):
            t = cand[todo, c]
            lam = self._bary(t, q[todo])
            hit = lam.min(axis=1) >= -eps
            tri[todo[hit]] = t[hit]
            bary[todo[hit]] = lam[hit]
            todo = todo[~hit]
            if not todo.size:
                break
        for i in todo:  # fall back to a scan over all elements
            lam = self._bary(np.arange(self.mesh.n_triangles), np.broadcast_to(q[i], (self.mesh.n_triangles, 2)))
            best = int(np.argmax(lam.min(axis=1)))
            if lam[best].min() >= -eps:
                tri[i], bary[i] = best, lam[best]
        return tri.reshape(shape), bary.reshape(shape + (3,))


def solve_problem(mesh: MeshTri, field: CoefficientField, F=None, g=None, tol: float = 1e-10,
                  quad_order: int = 3, restart: int = 50, max_iter: int = 2000,
                  precond: str = "jacobi"):
    """Assemble, impose Dirichlet data ``g`` and solve with GMRES."""
    K = assemble_stiffness(mesh, field, quad_order)
    b = assemble_load(mesh, F, quad_order)
    K2, b2 = apply_dirichlet(K, b, mesh, g)
    x, report = gmres_solve(K2, b2, tol=tol, restart=restart, max_iter=max_iter, precond=precond)
    x[mesh.on_boundary] = boundary_values(mesh, g)
    return FemSolution(mesh, x, field), report


def weak_residual(mesh: MeshTri, field: CoefficientField, grad_u: Callable,
                  quad_order: int = 3) -> np.ndarray:
    """``r[i] = int <A grad u, grad phi_i>`` at interior vertices, zero on the boundary."""
    pts, w = quadrature_points(mesh, quad_order)
    x, y = pts[..., 0], pts[..., 1]
    A = eval_matrix_A(field, x, y)
    gu = np.asarray(grad_u(x, y), dtype=float)
    flux = np.einsum("tqij,tqj->tqi", A, gu)
    flux = np.where(w[..., None] > 0, flux, 0.0)
    f_bar = np.einsum("tq,tqd->td", w, flux)
    local = mesh.areas[:, None] * np.einsum("tid,td->ti", mesh.grads, f_bar)
    r = np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)
    r[mesh.on_boundary] = 0.0
    return r


def h1_seminorm_error(sol: FemSolution, grad_exact: Callable, quad_order: int = 6):
    """``(||grad(u_h - u)||, ||grad u||)`` in L2 over the mesh."""
    pts, w = quadrature_points(sol.mesh, quad_order)
    ge = np.asarray(grad_exact(pts[..., 0], pts[..., 1]), dtype=float)
    diff = sol.element_gradients()[:, None, :] - ge
    wa = w * sol.mesh.areas[:, None]
    err = np.sqrt(np.sum(wa * np.sum(diff ** 2, axis=-1)))
    ref = np.sqrt(np.sum(wa * np.sum(ge ** 2, axis=-1)))
    return float(err), float(ref)


def l2_error(sol: FemSolution, u_exact: Callable, quad_order: int = 6) -> float:
    bary, _ = quadrature_rule(quad_order)
    pts, w = quadrature_points(sol.mesh, quad_order)
    uh = sol.coeffs[sol.mesh.triangles] @ bary.T
    touch = origin_elements(sol.mesh)
    if touch.any() and quad_order != 1:
        uh[touch] = sol.coeffs[sol.mesh.triangles[touch]].mean(axis=1)[:, None]
    ue = np.asarray(u_exact(pts[..., 0], pts[..., 1]), dtype=float)
    diff = np.where(w > 0, uh - ue, 0.0)
    return float(np.sqrt(np.sum(w * sol.mesh.areas[:, None] * diff ** 2)))


def check_csr(K) -> None:
    """Raise ``ValueError`` unless ``K`` satisfies the CSR layout invariants."""
    ptr, idx = K.indptr, K.indices
    n_rows, n_cols = K.shape
    if len(ptr) != n_rows + 1 or np.any(np.diff(ptr) < 0):
        raise ValueError("row pointer must be nondecreasing with length n_rows + 1")
    if len(K.data) != ptr[-1] or len(idx) != ptr[-1]:
        raise ValueError("values length must equal row_ptr[n_rows]")
    if idx.size and (idx.min() < 0 or idx.max() >= n_cols):
        raise ValueError("column index out of range")
    for i in range(n_rows):
        row = idx[ptr[i]:ptr[i + 1]]
        if np.any(np.diff(row) <= 0):
            raise ValueError(f"columns of row {i} not strictly increasing")
