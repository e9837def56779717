"""Conforming triangular meshes of the unit disk, annuli and the unit square.

Disk meshes are built from concentric vertex rings at radii ``(k/K)**grading``
and sector lines through angles ``2*pi*j/n_sectors``.  Because ``n_sectors`` is
a multiple of 4, the positive and negative y-axis are sector lines, so no
triangle has vertices on both sides of ``x = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEGENERATE_AREA = 1e-14
BOUNDARY_TOL = 1e-9


class MeshError(ValueError):
    """Raised for invalid mesh parameters or a violated mesh invariant."""


class DegenerateElementError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class MeshTri:
    """Immutable triangle mesh.

    ``points`` is ``(N, 2)``, ``triangles`` is ``(T, 3)`` with counterclockwise
    vertex order, ``on_boundary`` is a boolean mask over vertices.
    ``domain`` is one of ``"disk"``, ``"annulus"``, ``"square"``.
    """

    points: np.ndarray
    triangles: np.ndarray
    on_boundary: np.ndarray
    domain: str = "disk"
    grading: float = 1.0
    level: int = 0
    inner_radius: float = 0.0
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.points, self.triangles, self.on_boundary):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def geometry(self):
        """Areas ``(T,)`` and P1 basis gradients ``(T, 3, 2)`` for all elements."""
        if "geometry" not in self._cache:
            self._cache["geometry"] = _all_geometry(self.points, self.triangles)
        return self._cache["geometry"]

    @property
    def areas(self) -> np.ndarray:
        return self.geometry()[0]

    @property
    def grads(self) -> np.ndarray:
        return self.geometry()[1]

    @property
    def centroids(self) -> np.ndarray:
        return self.points[self.triangles].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        p = self.points[self.triangles]
        return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)

    def h_max(self) -> float:
        return float(self.edge_lengths().max())

    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.on_boundary)

    def boundary_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.on_boundary)


def _all_geometry(points, triangles):
    p = points[triangles]
    x, y = p[..., 0], p[..., 1]
    # Edge opposite vertex i runs from i+1 to i+2.
    dx = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
    dy = np.roll(y, -2, axis=1) - np.roll(y, -1, axis=1)
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                  - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    bad = np.flatnonzero(area <= DEGENERATE_AREA)
    if bad.size:
        raise DegenerateElementError(
            f"{bad.size} element(s) with area <= {DEGENERATE_AREA:g}, first {bad[0]}")
    grads = np.stack([-dy, dx], axis=-1) / (2.0 * area)[:, None, None]
    return area, grads


def element_geometry(mesh: MeshTri, t: int):
    """Area and the three constant P1 basis gradients of triangle ``t``."""
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range")
    area, grads = _all_geometry(mesh.points, mesh.triangles[t:t + 1])
    return float(area[0]), grads[0]


def ring_radii(n_rings: int, grading: float) -> np.ndarray:
    k = np.arange(1, n_rings + 1)
    r = (k / n_rings) ** grading
    r[-1] = 1.0
    return r


def _ring_triangles(inner_start, outer_start, n):
    j = np.arange(n)
    jn = (j + 1) % n
    a, b = inner_start + j, inner_start + jn
    c, d = outer_start + j, outer_start + jn
    # Quad (a, b, d, c) split along a-d.
    return np.concatenate([np.stack([a, c, d], 1), np.stack([a, d, b], 1)])


def build_disk_mesh(n_rings: int, n_sectors: int, grading: float = 1.0) -> MeshTri:
    """Ring/sector mesh of the unit disk, graded toward the origin."""
    if n_sectors % 4 != 0:
        raise MeshError(f"n_sectors must be divisible by 4, got {n_sectors}")
    if n_rings < 2 or n_sectors < 8:
        raise MeshError("need n_rings >= 2 and n_sectors >= 8")
    if grading < 1.0:
        raise MeshError(f"grading must be >= 1, got {grading}")

    theta = 2.0 * np.pi * np.arange(n_sectors) / n_sectors
    cos, sin = np.cos(theta), np.sin(theta)
    # Snap so the axis sector lines are exactly on x = 0 / y = 0.
    cos[np.abs(cos) < 1e-15] = 0.0
    sin[np.abs(sin) < 1e-15] = 0.0
    radii = ring_radii(n_rings, grading)
    pts = [np.zeros((1, 2))]
    for r in radii:
        pts.append(np.column_stack([r * cos, r * sin]))
    points = np.concatenate(pts)

    j = np.arange(n_sectors)
    tris = [np.stack([np.zeros(n_sectors, int), 1 + j, 1 + (j + 1) % n_sectors], 1)]
    for k in range(n_rings - 1):
        tris.append(_ring_triangles(1 + k * n_sectors, 1 + (k + 1) * n_sectors, n_sectors))
    triangles = np.concatenate(tris).astype(np.int64)

    on_boundary = np.zeros(len(points), bool)
    on_boundary[1 + (n_rings - 1) * n_sectors:] = True
    return MeshTri(points, triangles, on_boundary, domain="disk", grading=float(grading))


def build_annulus_mesh(inner_radius: float, n_rings: int, n_sectors: int) -> MeshTri:
    """Annulus ``inner_radius <= r <= 1`` with ``n_rings`` cell layers."""
    if not 0.0 < inner_radius < 1.0:
        raise MeshError("inner_radius must lie in (0, 1)")
    if n_sectors % 4 != 0 or n_sectors < 8 or n_rings < 1:
        raise MeshError("need n_rings >= 1 and n_sectors >= 8 divisible by 4")
    theta = 2.0 * np.pi * np.arange(n_sectors) / n_sectors
    cos, sin = np.cos(theta), np.sin(theta)
    cos[np.abs(cos) < 1e-15] = 0.0
    sin[np.abs(sin) < 1e-15] = 0.0
    radii = np.linspace(inner_radius, 1.0, n_rings + 1)
    points = np.concatenate([np.column_stack([r * cos, r * sin]) for r in radii])
    triangles = np.concatenate([
        _ring_triangles(k * n_sectors, (k + 1) * n_sectors, n_sectors)
        for k in range(n_rings)]).astype(np.int64)
    on_boundary = np.zeros(len(points), bool)
    on_boundary[:n_sectors] = True
    on_boundary[-n_sectors:] = True
    return MeshTri(points, triangles, on_boundary, domain="annulus",
                   inner_radius=float(inner_radius))


def build_square_mesh(n: int, bounds=(0.0, 1.0, 0.0, 1.0)) -> MeshTri:
    """Structured ``n x n`` grid on a rectangle, each cell split into two triangles."""
    if n < 1:
        raise MeshError("n must be positive")
    x0, x1, y0, y1 = map(float, bounds)
    xs, ys = np.linspace(x0, x1, n + 1), np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    points = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    triangles = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
    on_boundary = ((points[:, 0] == x0) | (points[:, 0] == x1)
                   | (points[:, 1] == y0) | (points[:, 1] == y1))
    return MeshTri(points, triangles.astype(np.int64), on_boundary,
                   domain="square", bounds=(x0, x1, y0, y1))


def graded_disk(level: int, grading: float = 2.0, base_rings: int = 4,
                base_sectors: int = 16) -> MeshTri:
    """Graded disk mesh at resolution ``level``: rings and sectors doubled per level.

    Uniform quadrisection of a graded mesh only halves the innermost element,
    so graded sequences are rebuilt instead to keep ``h_0 ~ h**grading``.
    """
    m = build_disk_mesh(base_rings * 2 ** level, base_sectors * 2 ** level, grading)
    return _with(m, level=level)


def _with(mesh: MeshTri, **changes) -> MeshTri:
    kw = dict(points=mesh.points, triangles=mesh.triangles, on_boundary=mesh.on_boundary,
              domain=mesh.domain, grading=mesh.grading, level=mesh.level,
              inner_radius=mesh.inner_radius, bounds=mesh.bounds)
    kw.update(changes)
    return MeshTri(**kw)


def edges(mesh: MeshTri):
    """Unique edges ``(E, 2)`` (sorted endpoints) and the number of triangles using each."""
    e = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def refine(mesh: MeshTri) -> MeshTri:
    """Split every triangle into four via edge midpoints.

    Midpoints of boundary edges are projected back onto the curved boundary.
    """
    tri = mesh.triangles
    n = mesh.n_vertices
    e_all = np.sort(tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, inverse, counts = np.unique(e_all, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    mids = 0.5 * (mesh.points[uniq[:, 0]] + mesh.points[uniq[:, 1]])
    bnd_edge = counts == 1
    mids = _project_boundary(mesh, uniq, mids, bnd_edge)

    points = np.concatenate([mesh.points, mids])
    on_boundary = np.concatenate([mesh.on_boundary, bnd_edge])
    m = n + inverse.reshape(-1, 3)  # midpoint ids of edges (01, 12, 20)
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    triangles = np.concatenate([
        np.stack([v0, m01, m20], 1),
        np.stack([m01, v1, m12], 1),
        np.stack([m20, m12, v2], 1),
        np.stack([m01, m12, m20], 1),
    ])
    return _with(mesh, points=points, triangles=triangles, on_boundary=on_boundary,
                 level=mesh.level + 1)


def _project_boundary(mesh, edge_list, mids, bnd_edge):
    if mesh.domain == "square":
        return mids
    mids = mids.copy()
    idx = np.flatnonzero(bnd_edge)
    r = np.hypot(mids[idx, 0], mids[idx, 1])
    target = np.ones_like(r)
    if mesh.domain == "annulus":
        end_r = np.hypot(*mesh.points[edge_list[idx, 0]].T)
        target = np.where(np.abs(end_r - 1.0) <= BOUNDARY_TOL, 1.0, mesh.inner_radius)
    mids[idx] *= (target / r)[:, None]
    return mids


def check_mesh(mesh: MeshTri) -> None:
    """Raise :class:`MeshError` if any structural invariant fails."""
    area = mesh.areas  # raises on degenerate / clockwise elements
    uniq, counts = edges(mesh)
    if np.any(counts > 2):
        raise MeshError("an edge is shared by more than two triangles")
    bnd_vertices = np.zeros(mesh.n_vertices, bool)
    bnd_vertices[uniq[counts == 1].ravel()] = True
    if not np.array_equal(bnd_vertices, mesh.on_boundary):
        raise MeshError("boundary flags disagree with boundary edges")

    x, y = mesh.points[:, 0], mesh.points[:, 1]
    r = np.hypot(x, y)
    if mesh.domain == "disk":
        if np.any(x * x + y * y > 1.0 + 1e-12):
            raise MeshError("vertex outside the unit disk")
        geo = np.abs(x * x + y * y - 1.0) <= BOUNDARY_TOL
        if not np.array_equal(geo, mesh.on_boundary):
            raise MeshError("boundary flags disagree with geometry")
    elif mesh.domain == "annulus":
        geo = (np.abs(r - 1.0) <= BOUNDARY_TOL) | (np.abs(r - mesh.inner_radius) <= BOUNDARY_TOL)
        if not np.array_equal(geo, mesh.on_boundary):
            raise MeshError("boundary flags disagree with geometry")
    else:
        x0, x1, y0, y1 = mesh.bounds
        geo = (np.isclose(x, x0) | np.isclose(x, x1) | np.isclose(y, y0) | np.isclose(y, y1))
        if not np.array_equal(geo, mesh.on_boundary):
            raise MeshError("boundary flags disagree with geometry")

    if not axis_aligned(mesh):
        raise MeshError("a triangle straddles the y-axis")

    if abs(area.sum() - polygon_area(mesh)) > 1e-9:
        raise MeshError("element areas do not add up to the domain polygon area")


def axis_aligned(mesh: MeshTri) -> bool:
    xs = mesh.points[mesh.triangles, 0]
    return bool(np.all((xs >= 0).all(axis=1) | (xs <= 0).all(axis=1)))


def polygon_area(mesh: MeshTri) -> float:
    """Area enclosed by the oriented boundary edges (shoelace formula)."""
    tri = mesh.triangles
    directed = tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = directed[counts[inverse.reshape(-1)] == 1]
    p, q = mesh.points[bnd[:, 0]], mesh.points[bnd[:, 1]]
    return float(0.5 * np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def write_mesh(mesh: MeshTri, path) -> None:
    """ASCII format: ``nv nt``, then ``x y flag`` per vertex, then ``i j k`` per triangle."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r} {int(b)}" for (x, y), b in zip(mesh.points.tolist(), mesh.on_boundary)]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, domain: str = "disk") -> MeshTri:
    with open(path) as fh:
        nv, nt = map(int, fh.readline().split())
        verts = np.loadtxt(fh, max_rows=nv, ndmin=2)
        tris = np.loadtxt(fh, max_rows=nt, dtype=np.int64, ndmin=2)
    return MeshTri(verts[:, :2].copy(), tris, verts[:, 2].astype(bool), domain=domain)
