"""Integrability, Hölder and reverse-Hölder diagnostics for exact and discrete solutions.

Gradient sources are either a :class:`~meyers_lab.fem.FemSolution` (integrated
element by element) or a callable ``grad(x, y) -> (..., 2)`` (integrated with
polar quadrature around the region center).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .coeff import OracleSolution, bmo_seminorm, default_bmo_sampling
from .fem import FemSolution, quadrature_points, quadrature_rule

DIVERGENCE_SLOPE = 0.05


class EmptyRegionError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


class RegionTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def contains(self, x, y):
        cx, cy = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 < self.radius ** 2

    @property
    def outer(self):
        return self.radius

    @property
    def inner(self):
        return 0.0


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float
    center: tuple = (0.0, 0.0)

    def contains(self, x, y):
        cx, cy = self.center
        rr = (x - cx) ** 2 + (y - cy) ** 2
        return (rr >= self.r_in ** 2) & (rr < self.r_out ** 2)

    @property
    def outer(self):
        return self.r_out

    @property
    def inner(self):
        return self.r_in


# -- integration --------------------------------------------------------------

def _subdivided_rule(quad_order: int, levels: int):
    """Barycentric nodes/weights of ``quad_order`` applied on ``4**levels`` sub-triangles."""
    bary, w = quadrature_rule(quad_order)
    tris = [np.eye(3)]
    for _ in range(levels):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            nxt += [np.array([t[0], m01, m20]), np.array([m01, t[1], m12]),
                    np.array([m20, m12, t[2]]), np.array([m01, m12, m20])]
        tris = nxt
    nodes = np.concatenate([bary @ t for t in tris])
    weights = np.tile(w, len(tris)) / len(tris)
    return nodes, weights


def element_region_weights(mesh, region, quad_order: int = 6, subdiv: int = 2):
    """Per-element area fraction inside ``region`` from sub-sampled quadrature indicators.

    Returns ``(fraction, nodes, weights)`` where ``nodes``/``weights`` are the
    physical sample points ``(T, Q, 2)`` and their in-region weights.
    """
    nodes_b, w = _subdivided_rule(quad_order, subdiv)
    verts = mesh.points[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", nodes_b, verts)
    inside = region.contains(pts[..., 0], pts[..., 1])
    wq = np.where(inside, w, 0.0)
    return wq.sum(axis=1), pts, wq


def _gl_panels(a: float, b: float, n: int = 16, ratio: float = 2.0, floor: float = 0.0):
    """Gauss-Legendre nodes/weights in ``rho`` on geometric panels covering ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    edges = [b]
    lo = max(a, floor)
    while edges[-1] / ratio > lo and len(edges) < 200:
        edges.append(edges[-1] / ratio)
    edges.append(lo)
    edges = np.array(edges[::-1])
    nodes, weights = [], []
    for lo_, hi_ in zip(edges[:-1], edges[1:]):
        if hi_ <= lo_:
            continue
        nodes.append(0.5 * (hi_ - lo_) * x + 0.5 * (hi_ + lo_))
        weights.append(0.5 * (hi_ - lo_) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def polar_integral(fn: Callable, center, r_in: float, r_out: float, n_theta: int = 256,
                   n_gauss: int = 16) -> float:
    """``int fn dx`` over an annulus/ball with geometric radial panels.

    Geometric panels resolve power-law singularities at the center; the
    innermost disk of radius ``1e-12 * r_out`` is dropped when ``r_in == 0``.
    """
    rho, wr = _gl_panels(r_in, r_out, n_gauss, floor=1e-12 * r_out if r_in == 0 else 0.0)
    theta = 2.0 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    R, T = np.meshgrid(rho, theta, indexing="ij")
    vals = fn(center[0] + R * np.cos(T), center[1] + R * np.sin(T))
    return float(np.sum(vals * (wr * rho)[:, None]) * (2.0 * np.pi / n_theta))


def _grad_fn(source, mu=None):
    if source is None:
        return OracleSolution(mu).grad
    if isinstance(source, OracleSolution):
        return source.grad
    return source


def lp_norm_gradient(source, region, p: float, quad_order: int = 6) -> float:
    """``(int_region |grad u|^p)^(1/p)``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return lp_integral(source, region, p, quad_order) ** (1.0 / p)


def lp_integral(source, region, p: float, quad_order: int = 6) -> float:
    if isinstance(source, FemSolution):
        frac, _, _ = element_region_weights(source.mesh, region, quad_order)
        if not frac.any():
            raise EmptyRegionError("no quadrature point inside the region")
        g = np.linalg.norm(source.element_gradients(), axis=1)
        return float(np.sum(frac * source.mesh.areas * g ** p))
    grad = _grad_fn(source)

    def integrand(x, y):
        gv = grad(x, y)
        return np.hypot(gv[..., 0], gv[..., 1]) ** p

    return polar_integral(integrand, region.center, region.inner, region.outer)


# -- annulus series and exponent fits -----------------------------------------

@dataclass(frozen=True)
class AnnulusSeries:
    p: float
    radii: np.ndarray
    values: np.ndarray

    def increments(self) -> np.ndarray:
        """Shell integrals over ``B_{radii[k-1]} \\ B_{radii[k]}`` for ``k >= 1``."""
        return np.diff(self.values)


def annulus_scan(grad_source, mu: float | None, p: float, radii: Sequence[float],
                 quad_order: int = 6) -> AnnulusSeries:
    """``values[k] = int over B_{1/2} \\ B_{radii[k]} of |grad u|^p``.

    ``grad_source`` may be ``None`` (the exact solution for ``mu``), a gradient
    callable, or a :class:`FemSolution`.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0) or radii[0] >= 0.5 or radii[-1] <= 0:
        raise ValueError("radii must be strictly decreasing inside (0, 1/2)")
    if isinstance(grad_source, FemSolution):
        values = np.array([lp_integral(grad_source, Annulus(r, 0.5), p, quad_order) for r in radii])
    else:
        grad = _grad_fn(grad_source, mu)

        def integrand(x, y):
            gv = grad(x, y)
            return np.hypot(gv[..., 0], gv[..., 1]) ** p

        edges = np.concatenate([[0.5], radii])
        shells = [polar_integral(integrand, (0.0, 0.0), lo, hi)
                  for hi, lo in zip(edges[:-1], edges[1:])]
        values = np.cumsum(shells)
    return AnnulusSeries(float(p), radii, values)


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    r2: float
    n_points: int


def fit_exponent(radii, tail_values, min_decades: float = 2.0) -> ExponentFit:
    """Least-squares slope of ``log(tail)`` against ``log(r)``."""
    r = np.asarray(radii, dtype=float)
    v = np.asarray(tail_values, dtype=float)
    if len(r) != len(v) or len(r) < 4:
        raise DegenerateFitError("need at least 4 (radius, value) pairs")
    if np.any(r <= 0) or np.any(v <= 0):
        raise DegenerateFitError("radii and values must be positive")
    span = math.log10(r.max() / r.min())
    if span < min_decades - 1e-12:
        raise DegenerateFitError(f"radii span {span:.2f} decades, need {min_decades}")
    lx, ly = np.log(r), np.log(v)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    ss_res = np.sum(resid ** 2)
    r2 = 1.0 if ss_tot <= 1e-30 else max(0.0, 1.0 - ss_res / ss_tot)
    return ExponentFit(float(slope), float(intercept), float(r2), len(r))


def dyadic_radii(k_min: int = 2, k_max: int = 12) -> np.ndarray:
    return 2.0 ** -np.arange(k_min, k_max + 1, dtype=float)


def scaling_slope(grad_source, mu, p: float, radii=None, quad_order: int = 6) -> ExponentFit:
    """Fit the shell integrals of ``|grad u|^p`` against their inner radius.

    For ``|grad u| ~ r^(mu-1)`` and dyadic shells the shell integral scales as
    ``r^((mu-1) p + 2)``; a slope ``<= 0`` means the integral over ``B_{1/2}``
    diverges.
    """
    radii = dyadic_radii() if radii is None else np.asarray(radii, dtype=float)
    series = annulus_scan(grad_source, mu, p, radii, quad_order)
    return fit_exponent(radii[1:], series.increments())


def integrability_threshold(grad_source, mu, p_grid: Sequence[float], radii=None,
                            quad_order: int = 6) -> float:
    """Smallest grid ``p`` whose fitted scaling slope is ``<= 0.05`` (``inf`` if none)."""
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any(np.diff(p_grid) <= 0):
        raise ValueError("p_grid must be increasing")
    for p in p_grid:
        if scaling_slope(grad_source, mu, p, radii, quad_order).slope <= DIVERGENCE_SLOPE:
            return float(p)
    return math.inf


def holder_exponent(u_source, scales: Sequence[float], n_angles: int = 64,
                    min_decades: float = 1.0) -> float:
    """Slope of ``M(r) = max_{|x| = r} |u(x) - u(0)|`` against ``r`` in log-log."""
    scales = np.asarray(scales, dtype=float)
    if np.any(np.diff(scales) >= 0) or scales[0] >= 0.5 or scales[-1] <= 0:
        raise ValueError("scales must be strictly decreasing inside (0, 1/2)")
    u = u_source.u if isinstance(u_source, OracleSolution) else u_source
    theta = 2.0 * np.pi * np.arange(n_angles) / n_angles
    u0 = float(np.asarray(u(np.array(0.0), np.array(0.0))))
    X = scales[:, None] * np.cos(theta)
    Y = scales[:, None] * np.sin(theta)
    M = np.nanmax(np.abs(np.asarray(u(X, Y)) - u0), axis=1)
    return fit_exponent(scales, M, min_decades=min_decades).slope


# -- energy and Caccioppoli ratios --------------------------------------------

def _field_sq_integral(mesh, F, quad_order: int = 6) -> float:
    pts, w = quadrature_points(mesh, quad_order)
    vals = np.broadcast_to(np.asarray(F(pts[..., 0], pts[..., 1]), dtype=float), pts.shape)
    return float(np.sum(w * mesh.areas[:, None] * np.sum(vals ** 2, axis=-1)))


def energy_ratio(sol: FemSolution, F: Callable) -> float:
    """``||grad u_h||^2 / ||F||^2`` over the mesh."""
    f2 = _field_sq_integral(sol.mesh, F)
    if f2 == 0.0:
        raise ValueError("zero right-hand side")
    g = sol.element_gradients()
    return float(np.sum(sol.mesh.areas * np.sum(g ** 2, axis=1)) / f2)


@lru_cache(maxsize=16)
def example_bmo_lower_bound(mu: float, grid: int = 21, radii_min_exp: int = 6,
                            quad_n: int = 64) -> float:
    from .coeff import eval_example_d

    centers, radii = default_bmo_sampling(grid, radii_min_exp)
    return bmo_seminorm(lambda x, y: eval_example_d(x, y, mu), centers, radii, quad_n).value


def _ball_inside_domain(mesh, center, r) -> bool:
    cx, cy = center
    if mesh.domain == "disk":
        return math.hypot(cx, cy) + r <= 1.0
    if mesh.domain == "annulus":
        d = math.hypot(cx, cy)
        return d + r <= 1.0 and d - r >= mesh.inner_radius
    x0, x1, y0, y1 = mesh.bounds
    return cx - r >= x0 and cx + r <= x1 and cy - r >= y0 and cy + r <= y1


def caccioppoli_ratio(sol: FemSolution, x0, r: float, s: float, F: Callable | None = None,
                      d_bmo: float | None = None, quad_order: int = 6) -> float:
    """Left side over the bracket of the Caccioppoli inequality with exponent ``s``.

    ``u_hat = u - mean_{B_r} u`` if ``B_r(x0)`` lies in the domain, else ``u``.
    ``d_bmo`` defaults to the sampled lower bound of the skew part's seminorm.
    """
    if not 1.0 < s < 2.0:
        raise ValueError("s must lie in (1, 2)")
    mesh = sol.mesh
    inner = Ball(tuple(x0), r)
    outer = Ball(tuple(x0), 1.5 * r)
    frac_in, _, _ = element_region_weights(mesh, inner, quad_order)
    if np.count_nonzero(frac_in) < 10:
        raise RegionTooSmallError("fewer than 10 elements intersect the ball")

    g = sol.element_gradients()
    lhs = float(np.sum(frac_in * mesh.areas * np.sum(g ** 2, axis=1)))

    nodes_b, _ = _subdivided_rule(quad_order, 2)
    u_q = sol.coeffs[mesh.triangles] @ nodes_b.T  # (T, Q)
    _, _, w_in = element_region_weights(mesh, inner, quad_order)
    _, pts, w_out = element_region_weights(mesh, outer, quad_order)
    area = mesh.areas[:, None]
    if _ball_inside_domain(mesh, x0, r):
        mean = float(np.sum(w_in * area * u_q) / np.sum(w_in * area))
    else:
        mean = 0.0
    u_hat = u_q - mean

    q = 2.0 * s / (2.0 - s)
    s_conj = s / (s - 1.0)
    n = 2
    if d_bmo is None:
        d_bmo = example_bmo_lower_bound(sol.field.mu) if sol.field.kind == "example" else 0.0
    u_term = float(np.sum(w_out * area * np.abs(u_hat) ** q)) ** ((2.0 - s) / s)
    bracket = r ** (2.0 * n / s_conj - 2.0) * (d_bmo ** 2 + 1.0) * u_term
    if F is not None:
        Fv = np.broadcast_to(np.asarray(F(pts[..., 0], pts[..., 1]), dtype=float), pts.shape)
        bracket += float(np.sum(w_out * area * np.sum(Fv ** 2, axis=-1)))
    if bracket == 0.0:
        return 0.0 if lhs == 0.0 else math.inf
    return lhs / bracket


# -- reverse Hölder scan ------------------------------------------------------

@dataclass(frozen=True)
class RHScanResult:
    p_grid: np.ndarray
    max_ratio: np.ndarray
    p_star: float
    argmax_center: np.ndarray
    argmax_radius: np.ndarray


def _ball_samples(fn, center, radius, offsets, weights):
    x = center[0] + radius * offsets[:, 0]
    y = center[1] + radius * offsets[:, 1]
    vals = np.asarray(fn(x, y), dtype=float)
    ok = np.isfinite(vals)
    if ok.mean() < 0.999:
        raise EmptyRegionError(f"samples undefined on ball {center}, r={radius}")
    return np.where(ok, vals, 0.0), np.where(ok, weights, 0.0)


def ball_ratios(g: Callable, f: Callable | None, center, radius, p_grid, quad_n: int = 64):
    """Reverse-Hölder ratio on one ball for every ``p`` in ``p_grid``."""
    from .coeff import polar_ball_grid

    offsets, w = polar_ball_grid(quad_n)
    p_grid = np.asarray(p_grid, dtype=float)
    gi, wi = _ball_samples(g, center, radius, offsets, w)
    go, wo = _ball_samples(g, center, 2.0 * radius, offsets, w)
    wi, wo = wi / wi.sum(), wo / wo.sum()
    # Scale by the max before powering to avoid overflow for large p.
    gmax = max(gi.max(), go.max(), 1e-300)
    num = np.array([(wi @ (gi / gmax) ** p) ** (1.0 / p) for p in p_grid]) * gmax
    den = np.full(len(p_grid), math.sqrt(wo @ go ** 2))
    if f is not None:
        fo, wf = _ball_samples(f, center, 2.0 * radius, offsets, w)
        wf = wf / wf.sum()
        fmax = max(fo.max(), 1e-300)
        den = den + np.array([(wf @ (fo / fmax) ** p) ** (1.0 / p) for p in p_grid]) * fmax
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))


def reverse_holder_scan(g: Callable, f: Callable | None, centers, radii, p_grid,
                        quad_n: int = 64, domain_radius: float | None = 1.0) -> RHScanResult:
    """Max over balls of ``(avg_{B_r} g^p)^(1/p) / [(avg_{B_2r} g^2)^(1/2) + (avg_{B_2r} f^p)^(1/p)]``.

    ``p_star`` is the largest grid ``p`` such that the max ratio stays below ten
    times its value at ``p = 2`` for every grid exponent up to ``p``.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any(np.diff(p_grid) <= 0):
        raise ValueError("p_grid must be increasing")
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    best = np.full(len(p_grid), -np.inf)
    arg_c = np.zeros((len(p_grid), 2))
    arg_r = np.zeros(len(p_grid))
    for c in centers:
        for r in radii:
            if domain_radius is not None and math.hypot(*c) + 2.0 * r > domain_radius + 1e-12:
                raise ValueError(f"doubled ball at {tuple(c)} with r={r} leaves the domain")
            ratio = ball_ratios(g, f, c, r, p_grid, quad_n)
            upd = ratio > best
            best[upd] = ratio[upd]
            arg_c[upd] = c
            arg_r[upd] = r
    base_idx = int(np.argmin(np.abs(p_grid - 2.0)))
    ok = best < 10.0 * best[base_idx]
    p_star = float(p_grid[0])
    for p, good in zip(p_grid, ok):
        if not good:
            break
        p_star = float(p)
    return RHScanResult(p_grid, best, p_star, arg_c, arg_r)
