"""Coefficient fields ``A = a + d J`` with ``J = [[0, 1], [-1, 0]]``.

The example family has ``a = I`` and a bounded skew part that jumps across the
y-axis.  Its closed-form solution ``u = x (x^2 + y^2)^((mu - 1)/2)`` is exposed
as an oracle, together with a sampled estimator of the BMO seminorm.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np


class CoefficientError(ValueError):
    pass


class EvaluationError(RuntimeError):
    """A field could not be evaluated on enough quadrature nodes."""


def example_constant(mu: float) -> float:
    return (mu * mu - 1.0) / mu


def _check_mu(mu):
    if not 0.0 < mu < 1.0:
        raise CoefficientError(f"mu must lie in (0, 1), got {mu}")


def eval_example_d(x, y, mu: float):
    """Skew coefficient of the example family; NaN at the origin."""
    _check_mu(mu)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = example_constant(mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(x != 0.0, c * np.arctan(y / x), c * 0.5 * np.pi * np.sign(y))
    d = np.where((x == 0.0) & (y == 0.0), np.nan, d)
    return d if d.ndim else float(d)


def d_sup_norm(mu: float) -> float:
    """``pi (1 - mu^2) / (2 mu)``, the sup of ``|d|`` for the example family."""
    return np.pi * (1.0 - mu * mu) / (2.0 * mu)


@dataclass(frozen=True)
class CoefficientField:
    """Evaluator for ``a(x, y)`` (symmetric), ``d(x, y)`` (scalar) and ``A``.

    ``sym`` maps coordinate arrays of shape ``S`` to ``S + (2, 2)``;
    ``skew`` maps them to ``S``.
    """

    kind: str
    lam: float = 1.0
    mu: float | None = None
    sym: Callable | None = None
    skew: Callable | None = None

    @classmethod
    def identity(cls) -> "CoefficientField":
        return cls("identity", 1.0)

    @classmethod
    def example(cls, mu: float) -> "CoefficientField":
        _check_mu(mu)
        return cls("example", 1.0, float(mu))

    @classmethod
    def custom(cls, sym: Callable, skew: Callable | None, lam: float) -> "CoefficientField":
        if lam <= 0:
            raise CoefficientError("ellipticity constant must be positive")
        return cls("custom", float(lam), None, sym, skew)

    def a(self, x, y):
        x = np.asarray(x, dtype=float)
        if self.kind == "custom":
            return np.asarray(self.sym(x, np.asarray(y, dtype=float)), dtype=float)
        return np.broadcast_to(np.eye(2), x.shape + (2, 2))

    def d(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "example":
            return np.asarray(eval_example_d(x, y, self.mu))
        if self.kind == "custom" and self.skew is not None:
            return np.asarray(self.skew(x, y), dtype=float)
        return np.zeros(np.broadcast_shapes(x.shape, y.shape))

    @property
    def has_skew(self) -> bool:
        return self.kind == "example" or (self.kind == "custom" and self.skew is not None)

    def A(self, x, y):
        return eval_matrix_A(self, x, y)


def eval_matrix_A(field: CoefficientField, x, y):
    """Full coefficient matrix ``a + [[0, d], [-d, 0]]``; NaN entries where d is undefined."""
    a = np.array(field.a(x, y), dtype=float)
    d = field.d(x, y)
    a[..., 0, 1] += d
    a[..., 1, 0] -= d
    return a


def check_ellipticity(field: CoefficientField, n_samples: int = 1000, seed: int = 0) -> bool:
    """Randomized check of ``lam |xi|^2 <= <a xi, xi>`` and ``|a| <= 1/lam`` on the unit square [-1,1]^2."""
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (2, n_samples))
    a = field.a(x, y)
    if not np.array_equal(a[..., 0, 1], a[..., 1, 0]):
        return False
    eig = np.linalg.eigvalsh(a)
    return bool(eig.min() >= field.lam - 1e-14 and np.abs(eig).max() <= 1.0 / field.lam + 1e-14)


# -- closed-form solution of the example family --------------------------------

@dataclass(frozen=True)
class OracleSolution:
    mu: float

    def u(self, x, y):
        """Value of the solution, continuously extended by ``u(0, 0) = 0``."""
        u = eval_oracle(x, y, self.mu)[0]
        return np.where((np.asarray(x) == 0) & (np.asarray(y) == 0), 0.0, u)

    def grad(self, x, y):
        return eval_oracle(x, y, self.mu)[1]

    def grad_norm(self, x, y):
        g = self.grad(x, y)
        return np.hypot(g[..., 0], g[..., 1])


def eval_oracle(x, y, mu: float):
    """Value and gradient of ``u = x (x^2 + y^2)^((mu-1)/2)``; NaN at the origin."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = x * x + y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(r2 > 0, r2 ** ((mu - 1.0) / 2.0), np.nan)
        t = np.where(r2 > 0, (mu - 1.0) * s / r2, np.nan)
    u = x * s
    grad = np.stack([s + t * x * x, t * x * y], axis=-1)
    return u, grad


def oracle_grad_sq_polar(r, theta, mu: float):
    """``|grad u|^2 = r^(2mu-2) (mu^2 cos^2 + sin^2)``."""
    return r ** (2 * mu - 2) * (mu * mu * np.cos(theta) ** 2 + np.sin(theta) ** 2)


# -- BMO seminorm -------------------------------------------------------------

@dataclass(frozen=True)
class BmoEstimate:
    """Largest sampled mean oscillation; a lower bound for the seminorm."""

    value: float
    n_centers: int
    n_scales: int
    quadrature_points_per_ball: int
    argmax_center: tuple = (0.0, 0.0)
    argmax_radius: float = 0.0

    @property
    def n_balls(self) -> int:
        return self.n_centers * self.n_scales


def polar_ball_grid(n: int):
    """Midpoint polar rule on the unit disk: offsets ``(n*n, 2)`` and weights summing to ``pi``."""
    rho = (np.arange(n) + 0.5) / n
    theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    R, T = np.meshgrid(rho, theta, indexing="ij")
    offsets = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    weights = (R * (1.0 / n) * (2.0 * np.pi / n)).ravel()
    return offsets, weights


def worker_count() -> int:
    env = os.environ.get("MEYERS_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(4, os.cpu_count() or 1))


def ball_mean_oscillations(f, centers, radius, quad_n: int):
    """Mean oscillation of ``f`` over ``B_radius(c)`` for every center."""
    offsets, w = polar_ball_grid(quad_n)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    px = centers[:, None, 0] + radius * offsets[None, :, 0]
    py = centers[:, None, 1] + radius * offsets[None, :, 1]
    vals = np.asarray(f(px, py), dtype=float)
    ok = np.isfinite(vals)
    bad_frac = 1.0 - ok.mean(axis=1)
    if np.any(bad_frac > 1e-3):
        raise EvaluationError("field undefined on more than 0.1% of a ball's quadrature nodes")
    wb = np.where(ok, w, 0.0)
    vals = np.where(ok, vals, 0.0)
    wsum = wb.sum(axis=1)
    mean = (wb * vals).sum(axis=1) / wsum
    return (wb * np.abs(vals - mean[:, None])).sum(axis=1) / wsum


def bmo_seminorm(field: Callable, centers, radii, quad_n: int = 64,
                 chunk: int = 64) -> BmoEstimate:
    """Max over sampled balls of ``(1/|B|) int_B |f - mean_B f|``.

    Each ball uses the midpoint polar rule with ``quad_n**2`` nodes.  The result
    does not depend on the worker count: per-ball values are computed
    independently and reduced with a first-index argmax.
    """
    if quad_n < 64:
        raise ValueError("quad_n must be at least 64")
    radii = [float(r) for r in radii]
    if not radii or min(radii) <= 0:
        raise ValueError("radii must be positive")
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)

    jobs = [(ri, s) for ri in range(len(radii)) for s in range(0, len(centers), chunk)]

    def run(job):
        ri, s = job
        return ball_mean_oscillations(field, centers[s:s + chunk], radii[ri], quad_n)

    with ThreadPoolExecutor(worker_count()) as pool:
        parts = list(pool.map(run, jobs))
    table = np.empty((len(radii), len(centers)))
    for (ri, s), vals in zip(jobs, parts):
        table[ri, s:s + chunk] = vals
    flat = int(np.argmax(table))
    ri, ci = divmod(flat, len(centers))
    return BmoEstimate(
        value=float(table[ri, ci]),
        n_centers=len(centers),
        n_scales=len(radii),
        quadrature_points_per_ball=quad_n * quad_n,
        argmax_center=(float(centers[ci, 0]), float(centers[ci, 1])),
        argmax_radius=radii[ri],
    )


def default_bmo_sampling(grid: int = 21, radii_min_exp: int = 6):
    """Centers on a ``grid x grid`` lattice of ``[-1, 1]^2`` and radii ``2^0 .. 2^-k``."""
    g = np.linspace(-1.0, 1.0, grid)
    X, Y = np.meshgrid(g, g, indexing="ij")
    centers = np.column_stack([X.ravel(), Y.ravel()])
    radii = [2.0 ** -k for k in range(radii_min_exp + 1)]
    return centers, radii
