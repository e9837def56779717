import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from meyers_lab.coeff import (CoefficientField, EvaluationError, OracleSolution, bmo_seminorm,
                              check_ellipticity, d_sup_norm, default_bmo_sampling,
                              eval_example_d, eval_matrix_A, eval_oracle)

mus = st.floats(0.05, 0.95)


def test_d_values():
    assert eval_example_d(1.0, 0.0, 0.3) == 0.0
    assert eval_example_d(0.0, 1.0, 0.5) == pytest.approx(-3 * math.pi / 4, abs=1e-15)
    assert math.isnan(eval_example_d(0.0, 0.0, 0.5))


def test_d_sup_norm_sampled():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-1, 1, (2, 10 ** 6))
    mu = 0.5
    assert np.abs(eval_example_d(x, y, mu)).max() == pytest.approx(d_sup_norm(mu), abs=1e-3)
    assert np.abs(eval_example_d(x, y, mu)).max() <= d_sup_norm(mu)


@settings(max_examples=30, deadline=None)
@given(mus, st.floats(-2, 2), st.floats(-2, 2))
def test_d_odd_in_y(mu, x, y):
    if x == 0 and y == 0:
        return
    assert eval_example_d(x, -y, mu) == -eval_example_d(x, y, mu)


def test_matrix_A():
    f = CoefficientField.example(0.5)
    np.testing.assert_array_equal(eval_matrix_A(f, 1.0, 0.0), np.eye(2))
    np.testing.assert_array_equal(CoefficientField.identity().A(0.3, -0.2), np.eye(2))


@settings(max_examples=30, deadline=None)
@given(mus, st.integers(0, 2 ** 31))
def test_quadratic_form_is_euclidean(mu, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (2, 50))
    xi = rng.standard_normal((50, 2))
    A = eval_matrix_A(CoefficientField.example(mu), x, y)
    q = np.einsum("ni,nij,nj->n", xi, A, xi)
    np.testing.assert_allclose(q, np.sum(xi ** 2, axis=1), rtol=1e-13, atol=1e-13)


def test_ellipticity_checks():
    assert check_ellipticity(CoefficientField.example(0.4))
    sym = lambda x, y: np.broadcast_to([[2.0, 0.5], [0.5, 1.0]], np.shape(x) + (2, 2))  # noqa: E731
    assert check_ellipticity(CoefficientField.custom(sym, None, 0.4))
    assert not check_ellipticity(CoefficientField.custom(sym, None, 0.9))


def test_oracle_polar_form():
    rng = np.random.default_rng(1)
    for mu in (0.25, 0.5, 0.75):
        r = rng.uniform(0.01, 1, 100)
        t = rng.uniform(-np.pi, np.pi, 100)
        x, y = r * np.cos(t), r * np.sin(t)
        u, g = eval_oracle(x, y, mu)
        np.testing.assert_allclose(u, r ** mu * np.cos(t), rtol=1e-12, atol=1e-12)
        g2 = r ** (2 * mu - 2) * (mu ** 2 * np.cos(t) ** 2 + np.sin(t) ** 2)
        np.testing.assert_allclose(np.sum(g ** 2, axis=1), g2, rtol=1e-10)


def test_oracle_values():
    assert eval_oracle(1.0, 0.0, 0.3)[0] == 1.0
    assert eval_oracle(0.0, 0.7, 0.3)[0] == 0.0
    assert OracleSolution(0.5).u(0.0, 0.0) == 0.0
    assert np.isnan(eval_oracle(0.0, 0.0, 0.5)[1]).all()


def test_oracle_gradient_finite_differences():
    rng = np.random.default_rng(2)
    for mu in (0.25, 0.5, 0.75):
        for _ in range(20):
            r, t = rng.uniform(0.05, 1), rng.uniform(-np.pi, np.pi)
            x, y = r * np.cos(t), r * np.sin(t)
            h = 1e-6 * r
            fd = np.array([
                (eval_oracle(x + h, y, mu)[0] - eval_oracle(x - h, y, mu)[0]) / (2 * h),
                (eval_oracle(x, y + h, mu)[0] - eval_oracle(x, y - h, mu)[0]) / (2 * h),
            ])
            g = eval_oracle(x, y, mu)[1]
            expected = r ** (mu - 1) * math.sqrt(mu ** 2 * math.cos(t) ** 2 + math.sin(t) ** 2)
            assert np.linalg.norm(g) == pytest.approx(expected, rel=1e-10)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * r ** (mu - 1))


def test_bmo_constant_is_zero():
    c, r = default_bmo_sampling(5, 3)
    est = bmo_seminorm(lambda x, y: np.full(np.shape(x), 3.7), c, r, 64)
    assert est.value == 0.0
    assert est.n_balls == 25 * 4
    assert est.quadrature_points_per_ball == 64 * 64


def test_bmo_linear_field_matches_brute_force():
    rho = 1.0
    num, _ = integrate.dblquad(lambda y, x: abs(x), -rho, rho,
                               lambda x: -math.sqrt(rho ** 2 - x ** 2),
                               lambda x: math.sqrt(rho ** 2 - x ** 2), epsabs=1e-12)
    brute = num / (math.pi * rho ** 2)
    assert brute == pytest.approx(4 * rho / (3 * math.pi), rel=1e-9)
    est = bmo_seminorm(lambda x, y: x, [(0.4, -0.2)], [rho], 64)
    assert est.value == pytest.approx(brute, abs=1e-3)


def test_bmo_example_bounds():
    mu = 0.5
    c, r = default_bmo_sampling(21, 6)
    est = bmo_seminorm(lambda x, y: eval_example_d(x, y, mu), c, r, 64)
    assert 0 < est.value <= 3 * math.pi / 2
    # A ball centered on the y-axis straddles the jump.
    touching = bmo_seminorm(lambda x, y: eval_example_d(x, y, mu), [(0.0, 0.5)], [0.25], 64)
    assert touching.value > 0.5


def test_bmo_homogeneity_and_shift():
    mu = 0.5
    c, r = default_bmo_sampling(7, 3)

    def d(x, y):
        return eval_example_d(x, y, mu)

    base = bmo_seminorm(d, c, r, 64).value
    for alpha in (-2.5, 0.3, 7.0):
        scaled = bmo_seminorm(lambda x, y: alpha * d(x, y), c, r, 64).value
        assert scaled == pytest.approx(abs(alpha) * base, rel=1e-12)
    shifted = bmo_seminorm(lambda x, y: d(x, y) + 11.0, c, r, 64).value
    assert abs(shifted - base) <= 1e-12


def test_bmo_monotone_in_samples():
    c, r = default_bmo_sampling(9, 4)
    d = lambda x, y: eval_example_d(x, y, 0.3)  # noqa: E731
    small = bmo_seminorm(d, c[::2], r[:2], 64).value
    big = bmo_seminorm(d, c, r, 64).value
    assert big >= small


def test_bmo_rejects_bad_input():
    with pytest.raises(ValueError):
        bmo_seminorm(lambda x, y: x, [(0, 0)], [1.0], 32)
    with pytest.raises(EvaluationError):
        bmo_seminorm(lambda x, y: np.where(x > 0, np.nan, x), [(0, 0)], [1.0], 64)


def test_bmo_independent_of_threads(monkeypatch):
    c, r = default_bmo_sampling(9, 3)
    d = lambda x, y: eval_example_d(x, y, 0.6)  # noqa: E731
    monkeypatch.setenv("MEYERS_THREADS", "1")
    a = bmo_seminorm(d, c, r, 64, chunk=7)
    monkeypatch.setenv("MEYERS_THREADS", "3")
    b = bmo_seminorm(d, c, r, 64, chunk=7)
    assert a == b
