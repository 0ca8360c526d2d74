"""Kernel tests: every contract is checked against an independent oracle."""

import math

import numpy as np
import pytest

from ncspower import (
    NoConvergence,
    NonDiagonalizable,
    eigendecompose,
    lambert_w0,
    matrix_exponential,
    noise_covariance,
    solve_dare,
)
from ncspower.numerics import drift_integral, lambert_w0_complex


def expm_series_oracle(a, t, terms=60):
    """Plain truncated Taylor series; scale/square only to keep it convergent."""
    m = np.asarray(a, dtype=float) * t
    k = 0
    while np.linalg.norm(m, 1) > 1.0:
        m = m / 2.0
        k += 1
    out = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for i in range(1, terms):
        term = term @ m / i
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


class TestMatrixExponential:
    def test_zero_matrix(self):
        assert np.allclose(matrix_exponential(np.zeros((1, 1)), 1.0), [[1.0]])

    def test_scalar_decay(self):
        got = matrix_exponential(np.array([[-3.0]]), 0.05)
        want = expm_series_oracle(np.array([[-3.0]]), 0.05, terms=20)
        assert abs(got[0, 0] - want[0, 0]) <= 1e-12
        assert abs(got[0, 0] - 0.860708) < 1e-6

    def test_identity(self):
        got = matrix_exponential(np.eye(2), 1.0)
        assert np.allclose(got, math.e * np.eye(2), rtol=1e-12)

    def test_matches_series_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            d = rng.integers(1, 5)
            a = rng.normal(size=(d, d))
            t = rng.uniform(0.01, 2.0)
            got = matrix_exponential(a, t)
            want = expm_series_oracle(a, t)
            assert np.linalg.norm(got - want) <= 1e-12 * max(1.0, np.linalg.norm(want))

    def test_semigroup(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            d = rng.integers(1, 5)
            a = rng.normal(size=(d, d)) - 2.0 * np.eye(d)
            t1, t2 = rng.uniform(0.05, 1.0, size=2)
            lhs = matrix_exponential(a, t1) @ matrix_exponential(a, t2)
            rhs = matrix_exponential(a, t1 + t2)
            assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(rhs))

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            matrix_exponential(np.ones((2, 3)), 1.0)


class TestEigendecompose:
    def test_diagonal(self):
        eig = eigendecompose(np.diag([-1.0, -2.0]))
        assert np.allclose(sorted(eig.mu.real), [-2.0, -1.0])
        assert np.allclose(eig.mu.imag, 0.0)

    def test_companion(self):
        eig = eigendecompose(np.array([[0.0, 1.0], [-2.0, -3.0]]))
        assert np.allclose(sorted(eig.mu.real), [-2.0, -1.0], atol=1e-12)

    def test_benchmark_drift(self):
        # trace -5, det 10 -> -2.5 +- i sqrt(15)/2
        eig = eigendecompose(np.array([[-1.0, -2.0], [3.0, -4.0]]))
        want = math.sqrt(15.0) / 2.0
        assert np.allclose(eig.mu.real, [-2.5, -2.5])
        assert np.allclose(sorted(eig.mu.imag), [-want, want])
        assert abs(want - 1.936492) < 1e-6

    def test_reconstruction_property(self):
        rng = np.random.default_rng(11)
        done = 0
        while done < 100:
            d = rng.integers(1, 5)
            a = rng.normal(size=(d, d))
            try:
                eig = eigendecompose(a)
            except NonDiagonalizable:
                continue
            done += 1
            err = np.linalg.norm(eig.reconstruct().real - a)
            assert err <= 1e-10 * max(1.0, np.linalg.norm(a))

    def test_defective_rejected(self):
        with pytest.raises(NonDiagonalizable):
            eigendecompose(np.array([[1.0, 1.0], [0.0, 1.0]]))  # Jordan block


def dare_residual(p, f, g, d, w):
    gpg = g.T @ p @ g + d
    rhs = f.T @ p @ f - f.T @ p @ g @ np.linalg.solve(gpg, g.T @ p @ f) + w
    return np.linalg.norm(p - rhs)


class TestSolveDare:
    def test_memoryless(self):
        p = solve_dare(np.array([[0.0]]), np.array([[1.0]]),
                       np.array([[1.0]]), np.array([[1.0]]))
        assert np.allclose(p, [[1.0]])

    def test_scalar_quadratic_root(self):
        # P^2 - 0.25 P - 1 = 0, positive root
        p = solve_dare(np.array([[0.5]]), np.array([[1.0]]),
                       np.array([[1.0]]), np.array([[1.0]]))
        want = (0.25 + math.sqrt(0.25**2 + 4.0)) / 2.0
        assert abs(p[0, 0] - want) < 1e-10
        assert abs(p[0, 0] - 1.132782) < 1e-6

    def test_zero_cost(self):
        p = solve_dare(np.array([[0.5]]), np.array([[0.0]]),
                       np.array([[1.0]]), np.array([[0.0]]))
        assert np.allclose(p, 0.0)

    def test_residual_on_random_systems(self):
        rng = np.random.default_rng(5)
        done = 0
        while done < 100:
            d = rng.integers(1, 5)
            m = rng.integers(1, 3)
            f = rng.normal(size=(d, d)) * 0.9
            g = rng.normal(size=(d, m))
            ctrb = np.hstack([np.linalg.matrix_power(f, k) @ g for k in range(d)])
            if np.linalg.matrix_rank(ctrb) < d:
                continue
            w_half = rng.normal(size=(d, d))
            w = w_half @ w_half.T
            dmat = np.eye(m)
            try:
                p = solve_dare(f, g, dmat, w)
            except NoConvergence:
                continue
            done += 1
            assert dare_residual(p, f, g, dmat, w) <= 1e-10 * (1.0 + np.linalg.norm(p))
            assert np.allclose(p, p.T)
            assert np.all(np.linalg.eigvalsh(p) >= -1e-10)


def lambert_bisection_oracle(x, lo=-1.0, hi=700.0):
    f = lambda w: w * math.exp(w) - x
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class TestLambertW:
    def test_zero(self):
        assert lambert_w0(0.0) == 0.0

    def test_at_e(self):
        assert abs(lambert_w0(math.e) - 1.0) < 1e-14

    def test_at_one(self):
        want = lambert_bisection_oracle(1.0)
        assert abs(lambert_w0(1.0) - want) < 1e-9
        assert abs(lambert_w0(1.0) - 0.567143) < 1e-6

    def test_roundtrip_grid(self):
        xs = np.concatenate([
            [-1.0 / math.e + 1e-6],
            -np.logspace(-6, np.log10(1 / math.e - 1e-6), 40),
            np.logspace(-6, 6, 60),
        ])
        for x in xs:
            w = lambert_w0(float(x))
            assert w >= -1.0 - 1e-12
            assert abs(w * math.exp(w) - x) <= 1e-12 * (1.0 + abs(x))

    def test_domain_error(self):
        with pytest.raises(ValueError):
            lambert_w0(-0.5)

    def test_complex_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            z = complex(rng.uniform(-0.2, 3.0), rng.uniform(-2.0, 2.0))
            w = lambert_w0_complex(z)
            assert abs(w * np.exp(w) - z) <= 1e-12 * (1.0 + abs(z))


def simpson_covariance_oracle(f_tilde, w_tilde, tau, panels=10_000):
    if panels % 2:
        panels += 1
    s = np.linspace(0.0, tau, panels + 1)
    weights = np.ones(panels + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (tau / panels) / 3.0
    acc = np.zeros_like(np.atleast_2d(w_tilde), dtype=float)
    for wgt, si in zip(weights, s):
        e = expm_series_oracle(f_tilde, si)
        acc = acc + wgt * (e @ w_tilde @ e.T)
    return acc


class TestNoiseCovariance:
    def test_static_integrand(self):
        got = noise_covariance(np.array([[0.0]]), np.array([[1.0]]), 0.05)
        assert abs(got[0, 0] - 0.05) < 1e-14

    def test_scalar_closed_form(self):
        got = noise_covariance(np.array([[-3.0]]), np.array([[1.0]]), 0.05)
        want = (1.0 - math.exp(-0.3)) / 6.0
        assert abs(got[0, 0] - want) < 1e-12
        assert abs(got[0, 0] - 0.043197) < 1e-6

    def test_zero_noise(self):
        got = noise_covariance(np.array([[-1.0, 0.5], [0.0, -2.0]]),
                               np.zeros((2, 2)), 0.1)
        assert np.allclose(got, 0.0)

    def test_matches_quadrature_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            d = rng.integers(1, 4)
            f = rng.normal(size=(d, d))
            w_half = rng.normal(size=(d, d))
            w = w_half @ w_half.T
            tau = rng.uniform(0.01, 0.5)
            got = noise_covariance(f, w, tau)
            want = simpson_covariance_oracle(f, w, tau)
            assert np.linalg.norm(got - want) <= 1e-8 * max(1.0, np.linalg.norm(want))
            assert np.allclose(got, got.T)
            assert np.all(np.linalg.eigvalsh(got) >= -1e-12)


class TestDriftIntegral:
    def test_singular_drift(self):
        # int_0^tau exp(0 s) ds = tau, no inverse needed
        got = drift_integral(np.zeros((2, 2)), 0.3)
        assert np.allclose(got, 0.3 * np.eye(2))

    def test_invertible_matches_closed_form(self):
        f = np.array([[-3.0]])
        got = drift_integral(f, 0.05)
        want = (matrix_exponential(f, 0.05) - np.eye(1)) / -3.0
        assert np.allclose(got, want, atol=1e-14)
