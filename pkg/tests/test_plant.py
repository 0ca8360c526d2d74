import math

import numpy as np
import pytest

from ncspower import ContinuousPlant, discretize, sample_disturbance, step_plant, whiten
from ncspower.numerics import matrix_exponential
from ncspower.plant import SampledPlant, get_sampler


def scalar_plant(f=-3.0, g=1.0, w=1.0, wmax=1.0):
    return ContinuousPlant(f_tilde=[[f]], g_tilde=[[g]], w_tilde=[[w]],
                           w_tilde_max=wmax, x0=[0.0])


BENCH = ContinuousPlant(
    f_tilde=[[-1.0, -2.0], [3.0, -4.0]],
    g_tilde=[[2.0, 0.0], [0.0, 1.0]],
    w_tilde=[[1.0, 0.0], [0.0, 1.0]],
    w_tilde_max=1.0,
    x0=[0.0, 0.0],
)


class TestDiscretize:
    def test_scalar_closed_forms(self):
        p = discretize(scalar_plant(), 0.05)
        assert abs(p.F[0, 0] - math.exp(-0.15)) < 1e-12
        assert abs(p.G[0, 0] - (math.exp(-0.15) - 1.0) / -3.0) < 1e-12
        assert abs(p.W[0, 0] - (1.0 - math.exp(-0.3)) / 6.0) < 1e-12
        assert abs(p.F[0, 0] - 0.860708) < 1e-6
        assert abs(p.G[0, 0] - 0.046431) < 1e-6
        assert abs(p.W[0, 0] - 0.043197) < 1e-6

    def test_short_slot_limit(self):
        p = discretize(scalar_plant(), 1e-9)
        assert abs(p.F[0, 0] - 1.0) < 1e-8
        assert abs(p.G[0, 0] - 1e-9) < 1e-17

    def test_benchmark_config_matches_expm(self):
        tau = 0.05
        p = discretize(BENCH, tau)
        f_want = matrix_exponential(BENCH.f_tilde, tau)
        assert np.allclose(p.F, f_want, atol=1e-12)
        # w_max is the quantizer's O(tau) norm bound, scalar reduction:
        # for the scalar plant it equals int_0^tau exp(-3 s) ds
        ps = discretize(scalar_plant(), tau)
        want = (1.0 - math.exp(-0.15)) / 3.0
        assert abs(ps.w_max - want) < 1e-6

    def test_semigroup_in_f(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            f = rng.normal(size=(2, 2))
            plant = ContinuousPlant(f_tilde=f, g_tilde=np.eye(2), w_tilde=np.eye(2),
                                    w_tilde_max=1.0, x0=[0.0, 0.0])
            t1, t2 = rng.uniform(0.01, 0.4, size=2)
            lhs = discretize(plant, t1 + t2).F
            rhs = discretize(plant, t1).F @ discretize(plant, t2).F
            assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(lhs))


class TestWhiten:
    def test_diagonal_noise_untouched(self):
        got = whiten(BENCH)
        assert got is BENCH

    def test_correlated_noise(self):
        plant = ContinuousPlant(f_tilde=[[-1.0, 0.0], [0.0, -2.0]],
                                g_tilde=np.eye(2),
                                w_tilde=[[2.0, 1.0], [1.0, 2.0]],
                                w_tilde_max=1.0, x0=[0.0, 0.0])
        got = whiten(plant)
        assert np.allclose(got.w_tilde, np.diag([3.0, 1.0]), atol=1e-12)

    def test_zero_noise(self):
        plant = ContinuousPlant(f_tilde=[[-1.0, 0.5], [0.0, -2.0]],
                                g_tilde=np.eye(2), w_tilde=np.zeros((2, 2)),
                                w_tilde_max=1.0, x0=[0.0, 0.0])
        got = whiten(plant)
        assert np.allclose(got.w_tilde, 0.0)

    def test_preserves_drift_eigenvalues(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            f = rng.normal(size=(3, 3))
            w_half = rng.normal(size=(3, 3))
            plant = ContinuousPlant(f_tilde=f, g_tilde=np.eye(3),
                                    w_tilde=w_half @ w_half.T,
                                    w_tilde_max=1.0, x0=np.zeros(3))
            got = whiten(plant)
            want = np.sort_complex(np.linalg.eigvals(f))
            have = np.sort_complex(np.linalg.eigvals(got.f_tilde))
            assert np.allclose(want, have, atol=1e-10)


class TestDisturbance:
    def test_zero_covariance(self):
        plant = SampledPlant(F=np.eye(1), G=np.eye(1), W=np.zeros((1, 1)),
                             w_max=1.0, tau=0.05)
        rng = np.random.default_rng(0)
        assert np.allclose(sample_disturbance(plant, rng), 0.0)

    def test_moments_scalar(self):
        w_var = 0.043197
        plant = SampledPlant(F=np.eye(1), G=np.eye(1), W=np.array([[w_var]]),
                             w_max=1.0, tau=0.05)
        rng = np.random.default_rng(42)
        draws = get_sampler(plant.W, plant.w_max).draw(rng, 1_000_000)[:, 0]
        se_mean = math.sqrt(w_var / len(draws))
        assert abs(draws.mean()) < 3.0 * se_mean
        assert abs(draws.var() - w_var) / w_var < 0.02
        assert np.max(np.abs(draws)) <= 1.0

    def test_moments_matrix(self):
        w = np.array([[0.05, 0.01], [0.01, 0.04]])
        sampler = get_sampler(w, 1.2)
        rng = np.random.default_rng(1)
        draws = sampler.draw(rng, 1_000_000)
        emp = draws.T @ draws / len(draws)
        assert np.linalg.norm(emp - w) / np.linalg.norm(w) < 0.02
        assert np.max(np.linalg.norm(draws, axis=1)) <= 1.2

    def test_bound_always_respected_even_when_tight(self):
        # bound below the nominal sigma: covariance becomes best-effort but
        # the norm constraint must stay exact
        sampler = get_sampler(np.array([[0.04]]), 0.05)
        rng = np.random.default_rng(3)
        draws = sampler.draw(rng, 100_000)
        assert np.max(np.abs(draws)) <= 0.05
        assert not sampler.feasible


class TestStepPlant:
    def test_zero(self):
        plant = discretize(scalar_plant(), 0.05)
        got = step_plant(np.zeros(1), np.zeros(1), np.zeros(1), plant)
        assert np.allclose(got, 0.0)

    def test_free_decay(self):
        plant = discretize(scalar_plant(), 0.05)
        got = step_plant(np.array([1.0]), np.zeros(1), np.zeros(1), plant)
        assert abs(got[0] - 0.860708) < 1e-6

    def test_forced(self):
        plant = discretize(scalar_plant(), 0.05)
        got = step_plant(np.zeros(1), np.array([1.0]), np.array([0.1]), plant)
        assert abs(got[0] - 0.146431) < 1e-6

    def test_dimension_mismatch(self):
        plant = discretize(scalar_plant(), 0.05)
        with pytest.raises(ValueError):
            step_plant(np.zeros(2), np.zeros(1), np.zeros(2), plant)
