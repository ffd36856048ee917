import math

import numpy as np
import pytest

from cobo.gp import (
    KernelSpec,
    LocalAgent,
    discretize,
    kernel_eval,
    mle_noise_variance,
    posterior_eval,
    server_noise_variance,
)
from cobo.grid import unit_grid
from oracles import dense_posterior, mle_grid_search, rbf


def make_agent(noise_var=0.02, kernel=None):
    return LocalAgent(id=0, kernel=kernel or KernelSpec(), noise_var=noise_var)


class TestKernel:
    def test_same_point(self):
        k = KernelSpec(lengthscale_sq=1.0, amplitude=1.0)
        x = np.array([0.3, 0.7])
        assert kernel_eval(k, x, x) == 1.0

    def test_unit_distance(self):
        k = KernelSpec(lengthscale_sq=1.0, amplitude=1.0)
        val = kernel_eval(k, np.array([0.0]), np.array([1.0]))
        assert val == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_scaled(self):
        # squared distance 0.5, lengthscale_sq 0.5, amplitude 2
        k = KernelSpec(lengthscale_sq=0.5, amplitude=2.0)
        val = kernel_eval(k, np.array([0.0]), np.array([math.sqrt(0.5)]))
        assert val == pytest.approx(2.0 * math.exp(-1.0), abs=1e-12)

    def test_symmetry_and_range(self):
        k = KernelSpec()
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b = rng.random(2), rng.random(2)
            v = kernel_eval(k, a, b)
            assert v == kernel_eval(k, b, a)
            assert 0.0 < v <= k.amplitude

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(KernelSpec(), np.array([0.0]), np.array([0.0, 1.0]))

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            KernelSpec(lengthscale_sq=0.0)
        with pytest.raises(ValueError):
            KernelSpec(amplitude=-1.0)


class TestPosterior:
    def test_prior_recovery(self):
        agent = make_agent()
        x = np.array([0.2, 0.4])
        mean, cov = posterior_eval(agent, x, x)
        assert mean == 0.0
        assert cov == kernel_eval(agent.kernel, x, x)

    def test_single_observation_closed_form(self):
        noise = 0.05
        agent = make_agent(noise_var=noise, kernel=KernelSpec(lengthscale_sq=0.1, amplitude=1.0))
        x1, y1 = np.array([0.5]), 0.8
        agent.add_observation(x1, y1)
        mean, var = posterior_eval(agent, x1, x1)
        assert mean == pytest.approx(y1 / (1 + noise), abs=1e-12)
        assert var == pytest.approx(1 - 1 / (1 + noise), abs=1e-12)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(3)
        agent = make_agent()
        xs = rng.random((3, 1))
        ys = rng.normal(size=3)
        for x, y in zip(xs, ys):
            agent.add_observation(x, y)
        for _ in range(10):
            a, b = rng.random(1), rng.random(1)
            mean, cov = posterior_eval(agent, a, b)
            mean_o, cov_o = dense_posterior(xs, ys, agent.noise_var, a, b)
            assert mean == pytest.approx(mean_o, abs=1e-10)
            assert cov == pytest.approx(cov_o, abs=1e-10)

    def test_interpolation_limit(self):
        agent = make_agent(noise_var=1e-6)
        x, y = np.array([0.3, 0.6]), 1.7
        agent.add_observation(x, y)
        mean, _ = posterior_eval(agent, x, x)
        assert abs(mean - y) <= 1e-3

    def test_variance_monotone_under_new_data(self):
        rng = np.random.default_rng(11)
        agent = make_agent()
        grid = unit_grid(5, dim=2)
        prev = np.diag(discretize(agent, grid).cov).copy()
        for i in range(8):
            agent.add_observation(rng.random(2), rng.normal())
            cur = np.diag(discretize(agent, grid).cov)
            assert np.all(cur <= prev + 1e-9)
            prev = cur.copy()

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        xs = rng.random((6, 2))
        ys = rng.normal(size=6)
        grid = unit_grid(4, dim=2)
        agent = make_agent()
        for x, y in zip(xs, ys):
            agent.add_observation(x, y)
        ref = discretize(agent, grid)
        perm = rng.permutation(6)
        shuffled = make_agent()
        for i in perm:
            shuffled.add_observation(xs[i], ys[i])
        out = discretize(shuffled, grid)
        assert np.abs(out.mean - ref.mean).max() <= 1e-9
        assert np.abs(out.cov - ref.cov).max() <= 1e-9


class TestDiscretize:
    def test_empty_data_gives_prior(self):
        agent = make_agent()
        grid = unit_grid(4, dim=2)
        model = discretize(agent, grid)
        assert np.array_equal(model.mean, np.zeros(len(grid)))
        prior = rbf(grid.points, grid.points, agent.kernel.lengthscale_sq,
                    agent.kernel.amplitude)
        np.testing.assert_allclose(model.cov, prior, atol=1e-12)

    def test_diagonal_bounds(self):
        rng = np.random.default_rng(5)
        agent = make_agent()
        grid = unit_grid(5, dim=2)
        for _ in range(7):
            agent.add_observation(rng.random(2), rng.normal())
        model = discretize(agent, grid)
        diag = np.diag(model.cov)
        assert np.all(diag >= -1e-8)
        assert np.all(diag <= agent.kernel.amplitude + 1e-8)

    def test_symmetric_and_psd(self):
        rng = np.random.default_rng(9)
        agent = make_agent()
        grid = unit_grid(5, dim=2)
        idx = rng.choice(len(grid), 5, replace=False)
        for i in idx:
            agent.add_observation(grid.points[i], rng.normal())
        model = discretize(agent, grid)
        assert np.abs(model.cov - model.cov.T).max() <= 1e-10
        assert np.linalg.eigvalsh(model.cov).min() >= -1e-8

    def test_matches_pointwise_posterior(self):
        rng = np.random.default_rng(13)
        agent = make_agent()
        grid = unit_grid(3, dim=2)
        for _ in range(4):
            agent.add_observation(rng.random(2), rng.normal())
        model = discretize(agent, grid)
        for i in [0, 4, 8]:
            for j in [1, 5]:
                mean_i, cov_ij = posterior_eval(agent, grid.points[i], grid.points[j])
                assert model.mean[i] == pytest.approx(mean_i, abs=1e-9)
                assert model.cov[i, j] == pytest.approx(cov_ij, abs=1e-9)

    def test_dimension_mismatch(self):
        agent = make_agent()
        agent.add_observation(np.array([0.1]), 0.5)
        with pytest.raises(ValueError):
            discretize(agent, unit_grid(4, dim=2))

    def test_variance_shrinks_with_repeated_sampling(self):
        # with every grid point observed t times, the max grid variance should
        # fall below 10 * noise / t
        noise = 0.02
        grid = unit_grid((4,), dim=1)
        rng = np.random.default_rng(21)
        agent = make_agent(noise_var=noise, kernel=KernelSpec(lengthscale_sq=0.05))
        for t in (1, 4, 16):
            while agent.n_observations() < t * len(grid):
                for p in grid.points:
                    agent.add_observation(p, rng.normal())
            max_var = np.diag(discretize(agent, grid).cov).max()
            assert max_var < 10 * noise / t


class TestNoiseMLE:
    def test_recovers_known_noise(self):
        rng = np.random.default_rng(101)
        kernel = KernelSpec()
        xs = rng.random((50, 1))
        kmat = rbf(xs, xs, kernel.lengthscale_sq, kernel.amplitude)
        true_noise = 0.02
        chol = np.linalg.cholesky(kmat + true_noise * np.eye(50))
        ys = chol @ rng.standard_normal(50)
        agent = make_agent(kernel=kernel)
        for x, y in zip(xs, ys):
            agent.add_observation(x, y)
        est = mle_noise_variance(agent.data, kernel)
        assert 0.005 <= est <= 0.08
        assert abs(est - mle_grid_search(xs, ys)) <= 2e-3

    def test_zero_spread_clamps_low(self):
        kernel = KernelSpec()
        agent = make_agent(kernel=kernel)
        for _ in range(4):
            agent.add_observation(np.array([0.5]), 1.0)
        assert mle_noise_variance(agent.data, kernel) == 1e-6

    def test_estimate_always_in_bounds(self):
        rng = np.random.default_rng(33)
        kernel = KernelSpec()
        for trial in range(5):
            agent = make_agent(kernel=kernel)
            for _ in range(5):
                agent.add_observation(rng.random(2), 100.0 * rng.normal())
            est = mle_noise_variance(agent.data, kernel)
            assert 1e-6 <= est <= 1.0

    def test_needs_two_points(self):
        agent = make_agent()
        agent.add_observation(np.array([0.1]), 0.0)
        with pytest.raises(ValueError):
            mle_noise_variance(agent.data, agent.kernel)


class TestServerNoise:
    def test_uniform(self):
        assert server_noise_variance([0.02, 0.02, 0.02, 0.02]) == pytest.approx(0.02)

    def test_two(self):
        assert server_noise_variance([0.01, 0.03]) == pytest.approx(0.02)

    def test_empty(self):
        with pytest.raises(ValueError):
            server_noise_variance([])

    def test_matches_recomputation(self):
        rng = np.random.default_rng(2)
        estimates = list(rng.uniform(0.001, 0.1, size=4))
        assert server_noise_variance(estimates) == float(np.mean(estimates))
