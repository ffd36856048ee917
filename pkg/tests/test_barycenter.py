import logging

import numpy as np
import pytest

from cobo.barycenter import (
    BarycenterConfig,
    barycenter,
    barycenter_in_basis,
    covariance_barycenter,
    mean_barycenter,
    shared_prior_basis,
    sqrtm_psd,
    w2_gaussian,
)
from cobo.gp import DiscretizedGP, KernelSpec, LocalAgent, discretize, kernel_matrix
from cobo.grid import unit_grid
from oracles import barycenter_equation_defect, w2_squared_objective


def random_psd(rng, d, aspect=2):
    b = rng.standard_normal((d, aspect * d))
    return (b @ b.T) / (aspect * d)


def random_models(rng, n, d):
    return [DiscretizedGP(mean=rng.standard_normal(d), cov=random_psd(rng, d))
            for _ in range(n)]


class TestSqrtm:
    def test_identity(self):
        np.testing.assert_allclose(sqrtm_psd(np.eye(3)), np.eye(3), atol=1e-12)

    def test_diagonal(self):
        np.testing.assert_allclose(sqrtm_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]),
                                   atol=1e-12)

    def test_multiply_back(self):
        rng = np.random.default_rng(0)
        a = random_psd(rng, 20)
        s = sqrtm_psd(a)
        assert np.linalg.norm(s @ s - a) <= 1e-6 * np.linalg.norm(a)
        assert np.linalg.eigvalsh(s).min() >= -1e-10

    def test_clamps_negative_eigenvalues(self):
        a = np.diag([1.0, -1e-9])
        s = sqrtm_psd(a)
        assert s[1, 1] == 0.0

    def test_rejects_asymmetric(self):
        a = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            sqrtm_psd(a)


class TestMeanBarycenter:
    def test_identical(self):
        v = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(mean_barycenter([v, v, v]), v)

    def test_two_vectors(self):
        out = mean_barycenter([np.array([0.0, 2.0]), np.array([2.0, 0.0])])
        np.testing.assert_array_equal(out, np.array([1.0, 1.0]))

    def test_random_average(self):
        rng = np.random.default_rng(1)
        vs = [rng.standard_normal(6) for _ in range(4)]
        out = mean_barycenter(vs)
        np.testing.assert_allclose(out, np.mean(vs, axis=0), atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mean_barycenter([np.zeros(2), np.zeros(3)])


class TestCovarianceBarycenter:
    def test_identical_inputs_fixed_point(self):
        rng = np.random.default_rng(2)
        k = random_psd(rng, 8)
        cfg = BarycenterConfig()
        out, residual, iterations = covariance_barycenter([k, k, k], cfg)
        assert residual <= cfg.tol
        assert iterations <= 2
        np.testing.assert_allclose(out, k, atol=1e-7)

    def test_diagonal_closed_form(self):
        rng = np.random.default_rng(3)
        diags = [rng.uniform(0.5, 4.0, size=6) for _ in range(4)]
        cfg = BarycenterConfig()
        out, residual, _ = covariance_barycenter([np.diag(d) for d in diags], cfg)
        expected = np.mean(np.sqrt(diags), axis=0) ** 2
        assert residual <= cfg.tol
        np.testing.assert_allclose(np.diag(out), expected, atol=1e-7)

    def test_scalar_two_variances(self):
        # the default 1e-8 input jitter shifts the answer by ~1.1e-8 by design,
        # so the closed-form check runs at a tiny configured jitter
        cfg = BarycenterConfig(jitter=1e-12)
        out, residual, _ = covariance_barycenter([np.array([[1.0]]), np.array([[4.0]])], cfg)
        assert abs(out[0, 0] - 2.25) <= 1e-9
        out_default, _, _ = covariance_barycenter([np.array([[1.0]]), np.array([[4.0]])])
        assert abs(out_default[0, 0] - 2.25) <= 2e-8

    def test_residual_against_schur_roots(self):
        rng = np.random.default_rng(4)
        covs = [random_psd(rng, 10) for _ in range(4)]
        cfg = BarycenterConfig()
        out, residual, _ = covariance_barycenter(covs, cfg)
        # independent Schur-based evaluation of the same defect
        defect = barycenter_equation_defect(covs, out, cfg.jitter)
        assert defect <= 10 * cfg.tol

    def test_residual_sequence_monotone_after_burn_in(self):
        rng = np.random.default_rng(5)
        for trial in range(5):
            covs = [random_psd(rng, 12) for _ in range(4)]
            history = []
            covariance_barycenter(covs, BarycenterConfig(), residual_history=history)
            tail = np.array(history[2:])
            assert np.all(np.diff(tail) <= 1e-10)

    def test_non_convergence_returns_best_with_warning(self, caplog):
        rng = np.random.default_rng(6)
        covs = [random_psd(rng, 10) for _ in range(4)]
        cfg = BarycenterConfig(max_iter=1)
        with caplog.at_level(logging.WARNING, logger="cobo.barycenter"):
            _, residual, iterations = covariance_barycenter(covs, cfg)
        assert residual > cfg.tol
        assert iterations == 1
        assert any("did not converge" in rec.message for rec in caplog.records)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            covariance_barycenter([np.eye(2), np.eye(3)])


class TestW2:
    def test_identical(self):
        rng = np.random.default_rng(7)
        c = random_psd(rng, 5)
        m = rng.standard_normal(5)
        assert w2_gaussian(m, c, m, c) == pytest.approx(0.0, abs=1e-6)

    def test_translation(self):
        rng = np.random.default_rng(8)
        c = random_psd(rng, 5)
        m = rng.standard_normal(5)
        v = rng.standard_normal(5)
        assert w2_gaussian(m, c, m + v, c) == pytest.approx(np.linalg.norm(v), abs=1e-6)

    def test_scalar_case(self):
        # 1-D N(0,1) vs N(0,4): |1 - 2| = 1
        d = w2_gaussian(np.zeros(1), np.array([[1.0]]), np.zeros(1), np.array([[4.0]]))
        assert d == pytest.approx(1.0, abs=1e-9)


class TestBarycenter:
    def test_single_model_passthrough(self):
        rng = np.random.default_rng(9)
        model = random_models(rng, 1, 6)[0]
        out = barycenter([model])
        np.testing.assert_array_equal(out.mean, model.mean)
        np.testing.assert_array_equal(out.cov, model.cov)
        assert out.residual == 0.0

    def test_identical_models(self):
        rng = np.random.default_rng(10)
        model = random_models(rng, 1, 6)[0]
        out = barycenter([model] * 4)
        cfg = BarycenterConfig()
        assert out.residual <= cfg.tol
        np.testing.assert_allclose(out.cov, model.cov, atol=1e-8)
        np.testing.assert_allclose(out.mean, model.mean, atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        models = random_models(rng, 4, 8)
        a = barycenter(models)
        b = barycenter(models[::-1])
        assert np.abs(a.cov - b.cov).max() <= 1e-8
        assert np.abs(a.mean - b.mean).max() <= 1e-12

    def test_local_optimality_probe(self):
        rng = np.random.default_rng(12)
        d = 25
        models = random_models(rng, 4, d)
        out = barycenter(models)
        means = [m.mean for m in models]
        covs = [m.cov for m in models]
        base = w2_squared_objective(out.mean, out.cov, means, covs)
        for _ in range(100):
            dm = rng.standard_normal(d)
            dm *= 1e-3 / np.linalg.norm(dm)
            dc = rng.standard_normal((d, d))
            dc = 0.5 * (dc + dc.T)
            dc *= 1e-3 / np.linalg.norm(dc)
            cov = out.cov + dc
            w, u = np.linalg.eigh(cov)
            cov = (u * np.clip(w, 0.0, None)) @ u.T
            perturbed = w2_squared_objective(out.mean + dm, cov, means, covs)
            assert base <= perturbed + 1e-9

    def test_basis_path_matches_full_path(self):
        # structured inputs: grid posteriors under one shared prior kernel
        grid = unit_grid(5, dim=2)
        kernel = KernelSpec()
        rng = np.random.default_rng(13)
        models = []
        for a in range(3):
            agent = LocalAgent(id=a, kernel=kernel, noise_var=0.05)
            for i in rng.choice(len(grid), 6, replace=False):
                agent.add_observation(grid.points[i], rng.normal())
            models.append(discretize(agent, grid))
        cfg = BarycenterConfig()
        full = barycenter(models, cfg)
        basis = shared_prior_basis(kernel_matrix(kernel, grid.points, grid.points))
        reduced = barycenter_in_basis(models, cfg, basis)
        assert np.abs(full.cov - reduced.cov).max() <= 1e-8
        np.testing.assert_array_equal(full.mean, reduced.mean)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            barycenter([])
