import math

import numpy as np

import privfeat as pf

from .base_test import BaseTestCase


class TestFitMge(BaseTestCase):
    def setUp(self):
        self.priv = self.random_features(1000, 400, seed=21, scale=0.02)

    def test_non_private_is_exact(self):
        model = pf.fit_dp_mge(self.priv, pf.PrivacyBudget.non_private(), self.rng(1))
        v = self.priv.data
        mu = v.mean(axis=0)
        self.assert_allclose(model.mu, mu, rtol=0, atol=1e-15)
        expected = np.maximum(np.mean(v * v, axis=0) - mu * mu, 1e-8)
        self.assert_allclose(model.s, expected, rtol=1e-12, atol=1e-18)
        self.assertEqual(model.eps, math.inf)

    def test_noise_scale_matches_sensitivity(self):
        budget = pf.PrivacyBudget(epsilon=1.0, delta=1e-5)
        model = pf.fit_dp_mge(self.priv, budget, self.rng(2))
        sigma = pf.gaussian_sigma(0.5, 0.5e-5)
        expected_std = 2.0 * sigma / self.priv.n
        noise = model.mu - self.priv.data.mean(axis=0)
        ratio = float(np.std(noise)) / expected_std
        self.assertTrue(0.8 < ratio < 1.2)
        self.assertTrue(abs(float(np.mean(noise))) < 4.0 * expected_std / math.sqrt(noise.size))

    def test_noise_law_over_many_fits(self):
        priv = self.random_features(1000, 4, seed=22, scale=0.1)
        budget = pf.PrivacyBudget(epsilon=1.0, delta=1e-5)
        base = self.rng(9)
        means = np.array([pf.fit_dp_mge(priv, budget, base.split(i)).mu for i in range(10_000)])
        expected_std = 2.0 * pf.gaussian_sigma(0.5, 5e-6) / 1000
        ratio = means.std(axis=0) / expected_std
        self.assertTrue(np.all(np.abs(ratio - 1.0) < 0.05), ratio)
        self.assert_allclose(means.mean(axis=0), priv.data.mean(axis=0), rtol=0, atol=4.0 * expected_std / 100)

    def test_same_seed_same_model(self):
        budget = pf.PrivacyBudget(epsilon=0.5)
        a = pf.fit_dp_mge(self.priv, budget, self.rng(3))
        b = pf.fit_dp_mge(self.priv, budget, self.rng(3))
        self.assertEqual(a, b)
        c = pf.fit_dp_mge(self.priv, budget, self.rng(4))
        self.assertFalse(a == c)

    def test_variance_floor(self):
        constant = pf.FeatureMatrix(data=np.full((10, 3), 0.25))
        model = pf.fit_dp_mge(constant, pf.PrivacyBudget.non_private(), self.rng(0))
        self.assert_array_equal(model.s, np.full(3, 1e-8))
        self.assert_allclose(model.mu, np.full(3, 0.25), rtol=0, atol=1e-15)

    def test_custom_floor(self):
        model = pf.fit_dp_mge(self.priv, pf.PrivacyBudget(epsilon=0.1), self.rng(5), variance_floor=1e-3)
        self.assertTrue(np.all(model.s >= 1e-3))

    def test_rows_outside_unit_ball(self):
        outside = pf.FeatureMatrix(data=[[2.0, 0.0], [0.0, 0.0]])
        with self.assertRaises(pf.ContractViolation):
            pf.fit_dp_mge(outside, pf.PrivacyBudget(epsilon=1.0), self.rng(0))

    def test_too_few_rows(self):
        with self.assertRaises(pf.ContractViolation):
            pf.fit_dp_mge(pf.FeatureMatrix(data=[[0.1, 0.1]]), pf.PrivacyBudget(epsilon=1.0), self.rng(0))


class TestSampleMge(BaseTestCase):
    def setUp(self):
        self.model = pf.GaussianModel(mu=[0.5, -0.5, 0.0], s=[0.04, 0.01, 1.0], eps=1.0, delta=1e-5)

    def test_samples_in_unit_ball(self):
        samples = pf.sample_mge(self.model, 2000, self.rng(8))
        self.assertEqual((samples.n, samples.d), (2000, 3))
        self.assertTrue(samples.normalized)
        self.assertTrue(np.all(samples.row_norms() <= 1.0 + 1e-9))

    def test_moments_of_narrow_model(self):
        narrow = pf.GaussianModel(mu=[0.1, 0.2], s=[1e-4, 4e-4], eps=1.0, delta=1e-5)
        samples = pf.sample_mge(narrow, 20000, self.rng(9))
        self.assert_allclose(samples.data.mean(axis=0), [0.1, 0.2], atol=1e-3)
        self.assert_allclose(samples.data.var(axis=0), [1e-4, 4e-4], rtol=0.05)

    def test_sample_size_must_be_positive(self):
        with self.assertRaises(pf.ContractViolation):
            pf.sample_mge(self.model, 0, self.rng(0))

    def test_invalid_model(self):
        with self.assertRaises(pf.ContractViolation):
            pf.GaussianModel(mu=[0.0], s=[0.0], eps=1.0, delta=1e-5)
        with self.assertRaises(pf.DimensionMismatch):
            pf.GaussianModel(mu=[0.0, 1.0], s=[1.0], eps=1.0, delta=1e-5)


class TestStatistics(BaseTestCase):
    def test_neighbor_sensitivity(self):
        gen = np.random.default_rng(31)
        n, d = 100, 16
        bound = 2.0 / n + 1e-12
        for trial in range(1000):
            rows = gen.standard_normal((n, d))
            rows /= np.linalg.norm(rows, axis=1, keepdims=True)
            rows *= gen.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d)
            i = int(gen.integers(n))
            neighbor = rows.copy()
            if trial % 2:
                neighbor[i] = -rows[i] / np.linalg.norm(rows[i])
            else:
                swap = gen.standard_normal(d)
                neighbor[i] = swap / np.linalg.norm(swap)
            mu_a, sq_a = pf.mge_statistics(rows)
            mu_b, sq_b = pf.mge_statistics(neighbor)
            self.assertTrue(np.linalg.norm(mu_a - mu_b) <= bound)
            self.assertTrue(np.linalg.norm(sq_a - sq_b) <= bound)
