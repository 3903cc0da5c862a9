import math

import numpy as np

import privfeat as pf
from privfeat import nn
from privfeat.enums import GpStyle, LossKind, OutputActivation

from .base_test import BaseTestCase


class TestMlp(BaseTestCase):
    def test_zero_network_outputs(self):
        sig = nn.zero_mlp((3, 4, 1), OutputActivation.SIGMOID)
        ident = nn.zero_mlp((3, 4, 1), OutputActivation.IDENTITY)
        v = np.array([0.1, -0.2, 0.3])
        self.assertEqual(pf.forward(sig, v), 0.5)
        self.assertEqual(pf.forward(ident, v), 0.0)

    def test_vector_head(self):
        gen = nn.zero_mlp((2, 3), OutputActivation.IDENTITY)
        out = pf.forward(gen, np.zeros(2))
        self.assertEqual(out.shape, (3,))

    def test_parameter_count(self):
        mlp = nn.glorot_mlp((5, 7, 3, 1), OutputActivation.SIGMOID, self.rng(1))
        self.assertEqual(mlp.num_params, 5 * 7 + 7 + 7 * 3 + 3 + 3 + 1)
        self.assertEqual(mlp.flat().shape, (mlp.num_params,))
        self.assertEqual(mlp.num_layers, 3)

    def test_flat_layout(self):
        mlp = nn.glorot_mlp((2, 3, 1), OutputActivation.SIGMOID, self.rng(2))
        theta = mlp.flat()
        self.assert_array_equal(theta[:6], mlp.weights[0].ravel())
        self.assert_array_equal(theta[6:9], mlp.biases[0])
        self.assert_array_equal(theta[9:12], mlp.weights[1].ravel())

    def test_with_flat_round_trip(self):
        mlp = nn.glorot_mlp((4, 6, 1), OutputActivation.IDENTITY, self.rng(3))
        theta = np.arange(mlp.num_params, dtype=np.float64) / 100.0
        back = mlp.with_flat(theta)
        self.assert_array_equal(back.flat(), theta)
        self.assertEqual(back.layer_dims, mlp.layer_dims)

    def test_with_flat_rejects_bad_values(self):
        mlp = nn.glorot_mlp((2, 2, 1), OutputActivation.IDENTITY, self.rng(4))
        with self.assertRaises(pf.DimensionMismatch):
            mlp.with_flat(np.zeros(3))
        theta = mlp.flat()
        theta[0] = math.nan
        with self.assertRaises(pf.NumericalError):
            mlp.with_flat(theta)

    def test_layer_shape_check(self):
        with self.assertRaises(pf.DimensionMismatch):
            pf.Mlp(layer_dims=(2, 1), weights=[np.zeros((2, 1))], biases=[np.zeros(1)])
        with self.assertRaises(pf.DimensionMismatch):
            pf.Mlp(layer_dims=(2,), weights=[], biases=[])

    def test_input_dimension_check(self):
        mlp = nn.zero_mlp((3, 1), OutputActivation.SIGMOID)
        with self.assertRaises(pf.DimensionMismatch):
            pf.forward_batch(mlp, np.zeros((2, 4)))

    def test_logits_are_clamped(self):
        mlp = nn.zero_mlp((1, 1), OutputActivation.SIGMOID)
        mlp = mlp.with_flat(np.array([100.0, 0.0]))
        self.assertEqual(float(nn.logits(mlp, np.array([[1.0]]))[0]), 30.0)
        self.assertEqual(float(nn.logits(mlp, np.array([[-1.0]]))[0]), -30.0)

    def test_glorot_is_deterministic(self):
        a = nn.glorot_mlp((4, 8, 1), OutputActivation.SIGMOID, self.rng(5))
        b = nn.glorot_mlp((4, 8, 1), OutputActivation.SIGMOID, self.rng(5))
        self.assertEqual(a, b)
        limit = math.sqrt(6.0 / 12.0)
        self.assertTrue(np.all(np.abs(a.weights[0]) <= limit))
        self.assert_array_equal(a.biases[0], np.zeros(8))


class TestGradients(BaseTestCase):
    def setUp(self):
        gen = np.random.default_rng(17)
        self.first = 0.5 * gen.uniform(-1, 1, size=(4, 3))
        self.second = 0.5 * gen.uniform(-1, 1, size=(4, 3))
        self.mix = gen.uniform(size=4)
        self.sigmoid_net = nn.glorot_mlp((3, 5, 4, 1), OutputActivation.SIGMOID, self.rng(6))
        self.critic = nn.glorot_mlp((3, 5, 4, 1), OutputActivation.IDENTITY, self.rng(7))

    def _check_loss_gradients(self, mlp, spec, mix=None):
        grads = pf.per_example_grads(mlp, spec, self.first, self.second, mix)
        self.assertEqual(grads.shape, (4, mlp.num_params))
        theta = mlp.flat()
        for i in range(4):

            def loss(t, i=i):
                return nn.per_example_losses(mlp.with_flat(t), spec, self.first, self.second, mix)[i]

            self.assert_gradient_matches(grads[i], loss, theta)

    def test_density_ratio_gradient(self):
        self._check_loss_gradients(self.sigmoid_net, nn.DRE_LOSS)

    def test_density_ratio_loss_value(self):
        losses = nn.per_example_losses(self.sigmoid_net, nn.DRE_LOSS, self.first, self.second)
        d_priv = pf.forward_batch(self.sigmoid_net, self.first)[:, 0]
        d_pub = pf.forward_batch(self.sigmoid_net, self.second)[:, 0]
        self.assert_allclose(losses, -(np.log(d_priv) + np.log(1.0 - d_pub)), rtol=1e-10)

    def test_critic_gradient_real_point_penalty(self):
        self._check_loss_gradients(self.critic, pf.LossSpec(kind=LossKind.CRITIC))

    def test_critic_gradient_interpolated_penalty(self):
        spec = pf.LossSpec(kind=LossKind.CRITIC, gp_style=GpStyle.INTERPOLATED)
        self._check_loss_gradients(self.critic, spec, self.mix)

    def test_penalty_weights(self):
        self.assertEqual(pf.LossSpec(kind=LossKind.CRITIC).penalty_weight, 1.0)
        self.assertEqual(pf.LossSpec(kind=LossKind.CRITIC, gp_style=GpStyle.INTERPOLATED).penalty_weight, 10.0)
        self.assertEqual(pf.LossSpec(kind=LossKind.CRITIC, gp_weight=2.5).penalty_weight, 2.5)

    def test_interpolated_penalty_needs_mix(self):
        spec = pf.LossSpec(kind=LossKind.CRITIC, gp_style=GpStyle.INTERPOLATED)
        with self.assertRaises(pf.ContractViolation):
            pf.per_example_grads(self.critic, spec, self.first, self.second)

    def test_density_ratio_needs_sigmoid_head(self):
        with self.assertRaises(pf.ContractViolation):
            pf.per_example_grads(self.critic, nn.DRE_LOSS, self.first, self.second)

    def test_single_example_gradient(self):
        spec = pf.LossSpec(kind=LossKind.CRITIC, gp_style=GpStyle.INTERPOLATED)
        batch = pf.per_example_grads(self.critic, spec, self.first, self.second, self.mix)
        one = pf.per_example_grad(self.critic, spec, (self.first[2], self.second[2], self.mix[2]))
        self.assert_allclose(one, batch[2], rtol=1e-12, atol=1e-15)

    def test_input_gradient(self):
        for x in self.first:
            analytic = pf.grad_wrt_input(self.critic, x)
            self.assert_gradient_matches(analytic, lambda v: pf.forward(self.critic, v), x)

    def test_input_gradient_needs_identity_head(self):
        with self.assertRaises(pf.ContractViolation):
            pf.grad_wrt_input(self.sigmoid_net, self.first[0])

    def test_pullback(self):
        gen = nn.glorot_mlp((2, 4, 3), OutputActivation.IDENTITY, self.rng(8))
        z = np.array([[0.3, -0.7]])
        w = np.array([[1.0, -2.0, 0.5]])
        analytic = nn.pullback(gen, z, w)[0]
        self.assert_gradient_matches(analytic, lambda t: float(pf.forward(gen.with_flat(t), z[0]) @ w[0]), gen.flat())

    def test_pullback_needs_identity_head(self):
        with self.assertRaises(pf.ContractViolation):
            nn.pullback(self.sigmoid_net, self.first, np.ones((4, 1)))


class TestDpStep(BaseTestCase):
    def test_clipping_only(self):
        grads = np.array([[3.0, 4.0], [0.3, 0.4]])
        out = pf.dp_step(grads, 1.0, 0.0, self.rng(0))
        self.assert_allclose(out, [(0.6 + 0.3) / 2, (0.8 + 0.4) / 2], rtol=1e-14)

    def test_clip_gradients_bound(self):
        grads = 10.0 * np.random.default_rng(1).standard_normal((50, 20))
        clipped = nn.clip_gradients(grads, 0.5)
        self.assertTrue(np.all(np.linalg.norm(clipped, axis=1) <= 0.5 + 1e-12))

    def test_noise_scale(self):
        out = pf.dp_step(np.zeros((1, 20000)), 0.5, 2.0, self.rng(2))
        self.assertTrue(abs(float(np.std(out)) - 1.0) < 0.03)
        self.assertTrue(abs(float(np.mean(out))) < 0.03)

    def test_noise_divided_by_batch(self):
        out = pf.dp_step(np.zeros((4, 20000)), 1.0, 1.0, self.rng(3))
        self.assertTrue(abs(float(np.std(out)) - 0.25) < 0.01)

    def test_same_rng_same_noise(self):
        grads = np.ones((3, 5))
        a = pf.dp_step(grads, 1.0, 1.0, self.rng(4))
        b = pf.dp_step(grads, 1.0, 1.0, self.rng(4))
        self.assert_array_equal(a, b)

    def test_empty_batch(self):
        with self.assertRaises(pf.ContractViolation):
            pf.dp_step(np.zeros((0, 3)), 1.0, 1.0, self.rng(0))


class TestAdam(BaseTestCase):
    def test_first_step(self):
        state = pf.AdamState.zeros(3)
        params = np.array([1.0, 2.0, 3.0])
        grad = np.array([0.5, -0.25, 0.0])
        new_state, new_params = pf.adam_update(state, params, grad, 0.1)
        expected = params - 0.1 * grad / (np.abs(grad) + 1e-8)
        self.assert_allclose(new_params, expected, rtol=1e-12)
        self.assertEqual(new_state.t, 1)
        self.assertEqual(state.t, 0)

    def test_two_steps(self):
        b1, b2, eps, eta = 0.9, 0.999, 1e-8, 0.01
        g1, g2 = np.array([1.0, -2.0]), np.array([0.5, 1.0])
        state = pf.AdamState.zeros(2)
        params = np.zeros(2)
        state, params = pf.adam_update(state, params, g1, eta)
        state, params = pf.adam_update(state, params, g2, eta)

        m1, v1 = (1 - b1) * g1, (1 - b2) * g1 ** 2
        p1 = -eta * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
        m2, v2 = b1 * m1 + (1 - b1) * g2, b2 * v1 + (1 - b2) * g2 ** 2
        p2 = p1 - eta * (m2 / (1 - b1 ** 2)) / (np.sqrt(v2 / (1 - b2 ** 2)) + eps)
        self.assert_allclose(params, p2, rtol=1e-12)
        self.assertEqual(state.t, 2)

    def test_shape_mismatch(self):
        with self.assertRaises(pf.DimensionMismatch):
            pf.adam_update(pf.AdamState.zeros(2), np.zeros(3), np.zeros(3), 0.1)


class TestDpSgdConfig(BaseTestCase):
    def test_sample_rate_is_capped(self):
        cfg = pf.DpSgdConfig(batch_size=64)
        self.assertEqual(cfg.sample_rate(640), 0.1)
        self.assertEqual(cfg.sample_rate(10), 1.0)

    def test_explicit_sigma(self):
        cfg = pf.DpSgdConfig(batch_size=10, steps=100, sigma=1.5)
        calibration = cfg.noise_calibration(pf.PrivacyBudget(epsilon=1.0), 1000, 100)
        self.assertEqual(calibration.sigma, 1.5)
        expected = pf.sgd_epsilon(pf.SgdPrivacySpec(q=0.01, sigma=1.5, steps=100))
        self.assertEqual(calibration.eps_achieved, expected)

    def test_zero_sigma(self):
        cfg = pf.DpSgdConfig(sigma=0.0)
        self.assertEqual(cfg.noise_calibration(pf.PrivacyBudget(epsilon=1.0), 1000, 10).eps_achieved, math.inf)

    def test_calibrated_sigma(self):
        cfg = pf.DpSgdConfig(batch_size=10, steps=100)
        calibration = cfg.noise_calibration(pf.PrivacyBudget(epsilon=2.0), 1000, 100)
        self.assertTrue(calibration.sigma > 0)
        self.assertTrue(calibration.eps_achieved <= 2.0)


class TestCheckpoint(BaseTestCase):
    def test_restore(self):
        mlp = nn.glorot_mlp((3, 4, 1), OutputActivation.SIGMOID, self.rng(9))
        adam = pf.AdamState.zeros(mlp.num_params)
        checkpoint = pf.MlpCheckpoint.of(mlp, adam)
        self.assertEqual(checkpoint.restore(), mlp)
        self.assertEqual(checkpoint.adam, adam)

    def test_random_networks_and_examples(self):
        gen = np.random.default_rng(23)
        dre = nn.DRE_LOSS
        real_penalty = pf.LossSpec(kind=LossKind.CRITIC)
        mixed_penalty = pf.LossSpec(kind=LossKind.CRITIC, gp_style=GpStyle.INTERPOLATED)
        checked = 0
        while checked < 100:
            d = int(gen.integers(1, 5))
            dims = (d,) + tuple(int(w) for w in gen.integers(2, 7, size=gen.integers(1, 3))) + (1,)
            key = self.rng(100, checked)
            sigmoid_net = nn.glorot_mlp(dims, OutputActivation.SIGMOID, key.split(0))
            critic = nn.glorot_mlp(dims, OutputActivation.IDENTITY, key.split(1))
            first = 0.5 * gen.uniform(-1, 1, size=(1, d))
            second = 0.5 * gen.uniform(-1, 1, size=(1, d))
            mix = gen.uniform(size=1)
            points = np.vstack([first, second, mix[0] * first + (1.0 - mix[0]) * second])
            # finite differences are only valid away from the LeakyReLU kinks
            hidden = [z for net in (sigmoid_net, critic) for z in nn._forward(net, points)[0][:-1]]
            if min(np.min(np.abs(z)) for z in hidden) < 1e-3:
                continue

            for mlp, spec, m in ((sigmoid_net, dre, None), (critic, real_penalty, None), (critic, mixed_penalty, mix)):
                analytic = pf.per_example_grads(mlp, spec, first, second, m)[0]

                def loss(t, mlp=mlp, spec=spec, m=m):
                    return nn.per_example_losses(mlp.with_flat(t), spec, first, second, m)[0]

                self.assert_gradient_matches(analytic, loss, mlp.flat(), tol=1e-4)
            self.assert_gradient_matches(
                pf.grad_wrt_input(critic, points[0]), lambda v: pf.forward(critic, v), points[0], tol=1e-4
            )
            checked += 1
