import math

import numpy as np

import privfeat as pf
from privfeat import gan, nn
from privfeat.enums import GpStyle, OutputActivation

from .base_test import BaseTestCase


def small_config(**kwargs):
    options = dict(
        steps=4,
        z_dim=3,
        generator_widths=(5,),
        critic_widths=(5,),
        critic_steps=2,
        batch_size=8,
        select_best=False,
        selection_samples=20,
    )
    options.update(kwargs)
    return pf.GanConfig(**options)


class TestLatentGan(BaseTestCase):
    def test_init_shapes(self):
        model = pf.init_latent_gan(4, small_config(), self.rng(1))
        self.assertEqual(model.d, 4)
        self.assertEqual(model.generator.layer_dims, (3, 5, 4))
        self.assertEqual(model.critic.layer_dims, (4, 5, 1))
        self.assertFalse(model.pretrained)

    def test_constant_generator(self):
        generator = nn.zero_mlp((3, 2), OutputActivation.IDENTITY)
        generator = generator.with_flat(np.array([0.0] * 6 + [2.0, 0.0]))
        critic = nn.zero_mlp((2, 1), OutputActivation.IDENTITY)
        model = pf.LatentGan(generator=generator, critic=critic, z_dim=3)
        samples = pf.sample_gan(model, 10, self.rng(2))
        self.assert_array_equal(samples.data, np.tile([1.0, 0.0], (10, 1)))

    def test_samples_in_unit_ball(self):
        model = pf.init_latent_gan(6, small_config(), self.rng(3))
        samples = pf.sample_gan(model, 300, self.rng(4))
        self.assertEqual((samples.n, samples.d), (300, 6))
        self.assertTrue(np.all(samples.row_norms() <= 1.0 + 1e-9))

    def test_mismatched_pair(self):
        generator = nn.zero_mlp((3, 2), OutputActivation.IDENTITY)
        critic = nn.zero_mlp((4, 1), OutputActivation.IDENTITY)
        with self.assertRaises(pf.DimensionMismatch):
            pf.LatentGan(generator=generator, critic=critic, z_dim=3)
        with self.assertRaises(pf.DimensionMismatch):
            pf.LatentGan(generator=generator, critic=nn.zero_mlp((2, 1), OutputActivation.IDENTITY), z_dim=4)

    def test_generator_gradient(self):
        model = pf.init_latent_gan(3, small_config(), self.rng(5))
        z = np.random.default_rng(6).standard_normal((4, 3))
        analytic = gan.generator_gradient(model.generator, model.critic, z)

        def mean_score(theta):
            fake = gan.generate(model.generator.with_flat(theta), z)
            return float(np.mean(pf.forward_batch(model.critic, fake)))

        self.assert_gradient_matches(analytic, mean_score, model.generator.flat())

    def test_config_defaults(self):
        cfg = pf.GanConfig()
        self.assertEqual(cfg.critic_steps, 5)
        self.assertEqual(cfg.eval_every, 50)
        self.assertEqual(cfg.loss.penalty_weight, 1.0)
        self.assertEqual(pf.GanConfig(gp_style=GpStyle.INTERPOLATED).loss.penalty_weight, 10.0)

    def test_standard_penalty_alias(self):
        self.assertIs(GpStyle("standard"), GpStyle.INTERPOLATED)
        cfg = pf.GanConfig(gp_style="standard")
        self.assertEqual(cfg.gp_style, GpStyle.INTERPOLATED)
        self.assertEqual(cfg.loss.penalty_weight, 10.0)
        with self.assertRaises(ValueError):
            GpStyle("fancy")


class TestTraining(BaseTestCase):
    def setUp(self):
        self.priv = self.random_features(40, 3, seed=7, scale=0.3)
        self.budget = pf.PrivacyBudget(epsilon=3.0)

    def test_accounting(self):
        cfg = small_config()
        model = pf.train_dp_latent_gan(self.priv, None, self.budget, cfg, self.rng(8))
        self.assertEqual(model.critic_rounds, cfg.steps * cfg.critic_steps)
        self.assertTrue(model.eps <= 3.0)
        self.assertEqual(model.eps_target, 3.0)
        spec = pf.SgdPrivacySpec(q=8 / 40, sigma=model.sigma, steps=8)
        self.assertEqual(model.eps, pf.sgd_epsilon(spec))
        self.assertIsNone(model.selected_step)

    def test_deterministic(self):
        cfg = small_config(gp_style=GpStyle.INTERPOLATED)
        a = pf.train_dp_latent_gan(self.priv, None, self.budget, cfg, self.rng(9))
        b = pf.train_dp_latent_gan(self.priv, None, self.budget, cfg, self.rng(9))
        self.assertEqual(a, b)

    def test_training_moves_parameters(self):
        cfg = small_config()
        start = pf.init_latent_gan(3, cfg, self.rng(10))
        trained = pf.train_dp_latent_gan(self.priv, start, self.budget, cfg, self.rng(11))
        self.assertFalse(np.array_equal(start.generator.flat(), trained.generator.flat()))
        self.assertFalse(np.array_equal(start.critic.flat(), trained.critic.flat()))

    def test_checkpoint_selection(self):
        cfg = small_config(select_best=True)
        with self.assertLogs("privfeat.gan", level="WARNING"):
            model = pf.train_dp_latent_gan(self.priv, None, self.budget, cfg, self.rng(12))
        self.assertTrue(1 <= model.selected_step <= cfg.steps)
        self.assertFalse(model.selection_accounted)

    def test_finetuning(self):
        cfg = small_config()
        pub = self.random_features(60, 3, seed=13, scale=0.3)
        pretrained = pf.pretrain_public_gan(pub, cfg, self.rng(14))
        self.assertTrue(pretrained.pretrained)
        self.assertEqual(pretrained.eps, 0.0)
        tuned = pf.train_dp_latent_gan(self.priv, pretrained, self.budget, cfg, self.rng(15))
        self.assertTrue(tuned.pretrained)
        self.assertEqual(tuned.critic_rounds, 8)

    def test_init_must_match(self):
        start = pf.init_latent_gan(4, small_config(), self.rng(16))
        with self.assertRaises(pf.DimensionMismatch):
            pf.train_dp_latent_gan(self.priv, start, self.budget, small_config(), self.rng(17))

    def test_divergence(self):
        cfg = small_config(divergence_limit=1e-12)
        try:
            pf.train_dp_latent_gan(self.priv, None, self.budget, cfg, self.rng(18))
        except pf.TrainingDiverged as err:
            self.assertEqual(err.step, 0)
            self.assertTrue(math.isfinite(err.loss))
        else:
            self.assertTrue(False)

    def test_rows_outside_unit_ball(self):
        outside = pf.FeatureMatrix(data=[[2.0, 0.0, 0.0]] * 5)
        with self.assertRaises(pf.ContractViolation):
            pf.train_dp_latent_gan(outside, None, self.budget, small_config(), self.rng(0))


def single_mode(n, center, seed, std=0.05):
    gen = np.random.default_rng(seed)
    data = np.asarray(center) + std * gen.standard_normal((n, len(center)))
    return pf.project_to_unit_ball(pf.FeatureMatrix(data=data))


class TestTrainingTrends(BaseTestCase):
    """Reduced-size runs on one Gaussian mode; FIDs are measured on 2000 samples."""

    @classmethod
    def setUpClass(cls):
        cls.cfg = pf.GanConfig(
            steps=400,
            z_dim=2,
            generator_widths=(16, 16),
            critic_widths=(16, 16),
            critic_steps=5,
            batch_size=64,
            learning_rate=5e-3,
            beta1=0.5,
            beta2=0.9,
            gp_style=GpStyle.INTERPOLATED,
            select_best=True,
        )
        cls.pub = single_mode(2000, [0.3, 0.3], seed=31)
        cls.priv = single_mode(1000, [0.5, 0.0], seed=32)
        rng = pf.SeededRng(seed=33)
        cls.untrained = pf.init_latent_gan(2, cls.cfg, rng.split(0))
        cls.pretrained = pf.pretrain_public_gan(cls.pub, cls.cfg, rng.split(1))
        cls.non_private = pf.train_dp_latent_gan(
            cls.priv, cls.untrained, pf.PrivacyBudget.non_private(), cls.cfg, rng.split(2)
        )
        cls.tight = pf.train_dp_latent_gan(
            cls.priv, cls.untrained, pf.PrivacyBudget(epsilon=0.1, delta=1e-5), cls.cfg, rng.split(2)
        )

    def fid_to(self, model, real):
        return pf.fid(real, pf.sample_gan(model, 2000, self.rng(34)))

    def test_pretrained_mean(self):
        samples = pf.sample_gan(self.pretrained, 2000, self.rng(35))
        gap = np.linalg.norm(samples.data.mean(axis=0) - self.pub.data.mean(axis=0))
        self.assertTrue(gap < 0.1, gap)

    def test_pretraining_beats_random_init(self):
        self.assertTrue(self.fid_to(self.pretrained, self.pub) < self.fid_to(self.untrained, self.pub))

    def test_non_private_training_improves_on_init(self):
        self.assertEqual(self.non_private.eps, math.inf)
        self.assertTrue(self.fid_to(self.non_private, self.priv) < self.fid_to(self.untrained, self.priv))

    def test_small_epsilon_is_worse(self):
        self.assertTrue(self.tight.eps <= 0.1)
        self.assertTrue(self.tight.sigma > 0.0)
        self.assertTrue(self.fid_to(self.tight, self.priv) > self.fid_to(self.non_private, self.priv))
