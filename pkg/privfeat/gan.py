"""Latent-space WGAN baselines trained with a DP critic.

The critic sees private rows and is the only noise-bearing learner; the
generator is updated from the critic alone. DP-GAN-MI starts from random
weights, DP-GAN-FT from a generator/critic pair pretrained on the public pool.
"""
import logging
import math
from typing import Literal, Optional, Tuple

import numpy as np
import pydantic

from .base import ArrayRecord, FeatureMatrix, PrivacyBudget, Real, SeededRng
from .enums import GpStyle, LossKind, OutputActivation
from .exceptions import ContractViolation, DimensionMismatch, TrainingDiverged
from .features import project_to_unit_ball
from .metrics import fid
from .nn import (
    DpSgdConfig,
    LossSpec,
    Mlp,
    adam_update,
    dp_step,
    forward_batch,
    glorot_mlp,
    grad_wrt_input_batch,
    per_example_grads,
    per_example_losses,
    pullback,
)
from .utils import config_hash, poisson_sample

log = logging.getLogger(__name__)


class GanConfig(DpSgdConfig):
    steps: int = pydantic.Field(1000, ge=1)
    z_dim: int = pydantic.Field(25, ge=1)
    generator_widths: Tuple[int, ...] = (64, 64, 64)
    critic_widths: Tuple[int, ...] = (64, 64, 64)
    critic_steps: int = pydantic.Field(5, ge=1)
    gp_style: GpStyle = GpStyle.REAL
    gp_weight: Optional[float] = pydantic.Field(None, ge=0.0)
    select_best: bool = True
    selection_samples: int = pydantic.Field(1000, ge=2)
    divergence_limit: float = pydantic.Field(1e6, gt=0.0)

    @property
    def loss(self) -> LossSpec:
        return LossSpec(kind=LossKind.CRITIC, gp_style=self.gp_style, gp_weight=self.gp_weight)

    @property
    def eval_every(self) -> int:
        return max(1, self.steps // 20)


class LatentGan(ArrayRecord):
    kind: Literal["latent_gan"] = "latent_gan"
    generator: Mlp
    critic: Mlp
    z_dim: int
    eps_target: Real = math.inf
    eps: Real = math.inf
    delta: Optional[float] = None
    sigma: float = 0.0
    critic_rounds: int = 0
    pretrained: bool = False
    selected_step: Optional[int] = None
    selection_accounted: bool = False
    config_hash: str = ""

    @pydantic.model_validator(mode="after")
    def check_pair(self) -> "LatentGan":
        if self.generator.input_dim != self.z_dim:
            raise DimensionMismatch("generator takes {0} inputs, z_dim is {1}".format(self.generator.input_dim, self.z_dim))
        for name, net in (("generator", self.generator), ("critic", self.critic)):
            if net.output_activation != OutputActivation.IDENTITY:
                raise ContractViolation("{0} must have an identity head".format(name))
        if self.critic.output_dim != 1:
            raise DimensionMismatch("critic must output a scalar")
        if self.critic.input_dim != self.generator.output_dim:
            raise DimensionMismatch(
                "generator emits d={0} but the critic takes d={1}".format(self.generator.output_dim, self.critic.input_dim)
            )
        return self

    @property
    def d(self) -> int:
        return self.generator.output_dim


def init_latent_gan(d: int, cfg: GanConfig, rng: SeededRng) -> LatentGan:
    generator = glorot_mlp((cfg.z_dim,) + tuple(cfg.generator_widths) + (d,), OutputActivation.IDENTITY, rng.split(0))
    critic = glorot_mlp((d,) + tuple(cfg.critic_widths) + (1,), OutputActivation.IDENTITY, rng.split(1))
    return LatentGan(generator=generator, critic=critic, z_dim=cfg.z_dim)


def generate(generator: Mlp, z: np.ndarray) -> np.ndarray:
    return forward_batch(generator, z)


def generator_gradient(generator: Mlp, critic: Mlp, z: np.ndarray) -> np.ndarray:
    """(1/B) sum_i grad_theta D(G(z_i)); touches no training data."""
    fake = generate(generator, z)
    dscore = grad_wrt_input_batch(critic, fake)
    return pullback(generator, z, dscore).mean(axis=0)


def sample_gan(gan: LatentGan, k: int, rng: SeededRng) -> FeatureMatrix:
    """Rows G(z) for z ~ N(0, I), projected to the unit ball."""
    if k < 1:
        raise ContractViolation("k must be at least 1, got {0}".format(k))
    z = rng.generator.standard_normal((k, gan.z_dim))
    return project_to_unit_ball(generate(gan.generator, z))


def _train_wgan(
    data: FeatureMatrix,
    gan: LatentGan,
    cfg: GanConfig,
    sigma: float,
    clip_norm: float,
    rng: SeededRng,
    label: str,
) -> LatentGan:
    n = data.n
    q = cfg.sample_rate(n)
    loss = cfg.loss
    batch_gen = rng.split(0).generator
    z_gen = rng.split(1).generator
    mix_gen = rng.split(2).generator
    noise_rng = rng.split(3)
    select_rng = rng.split(4)

    critic, generator = gan.critic, gan.generator
    c_theta, g_theta = critic.flat(), generator.flat()
    c_adam, g_adam = cfg.new_adam(c_theta.size), cfg.new_adam(g_theta.size)

    best_score, best = math.inf, None
    report_every = max(1, cfg.steps // 10)
    skipped = 0
    critic_loss = math.nan
    for t in range(cfg.steps):
        for _ in range(cfg.critic_steps):
            idx = poisson_sample(n, q, batch_gen)
            if idx.size == 0:
                skipped += 1
                continue
            real = data.data[idx]
            fake = generate(generator, z_gen.standard_normal((idx.size, cfg.z_dim)))
            mix = mix_gen.uniform(size=idx.size) if cfg.gp_style == GpStyle.INTERPOLATED else None

            critic_loss = float(np.mean(per_example_losses(critic, loss, real, fake, mix)))
            if not math.isfinite(critic_loss) or abs(critic_loss) > cfg.divergence_limit:
                raise TrainingDiverged(
                    "{0}: critic loss {1!r} at generator step {2}".format(label, critic_loss, t),
                    step=t,
                    loss=critic_loss,
                )
            grads = per_example_grads(critic, loss, real, fake, mix)
            step = dp_step(grads, clip_norm, sigma, noise_rng)
            c_adam, c_theta = adam_update(c_adam, c_theta, step, cfg.learning_rate)
            critic = critic.with_flat(c_theta)

        z = z_gen.standard_normal((cfg.batch_size, cfg.z_dim))
        g_adam, g_theta = adam_update(g_adam, g_theta, generator_gradient(generator, critic, z), cfg.learning_rate)
        generator = generator.with_flat(g_theta)

        if (t + 1) % report_every == 0:
            log.debug("{0} generator step {1}/{2}, critic loss {3:.4g}".format(label, t + 1, cfg.steps, critic_loss))

        if cfg.select_best and (t + 1) % cfg.eval_every == 0:
            z = select_rng.generator.standard_normal((cfg.selection_samples, cfg.z_dim))
            score = fid(project_to_unit_ball(generate(generator, z)), data)
            if score < best_score:
                best_score, best = score, (t + 1, generator, critic)

    if skipped:
        log.debug("{0}: {1} critic rounds had an empty Poisson batch".format(label, skipped))

    selected_step = None
    if best is not None:
        selected_step, generator, critic = best
        log.debug("{0}: kept generator step {1} (FID {2:.4g})".format(label, selected_step, best_score))
    return gan.model_copy(update={"generator": generator, "critic": critic, "selected_step": selected_step})


def pretrain_public_gan(pub: FeatureMatrix, cfg: GanConfig, rng: SeededRng) -> LatentGan:
    """Non-private WGAN training on the public pool: no clipping, no noise."""
    if not pub.within_unit_ball():
        raise ContractViolation("public features must lie in the unit ball")
    gan = init_latent_gan(pub.d, cfg, rng.split(0))
    gan = _train_wgan(pub, gan, cfg, sigma=0.0, clip_norm=math.inf, rng=rng.split(1), label="public GAN")
    log.info("pretrained public GAN on m={0} rows for {1} steps".format(pub.n, cfg.steps))
    return gan.model_copy(update={"pretrained": True, "eps": 0.0, "config_hash": config_hash(cfg)})


def train_dp_latent_gan(
    priv: FeatureMatrix,
    init: Optional[LatentGan],
    budget: PrivacyBudget,
    cfg: GanConfig,
    rng: SeededRng,
) -> LatentGan:
    """DP WGAN on the private rows; `init=None` starts from random weights.

    The accountant is charged T * critic_steps Poisson rounds at q = B/n.
    """
    if not priv.within_unit_ball():
        raise ContractViolation("private features must lie in the unit ball")
    if priv.n == 0:
        raise ContractViolation("private feature set is empty")
    if init is None:
        init = init_latent_gan(priv.d, cfg, rng.split(0))
    elif init.d != priv.d or init.z_dim != cfg.z_dim:
        raise DimensionMismatch(
            "initial GAN has d={0}, z_dim={1}; need d={2}, z_dim={3}".format(init.d, init.z_dim, priv.d, cfg.z_dim)
        )

    rounds = cfg.steps * cfg.critic_steps
    calibration = cfg.noise_calibration(budget, priv.n, rounds)
    log.info(
        "DP-GAN: n={0}, q={1:.4g}, rounds={2}, sigma={3:.6g}, eps={4!r}{5}".format(
            priv.n,
            cfg.sample_rate(priv.n),
            rounds,
            calibration.sigma,
            calibration.eps_achieved,
            " (finetuning)" if init.pretrained else "",
        )
    )
    if cfg.select_best:
        log.warning("checkpoint selection by FID on the private rows is not privacy-accounted")

    gan = _train_wgan(
        priv,
        init,
        cfg,
        sigma=calibration.sigma,
        clip_norm=cfg.clip_norm,
        rng=rng.split(1),
        label="DP-GAN",
    )
    return gan.model_copy(
        update={
            "eps_target": budget.epsilon,
            "eps": calibration.eps_achieved,
            "delta": budget.delta,
            "sigma": calibration.sigma,
            "critic_rounds": rounds,
            "selection_accounted": False,
            "config_hash": config_hash(cfg),
        }
    )
