"""DP density-ratio estimation between the public and private feature sets.

A discriminator D is trained with DP-SGD to tell private rows (label 1) from
public rows (label 0). D/(1-D) then estimates P_priv/P_pub and reweights the
public pool; sampling from the reweighted pool is post-processing.
"""
import logging
import math
from typing import Iterable, Literal, Optional, Tuple

import numpy as np
import pydantic

from .base import ArrayRecord, FeatureMatrix, FloatArray, PrivacyBudget, Real, SeededRng
from .exceptions import ContractViolation, DimensionMismatch, MissingLabels, NumericalError
from .enums import OutputActivation
from .nn import (
    DRE_LOSS,
    DpSgdConfig,
    Mlp,
    adam_update,
    dp_step,
    glorot_mlp,
    logits,
    per_example_grads,
)
from .utils import config_hash, poisson_sample

log = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-12


class DreConfig(DpSgdConfig):
    hidden_widths: Tuple[int, ...] = (16,)

    @pydantic.field_validator("hidden_widths")
    def widths_must_be_positive(cls, v):
        if any(w < 1 for w in v):
            raise ValueError("hidden widths must be positive")
        return v


class Discriminator(ArrayRecord):
    kind: Literal["discriminator"] = "discriminator"
    network: Mlp
    eps_target: Real
    eps: Real
    delta: float
    sigma: float
    steps: int
    skipped_steps: int = 0
    config_hash: str = ""

    @pydantic.model_validator(mode="after")
    def check_network(self) -> "Discriminator":
        if self.network.output_activation != OutputActivation.SIGMOID or self.network.output_dim != 1:
            raise ContractViolation("a discriminator needs a scalar sigmoid head")
        return self

    @property
    def d(self) -> int:
        return self.network.input_dim


class WeightedPublicModel(ArrayRecord):
    """Categorical distribution over the rows of a fixed public pool."""

    kind: Literal["weighted_public"] = "weighted_public"
    weights: FloatArray
    public_ref: str
    eps: Real = math.inf
    delta: Optional[float] = None

    @pydantic.field_validator("weights")
    def weights_must_be_distribution(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 1 or v.size == 0:
            raise DimensionMismatch("weights must be a non-empty vector")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ContractViolation("weights must be finite and non-negative")
        if abs(math.fsum(v) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ContractViolation("weights sum to {0!r}, not 1".format(math.fsum(v)))
        return v

    @property
    def m(self) -> int:
        return int(self.weights.shape[0])

    def check_pool(self, pub: FeatureMatrix):
        if pub.n != self.m:
            raise DimensionMismatch("model has {0} weights but the pool has {1} rows".format(self.m, pub.n))
        if pub.fingerprint() != self.public_ref:
            raise ContractViolation("public pool differs from the one the weights were computed on")


def _check_inputs(priv: FeatureMatrix, pub: FeatureMatrix):
    for name, m in (("private", priv), ("public", pub)):
        if not m.within_unit_ball():
            raise ContractViolation("{0} features must lie in the unit ball".format(name))
        if m.n == 0:
            raise ContractViolation("{0} feature set is empty".format(name))
    if priv.d != pub.d:
        raise DimensionMismatch("private d={0} but public d={1}".format(priv.d, pub.d))


def train_dp_dre(
    priv: FeatureMatrix,
    pub: FeatureMatrix,
    budget: PrivacyBudget,
    cfg: DreConfig,
    rng: SeededRng,
) -> Discriminator:
    """Trains the private/public discriminator with DP-SGD and Adam.

    Every step Poisson-samples the private set at rate q = B/n and pairs each
    sampled row with a public row drawn uniformly with replacement. A step
    whose Poisson batch is empty performs no update but still counts towards
    T, which is what the accountant charged for.
    """
    _check_inputs(priv, pub)
    calibration = cfg.noise_calibration(budget, priv.n, cfg.steps)
    q = cfg.sample_rate(priv.n)
    sigma = calibration.sigma
    log.info(
        "DP-DRE: n={0}, m={1}, q={2:.4g}, T={3}, sigma={4:.6g}, eps={5!r}".format(
            priv.n, pub.n, q, cfg.steps, sigma, calibration.eps_achieved
        )
    )

    net = glorot_mlp((priv.d,) + tuple(cfg.hidden_widths) + (1,), OutputActivation.SIGMOID, rng.split(0))
    batch_gen = rng.split(1).generator
    pub_gen = rng.split(2).generator
    noise_rng = rng.split(3)

    theta = net.flat()
    adam = cfg.new_adam(theta.size)
    skipped = 0
    report_every = max(1, cfg.steps // 10)
    for t in range(cfg.steps):
        idx = poisson_sample(priv.n, q, batch_gen)
        if idx.size == 0:
            skipped += 1
            continue
        pub_idx = pub_gen.integers(0, pub.n, size=idx.size)
        grads = per_example_grads(net, DRE_LOSS, priv.data[idx], pub.data[pub_idx])
        step = dp_step(grads, cfg.clip_norm, sigma, noise_rng)
        adam, theta = adam_update(adam, theta, step, cfg.learning_rate)
        net = net.with_flat(theta)
        if (t + 1) % report_every == 0:
            log.debug("DP-DRE step {0}/{1}, batch {2}".format(t + 1, cfg.steps, idx.size))

    if skipped:
        log.debug("{0} of {1} steps had an empty Poisson batch".format(skipped, cfg.steps))
    return Discriminator(
        network=net,
        eps_target=budget.epsilon,
        eps=calibration.eps_achieved,
        delta=budget.delta,
        sigma=sigma,
        steps=cfg.steps,
        skipped_steps=skipped,
        config_hash=config_hash(cfg),
    )


def density_ratios(disc: Discriminator, X) -> np.ndarray:
    """D/(1-D) for every row, computed as exp of the clamped logit."""
    if isinstance(X, FeatureMatrix):
        X = X.data
    return np.exp(logits(disc.network, np.atleast_2d(X)))


def density_ratio(disc: Discriminator, v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch("density_ratio takes one feature vector")
    return float(density_ratios(disc, v[None, :])[0])


def _normalize(ratios: np.ndarray) -> np.ndarray:
    total = math.fsum(ratios)
    if not total > 0.0 or not math.isfinite(total):
        raise NumericalError("density ratios sum to {0!r}".format(total))
    weights = ratios / total
    # fold the rounding residue into the largest weight
    residue = 1.0 - math.fsum(weights)
    weights[int(np.argmax(weights))] += residue
    return weights


def compute_weights(disc: Discriminator, pub: FeatureMatrix) -> WeightedPublicModel:
    """p_j proportional to D/(1-D) at public row j."""
    if not pub.within_unit_ball():
        raise ContractViolation("public features must lie in the unit ball")
    if pub.d != disc.d:
        raise DimensionMismatch("discriminator takes d={0}, public pool has d={1}".format(disc.d, pub.d))
    if pub.n == 0:
        raise ContractViolation("public pool is empty")
    weights = _normalize(density_ratios(disc, pub))
    return WeightedPublicModel(
        weights=weights,
        public_ref=pub.fingerprint(),
        eps=disc.eps,
        delta=disc.delta,
    )


def uniform_public_model(pub: FeatureMatrix) -> WeightedPublicModel:
    """The uniform-public baseline: weight 1/m on every row, no privacy cost."""
    if pub.n == 0:
        raise ContractViolation("public pool is empty")
    return WeightedPublicModel(
        weights=_normalize(np.ones(pub.n)),
        public_ref=pub.fingerprint(),
        eps=0.0,
    )


def sample_dre(model: WeightedPublicModel, pub: FeatureMatrix, k: int, rng: SeededRng) -> FeatureMatrix:
    """k categorical draws of public rows by the model weights, with replacement."""
    if k < 1:
        raise ContractViolation("k must be at least 1, got {0}".format(k))
    model.check_pool(pub)
    idx = rng.generator.choice(model.m, size=k, replace=True, p=model.weights)
    return pub.take(idx)


def superclass_weight(model: WeightedPublicModel, pub_labels, target_labels: Iterable[int]) -> float:
    """Total weight of public rows whose label lies in target_labels."""
    if isinstance(pub_labels, FeatureMatrix):
        pub_labels = pub_labels.require_labels()
    if pub_labels is None:
        raise MissingLabels("public labels are required")
    pub_labels = np.asarray(pub_labels)
    if pub_labels.shape != model.weights.shape:
        raise DimensionMismatch("got {0} labels for {1} weights".format(pub_labels.size, model.m))
    mask = np.isin(pub_labels, np.fromiter(target_labels, dtype=np.int64))
    return float(min(1.0, math.fsum(model.weights[mask])))
