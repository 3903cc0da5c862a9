import logging
from typing import Literal, Tuple

import numpy as np
import pydantic

from .accountant import gaussian_sigma
from .base import ArrayRecord, FeatureMatrix, FloatArray, PrivacyBudget, Real, SeededRng, standard_model_config
from .exceptions import ContractViolation, DimensionMismatch
from .features import project_to_unit_ball

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8


class MgeConfig(pydantic.BaseModel):
    model_config = standard_model_config

    variance_floor: float = pydantic.Field(VARIANCE_FLOOR, gt=0.0)


class GaussianModel(ArrayRecord):
    """Diagonal Gaussian N(mu, diag(s)) fitted under (eps, delta)-DP."""

    kind: Literal["gaussian"] = "gaussian"
    mu: FloatArray
    s: FloatArray
    eps: Real
    delta: float
    variance_floor: float = VARIANCE_FLOOR

    @pydantic.model_validator(mode="after")
    def check_parameters(self) -> "GaussianModel":
        if self.mu.ndim != 1 or self.mu.shape != self.s.shape:
            raise DimensionMismatch("mu and s must be vectors of the same length")
        if not np.all(np.isfinite(self.mu)):
            raise ContractViolation("mu must be finite")
        if not np.all(self.s >= self.variance_floor):
            raise ContractViolation("variances must be at least {0!r}".format(self.variance_floor))
        return self

    @property
    def d(self) -> int:
        return int(self.mu.shape[0])


def mge_statistics(data: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Un-noised mean and mean of squares, each with L2 sensitivity 2/n on the unit ball."""
    data = np.asarray(data, dtype=np.float64)
    return data.mean(axis=0), np.mean(data * data, axis=0)


def fit_dp_mge(
    priv: FeatureMatrix,
    budget: PrivacyBudget,
    rng: SeededRng,
    variance_floor: float = VARIANCE_FLOOR,
) -> GaussianModel:
    """Private mean and per-coordinate variance of features in the unit ball.

    Each statistic has L2 sensitivity 2/n and gets half of the budget:
    mu = mean(v) + N(0, (2 sigma/n)^2 I), s = mean(v^2) - mu^2 + N(0, (2 sigma/n)^2 I),
    with sigma = gaussian_sigma(eps/2, delta/2). s is then floored.
    """
    if not priv.within_unit_ball():
        raise ContractViolation("private features must lie in the unit ball")
    n = priv.n
    if n < 2:
        raise ContractViolation("need at least 2 private rows, got {0}".format(n))

    half = budget.split(2)
    sigma = gaussian_sigma(half.epsilon, half.delta)
    scale = 2.0 * sigma / n

    mu, second = mge_statistics(priv.data)
    if sigma > 0.0:
        gen = rng.generator
        mu = mu + gen.normal(0.0, scale, size=priv.d)
        s = second - mu * mu + gen.normal(0.0, scale, size=priv.d)
    else:
        s = second - mu * mu

    clamped = int(np.sum(s < variance_floor))
    if clamped:
        log.debug("{0} of {1} variances clamped to {2!r}".format(clamped, priv.d, variance_floor))
    s = np.maximum(s, variance_floor)

    log.info("fit DP-MGE on n={0}, d={1} at {2!r} (noise std {3:.3g})".format(n, priv.d, budget, scale))
    return GaussianModel(
        mu=mu,
        s=s,
        eps=budget.epsilon,
        delta=budget.delta,
        variance_floor=variance_floor,
    )


def sample_mge(model: GaussianModel, k: int, rng: SeededRng) -> FeatureMatrix:
    """k draws from N(mu, diag(s)), projected to the unit ball."""
    if k < 1:
        raise ContractViolation("k must be at least 1, got {0}".format(k))
    draws = rng.generator.normal(model.mu, np.sqrt(model.s), size=(k, model.d))
    return project_to_unit_ball(draws)
