"""Synthetic public/private feature pools with a known mode structure."""
import logging
from typing import Optional, Tuple

import numpy as np
import pydantic

from .base import FeatureMatrix, SeededRng, standard_model_config
from .exceptions import ConfigurationError, OracleError
from .features import project_to_unit_ball

log = logging.getLogger(__name__)


class OracleConfig(pydantic.BaseModel):
    """Mixture of isotropic Gaussian modes; the private set uses a subset of them."""

    model_config = standard_model_config

    d: int = pydantic.Field(16, ge=1)
    n_pub: int = pydantic.Field(5000, ge=1)
    n_priv: int = pydantic.Field(2000, ge=2)
    modes: int = pydantic.Field(10, ge=1)
    private_modes: Tuple[int, ...] = (0, 1, 2)
    private_weights: Optional[Tuple[float, ...]] = None
    mode_std: float = pydantic.Field(0.05, gt=0.0)
    radius: float = pydantic.Field(0.7, ge=0.0)

    @pydantic.model_validator(mode="after")
    def check_modes(self) -> "OracleConfig":
        if not self.private_modes:
            raise ConfigurationError("[oracle] private_modes is empty")
        outside = sorted(set(s for s in self.private_modes if not 0 <= s < self.modes))
        if outside:
            raise ConfigurationError(
                "[oracle] private_modes {0} are not among the {1} public modes".format(outside, self.modes)
            )
        if len(set(self.private_modes)) != len(self.private_modes):
            raise ConfigurationError("[oracle] private_modes has duplicates")
        if self.private_weights is not None:
            if len(self.private_weights) != len(self.private_modes):
                raise ConfigurationError("[oracle] private_weights must match private_modes in length")
            if any(w <= 0 for w in self.private_weights):
                raise ConfigurationError("[oracle] private_weights must be positive")
        return self

    def mixture_weights(self) -> np.ndarray:
        if self.private_weights is None:
            return np.full(len(self.private_modes), 1.0 / len(self.private_modes))
        w = np.asarray(self.private_weights, dtype=np.float64)
        return w / w.sum()


def mode_centers(cfg: OracleConfig, rng: SeededRng) -> np.ndarray:
    """M centers at distance `radius`; mutually orthogonal when M <= d."""
    gen = rng.generator
    if cfg.modes <= cfg.d:
        q, _ = np.linalg.qr(gen.standard_normal((cfg.d, cfg.modes)))
        directions = q.T
    else:
        directions = gen.standard_normal((cfg.modes, cfg.d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return cfg.radius * directions


def _draw(centers, labels, std, gen) -> FeatureMatrix:
    data = centers[labels] + std * gen.standard_normal((labels.size, centers.shape[1]))
    return project_to_unit_ball(FeatureMatrix(data=data, labels=labels))


def gen_synthetic(cfg: OracleConfig, rng: SeededRng) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Returns (public, private) labelled pools, both projected to the unit ball.

    Public rows pick a mode uniformly; private rows pick one of the private
    modes by the configured weights, with the same centers and spread.
    """
    centers = mode_centers(cfg, rng.split(0))

    pub_gen = rng.split(1).generator
    pub_labels = pub_gen.integers(0, cfg.modes, size=cfg.n_pub)
    pub = _draw(centers, pub_labels, cfg.mode_std, pub_gen)

    priv_gen = rng.split(2).generator
    priv_labels = priv_gen.choice(np.asarray(cfg.private_modes), size=cfg.n_priv, p=cfg.mixture_weights())
    priv = _draw(centers, priv_labels, cfg.mode_std, priv_gen)

    missing = sorted(set(np.unique(priv_labels)) - set(np.unique(pub_labels)))
    if missing:
        raise OracleError("private modes {0} have no public rows; raise n_pub".format([int(m) for m in missing]))
    log.debug(
        "synthetic pools: m={0}, n={1}, d={2}, {3} modes, private modes {4}".format(
            cfg.n_pub, cfg.n_priv, cfg.d, cfg.modes, list(cfg.private_modes)
        )
    )
    return pub, priv


def split_private(priv: FeatureMatrix, rng: SeededRng) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Random 50/50 (train, evaluation) split of the private pool."""
    perm = rng.generator.permutation(priv.n)
    half = priv.n // 2
    return priv.take(np.sort(perm[:half])), priv.take(np.sort(perm[half:]))
