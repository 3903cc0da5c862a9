"""Privacy calibration for the Gaussian mechanism and for DP-SGD.

The closed form used for one-shot Gaussian releases comes from the RDP curve
alpha / (2 sigma^2) of the Gaussian mechanism, converted to (eps, delta) at
its best real order. DP-SGD is accounted with the RDP of the Poisson
subsampled Gaussian mechanism (add/remove neighbouring relation), composed
over T steps and converted with eps = min_a [rdp(a) + log(1/delta) / (a - 1)].
"""
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
import pydantic
from scipy import special

from .base import FloatArray, Real, standard_model_config
from .exceptions import CalibrationError, ConfigurationError, PrivacyDomainError

log = logging.getLogger(__name__)

# Orders above 256 matter once sigma is in the hundreds: at delta=1e-5 the
# log(1/delta)/(alpha-1) term alone is 0.045 at alpha=256, so sigma=1000 could
# not reach eps < 0.01 on a grid that stops there.
DEFAULT_ORDERS: Tuple[int, ...] = tuple(range(2, 65)) + (128, 256, 512, 1024, 2048, 4096)

SIGMA_BRACKET = (1e-2, 1e4)
CALIBRATION_TOLERANCE = 1e-4
MAX_BISECTIONS = 100


def _check_delta(delta: float):
    if not 0.0 < delta < 1.0:
        raise PrivacyDomainError("delta must lie in (0, 1), got {0!r}".format(delta))


def gaussian_sigma(epsilon: float, delta: float) -> float:
    """Noise multiplier that makes the Gaussian mechanism (epsilon, delta)-DP, for any epsilon > 0."""
    _check_delta(delta)
    if math.isinf(epsilon) and epsilon > 0:
        return 0.0
    if math.isnan(epsilon) or epsilon <= 0:
        raise PrivacyDomainError("epsilon must be positive, got {0!r}".format(epsilon))
    log_inv_delta = math.log(1.0 / delta)
    return (
        math.sqrt(2.0 * log_inv_delta + 2.0 * epsilon) + math.sqrt(2.0 * log_inv_delta)
    ) / (2.0 * epsilon)


def gaussian_epsilon(sigma: float, delta: float) -> float:
    """Inverse of `gaussian_sigma`: the epsilon reached at the best real order."""
    _check_delta(delta)
    if math.isnan(sigma) or sigma <= 0:
        raise PrivacyDomainError("sigma must be positive, got {0!r}".format(sigma))
    if math.isinf(sigma):
        return 0.0
    return math.sqrt(2.0 * math.log(1.0 / delta)) / sigma + 1.0 / (2.0 * sigma ** 2)


def gaussian_optimal_order(sigma: float, delta: float) -> float:
    return 1.0 + math.sqrt(2.0 * sigma ** 2 * math.log(1.0 / delta))


def sgm_rdp(q: float, sigma: float, alpha: int) -> float:
    """RDP at integer order alpha of one Poisson-subsampled Gaussian step.

    log sum_k C(alpha, k) (1-q)^(alpha-k) q^k exp((k^2 - k) / (2 sigma^2)) / (alpha - 1),
    evaluated with log-sum-exp.
    """
    if not 0.0 <= q <= 1.0:
        raise PrivacyDomainError("sample rate must lie in [0, 1], got {0!r}".format(q))
    if int(alpha) != alpha or alpha < 2:
        raise PrivacyDomainError("order must be an integer >= 2, got {0!r}".format(alpha))
    if sigma < 0 or math.isnan(sigma):
        raise PrivacyDomainError("sigma must be non-negative, got {0!r}".format(sigma))
    alpha = int(alpha)

    if q == 0.0:
        return 0.0
    if sigma == 0.0:
        return math.inf
    if q == 1.0:
        return alpha / (2.0 * sigma ** 2)

    k = np.arange(alpha + 1, dtype=np.float64)
    log_binom = special.gammaln(alpha + 1) - special.gammaln(k + 1) - special.gammaln(alpha - k + 1)
    log_terms = (
        log_binom
        + k * math.log(q)
        + (alpha - k) * math.log1p(-q)
        + (k * k - k) / (2.0 * sigma ** 2)
    )
    log_a = special.logsumexp(log_terms)
    return max(0.0, float(log_a) / (alpha - 1))


class RdpCurve(pydantic.BaseModel):
    """Per-order RDP values; composing T identical steps multiplies every value by T."""

    model_config = pydantic.ConfigDict(**standard_model_config, arbitrary_types_allowed=True)

    orders: FloatArray
    values: FloatArray

    @pydantic.model_validator(mode="after")
    def check_curve(self) -> "RdpCurve":
        if self.orders.ndim != 1 or self.orders.shape != self.values.shape:
            raise ConfigurationError("orders and values must be matching vectors")
        if self.orders.size == 0:
            raise ConfigurationError("empty order grid")
        if np.any(self.orders <= 1.0) or np.any(np.diff(self.orders) <= 0):
            raise ConfigurationError("orders must be strictly increasing and > 1")
        if np.any(self.values < 0):
            raise ConfigurationError("RDP values must be non-negative")
        return self

    def compose(self, steps: int) -> "RdpCurve":
        return RdpCurve(orders=self.orders, values=self.values * steps)


class SgdPrivacySpec(pydantic.BaseModel):
    model_config = standard_model_config

    q: float = pydantic.Field(gt=0.0, le=1.0)
    sigma: float = pydantic.Field(ge=0.0)
    steps: int = pydantic.Field(ge=1)
    delta: float = pydantic.Field(default=1e-5, gt=0.0, lt=1.0)
    orders: Tuple[float, ...] = DEFAULT_ORDERS


class Calibration(pydantic.BaseModel):
    model_config = standard_model_config

    sigma: float
    eps_achieved: Real
    alpha_star: Optional[float] = None


def _check_orders(orders: Sequence[float]) -> Tuple[int, ...]:
    if orders is None or len(orders) == 0:
        raise ConfigurationError("empty order grid")
    return tuple(orders)


def sgd_rdp_curve(q: float, sigma: float, steps: int, orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    orders = _check_orders(orders)
    one_step = RdpCurve(
        orders=np.array(orders, dtype=np.float64),
        values=np.array([sgm_rdp(q, sigma, a) for a in orders], dtype=np.float64),
    )
    return one_step.compose(steps)


def rdp_to_epsilon(curve: RdpCurve, delta: float) -> Tuple[float, float]:
    """Returns (epsilon, best order) for the curve at the given delta."""
    _check_delta(delta)
    eps = curve.values + math.log(1.0 / delta) / (curve.orders - 1.0)
    best = int(np.argmin(eps))
    return float(eps[best]), float(curve.orders[best])


def sgd_epsilon_and_order(spec: SgdPrivacySpec) -> Tuple[float, Optional[float]]:
    orders = _check_orders(spec.orders)
    if spec.sigma == 0.0:
        return math.inf, None
    curve = sgd_rdp_curve(spec.q, spec.sigma, spec.steps, orders)
    return rdp_to_epsilon(curve, spec.delta)


def sgd_epsilon(spec: SgdPrivacySpec) -> float:
    """Epsilon spent by T Poisson-subsampled Gaussian steps at (q, sigma)."""
    return sgd_epsilon_and_order(spec)[0]


def _epsilon_at(sigma, delta, q, steps, orders):
    return sgd_epsilon(SgdPrivacySpec(q=q, sigma=sigma, steps=steps, delta=delta, orders=orders))


def calibrate_sigma(
    eps_target: float,
    delta: float,
    q: float,
    steps: int,
    orders: Sequence[float] = DEFAULT_ORDERS,
    bracket: Tuple[float, float] = SIGMA_BRACKET,
) -> float:
    """Smallest-found noise multiplier whose DP-SGD epsilon lies in [target (1 - 1e-4), target].

    Bisects (geometrically) on `bracket`; epsilon is decreasing in sigma.
    """
    _check_delta(delta)
    if math.isinf(eps_target) and eps_target > 0:
        return 0.0
    if math.isnan(eps_target) or eps_target <= 0:
        raise PrivacyDomainError("target epsilon must be positive, got {0!r}".format(eps_target))
    orders = _check_orders(orders)

    lo, hi = bracket
    eps_lo = _epsilon_at(lo, delta, q, steps, orders)
    eps_hi = _epsilon_at(hi, delta, q, steps, orders)

    if eps_hi > eps_target:
        raise CalibrationError(
            "target epsilon {0!r} unreachable: sigma in [{1!r}, {2!r}] gives epsilon in [{3!r}, {4!r}]".format(
                eps_target, lo, hi, eps_hi, eps_lo
            ),
            bracket=(lo, hi),
            bracket_epsilons=(eps_lo, eps_hi),
        )
    if eps_lo <= eps_target:
        log.warning(
            "target epsilon {0!r} already met at the lower bracket edge sigma={1!r} (epsilon {2!r})".format(
                eps_target, lo, eps_lo
            )
        )
        return lo

    # invariant: eps(lo) > target >= eps(hi)
    for _ in range(MAX_BISECTIONS):
        if eps_hi >= eps_target * (1.0 - CALIBRATION_TOLERANCE):
            break
        mid = math.sqrt(lo * hi)
        eps_mid = _epsilon_at(mid, delta, q, steps, orders)
        if eps_mid > eps_target:
            lo = mid
        else:
            hi, eps_hi = mid, eps_mid

    log.debug(
        "calibrated sigma={0!r} for target epsilon {1!r} (achieved {2!r})".format(hi, eps_target, eps_hi)
    )
    return hi


def calibrate(
    eps_target: float,
    delta: float,
    q: float,
    steps: int,
    orders: Sequence[float] = DEFAULT_ORDERS,
) -> Calibration:
    sigma = calibrate_sigma(eps_target, delta, q, steps, orders)
    if sigma == 0.0:
        return Calibration(sigma=0.0, eps_achieved=math.inf, alpha_star=None)
    eps, alpha = sgd_epsilon_and_order(
        SgdPrivacySpec(q=q, sigma=sigma, steps=steps, delta=delta, orders=orders)
    )
    return Calibration(sigma=sigma, eps_achieved=eps, alpha_star=alpha)


def orders_up_to(grid_max: int) -> Tuple[int, ...]:
    """Default order grid truncated at grid_max."""
    orders = tuple(a for a in DEFAULT_ORDERS if a <= grid_max)
    if not orders:
        raise ConfigurationError("order grid is empty for grid_max={0}".format(grid_max))
    return orders
