"""Small fully connected networks with hand-written per-example gradients.

Only the two loss shapes used by the density-ratio discriminator and the
latent GAN critic are supported, plus the generator pullback used by the GAN.
Parameters are flattened layer by layer, weights (row-major, shape
(out, in)) before biases, which fixes the norm used for clipping.
"""
import logging
import math
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import pydantic

from .accountant import DEFAULT_ORDERS, Calibration, SgdPrivacySpec, calibrate, sgd_epsilon_and_order
from .base import ArrayRecord, FloatArray, PrivacyBudget, SeededRng, standard_model_config
from .enums import GpStyle, LossKind, OutputActivation
from .exceptions import ContractViolation, DimensionMismatch, NumericalError

log = logging.getLogger(__name__)

LOGIT_CLAMP = 30.0
NEGATIVE_SLOPE = 0.2


class Mlp(ArrayRecord):
    """Weights W_l of shape (out, in) and biases b_l; LeakyReLU on hidden layers."""

    kind: Literal["mlp"] = "mlp"
    layer_dims: Tuple[int, ...]
    weights: List[FloatArray]
    biases: List[FloatArray]
    output_activation: OutputActivation = OutputActivation.SIGMOID
    negative_slope: float = NEGATIVE_SLOPE

    @pydantic.model_validator(mode="after")
    def check_layers(self) -> "Mlp":
        dims = self.layer_dims
        if len(dims) < 2 or min(dims) < 1:
            raise DimensionMismatch("layer_dims needs at least an input and an output size")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise DimensionMismatch("expected {0} layers of parameters".format(len(dims) - 1))
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise DimensionMismatch(
                    "layer {0}: weight {1} / bias {2} do not match dims {3} -> {4}".format(
                        l, w.shape, b.shape, dims[l], dims[l + 1]
                    )
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalError("layer {0} has non-finite parameters".format(l))
        return self

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, theta: np.ndarray) -> "Mlp":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_params,):
            raise DimensionMismatch(
                "expected {0} parameters, got shape {1}".format(self.num_params, theta.shape)
            )
        if not np.all(np.isfinite(theta)):
            raise NumericalError("parameter update produced non-finite values")
        weights, biases = [], []
        pos = 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return self.model_copy(update={"weights": weights, "biases": biases})


class AdamState(ArrayRecord):
    kind: Literal["adam"] = "adam"
    m: FloatArray
    v: FloatArray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    stabilizer: float = 1e-8

    @classmethod
    def zeros(cls, num_params: int, beta1=0.9, beta2=0.999, stabilizer=1e-8) -> "AdamState":
        return cls(
            m=np.zeros(num_params),
            v=np.zeros(num_params),
            t=0,
            beta1=beta1,
            beta2=beta2,
            stabilizer=stabilizer,
        )


class DpSgdConfig(pydantic.BaseModel):
    """DP-SGD hyperparameters shared by the discriminator and the GAN critic."""

    model_config = standard_model_config

    steps: int = pydantic.Field(10_000, ge=1)
    learning_rate: float = pydantic.Field(1e-3, gt=0.0)
    batch_size: int = pydantic.Field(64, ge=1)
    clip_norm: float = pydantic.Field(1.0, gt=0.0)
    # Explicit noise multiplier; None means calibrate from the budget.
    sigma: Optional[float] = pydantic.Field(None, ge=0.0)
    seed: int = pydantic.Field(0, ge=0)
    beta1: float = pydantic.Field(0.9, ge=0.0, lt=1.0)
    beta2: float = pydantic.Field(0.999, ge=0.0, lt=1.0)
    adam_stabilizer: float = pydantic.Field(1e-8, gt=0.0)
    orders: Tuple[float, ...] = DEFAULT_ORDERS

    def sample_rate(self, n: int) -> float:
        if n < 1:
            raise ContractViolation("cannot sample from an empty dataset")
        q = self.batch_size / n
        if q > 1.0:
            log.warning("batch size {0} exceeds dataset size {1}; using q=1".format(self.batch_size, n))
            q = 1.0
        return q

    def new_adam(self, num_params: int) -> AdamState:
        return AdamState.zeros(num_params, self.beta1, self.beta2, self.adam_stabilizer)

    def noise_calibration(self, budget: PrivacyBudget, n: int, rounds: int) -> Calibration:
        """Noise multiplier for `rounds` Poisson rounds over n records.

        An explicit `sigma` wins over the budget; otherwise sigma is calibrated
        once from (epsilon, delta, q, rounds).
        """
        q = self.sample_rate(n)
        if self.sigma is not None:
            if self.sigma == 0.0:
                return Calibration(sigma=0.0, eps_achieved=math.inf)
            eps, alpha = sgd_epsilon_and_order(
                SgdPrivacySpec(q=q, sigma=self.sigma, steps=rounds, delta=budget.delta, orders=self.orders)
            )
            return Calibration(sigma=self.sigma, eps_achieved=eps, alpha_star=alpha)
        return calibrate(budget.epsilon, budget.delta, q, rounds, self.orders)


class LossSpec(pydantic.BaseModel):
    """Which per-example loss to differentiate.

    DENSITY_RATIO examples are (v_priv, v_pub) pairs; the minimized loss is
    -[log D(v_priv) + log(1 - D(v_pub))]. CRITIC examples are (x_real, x_fake)
    pairs, plus an interpolation coefficient for the interpolated penalty; the
    minimized loss is D(x_real) - D(x_fake) + weight * penalty.
    """

    model_config = standard_model_config

    kind: LossKind
    gp_style: GpStyle = GpStyle.REAL
    gp_weight: Optional[float] = None

    @property
    def penalty_weight(self) -> float:
        if self.gp_weight is not None:
            return self.gp_weight
        return 10.0 if self.gp_style == GpStyle.INTERPOLATED else 1.0


DRE_LOSS = LossSpec(kind=LossKind.DENSITY_RATIO)


def glorot_mlp(
    layer_dims: Sequence[int],
    output_activation: OutputActivation,
    rng: SeededRng,
    negative_slope: float = NEGATIVE_SLOPE,
) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    gen = rng.generator
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(gen.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(
        layer_dims=tuple(layer_dims),
        weights=weights,
        biases=biases,
        output_activation=output_activation,
        negative_slope=negative_slope,
    )


def zero_mlp(layer_dims: Sequence[int], output_activation: OutputActivation) -> Mlp:
    return Mlp(
        layer_dims=tuple(layer_dims),
        weights=[np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])],
        biases=[np.zeros(o) for o in layer_dims[1:]],
        output_activation=output_activation,
    )


def _leaky(z, slope):
    return np.where(z > 0, z, slope * z)


def _leaky_grad(z, slope):
    return np.where(z > 0, 1.0, slope)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _check_input(mlp: Mlp, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != mlp.input_dim:
        raise DimensionMismatch(
            "network expects inputs of dimension {0}, got shape {1}".format(mlp.input_dim, X.shape)
        )
    return X


def _forward(mlp: Mlp, X: np.ndarray):
    """Pre-activations z_l and activations a_l (a_0 = X) for a batch."""
    pre, post = [], [X]
    a = X
    last = mlp.num_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T + b
        pre.append(z)
        if l < last:
            a = _leaky(z, mlp.negative_slope)
        elif mlp.output_activation == OutputActivation.SIGMOID:
            a = _sigmoid(np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP))
        else:
            a = z
        post.append(a)
    return pre, post


def forward_batch(mlp: Mlp, X: np.ndarray) -> np.ndarray:
    """Outputs for a batch, shape (B, out)."""
    return _forward(mlp, _check_input(mlp, X))[1][-1]


def forward(mlp: Mlp, v: np.ndarray):
    """Output for one input vector: a float for scalar heads, else a vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch("forward takes one input vector; use forward_batch for batches")
    out = forward_batch(mlp, v[None, :])[0]
    return float(out[0]) if mlp.output_dim == 1 else out


def logits(mlp: Mlp, X: np.ndarray) -> np.ndarray:
    """Clamped last-layer pre-activations of a scalar network, shape (B,)."""
    pre, _ = _forward(mlp, _check_input(mlp, X))
    return np.clip(pre[-1][:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)


def _backward(mlp: Mlp, pre, post, delta: np.ndarray) -> np.ndarray:
    """Per-example parameter gradients given dL/dz at the last layer.

    Returns an array of shape (B, num_params) in canonical order.
    """
    B = delta.shape[0]
    blocks = [None] * (2 * mlp.num_layers)
    for l in range(mlp.num_layers - 1, -1, -1):
        a_prev = post[l]
        blocks[2 * l] = (delta[:, :, None] * a_prev[:, None, :]).reshape(B, -1)
        blocks[2 * l + 1] = delta
        if l > 0:
            delta = (delta @ mlp.weights[l]) * _leaky_grad(pre[l - 1], mlp.negative_slope)
    return np.concatenate(blocks, axis=1)


def _backward_to_input(mlp: Mlp, pre, delta: np.ndarray) -> np.ndarray:
    for l in range(mlp.num_layers - 1, 0, -1):
        delta = (delta @ mlp.weights[l]) * _leaky_grad(pre[l - 1], mlp.negative_slope)
    return delta @ mlp.weights[0]


def pullback(mlp: Mlp, X: np.ndarray, grad_output: np.ndarray) -> np.ndarray:
    """Per-example parameter gradients of <grad_output, f(x)> for an identity-head network."""
    if mlp.output_activation != OutputActivation.IDENTITY:
        raise ContractViolation("pullback is defined for identity-head networks")
    X = _check_input(mlp, X)
    pre, post = _forward(mlp, X)
    return _backward(mlp, pre, post, np.asarray(grad_output, dtype=np.float64))


def _input_jacobian_rows(mlp: Mlp, pre) -> List[np.ndarray]:
    """u_l = dD/dz_l for every layer of a scalar identity-head network."""
    B = pre[0].shape[0]
    u = [None] * mlp.num_layers
    u[-1] = np.ones((B, 1))
    for l in range(mlp.num_layers - 1, 0, -1):
        u[l - 1] = (u[l] @ mlp.weights[l]) * _leaky_grad(pre[l - 1], mlp.negative_slope)
    return u


def _check_critic(mlp: Mlp):
    if mlp.output_activation != OutputActivation.IDENTITY or mlp.output_dim != 1:
        raise ContractViolation("input gradients need a scalar identity-head network")


def grad_wrt_input_batch(mlp: Mlp, X: np.ndarray) -> np.ndarray:
    _check_critic(mlp)
    X = _check_input(mlp, X)
    pre, _ = _forward(mlp, X)
    u = _input_jacobian_rows(mlp, pre)
    return u[0] @ mlp.weights[0]


def grad_wrt_input(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """dD/dx at one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("grad_wrt_input takes one input vector")
    return grad_wrt_input_batch(mlp, x[None, :])[0]


def _penalty(g: np.ndarray, style: GpStyle):
    """Penalty value and its gradient with respect to the input gradient g."""
    norms = np.linalg.norm(g, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = g / safe[:, None]
    unit[norms == 0] = 0.0
    if style == GpStyle.INTERPOLATED:
        return (norms - 1.0) ** 2, 2.0 * (norms - 1.0)[:, None] * unit
    return norms, unit


def _penalty_param_grads(mlp: Mlp, X: np.ndarray, style: GpStyle):
    """Penalty values and their per-example parameter gradients.

    The input gradient g = u_0 W_0 with u_{l-1} = (u_l W_l) * s_{l-1} is
    multilinear in the weights (the LeakyReLU slopes s are locally constant),
    so reverse-mode through that recursion gives the exact gradient; biases
    only enter through s and get zero gradient.
    """
    pre, _ = _forward(mlp, X)
    u = _input_jacobian_rows(mlp, pre)
    g = u[0] @ mlp.weights[0]
    values, g_bar = _penalty(g, style)

    B = X.shape[0]
    weight_grads = [None] * mlp.num_layers
    weight_grads[0] = u[0][:, :, None] * g_bar[:, None, :]
    u_bar = g_bar @ mlp.weights[0].T
    for l in range(1, mlp.num_layers):
        w_bar = u_bar * _leaky_grad(pre[l - 1], mlp.negative_slope)
        weight_grads[l] = u[l][:, :, None] * w_bar[:, None, :]
        u_bar = w_bar @ mlp.weights[l].T

    blocks = []
    for l in range(mlp.num_layers):
        blocks.append(weight_grads[l].reshape(B, -1))
        blocks.append(np.zeros((B, mlp.biases[l].size)))
    return values, np.concatenate(blocks, axis=1)


def _penalty_points(spec: LossSpec, real, fake, mix):
    if spec.gp_style == GpStyle.INTERPOLATED:
        if mix is None:
            raise ContractViolation("the interpolated penalty needs interpolation coefficients")
        mix = np.asarray(mix, dtype=np.float64).reshape(-1, 1)
        return mix * real + (1.0 - mix) * fake
    return real


def _check_pair(mlp, first, second):
    first = _check_input(mlp, first)
    second = _check_input(mlp, second)
    if first.shape != second.shape:
        raise DimensionMismatch("paired inputs differ in shape: {0} vs {1}".format(first.shape, second.shape))
    return first, second


def per_example_losses(mlp: Mlp, spec: LossSpec, first, second, mix=None) -> np.ndarray:
    first, second = _check_pair(mlp, first, second)
    if spec.kind == LossKind.DENSITY_RATIO:
        z_priv = logits(mlp, first)
        z_pub = logits(mlp, second)
        return np.logaddexp(0.0, -z_priv) + np.logaddexp(0.0, z_pub)
    if spec.kind == LossKind.CRITIC:
        _check_critic(mlp)
        scores = forward_batch(mlp, np.vstack([first, second]))[:, 0]
        B = first.shape[0]
        points = _penalty_points(spec, first, second, mix)
        g = grad_wrt_input_batch(mlp, points)
        values, _ = _penalty(g, spec.gp_style)
        return scores[:B] - scores[B:] + spec.penalty_weight * values
    raise ContractViolation("unsupported loss kind {0}".format(spec.kind))


def per_example_grads(mlp: Mlp, spec: LossSpec, first, second, mix=None) -> np.ndarray:
    """Per-example gradients of the per-example loss, shape (B, num_params)."""
    first, second = _check_pair(mlp, first, second)
    B = first.shape[0]
    stacked = np.vstack([first, second])
    pre, post = _forward(mlp, stacked)

    if spec.kind == LossKind.DENSITY_RATIO:
        if mlp.output_activation != OutputActivation.SIGMOID or mlp.output_dim != 1:
            raise ContractViolation("the density-ratio loss needs a scalar sigmoid-head network")
        z = pre[-1][:, 0]
        d = post[-1][:, 0]
        live = np.abs(z) < LOGIT_CLAMP
        # d/dz of softplus(-z) on private rows and softplus(z) on public rows
        dz = np.concatenate([d[:B] - 1.0, d[B:]]) * live
        grads = _backward(mlp, pre, post, dz[:, None])
        grads = grads[:B] + grads[B:]
    elif spec.kind == LossKind.CRITIC:
        _check_critic(mlp)
        dz = np.concatenate([np.ones(B), -np.ones(B)])
        grads = _backward(mlp, pre, post, dz[:, None])
        grads = grads[:B] + grads[B:]
        points = _penalty_points(spec, first, second, mix)
        _, penalty_grads = _penalty_param_grads(mlp, points, spec.gp_style)
        grads = grads + spec.penalty_weight * penalty_grads
    else:
        raise ContractViolation("unsupported loss kind {0}".format(spec.kind))

    if not np.all(np.isfinite(grads)):
        raise NumericalError("non-finite per-example gradient")
    return grads


def per_example_grad(mlp: Mlp, spec: LossSpec, example) -> np.ndarray:
    """Gradient for one example: (first, second) or (first, second, mix)."""
    first, second = example[0], example[1]
    mix = None
    if len(example) > 2:
        mix = np.atleast_1d(example[2])
    return per_example_grads(
        mlp,
        spec,
        np.atleast_2d(first),
        np.atleast_2d(second),
        mix,
    )[0]


def clip_gradients(grads: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scales each row g to g / max(1, ||g|| / C)."""
    norms = np.linalg.norm(grads, axis=1)
    return grads / np.maximum(1.0, norms / clip_norm)[:, None]


def dp_step(grads: np.ndarray, clip_norm: float, sigma: float, rng: SeededRng) -> np.ndarray:
    """(1/B) [sum_i clip(g_i) + N(0, sigma^2 C^2 I)], one noise draw per batch."""
    grads = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    B = grads.shape[0]
    if B == 0:
        raise ContractViolation("dp_step needs a non-empty batch")
    if clip_norm <= 0:
        raise ContractViolation("clip norm must be positive")
    total = clip_gradients(grads, clip_norm).sum(axis=0)
    if sigma > 0.0:
        total = total + rng.generator.normal(0.0, sigma * clip_norm, size=total.shape)
    return total / B


def adam_update(state: AdamState, params: np.ndarray, grad: np.ndarray, eta: float):
    """One bias-corrected Adam step; returns (new state, new params)."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != state.m.shape or grad.shape != state.m.shape:
        raise DimensionMismatch(
            "Adam state has {0} entries, params {1}, grad {2}".format(state.m.shape, params.shape, grad.shape)
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - eta * m_hat / (np.sqrt(v_hat) + state.stabilizer)
    return state.model_copy(update={"m": m, "v": v, "t": t}), new_params


class MlpCheckpoint(ArrayRecord):
    """Flattened network parameters with the optimizer state, for resuming or inspection."""

    kind: Literal["mlp_checkpoint"] = "mlp_checkpoint"
    layer_dims: Tuple[int, ...]
    output_activation: OutputActivation
    negative_slope: float = NEGATIVE_SLOPE
    params: FloatArray
    adam: Optional[AdamState] = None

    @classmethod
    def of(cls, mlp: Mlp, adam: Optional[AdamState] = None) -> "MlpCheckpoint":
        return cls(
            layer_dims=mlp.layer_dims,
            output_activation=mlp.output_activation,
            negative_slope=mlp.negative_slope,
            params=mlp.flat(),
            adam=adam,
        )

    def restore(self) -> Mlp:
        template = zero_mlp(self.layer_dims, self.output_activation)
        template = template.model_copy(update={"negative_slope": self.negative_slope})
        return template.with_flat(self.params)
