"""Dense network substrate: forward pass, manual backprop, SGD with momentum.

All functions are pure: they take immutable inputs and return fresh arrays.
Parameters live in a single flat float64 vector (layer by layer, weights
then biases) so that aggregation, checkpointing and the shard algebra are
plain vector arithmetic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a multilayer perceptron.

    layer_sizes runs input dim, hidden dims..., number of classes.
    """

    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigError(f"need at least input and output layer, got {sizes}")
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ConfigError("output layer needs at least 2 classes")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_params(self) -> int:
        sizes = self.layer_sizes
        return sum((sizes[k] + 1) * sizes[k + 1] for k in range(len(sizes) - 1))

    def digest(self) -> str:
        """Stable hash identifying the architecture (and its init seed)."""
        canon = f"mlp|{','.join(map(str, self.layer_sizes))}|{self.activation}|{self.seed}"
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass(frozen=True)
class ParameterVector:
    """Flat, ordered vector of all weights and biases of one network."""

    values: np.ndarray
    spec_hash: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ShapeError(f"parameter vector must be 1-d, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("parameter vector contains non-finite entries")
        if vals.flags.writeable:
            vals = vals.copy()
            vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ForwardTrace:
    """Intermediates of one forward pass, retained for backprop."""

    inputs: np.ndarray                # batch x input_dim
    pre_activations: list[np.ndarray]  # per layer, batch x fan_out
    activations: list[np.ndarray]      # per hidden layer, batch x fan_out

    @property
    def logits(self) -> np.ndarray:
        return self.pre_activations[-1]


@dataclass(frozen=True)
class OptimizerState:
    """Momentum buffer plus hyperparameters for one training loop."""

    momentum: np.ndarray
    learning_rate: float
    beta: float = 0.9

    def __post_init__(self):
        buf = np.asarray(self.momentum, dtype=np.float64)
        if buf.flags.writeable:
            buf = buf.copy()
            buf.setflags(write=False)
        object.__setattr__(self, "momentum", buf)
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"momentum beta must be in [0, 1), got {self.beta}")


def fresh_optimizer(spec: NetworkSpec, learning_rate: float, beta: float = 0.9) -> OptimizerState:
    return OptimizerState(np.zeros(spec.num_params), learning_rate, beta)


def _layer_views(spec: NetworkSpec, flat: np.ndarray):
    """Iterate (W, b) views into the flat vector, layer by layer."""
    sizes = spec.layer_sizes
    off = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = flat[off:off + fan_out]
        off += fan_out
        yield w, b


def init_network(spec: NetworkSpec) -> ParameterVector:
    """Glorot-uniform weights, zero biases, deterministic for a given seed."""
    rng = np.random.default_rng(spec.seed)
    flat = np.zeros(spec.num_params)
    sizes = spec.layer_sizes
    off = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        flat[off:off + fan_in * fan_out] = rng.uniform(-limit, limit, fan_in * fan_out)
        off += fan_in * fan_out + fan_out  # biases stay zero
    return ParameterVector(flat, spec.digest())


def check_params(spec: NetworkSpec, params: ParameterVector) -> None:
    if len(params) != spec.num_params:
        raise ShapeError(
            f"parameter vector has {len(params)} entries, spec needs {spec.num_params}")
    if params.spec_hash != spec.digest():
        raise ShapeError("parameter vector was shaped by a different NetworkSpec")


def forward(spec: NetworkSpec, params: ParameterVector, batch: np.ndarray) -> ForwardTrace:
    """Run the batch through the network, retaining intermediates."""
    check_params(spec, params)
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"batch shape {x.shape} incompatible with input dim {spec.input_dim}")
    pre, act = [], []
    a = x
    layers = list(_layer_views(spec, params.values))
    for k, (w, b) in enumerate(layers):
        z = a @ w + b
        pre.append(z)
        if k < len(layers) - 1:
            a = np.maximum(z, 0.0) if spec.activation == "relu" else np.tanh(z)
            act.append(a)
    if not np.all(np.isfinite(pre[-1])):
        raise DomainError("forward pass produced non-finite logits")
    return ForwardTrace(x, pre, act)


def softmax_t(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax with max-subtraction; rows sum to one.

    Accepts a single logit vector or a batch (one row per example).
    """
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("logits must be finite")
    squeeze = z.ndim == 1
    z = np.atleast_2d(z) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if squeeze else p


def backward(
    spec: NetworkSpec,
    params: ParameterVector,
    trace: ForwardTrace,
    loss_grad_on_logits: np.ndarray,
) -> ParameterVector:
    """Backpropagate dL/dlogits to a flat dL/dtheta vector.

    The upstream gradient carries any batch normalisation (1/n factors);
    this routine only applies the chain rule. Hidden-layer weights are
    needed to propagate deltas, hence `params` alongside the trace.
    """
    check_params(spec, params)
    g = np.asarray(loss_grad_on_logits, dtype=np.float64)
    if g.shape != trace.logits.shape:
        raise ShapeError(
            f"gradient shape {g.shape} does not match logits {trace.logits.shape}")
    layers = list(_layer_views(spec, params.values))
    n_layers = len(layers)
    grad_flat = np.zeros(spec.num_params)
    grad_views = list(_layer_views(spec, grad_flat))
    delta = g
    for k in range(n_layers - 1, -1, -1):
        a_prev = trace.inputs if k == 0 else trace.activations[k - 1]
        gw, gb = grad_views[k]
        np.matmul(a_prev.T, delta, out=gw)
        np.sum(delta, axis=0, out=gb)
        if k > 0:
            w, _ = layers[k]
            da = delta @ w.T
            z_prev = trace.pre_activations[k - 1]
            if spec.activation == "relu":
                delta = da * (z_prev > 0.0)
            else:
                delta = da * (1.0 - np.tanh(z_prev) ** 2)
    return ParameterVector(grad_flat, params.spec_hash)


def sgd_step(
    params: ParameterVector,
    grad: ParameterVector,
    state: OptimizerState,
) -> tuple[ParameterVector, OptimizerState]:
    """One SGD-with-momentum update: buf' = beta*buf + g; theta' = theta - lr*buf'."""
    if len(params) != len(grad) or len(params) != state.momentum.shape[0]:
        raise ShapeError("parameter, gradient and momentum lengths differ")
    buf = state.beta * state.momentum + grad.values
    new_values = params.values - state.learning_rate * buf
    return (ParameterVector(new_values, params.spec_hash),
            OptimizerState(buf, state.learning_rate, state.beta))


def predict_logits(spec: NetworkSpec, params: ParameterVector, batch: np.ndarray) -> np.ndarray:
    """Logits only; convenience wrapper around `forward`."""
    return forward(spec, params, batch).logits
