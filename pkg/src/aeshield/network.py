"""Dense feed-forward network engine.

A :class:`Network` is an ordered list of :class:`DenseLayer` objects. ``forward``
records a :class:`Trace` with every pre- and post-activation, and ``backward``
turns a trace plus a loss into gradients for every weight, every bias and the
network input. Input gradients are what the gradient-sign attacks consume.

Shapes follow the row-major convention used throughout the package: a batch is
``(n_samples, n_features)`` and a layer computes ``act(x @ W + b)`` with ``W`` of
shape ``(in, out)``.
"""

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_matrix, check_random_state
from .exceptions import ConfigError, InvalidInputError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS = (
    "relu",
    "sigmoid",
    "tanh",
    "softsign",
    "exponential",
    "softplus",
    "softmax",
    "identity",
)
LOSSES = ("per_pixel_crossentropy", "mean_squared_error", "categorical_crossentropy")

# exp() input is clamped here so decoder activations cannot overflow
EXP_CLAMP = 30.0
PROB_CLIP = 1e-7


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def activate(kind, z):
    """Apply activation ``kind`` elementwise (rowwise for softmax)."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError(f"non-finite pre-activation passed to {kind}")
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "softsign":
        return z / (1.0 + np.abs(z))
    if kind == "exponential":
        return np.exp(np.minimum(z, EXP_CLAMP))
    if kind == "softplus":
        return np.logaddexp(0.0, z)
    if kind == "softmax":
        zz = np.atleast_2d(z)
        e = np.exp(zz - zz.max(axis=1, keepdims=True))
        return (e / e.sum(axis=1, keepdims=True)).reshape(z.shape)
    if kind == "identity":
        return z.copy()
    raise ConfigError(f"unknown activation {kind!r}")


def activation_backward(kind, z, a, grad_a):
    """Chain ``dL/da`` through the activation, returning ``dL/dz``."""
    if kind == "relu":
        return grad_a * (z > 0)
    if kind == "sigmoid":
        return grad_a * a * (1.0 - a)
    if kind == "tanh":
        return grad_a * (1.0 - a * a)
    if kind == "softsign":
        d = 1.0 + np.abs(z)
        return grad_a / (d * d)
    if kind == "exponential":
        return grad_a * np.where(z < EXP_CLAMP, a, 0.0)
    if kind == "softplus":
        return grad_a * _sigmoid(z)
    if kind == "softmax":
        return a * (grad_a - np.sum(grad_a * a, axis=1, keepdims=True))
    if kind == "identity":
        return grad_a
    raise ConfigError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2:
            raise ShapeError("layer weights must be a 2-D (in, out) matrix")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight columns {self.weights.shape[1]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]


@dataclass
class Network:
    """Feed-forward stack of dense layers plus training metadata."""

    layers: list
    seed: int | None = None
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {k} emits {a.out_dim} values, layer {k + 1} expects {b.in_dim}")
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ConfigError("softmax is only permitted on the output layer")

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def dims(self):
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    @property
    def activations(self):
        return [layer.activation for layer in self.layers]

    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live parameter arrays."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    @property
    def n_params(self):
        return sum(p.size for p in self.params())

    def copy(self):
        return copy.deepcopy(self)

    def predict(self, x):
        return forward(self, x).output


def init_network(dims, activations, seed=None):
    """Glorot-uniform weights, zero biases."""
    if len(activations) != len(dims) - 1:
        raise ShapeError(f"{len(dims) - 1} layers but {len(activations)} activations")
    rng = check_random_state(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return Network(layers, seed=seed if isinstance(seed, (int, np.integer)) else None)


@dataclass
class Trace:
    """Everything ``backward`` needs: layer inputs, pre- and post-activations."""

    inputs: np.ndarray
    pre: list
    post: list

    @property
    def output(self):
        return self.post[-1]

    def layer_input(self, k):
        return self.inputs if k == 0 else self.post[k - 1]


def forward(net, x):
    x = check_matrix(x, cols=net.input_dim)
    pre, post = [], []
    a = x
    for layer in net.layers:
        z = a @ layer.weights + layer.bias
        a = activate(layer.activation, z)
        pre.append(z)
        post.append(a)
    return Trace(x, pre, post)


@dataclass
class Gradients:
    weights: list
    biases: list
    input: np.ndarray
    loss: float = 0.0

    def as_list(self):
        """Interleaved ``[dW0, db0, dW1, db1, ...]`` matching ``Network.params``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def check_loss_compat(loss, activation, target=None):
    if loss not in LOSSES:
        raise ConfigError(f"unknown loss {loss!r}")
    if loss == "categorical_crossentropy" and activation != "softmax":
        raise ConfigError("categorical crossentropy requires a softmax output layer")
    if loss == "per_pixel_crossentropy":
        if activation == "identity":
            raise ConfigError("per-pixel crossentropy needs a range-limited output activation")
        if target is not None and target.size and (target.min() < 0 or target.max() > 1):
            raise ConfigError("per-pixel crossentropy targets must lie in [0, 1]")


def loss_and_grad(loss, output, target):
    """Per-sample summed loss averaged over rows, and its gradient w.r.t. ``output``."""
    n = output.shape[0]
    if loss == "mean_squared_error":
        diff = output - target
        return float(np.sum(diff * diff) / n), 2.0 * diff / n
    if loss == "per_pixel_crossentropy":
        p = np.clip(output, PROB_CLIP, 1.0 - PROB_CLIP)
        value = -np.sum(target * np.log(p) + (1.0 - target) * np.log1p(-p)) / n
        inside = (output >= PROB_CLIP) & (output <= 1.0 - PROB_CLIP)
        grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / n
        return float(value), grad
    if loss == "categorical_crossentropy":
        p = np.clip(output, 1e-300, 1.0)
        return float(-np.sum(target * np.log(p)) / n), -target / p / n
    raise ConfigError(f"unknown loss {loss!r}")


def output_delta(loss, z, a, target):
    """Loss value and ``dL/dz`` at the output layer.

    Softmax with categorical crossentropy takes the fused ``(p - y) / n`` route,
    which stays exact when probabilities underflow.
    """
    n = z.shape[0]
    if loss == "categorical_crossentropy":
        zmax = z.max(axis=1, keepdims=True)
        log_p = z - zmax - np.log(np.sum(np.exp(z - zmax), axis=1, keepdims=True))
        return float(-np.sum(target * log_p) / n), (a - target) / n
    raise NotImplementedError  # only the fused case is handled here


def backprop(net, trace, grad_output=None, delta_output=None, extra=None):
    """Backpropagate an upstream gradient through ``net``.

    Exactly one of ``grad_output`` (``dL/da`` of the last layer) or
    ``delta_output`` (``dL/dz`` of the last layer) is given. ``extra`` maps a
    layer index to an additional ``dL/da`` for that layer's output, which is
    how activation penalties enter.
    """
    extra = extra or {}
    n_layers = len(net.layers)
    dw = [None] * n_layers
    db = [None] * n_layers
    grad_a = grad_output
    for k in range(n_layers - 1, -1, -1):
        layer = net.layers[k]
        z, a = trace.pre[k], trace.post[k]
        if k == n_layers - 1 and delta_output is not None:
            delta = delta_output
            if k in extra:
                delta = delta + activation_backward(layer.activation, z, a, extra[k])
        else:
            if k in extra:
                grad_a = grad_a + extra[k]
            delta = activation_backward(layer.activation, z, a, grad_a)
        inp = trace.layer_input(k)
        dw[k] = inp.T @ delta
        db[k] = delta.sum(axis=0)
        grad_a = delta @ layer.weights.T
    return Gradients(dw, db, grad_a)


def backward(net, trace, loss, target, extra=None):
    """Gradients of ``loss(net(x), target)`` w.r.t. all parameters and ``x``."""
    out = trace.output
    target = check_matrix(target, cols=out.shape[1], name="target")
    if target.shape[0] != out.shape[0]:
        raise ShapeError(f"target has {target.shape[0]} rows, output has {out.shape[0]}")
    last = net.layers[-1]
    check_loss_compat(loss, last.activation, target)
    if loss == "categorical_crossentropy":
        value, delta = output_delta(loss, trace.pre[-1], out, target)
        grads = backprop(net, trace, delta_output=delta, extra=extra)
    else:
        value, g = loss_and_grad(loss, out, target)
        grads = backprop(net, trace, grad_output=g, extra=extra)
    if not np.isfinite(value):
        raise InvalidInputError("loss evaluated to a non-finite value")
    grads.loss = value
    return grads


class AdamState:
    """Adam moment accumulators with bias correction."""

    def __init__(self, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        for p, g, m in zip(params, grads, self.m):
            if p.shape != g.shape or p.shape != m.shape:
                raise ShapeError(f"parameter {p.shape} / gradient {np.shape(g)} / state {m.shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def adam_step(state, params, grads):
    state.step(params, grads)
    return params, state


def iter_batches(n, batch_size, rng):
    """Shuffled index batches; the final partial batch is kept."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(
    net,
    inputs,
    targets,
    loss,
    epochs,
    batch_size,
    seed=0,
    learning_rate=0.001,
    penalty=None,
    input_noise=None,
):
    """Mini-batch Adam training; returns a trained copy of ``net``.

    ``penalty(trace)`` may return ``(value, {layer_index: dvalue/d_activation})``;
    the value is added to the batch loss and the gradients are injected at the
    named layer outputs. ``input_noise(batch, rng)`` corrupts each input batch
    before the forward pass while the targets stay clean; it draws from its own
    stream so the batch order does not depend on the corruption.
    """
    inputs = check_matrix(inputs, cols=net.input_dim, name="inputs")
    targets = check_matrix(targets, cols=net.output_dim, name="targets")
    if inputs.shape[0] == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")
    if epochs < 1 or batch_size < 1:
        raise ConfigError("epochs and batch_size must be >= 1")
    check_loss_compat(loss, net.layers[-1].activation, targets)

    net = net.copy()
    net.seed = seed
    net.loss_history = []
    rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    opt = AdamState(learning_rate)
    params = net.params()
    for epoch in range(epochs):
        batch_losses = []
        for idx in iter_batches(inputs.shape[0], batch_size, rng):
            xb = inputs[idx]
            if input_noise is not None:
                xb = input_noise(xb, noise_rng)
            trace = forward(net, xb)
            extra, pen = None, 0.0
            if penalty is not None:
                pen, extra = penalty(trace)
            grads = backward(net, trace, loss, targets[idx], extra=extra)
            batch_losses.append(grads.loss + pen)
            opt.step(params, grads.as_list())
        net.loss_history.append(float(np.mean(batch_losses)))
        logger.debug("epoch %d/%d loss %.6f", epoch + 1, epochs, net.loss_history[-1])
    return net
