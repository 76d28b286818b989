"""Dense feed-forward networks with hand-written backprop, plus SGD and Adam.

Matrices are plain float64 numpy arrays; one row per sample.
"""
from __future__ import annotations

import copy

import numpy as np

from .exceptions import ConfigurationError, UsageError

ACTIVATIONS = ("relu", "identity")


def softmax(logits):
    """Row-wise softmax with max subtraction. Accepts a vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def glorot_uniform(fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Layer:
    """Affine map ``x @ weight + bias`` followed by an activation."""

    def __init__(self, weight, bias, activation="relu"):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[1]:
            raise ConfigurationError(
                f"bias of length {self.bias.shape[0]} does not fit weight {self.weight.shape}"
            )
        self.activation = activation

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


class DenseNet:
    """Stack of dense layers; hidden layers use ReLU, the last one emits raw logits.

    ``forward`` caches what ``backward`` needs, so the two must be called in
    pairs on the same batch.
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ConfigurationError("a DenseNet needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].out_dim != layers[k + 1].in_dim:
                raise ConfigurationError(
                    f"layer {k} outputs {layers[k].out_dim} but layer {k + 1} expects {layers[k + 1].in_dim}"
                )
        if layers[-1].activation != "identity":
            raise ConfigurationError("final layer must use the identity activation")
        self.layers = layers
        self._cache = None

    @classmethod
    def build(cls, input_dim, output_dim, hidden=(), rng=None):
        """Glorot-uniform initialised net with ReLU hidden layers of the given widths."""
        rng = np.random.default_rng(rng)
        dims = [int(input_dim), *(int(h) for h in hidden), int(output_dim)]
        layers = []
        for k in range(len(dims) - 1):
            act = "identity" if k == len(dims) - 2 else "relu"
            layers.append(Layer(glorot_uniform(dims[k], dims[k + 1], rng), np.zeros(dims[k + 1]), act))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    def parameters(self):
        """Flat list of parameter arrays, ordered (W0, b0, W1, b1, ...). Arrays are live."""
        params = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def set_parameters(self, params):
        params = list(params)
        if len(params) != 2 * len(self.layers):
            raise ConfigurationError("parameter count does not match the layer stack")
        for layer, w, b in zip(self.layers, params[0::2], params[1::2]):
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ConfigurationError("parameter shape mismatch")
            layer.weight = np.array(w, dtype=np.float64)
            layer.bias = np.array(b, dtype=np.float64)

    def clone(self):
        twin = copy.deepcopy(self)
        twin._cache = None
        return twin

    def forward(self, batch):
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigurationError(
                f"batch of shape {x.shape} does not match network input dim {self.input_dim}"
            )
        inputs, pre = [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weight + layer.bias
            pre.append(z)
            h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        self._cache = (inputs, pre)
        return h

    __call__ = forward

    def backward(self, upstream_grad):
        """Backpropagate ``dLoss/dLogits``.

        Returns ``(param_grads, input_grad)`` where ``param_grads`` follows the
        ordering of :meth:`parameters`.
        """
        if self._cache is None:
            raise UsageError("backward called before forward")
        inputs, pre = self._cache
        g = np.asarray(upstream_grad, dtype=np.float64)
        if g.shape != pre[-1].shape:
            raise ConfigurationError(f"upstream gradient {g.shape} does not match output {pre[-1].shape}")
        grads = [None] * (2 * len(self.layers))
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.activation == "relu":
                g = g * (pre[k] > 0.0)
            grads[2 * k] = inputs[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ layer.weight.T
        return grads, g


class Optimizer:
    """First-order optimizer over a fixed list of parameter arrays.

    ``kind`` is ``"sgd"`` or ``"adam"``. Moment buffers are created lazily on
    the first step, shaped like the parameters they track.
    """

    def __init__(self, kind="adam", learning_rate=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {kind!r}")
        if not learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        self.kind = kind
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        """Update ``params`` in place and return them."""
        if len(params) != len(grads):
            raise ConfigurationError("params and grads differ in length")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ConfigurationError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.learning_rate * g
            return params

        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif len(self.m) != len(params) or any(m.shape != p.shape for m, p in zip(self.m, params)):
            raise ConfigurationError("parameters changed shape between Adam steps")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params
