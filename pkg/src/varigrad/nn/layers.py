"""Layers with hand-written backward passes.

Every layer caches what it needs during ``forward(x, train)`` and returns
the input gradient from ``backward(dy)``, accumulating parameter gradients
into ``grads``. Gradients are overwritten (not summed) on each backward.
"""

from __future__ import annotations

import numpy as np


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __call__(self, x, train: bool = False):
        return self.forward(x, train)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Layer):
    """y = x W^T + b with W of shape (out, in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            self.params["W"] = np.zeros((n_out, n_in))
            self.params["b"] = np.zeros(n_out)
        else:
            self.params["W"] = uniform_init(rng, (n_out, n_in), n_in)
            self.params["b"] = uniform_init(rng, n_out, n_in)
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        x = self._x.reshape(-1, self.n_in)
        d = dy.reshape(-1, self.n_out)
        self.grads["W"] = d.T @ x
        self.grads["b"] = d.sum(axis=0)
        return dy @ self.params["W"]

    def __repr__(self):
        return f"Dense({self.n_in} -> {self.n_out})"


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class Identity(Layer):
    def forward(self, x, train=False):
        return x

    def backward(self, dy):
        return dy


class BatchNorm(Layer):
    """Batch normalization over the leading axis of (batch, channels) input.

    In training mode the batch mean and biased variance normalize the input
    and the running statistics are updated with the unbiased variance. In
    eval mode the layer is the fixed affine map
    gamma * (x - running_mean) / sqrt(running_var + eps) + beta.
    """

    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.params["gamma"] = np.ones(n)
        self.params["beta"] = np.zeros(n)
        self.buffers["running_mean"] = np.zeros(n)
        self.buffers["running_var"] = np.ones(n)
        self.momentum, self.eps = momentum, eps

    def forward(self, x, train=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not train:
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            self._train = False
            self._inv_std = 1.0 / np.sqrt(rv + self.eps)
            self._xhat = (x - rm) * self._inv_std
            return gamma * self._xhat + beta
        n = x.shape[0]
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        m = self.momentum
        self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
        unbiased = var * n / (n - 1) if n > 1 else var
        self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        self._train = True
        self._xhat, self._inv_std = xhat, inv_std
        return gamma * xhat + beta

    def backward(self, dy):
        gamma = self.params["gamma"]
        xhat, inv_std = self._xhat, self._inv_std
        self.grads["gamma"] = (dy * xhat).sum(axis=0)
        self.grads["beta"] = dy.sum(axis=0)
        if not self._train:
            return dy * gamma * inv_std
        n = dy.shape[0]
        dxhat = dy * gamma
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class GraphConv(Layer):
    """Graph convolution over a fixed vertex set: Z = A X W^T + b.

    ``adj`` is the (V, V) propagation matrix; input is (batch, V, c_in).
    """

    def __init__(self, adj: np.ndarray, c_in: int, c_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.adj = adj
        if rng is None:
            self.params["W"] = np.zeros((c_out, c_in))
            self.params["b"] = np.zeros(c_out)
        else:
            self.params["W"] = uniform_init(rng, (c_out, c_in), c_in)
            self.params["b"] = uniform_init(rng, c_out, c_in)
        self.c_in, self.c_out = c_in, c_out

    def forward(self, x, train=False):
        self._ax = np.matmul(self.adj, x)
        return self._ax @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        self.grads["W"] = np.einsum("bvo,bvi->oi", dy, self._ax)
        self.grads["b"] = dy.sum(axis=(0, 1))
        return np.matmul(self.adj.T, dy @ self.params["W"])

    def __repr__(self):
        return f"GraphConv({self.c_in} -> {self.c_out}, V={self.adj.shape[0]})"


class NeighborhoodPool(Layer):
    """Mean over each vertex's closed neighbourhood, then mean of channel pairs.

    Halves the channel count; ``c_in`` must be even.
    """

    def __init__(self, mean_adj: np.ndarray):
        super().__init__()
        self.adj = mean_adj

    def forward(self, x, train=False):
        b, v, c = x.shape
        if c % 2:
            raise ValueError(f"pooling needs an even channel count, got {c}")
        y = np.matmul(self.adj, x)
        return 0.5 * (y[..., 0::2] + y[..., 1::2])

    def backward(self, dy):
        d = np.repeat(0.5 * dy, 2, axis=-1)
        return np.matmul(self.adj.T, d)


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_layers(self):
        for i, layer in enumerate(self.layers):
            if layer.params or layer.buffers:
                yield str(i), layer

    def __repr__(self):
        return "Sequential(" + ", ".join(repr(l) for l in self.layers if l.params) + ")"


def mlp(sizes: list[int], rng: np.random.Generator | None, batchnorm: bool = True, final_act: bool = False) -> Sequential:
    """Dense stack; hidden layers are followed by ReLU then (optionally) BatchNorm."""
    layers: list[Layer] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b, rng))
        last = i == len(sizes) - 2
        if not last or final_act:
            layers.append(ReLU())
            if batchnorm:
                layers.append(BatchNorm(b))
    return Sequential(layers)
