"""Small fully connected networks and the Adam update, in plain numpy.

Networks are two hidden layers of 32 rectified-linear units with an identity
output, matching the solver architecture. Parameters live in a flat list
[W1, b1, W2, b2, W3, b3] so the optimizer and checkpoint code can treat every
network uniformly. Forward passes return a cache from which the backward pass
reconstructs all gradients; nothing here owns global state.

The forward/backward pair accepts an optional workspace of preallocated
buffers; the unrolled solver calls these a few hundred times per iteration on
(paths x width) arrays, and avoiding fresh allocations there roughly halves
the iteration time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import counter_uniforms

__all__ = ["Mlp", "Adam", "Workspace", "init_params", "zero_grads"]


def _he_uniform(rng_words, fan_in, fan_out, seed):
    """He-style uniform weights (variance 2/fan_in) from the counter stream."""
    c0, c1, c2 = rng_words
    idx = np.arange(fan_in * fan_out, dtype=np.uint32)
    u = counter_uniforms(seed, np.full_like(idx, c0), np.full_like(idx, c1),
                         np.full_like(idx, c2), idx)
    limit = np.sqrt(6.0 / fan_in)
    return ((2.0 * u - 1.0) * limit).reshape(fan_in, fan_out)


def init_params(sizes, seed, net_id, zero_output=True):
    """Parameter list for layer sizes like (4, 32, 32, 1).

    Hidden layers get He-uniform weights and zero biases; the output layer is
    all zero when ``zero_output`` so an untrained network emits exactly its
    output bias (zero), which keeps the first rollout well conditioned.
    """
    params = []
    n_layers = len(sizes) - 1
    for layer in range(n_layers):
        fan_in, fan_out = sizes[layer], sizes[layer + 1]
        is_output = layer == n_layers - 1
        if is_output and zero_output:
            W = np.zeros((fan_in, fan_out))
        else:
            W = _he_uniform((0xA11CE, net_id, layer), fan_in, fan_out, seed)
        params += [W, np.zeros(fan_out)]
    return params


def zero_grads(params):
    return [np.zeros_like(p) for p in params]


class Workspace:
    """Reusable buffers for repeated forward/backward calls at fixed batch size."""

    def __init__(self, n, d_in, width):
        self.Xt = np.empty((d_in, n))   # filled row-wise, used through .T
        self.X = self.Xt.T
        self.h1 = np.empty((n, width))
        self.h2 = np.empty((n, width))
        self.y = np.empty((n, 1))
        self.g2 = np.empty((n, width))
        self.g1 = np.empty((n, width))
        self.gX = np.empty((n, d_in))


@dataclass
class Mlp:
    """Feedforward net: rectified-linear hidden layers, identity output."""

    params: list

    @classmethod
    def build(cls, sizes, seed, net_id, zero_output=True):
        return cls(init_params(sizes, seed, net_id, zero_output))

    def forward(self, X, ws: Workspace | None = None):
        """X of shape (n, d_in) -> outputs (n,) plus the activation cache.

        With a workspace the returned cache aliases its buffers, so consume it
        before the next call that reuses the same workspace.
        """
        W1, b1, W2, b2, W3, b3 = self.params
        if ws is None:
            h1 = X @ W1
            h1 += b1
            np.maximum(h1, 0.0, out=h1)
            h2 = h1 @ W2
            h2 += b2
            np.maximum(h2, 0.0, out=h2)
            y = h2 @ W3
            y += b3
        else:
            h1 = np.matmul(X, W1, out=ws.h1)
            h1 += b1
            np.maximum(h1, 0.0, out=h1)
            h2 = np.matmul(h1, W2, out=ws.h2)
            h2 += b2
            np.maximum(h2, 0.0, out=h2)
            y = np.matmul(h2, W3, out=ws.y)
            y += b3
        return y[:, 0], (X, h1, h2)

    def backward(self, gy, cache, grads, ws: Workspace | None = None):
        """Accumulate parameter gradients for output cotangent gy (n,).

        Returns the gradient with respect to the inputs, shape (n, d_in).
        Rectifier subgradient at 0 is taken as 0.
        """
        W1, b1, W2, b2, W3, b3 = self.params
        X, h1, h2 = cache
        g = np.ascontiguousarray(gy)[:, None]
        grads[4] += h2.T @ g
        grads[5] += g.sum(axis=0)
        if ws is None:
            gh2 = g @ W3.T
            gh2 *= h2 > 0.0
            gh1 = gh2 @ W2.T
            gh1 *= h1 > 0.0
            gX = gh1 @ W1.T
        else:
            gh2 = np.matmul(g, W3.T, out=ws.g2)
            gh2 *= h2 > 0.0
            gh1 = np.matmul(gh2, W2.T, out=ws.g1)
            gh1 *= h1 > 0.0
            gX = np.matmul(gh1, W1.T, out=ws.gX)
        grads[2] += h1.T @ gh2
        grads[3] += gh2.sum(axis=0)
        grads[0] += X.T @ gh1
        grads[1] += gh1.sum(axis=0)
        return gX


class Adam:
    """Adam with bias correction; state per parameter tensor."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            p -= self.lr * (self.m[i] / corr1) / (np.sqrt(self.v[i] / corr2) + self.eps)
