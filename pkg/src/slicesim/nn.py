"""Small fully connected action-value network, trained with Adam.

Architecture: input -> 64 (ReLU) -> 32 (ReLU) -> one linear output per
action. Parameters live in a single flat float64 vector ordered layer-major
(W1 row-major, b1, W2, b2, W3, b3), which keeps copying, optimizer state and
the text dump format trivial. The forward and backward passes dispatch to the
compiled core when it is available; the numpy implementations below are the
reference they are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend


@dataclass
class ValueNet:
    n_in: int
    n_out: int
    n_h1: int = 64
    n_h2: int = 32
    params: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.params is None:
            self.params = np.zeros(self.n_params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return (self.n_in * self.n_h1 + self.n_h1
                + self.n_h1 * self.n_h2 + self.n_h2
                + self.n_h2 * self.n_out + self.n_out)

    def views(self):
        """(W1, b1, W2, b2, W3, b3) as writable views into the flat vector."""
        p = self.params
        o = 0
        w1 = p[o:o + self.n_in * self.n_h1].reshape(self.n_in, self.n_h1)
        o += self.n_in * self.n_h1
        b1 = p[o:o + self.n_h1]
        o += self.n_h1
        w2 = p[o:o + self.n_h1 * self.n_h2].reshape(self.n_h1, self.n_h2)
        o += self.n_h1 * self.n_h2
        b2 = p[o:o + self.n_h2]
        o += self.n_h2
        w3 = p[o:o + self.n_h2 * self.n_out].reshape(self.n_h2, self.n_out)
        o += self.n_h2 * self.n_out
        b3 = p[o:o + self.n_out]
        return w1, b1, w2, b2, w3, b3


def init_net(rng, n_in: int, n_out: int, n_h1: int = 64, n_h2: int = 32) -> ValueNet:
    """Uniform fan-based initialization, zero biases."""
    net = ValueNet(n_in, n_out, n_h1, n_h2)
    w1, b1, w2, b2, w3, b3 = net.views()
    for w in (w1, w2, w3):
        fan_in, fan_out = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[:] = rng.uniform(-limit, limit, size=w.shape)
    return net


def copy_net(src: ValueNet) -> ValueNet:
    return ValueNet(src.n_in, src.n_out, src.n_h1, src.n_h2, src.params.copy())


def forward(net: ValueNet, state: np.ndarray) -> np.ndarray:
    """Action values for a single state."""
    x = np.asarray(state, dtype=np.float64)
    if x.shape != (net.n_in,):
        raise ValueError(f"state must have {net.n_in} entries, got {x.shape}")
    if backend.use_compiled():
        out = np.empty(net.n_out, dtype=np.float64)
        backend.core().nn_forward(net.params, np.ascontiguousarray(x), out,
                                  net.n_in, net.n_h1, net.n_h2, net.n_out)
        return out
    return _forward_py(net, x)


def _forward_py(net: ValueNet, x: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2, w3, b3 = net.views()
    h1 = np.maximum(x @ w1 + b1, 0.0)
    h2 = np.maximum(h1 @ w2 + b2, 0.0)
    return h2 @ w3 + b3


def forward_batch(net: ValueNet, states: np.ndarray) -> np.ndarray:
    states = np.ascontiguousarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != net.n_in:
        raise ValueError("states must be (batch, n_in)")
    if backend.use_compiled():
        out = np.empty((states.shape[0], net.n_out), dtype=np.float64)
        backend.core().nn_forward_batch(net.params, states, out,
                                        net.n_in, net.n_h1, net.n_h2, net.n_out)
        return out
    w1, b1, w2, b2, w3, b3 = net.views()
    h1 = np.maximum(states @ w1 + b1, 0.0)
    h2 = np.maximum(h1 @ w2 + b2, 0.0)
    return h2 @ w3 + b3


def grad_td_loss(net: ValueNet, state: np.ndarray, action: int,
                 target: float) -> np.ndarray:
    """Gradient of (Q(s, a) - target)^2 with respect to every parameter."""
    if not 0 <= action < net.n_out:
        raise ValueError("action index out of range")
    states = np.ascontiguousarray(state, dtype=np.float64).reshape(1, net.n_in)
    acts = np.array([action], dtype=np.int64)
    targets = np.array([float(target)], dtype=np.float64)
    return td_batch_grad(net, states, acts, targets)


def td_batch_grad(net: ValueNet, states: np.ndarray, actions: np.ndarray,
                  targets: np.ndarray) -> np.ndarray:
    """Mean over the batch of per-sample TD-loss gradients.

    Parameters are untouched; the ReLU subgradient at zero is zero.
    """
    states = np.ascontiguousarray(states, dtype=np.float64)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    n = states.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if actions.min() < 0 or actions.max() >= net.n_out:
        raise ValueError("action index out of range")
    if backend.use_compiled():
        grad = np.zeros(net.n_params, dtype=np.float64)
        backend.core().nn_td_grad_batch(net.params, states, actions, targets, grad,
                                        net.n_in, net.n_h1, net.n_h2, net.n_out)
        return grad
    return _td_batch_grad_py(net, states, actions, targets)


def _td_batch_grad_py(net: ValueNet, states, actions, targets) -> np.ndarray:
    w1, b1, w2, b2, w3, b3 = net.views()
    n = states.shape[0]
    z1 = states @ w1 + b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ w2 + b2
    h2 = np.maximum(z2, 0.0)
    q = h2 @ w3 + b3
    picked = q[np.arange(n), actions]
    d3 = np.zeros_like(q)
    d3[np.arange(n), actions] = 2.0 * (picked - targets) / n
    g_w3 = h2.T @ d3
    g_b3 = d3.sum(axis=0)
    dz2 = (d3 @ w3.T) * (z2 > 0.0)
    g_w2 = h1.T @ dz2
    g_b2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * (z1 > 0.0)
    g_w1 = states.T @ dz1
    g_b1 = dz1.sum(axis=0)
    return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2,
                           g_w3.ravel(), g_b3])


@dataclass
class AdamState:
    """Adam accumulators for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: ValueNet, learning_rate: float = 1e-5) -> "AdamState":
        return cls(m=np.zeros(net.n_params), v=np.zeros(net.n_params),
                   learning_rate=learning_rate)


def adam_step(net: ValueNet, adam: AdamState, grad: np.ndarray) -> None:
    """One bias-corrected Adam update, in place."""
    if grad.shape != net.params.shape:
        raise ValueError("gradient shape does not match parameters")
    adam.step_count += 1
    t = adam.step_count
    adam.m *= adam.beta1
    adam.m += (1.0 - adam.beta1) * grad
    adam.v *= adam.beta2
    adam.v += (1.0 - adam.beta2) * grad * grad
    m_hat = adam.m / (1.0 - adam.beta1 ** t)
    v_hat = adam.v / (1.0 - adam.beta2 ** t)
    net.params -= adam.learning_rate * m_hat / (np.sqrt(v_hat) + adam.eps)


def save_params(net: ValueNet, path: str) -> None:
    """Text dump, one parameter per line, layer-major order."""
    np.savetxt(path, net.params, fmt="%.17g")


def load_params(net: ValueNet, path: str) -> None:
    vals = np.loadtxt(path, dtype=np.float64).reshape(-1)
    if vals.shape != net.params.shape:
        raise ValueError(f"file holds {vals.shape[0]} values, net wants {net.n_params}")
    net.params[:] = vals
