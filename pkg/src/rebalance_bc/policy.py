"""Gaussian policies with fixed sigma and hand-written gradients.

Both policy types expose the same small surface: ``mean(states)``,
``backward(states, dmean)`` (vector-Jacobian product into the flat parameter
vector), ``params`` and ``with_params``. Policies are immutable; training
produces new instances.

Checkpoint format (JSON, one object)::

    {"kind": "linear" | "mlp", "sizes": [in, h1, ..., out], "sigma": float,
     "params": [float, ...]}

Linear parameters are theta in row-major order (action_dim x state_dim). MLP
parameters are, layer by layer, the weight matrix (out x in, row-major)
followed by the bias vector.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .core import HALF_LOG_2PI, DomainError


class LinearGaussianPolicy:
    kind = "linear"

    def __init__(self, theta, sigma: float = 1.0):
        theta = np.atleast_2d(np.array(theta, dtype=float))
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        if not np.all(np.isfinite(theta)):
            raise DomainError("theta must be finite")
        self.theta = theta
        self.theta.setflags(write=False)
        self.sigma = float(sigma)

    @classmethod
    def zeros(cls, state_dim: int, action_dim: int, sigma: float = 1.0):
        return cls(np.zeros((action_dim, state_dim)), sigma)

    @property
    def sizes(self) -> list[int]:
        return [self.theta.shape[1], self.theta.shape[0]]

    @property
    def state_dim(self) -> int:
        return self.theta.shape[1]

    @property
    def action_dim(self) -> int:
        return self.theta.shape[0]

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def params(self) -> np.ndarray:
        return self.theta.ravel().copy()

    def with_params(self, flat) -> "LinearGaussianPolicy":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise DomainError(f"expected {self.n_params} parameters, got {flat.size}")
        return LinearGaussianPolicy(flat.reshape(self.theta.shape), self.sigma)

    def mean(self, states) -> np.ndarray:
        return np.atleast_2d(states) @ self.theta.T

    def forward(self, states):
        states = np.atleast_2d(states)
        return states @ self.theta.T, states

    def vjp(self, cache, dmean) -> np.ndarray:
        return (np.asarray(dmean).T @ cache).ravel()

    def backward(self, states, dmean) -> np.ndarray:
        return self.vjp(np.atleast_2d(states), dmean)

    def __call__(self, state):
        return self.mean(state)[0]


class MlpPolicy:
    """tanh MLP whose linear output is the Gaussian mean."""

    kind = "mlp"

    def __init__(self, sizes, params=None, sigma: float = 1.0, seed: int = 0):
        sizes = [int(n) for n in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise DomainError(f"bad layer sizes {sizes}")
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        self.sizes = sizes
        self.sigma = float(sigma)
        self._shapes = [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]
        n = sum(o * i + o for o, i in self._shapes)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        params = np.asarray(params, dtype=float)
        if params.shape != (n,):
            raise DomainError(f"expected {n} parameters, got {params.size}")
        self._flat = params.copy()
        self._flat.setflags(write=False)
        self._layers = self._unflatten(self._flat)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, hidden=(32, 32), sigma: float = 1.0,
               seed: int = 0) -> "MlpPolicy":
        return cls([state_dim, *hidden, action_dim], sigma=sigma, seed=seed)

    def _init_params(self, rng) -> np.ndarray:
        chunks = []
        last = len(self._shapes) - 1
        for li, (o, i) in enumerate(self._shapes):
            if li == last:
                w = np.zeros((o, i))
            else:
                lim = math.sqrt(6.0 / (i + o))
                w = rng.uniform(-lim, lim, size=(o, i))
            chunks += [w.ravel(), np.zeros(o)]
        return np.concatenate(chunks)

    def _unflatten(self, flat):
        layers, pos = [], 0
        for o, i in self._shapes:
            w = flat[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = flat[pos:pos + o]
            pos += o
            layers.append((w, b))
        return layers

    @property
    def state_dim(self) -> int:
        return self.sizes[0]

    @property
    def action_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return self._flat.size

    @property
    def params(self) -> np.ndarray:
        return self._flat.copy()

    def with_params(self, flat) -> "MlpPolicy":
        return MlpPolicy(self.sizes, flat, self.sigma)

    def _forward(self, x):
        acts = [x]
        h = x
        for li, (w, b) in enumerate(self._layers):
            z = h @ w.T + b
            h = z if li == len(self._layers) - 1 else np.tanh(z)
            acts.append(h)
        return acts

    def mean(self, states) -> np.ndarray:
        return self._forward(np.atleast_2d(np.asarray(states, dtype=float)))[-1]

    def forward(self, states):
        acts = self._forward(np.atleast_2d(np.asarray(states, dtype=float)))
        return acts[-1], acts

    def backward(self, states, dmean) -> np.ndarray:
        return self.vjp(self.forward(states)[1], dmean)

    def vjp(self, acts, dmean) -> np.ndarray:
        grads = []
        g = np.asarray(dmean, dtype=float)
        for li in range(len(self._layers) - 1, -1, -1):
            w, _ = self._layers[li]
            h_in = acts[li]
            grads.append((g.T @ h_in, g.sum(axis=0)))
            if li:
                g = (g @ w) * (1.0 - h_in ** 2)
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in reversed(grads)])

    def __call__(self, state):
        return self.mean(state)[0]


def get_params(policy) -> np.ndarray:
    return policy.params


def set_params(policy, flat):
    return policy.with_params(flat)


def nll_constant(policy) -> float:
    """NLL of a zero-residual sample: action_dim * (log sigma + log(2 pi) / 2)."""
    return policy.action_dim * (math.log(policy.sigma) + HALF_LOG_2PI)


def _check_dims(policy, states, actions):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if states.shape[1] != policy.state_dim or actions.shape[1] != policy.action_dim:
        raise DomainError(
            f"policy maps {policy.state_dim}-d states to {policy.action_dim}-d actions, "
            f"got {states.shape[1]} and {actions.shape[1]}")
    if len(states) != len(actions):
        raise DomainError("states and actions differ in length")
    return states, actions


def nll(policy, states, actions) -> np.ndarray:
    """Per-sample negative log-likelihood under the policy's Gaussian."""
    states, actions = _check_dims(policy, states, actions)
    r = actions - policy.mean(states)
    return 0.5 * np.sum(r ** 2, axis=1) / policy.sigma ** 2 + nll_constant(policy)


def nll_and_grad(policy, states, actions, weights):
    """Per-sample NLL and the gradient of sum_n weights[n] * nll_n, sharing one forward pass."""
    states, actions = _check_dims(policy, states, actions)
    mu, cache = policy.forward(states)
    r = actions - mu
    per = 0.5 * np.sum(r ** 2, axis=1) / policy.sigma ** 2 + nll_constant(policy)
    dmean = -(np.asarray(weights, dtype=float)[:, None] * r) / policy.sigma ** 2
    return per, policy.vjp(cache, dmean)


def grad_weighted_nll(policy, states, actions, weights) -> np.ndarray:
    """Gradient of sum_n weights[n] * nll_n with respect to the flat parameters."""
    return nll_and_grad(policy, states, actions, weights)[1]


def grad_nll(policy, states, actions) -> np.ndarray:
    """Gradient of the mean NLL over a batch."""
    n = len(np.atleast_2d(states))
    if n == 0:
        raise DomainError("empty batch")
    return grad_weighted_nll(policy, states, actions, np.full(n, 1.0 / n))


def save_policy(policy, path) -> None:
    blob = {"kind": policy.kind, "sizes": list(policy.sizes), "sigma": policy.sigma,
            "params": policy.params.tolist()}
    Path(path).write_text(json.dumps(blob) + "\n")


def load_policy(path):
    blob = json.loads(Path(path).read_text())
    if blob["kind"] == "linear":
        sd, ad = blob["sizes"]
        return LinearGaussianPolicy(np.asarray(blob["params"]).reshape(ad, sd), blob["sigma"])
    if blob["kind"] == "mlp":
        return MlpPolicy(blob["sizes"], blob["params"], blob["sigma"])
    raise DomainError(f"unknown policy kind {blob['kind']!r}")
