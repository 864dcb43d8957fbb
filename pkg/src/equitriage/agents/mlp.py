"""Small fully connected network with hand-written backprop, plus Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MLP:
    """ReLU hidden layers, linear output layer.

    Weights are initialised uniformly in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.
    ``forward`` caches activations so that ``backward`` can return parameter
    gradients for an upstream gradient on the outputs.
    """

    def __init__(self, sizes: list[int] | tuple[int, ...], rng: np.random.Generator | None = None):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        self.sizes = tuple(int(s) for s in sizes)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))
        self._cache: list[np.ndarray] = []

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        cache = [h]
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
            cache.append(z)
            cache.append(h)
        self._cache = cache
        return h

    __call__ = forward

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` with respect to every parameter."""
        if not self._cache:
            raise RuntimeError("backward called before forward")
        grads = [np.zeros_like(p) for p in self.params]
        delta = np.atleast_2d(grad_out)
        for i in reversed(range(self.n_layers)):
            z = self._cache[2 * i + 1]
            h_in = self._cache[2 * i]
            if i < self.n_layers - 1:
                delta = delta * (z > 0)
            grads[2 * i] = h_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.params[2 * i].T
        return grads

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.params:
            n = p.size
            p[...] = flat[offset:offset + n].reshape(p.shape)
            offset += n

    def copy(self) -> "MLP":
        clone = MLP.__new__(MLP)
        clone.sizes = self.sizes
        clone.params = [p.copy() for p in self.params]
        clone._cache = []
        return clone

    def load_from(self, other: "MLP") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "params": [p.tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, data: dict) -> "MLP":
        net = cls.__new__(cls)
        net.sizes = tuple(data["sizes"])
        net.params = [np.array(p, dtype=float) for p in data["params"]]
        net._cache = []
        return net


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(grads: list[np.ndarray], max_norm: float | None) -> float:
    """Scale ``grads`` in place to a global norm of at most ``max_norm``; returns the raw norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is not None and norm > max_norm > 0:
        for g in grads:
            g *= max_norm / norm
    return norm
