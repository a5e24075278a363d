"""Small feed-forward network engine: tanh hidden layers, analytic gradients,
adaptive-moment optimizer. 64-bit floats throughout for reproducibility."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class Mlp:
    """Fully connected net with tanh hidden activations and a linear output."""

    def __init__(self, widths: list[int], rng: np.random.Generator | None = None):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = list(widths)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Batched forward pass; returns output and the activation cache."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.widths[0]:
            raise ValueError(f"expected input width {self.widths[0]}, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input")
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            cache.append(h)
        return (h[0] if squeeze else h), cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> "GradientSet":
        """Gradient of sum(output * grad_out) w.r.t. every parameter."""
        if len(cache) != len(self.weights) + 1:
            raise ValueError("cache does not match this network")
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            if i != len(self.weights) - 1:
                g = g * (1.0 - cache[i + 1] ** 2)  # tanh'
            grads_w[i] = h_in.T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return GradientSet(grads_w, grads_b)

    def to_dict(self) -> dict:
        return {
            "format": "mlp-v1",
            "widths": self.widths,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("format") != "mlp-v1":
            raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
        net = cls(d["widths"])
        for i, (fan_in, fan_out) in enumerate(zip(net.widths[:-1], net.widths[1:])):
            net.weights[i] = np.asarray(d["weights"][i], dtype=float).reshape(fan_in, fan_out)
            net.biases[i] = np.asarray(d["biases"][i], dtype=float)
        return net

    def copy(self) -> "Mlp":
        net = Mlp(self.widths)
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet([w * factor for w in self.weights],
                           [b * factor for b in self.biases])

    def add(self, other: "GradientSet") -> "GradientSet":
        return GradientSet([a + b for a, b in zip(self.weights, other.weights)],
                           [a + b for a, b in zip(self.biases, other.biases)])


class Adam:
    """First/second-moment adaptive optimizer with bias correction."""

    def __init__(self, net: Mlp, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]

    def step(self, net: Mlp, grads: GradientSet) -> Mlp:
        """Apply one descent step along ``grads``; mutates and returns ``net``."""
        gs = grads.arrays()
        params = net.parameters()
        if len(gs) != len(params):
            raise ValueError("gradient/parameter count mismatch")
        for g, p in zip(gs, params):
            if g.shape != p.shape:
                raise ValueError("gradient shape mismatch")
            if not np.all(np.isfinite(g)):
                raise ValueError("non-finite gradient")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, (g, p) in enumerate(zip(gs, params)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)
        return net

    def to_dict(self) -> dict:
        return {
            "format": "adam-v1",
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
            "eps": self.eps, "t": self.t,
            "m": [a.ravel().tolist() for a in self.m],
            "v": [a.ravel().tolist() for a in self.v],
        }

    @classmethod
    def from_dict(cls, d: dict, net: Mlp) -> "Adam":
        if d.get("format") != "adam-v1":
            raise ValueError(f"unsupported optimizer format {d.get('format')!r}")
        opt = cls(net, d["lr"], d["beta1"], d["beta2"], d["eps"])
        opt.t = d["t"]
        opt.m = [np.asarray(flat, dtype=float).reshape(p.shape)
                 for flat, p in zip(d["m"], net.parameters())]
        opt.v = [np.asarray(flat, dtype=float).reshape(p.shape)
                 for flat, p in zip(d["v"], net.parameters())]
        return opt


def save_checkpoint(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
