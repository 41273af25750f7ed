"""Small dense MLP (ReLU hidden layers, sigmoid output) with a hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def flush_subnormal(a: np.ndarray) -> np.ndarray:
    """Zero out subnormal values: they push BLAS onto a slow microcode path (~40x)."""
    tiny = np.finfo(a.dtype).tiny
    return np.where(np.abs(a) < tiny, a.dtype.type(0), a)


@dataclass
class MlpCache:
    inputs: list = field(default_factory=list)  # input to every linear layer
    out: np.ndarray | None = None


@dataclass
class DirectionalMlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def create(cls, in_dim: int, depth: int = 8, width: int = 256, out_dim: int = 3,
               rng: np.random.Generator | None = None, dtype=np.float32) -> "DirectionalMlp":
        rng = np.random.default_rng(0) if rng is None else rng
        sizes = [in_dim] + [width] * depth + [out_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            std = np.sqrt(2.0 / fan_in)
            weights.append((rng.standard_normal((fan_in, fan_out)) * std).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        """(hidden depth, hidden width)."""
        return len(self.weights) - 1, self.weights[0].shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, x: np.ndarray, cache: MlpCache | None = None) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"feature width {x.shape[-1]} does not match MLP input width {self.in_dim}")
        # mixed-precision matmuls fall off the BLAS path, so compute in the parameter dtype
        h = flush_subnormal(np.asarray(x, dtype=self.weights[0].dtype))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if cache is not None:
                cache.inputs.append(h)
            h = h @ w
            h += b
            if i < last:
                np.maximum(h, 0, out=h)
        out = sigmoid(h)
        if cache is not None:
            cache.out = out
        return out

    def backward(self, cache: MlpCache, grad_out: np.ndarray):
        """Returns ``(param_grads, grad_inputs)``; ``param_grads`` follows ``parameters()`` order."""
        out = cache.out
        g = flush_subnormal(np.asarray(grad_out, dtype=out.dtype) * out * (1.0 - out))
        grads = [None] * (2 * len(self.weights))
        ones = np.ones(len(g), dtype=g.dtype)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache.inputs[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = ones @ g  # column sum through BLAS, ~3x faster than reduce
            g = g @ self.weights[i].T
            if i > 0:
                # h_in is the post-ReLU activation of the previous layer
                np.multiply(g, h_in > 0, out=g)
        return grads, g


def mlp_forward_backward(mlp: DirectionalMlp, features: np.ndarray, upstream: np.ndarray):
    cache = MlpCache()
    out = mlp.forward(features, cache)
    grads, grad_features = mlp.backward(cache, upstream)
    return out, grads, grad_features
