"""Building blocks shared by the encoders and decoders."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Module, Tensor, parameter

INIT_STD = 0.02


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = parameter(rng.normal(0.0, INIT_STD, size=(d_in, d_out)))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = nx.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = nx.LN_EPS):
        super().__init__()
        self.gamma = parameter(np.ones(d))
        self.beta = parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.gamma, self.beta, self.eps)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    # (..., T, D) -> (..., H, T, D/H)
    d = x.shape[-1]
    x = nx.reshape(x, x.shape[:-1] + (n_heads, d // n_heads))
    return nx.swapaxes(x, -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    x = nx.swapaxes(x, -2, -3)
    return nx.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def attention(q: Tensor, k: Tensor, v: Tensor, fused: bool = True) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the time axis; returns (output, weights).

    ``fused=False`` composes the same computation from tape primitives.
    """
    q = q * (1.0 / np.sqrt(q.shape[-1]))
    if fused:
        return nx.attention(q, k, v)
    weights = nx.softmax_rows(nx.matmul(q, nx.transpose(k)))
    return nx.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Multi-head attention with separate query and key/value sources."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d % n_heads:
            raise ValueError(f"width {d} is not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.last_weights: Tensor | None = None

    def __call__(self, x_q: Tensor, x_kv: Tensor | None = None) -> Tensor:
        x_kv = x_q if x_kv is None else x_kv
        q = split_heads(self.q(x_q), self.n_heads)
        k = split_heads(self.k(x_kv), self.n_heads)
        v = split_heads(self.v(x_kv), self.n_heads)
        out, w = attention(q, k, v)
        self.last_weights = w
        return self.o(merge_heads(out))
