"""Late-fusion decoders used as comparison arms: Sum, Concat and CrossAtten."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .layers import LayerNorm, Linear, MultiHeadAttention
from .numerics import Module, Tensor

DECODER_KINDS = ("higate", "sum", "concat", "crossatten")


def sum_fuse(f_a: Tensor, f_v: Tensor, proj: Linear) -> Tensor:
    return proj(nx.align(f_a, f_v.shape[-2]) + f_v)


def concat_fuse(f_a: Tensor, f_v: Tensor, proj: Linear) -> Tensor:
    return proj(nx.concat([nx.align(f_a, f_v.shape[-2]), f_v], axis=-1))


class SumDecoder(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(width, width, rng)

    def __call__(self, f_a, f_v, stack_a=None, stack_v=None):
        return sum_fuse(f_a, f_v, self.proj)


class ConcatDecoder(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(2 * width, width, rng)

    def __call__(self, f_a, f_v, stack_a=None, stack_v=None):
        return concat_fuse(f_a, f_v, self.proj)


class CrossAttenDecoder(Module):
    """Bidirectional cross-attention, then one residual self-attention layer.

    Video-queried and audio-queried outputs are concatenated at the video
    frame rate, passed through ``LN(z + SelfAttn(z))`` and projected to width.
    """

    def __init__(self, width: int, rng: np.random.Generator, n_heads: int = 4):
        super().__init__()
        self.v_from_a = MultiHeadAttention(width, n_heads, rng)
        self.a_from_v = MultiHeadAttention(width, n_heads, rng)
        self.self_attn = MultiHeadAttention(2 * width, n_heads, rng)
        self.norm = LayerNorm(2 * width)
        self.proj = Linear(2 * width, width, rng)

    def __call__(self, f_a, f_v, stack_a=None, stack_v=None):
        return crossatten_fuse(f_a, f_v, self)


def crossatten_fuse(f_a: Tensor, f_v: Tensor, params: CrossAttenDecoder) -> Tensor:
    x_v = params.v_from_a(f_v, f_a)
    x_a = nx.align(params.a_from_v(f_a, f_v), f_v.shape[-2])
    z = nx.concat([x_v, x_a], axis=-1)
    z = params.norm(z + params.self_attn(z))
    return params.proj(z)
