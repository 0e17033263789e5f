"""Toy per-modality transformer encoder exposing every hidden state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .layers import INIT_STD, LayerNorm, Linear, MultiHeadAttention
from .numerics import Module, Tensor, parameter


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int
    n_layers: int = 6
    d_enc: int = 32
    n_heads: int = 4
    ffn_mult: int = 2
    max_positions: int = 512

    def validate(self):
        if self.n_layers < 0:
            raise ConfigError(f"n_layers must be >= 0, got {self.n_layers}")
        if min(self.d_in, self.d_enc, self.n_heads, self.ffn_mult, self.max_positions) < 1:
            raise ConfigError(f"encoder widths and counts must be positive: {self}")
        if self.d_enc % self.n_heads:
            raise ConfigError(f"d_enc={self.d_enc} is not divisible by n_heads={self.n_heads}")


class EmbedStem(Module):
    """Linear token embedding plus a learned absolute position table."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(cfg.d_in, cfg.d_enc, rng)
        self.pos = parameter(rng.normal(0.0, INIT_STD, size=(cfg.max_positions, cfg.d_enc)))
        self.max_positions = cfg.max_positions

    def __call__(self, raw: Tensor) -> Tensor:
        t = raw.shape[-2]
        if t > self.max_positions:
            raise ConfigError(f"sequence of {t} frames exceeds max_positions={self.max_positions}")
        return self.proj(raw) + nx.select_rows(self.pos, np.arange(t))


class TransformerBlock(Module):
    """Pre-LN block: y = h + MHSA(LN(h)); out = y + FFN(LN(y))."""

    def __init__(self, d: int, n_heads: int, ffn_mult: int, rng: np.random.Generator):
        super().__init__()
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(d, ffn_mult * d, rng)
        self.ff2 = Linear(ffn_mult * d, d, rng)

    def __call__(self, h: Tensor) -> Tensor:
        y = h + self.attn(self.ln1(h))
        return y + self.ff2(nx.gelu(self.ff1(self.ln2(y))))


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.stem = EmbedStem(cfg, rng)
        self.blocks = [TransformerBlock(cfg.d_enc, cfg.n_heads, cfg.ffn_mult, rng)
                       for _ in range(cfg.n_layers)]

    def encode(self, raw: Tensor) -> list[Tensor]:
        """Hidden stack ``[h0, h1, ..., hL]``; ``h0`` is the stem output."""
        if raw.shape[-1] != self.cfg.d_in:
            raise ConfigError(f"raw width {raw.shape[-1]} does not match d_in={self.cfg.d_in}")
        h = self.stem(raw)
        stack = [h]
        for block in self.blocks:
            h = block(h)
            stack.append(h)
        return stack

    __call__ = encode
