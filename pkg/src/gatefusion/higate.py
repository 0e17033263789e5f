"""Hierarchical gated fusion decoder.

In each direction the primary modality's projected final feature is refined,
shallow to deep, by the context encoder's hidden states at the chosen fusion
layers: project the hidden state to decoder width, align it to the primary
frame rate, compute a sigmoid gate from the pair, add the gated context and
layer-normalise. The audio-primary and video-primary directions run with
independent parameters and are summed at the video frame rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .layers import LayerNorm, Linear
from .numerics import Module, Tensor

AUDIO_PRIMARY = "audio-primary"
VIDEO_PRIMARY = "video-primary"

# Supplementary fusion-layer presets for a 12-layer encoder, keyed by name.
PRESETS_L12 = {
    "single-deep": [10],
    "spaced-2": [7, 10],
    "spaced-3": [4, 7, 10],
    "spaced-4": [1, 4, 7, 10],
    "spaced-6": [1, 3, 5, 7, 9, 11],
    "dense": list(range(1, 13)),
}


def default_fusion_layers(n_layers: int) -> list[int]:
    """{1, 4, 7, 10} for 12 layers, {1, 2, 4, 6} for 6; shallow+mid+deep otherwise."""
    if n_layers == 12:
        return [1, 4, 7, 10]
    if n_layers == 6:
        return [1, 2, 4, 6]
    if n_layers <= 4:
        return list(range(1, n_layers + 1))
    return sorted({1, round(n_layers / 3), round(2 * n_layers / 3), n_layers})


def scaled_preset(name: str, n_layers: int) -> list[int]:
    """Map a 12-layer preset onto an ``n_layers``-deep encoder (ceil scaling, deduplicated)."""
    if name == "none":
        return []
    if name not in PRESETS_L12:
        raise ConfigError(f"unknown fusion preset {name!r}; choose from none, {', '.join(PRESETS_L12)}")
    layers = PRESETS_L12[name]
    if n_layers == 12:
        return list(layers)
    return sorted({max(1, -(-l * n_layers // 12)) for l in layers})


@dataclass
class FusionSpec:
    fusion_layers: list[int] = field(default_factory=lambda: [1, 2, 4, 6])
    width: int = 32
    gate_mode: str = "vector"

    def validate(self, n_layers: int):
        fl = list(self.fusion_layers)
        if any(b <= a for a, b in zip(fl, fl[1:])):
            raise ConfigError(f"fusion_layers must be strictly increasing, got {fl}")
        if fl and (fl[0] < 1 or fl[-1] > n_layers):
            raise ConfigError(
                f"fusion_layers {fl} must lie in [1, {n_layers}] (encoder depth); "
                f"lower the indices or raise encoder n_layers")
        if self.width < 1:
            raise ConfigError(f"decoder width must be positive, got {self.width}")
        if self.gate_mode not in ("vector", "scalar"):
            raise ConfigError(f"gate_mode must be 'vector' or 'scalar', got {self.gate_mode!r}")


class GateUnit(Module):
    """sigmoid([f_p; h_c] W_g + b_g). Scalar mode emits one gate per frame."""

    def __init__(self, width: int, rng: np.random.Generator, mode: str = "vector"):
        super().__init__()
        self.lin = Linear(2 * width, width if mode == "vector" else 1, rng)


def project(h: Tensor, proj: Linear) -> Tensor:
    return proj(h)


def gate(f_p: Tensor, h_c: Tensor, unit: GateUnit) -> Tensor:
    return nx.sigmoid(unit.lin(nx.concat([f_p, h_c], axis=-1)))


def fuse_step(f_p: Tensor, h_c: Tensor, g: Tensor, ln: LayerNorm) -> Tensor:
    return ln(f_p + g * h_c)


class HiGateDirection(Module):
    """One fusion direction: per-fusion-layer context projection, gate and LN."""

    def __init__(self, spec: FusionSpec, d_enc: int, rng: np.random.Generator):
        super().__init__()
        self.fusion_layers = list(spec.fusion_layers)
        self.ctx_proj = [Linear(d_enc, spec.width, rng) for _ in self.fusion_layers]
        self.gates = [GateUnit(spec.width, rng, spec.gate_mode) for _ in self.fusion_layers]
        self.norms = [LayerNorm(spec.width) for _ in self.fusion_layers]
        self.last_gates: list[Tensor] = []

    def __call__(self, f_p: Tensor, context: list[Tensor]) -> Tensor:
        return higate_forward(f_p, context, self)


def higate_forward(f_p: Tensor, context: list[Tensor], direction: HiGateDirection) -> Tensor:
    """Refine ``f_p`` with the context hidden stack; identity when no fusion layers."""
    depth = len(context) - 1
    if direction.fusion_layers and direction.fusion_layers[-1] > depth:
        raise ConfigError(
            f"fusion layer {direction.fusion_layers[-1]} exceeds context stack depth {depth}")
    t_p = f_p.shape[-2]
    out = f_p
    direction.last_gates = []
    for layer, proj, unit, ln in zip(direction.fusion_layers, direction.ctx_proj,
                                     direction.gates, direction.norms):
        h_c = nx.align(project(context[layer], proj), t_p)
        g = gate(out, h_c, unit)
        direction.last_gates.append(g)
        out = fuse_step(out, h_c, g, ln)
    return out


def combine(f_a: Tensor, f_v: Tensor) -> Tensor:
    """Audio aligned to the video frame rate, plus video."""
    return nx.align(f_a, f_v.shape[-2]) + f_v


class HiGateDecoder(Module):
    def __init__(self, spec: FusionSpec, d_enc: int, rng: np.random.Generator):
        super().__init__()
        self.audio_primary = HiGateDirection(spec, d_enc, rng)
        self.video_primary = HiGateDirection(spec, d_enc, rng)

    def __call__(self, f_a: Tensor, f_v: Tensor, stack_a: list[Tensor], stack_v: list[Tensor]) -> Tensor:
        fa = self.audio_primary(f_a, stack_v)
        fv = self.video_primary(f_v, stack_a)
        return combine(fa, fv)
