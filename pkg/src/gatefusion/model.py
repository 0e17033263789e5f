"""End-to-end model: two encoders, final projections, a fusion decoder, three heads."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .baselines import DECODER_KINDS, ConcatDecoder, CrossAttenDecoder, SumDecoder
from .encoder import Encoder, EncoderConfig
from .errors import ConfigError
from .heads import AVClassifier, PredictionBundle, UniClassifier
from .higate import FusionSpec, HiGateDecoder
from .layers import Linear
from .numerics import Module, Tensor

ENCODER_GROUP = "encoder"
DECODER_GROUP = "decoder"


def build_decoder(kind: str, spec: FusionSpec, d_enc: int, rng: np.random.Generator) -> Module:
    if kind == "higate":
        return HiGateDecoder(spec, d_enc, rng)
    if kind == "sum":
        return SumDecoder(spec.width, rng)
    if kind == "concat":
        return ConcatDecoder(spec.width, rng)
    if kind == "crossatten":
        return CrossAttenDecoder(spec.width, rng)
    raise ConfigError(f"unknown decoder {kind!r}; choose one of {', '.join(DECODER_KINDS)}")


class GateFusionModel(Module):
    """Audio and video encoders feed a decoder; unimodal heads see pre-fusion features."""

    def __init__(self, enc_a: EncoderConfig, enc_v: EncoderConfig, spec: FusionSpec,
                 decoder: str, rng: np.random.Generator):
        super().__init__()
        if decoder == "higate":
            spec.validate(min(enc_a.n_layers, enc_v.n_layers))
        self.decoder_kind = decoder
        self.encoder_a = Encoder(enc_a, rng)
        self.encoder_v = Encoder(enc_v, rng)
        self.proj_a = Linear(enc_a.d_enc, spec.width, rng)
        self.proj_v = Linear(enc_v.d_enc, spec.width, rng)
        self.decoder = build_decoder(decoder, spec, enc_a.d_enc, rng)
        self.head_av = AVClassifier(spec.width, rng)
        self.head_a = UniClassifier(spec.width, rng)
        self.head_v = UniClassifier(spec.width, rng)

    def param_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        groups = {ENCODER_GROUP: [], DECODER_GROUP: []}
        for name, p in self.named_parameters():
            key = ENCODER_GROUP if name.startswith(("encoder_a.", "encoder_v.")) else DECODER_GROUP
            groups[key].append((name, p))
        return groups

    def __call__(self, audio, video) -> PredictionBundle:
        audio, video = nx.as_tensor(audio), nx.as_tensor(video)
        stack_a = self.encoder_a.encode(audio)
        stack_v = self.encoder_v.encode(video)
        f_a = self.proj_a(stack_a[-1])
        f_v = self.proj_v(stack_v[-1])
        f_av = self.decoder(f_a, f_v, stack_a, stack_v)
        t_v = f_v.shape[-2]
        return PredictionBundle.from_logits(
            self.head_av(f_av),
            self.head_a(nx.align(f_a, t_v)),
            self.head_v(f_v),
        )
