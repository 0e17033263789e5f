"""Run configuration: JSON file -> validated nested dataclasses.

Sections and keys (all optional; unknown keys are rejected)::

    {
      "seed": 0,
      "output_dir": "runs/default",
      "decoder": "higate",                      # higate | sum | concat | crossatten
      "encoder": {"n_layers": 6, "d_enc": 32, "n_heads": 4, "ffn_mult": 2, "max_positions": 512},
      "fusion":  {"layers": [1, 2, 4, 6], "width": 32, "gate_mode": "vector"},
      "loss":    {"lambda_mal": 0.01, "lambda_opp": 0.1},
      "data":    {"t_v": 64, "rate": 4, "d_in_a": 8, "d_in_v": 8, "p_speech": 0.4,
                  "p_distractor_v": 0.3, "p_distractor_a": 0.3, "noise_sigma": 0.5,
                  "segment_len": 8, "pattern_seed": 0, "train_offset": 0,
                  "val_offset": 1000000, "test_offset": 2000000, "n_val": 32, "n_test": 32},
      "train":   {"steps": 2000, "batch_frames": 256, "lr_encoder": 3e-3, "lr_decoder": 6e-3,
                  "decay": 0.95, "decay_interval": 300, "weight_decay": 0.01,
                  "betas": [0.9, 0.999], "eps": 1e-8, "eval_interval": 100}
    }

``fusion.layers`` may be ``null`` to use the depth-dependent default. The
canonical hash covers everything except ``output_dir``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .baselines import DECODER_KINDS
from .encoder import EncoderConfig
from .errors import ConfigError
from .heads import LossWeights
from .higate import FusionSpec, default_fusion_layers
from .synthdata import EpisodeConfig

SEED_ENV = "GATEFUSION_SEED"


@dataclass
class EncoderSection:
    n_layers: int = 6
    d_enc: int = 32
    n_heads: int = 4
    ffn_mult: int = 2
    max_positions: int = 512


@dataclass
class FusionSection:
    layers: list[int] | None = None
    width: int = 32
    gate_mode: str = "vector"


@dataclass
class LossSection:
    lambda_mal: float = 0.01
    lambda_opp: float = 0.1


@dataclass
class DataSection:
    t_v: int = 64
    rate: int = 4
    d_in_a: int = 8
    d_in_v: int = 8
    p_speech: float = 0.4
    p_distractor_v: float = 0.3
    p_distractor_a: float = 0.3
    noise_sigma: float = 0.5
    segment_len: int = 8
    pattern_seed: int = 0
    train_offset: int = 0
    val_offset: int = 1_000_000
    test_offset: int = 2_000_000
    n_val: int = 32
    n_test: int = 32


@dataclass
class TrainSection:
    steps: int = 2000
    batch_frames: int = 256
    # the published rates (5e-5 / 1e-4) assume pretrained backbones and 30k steps;
    # from-scratch encoders need larger steps to learn segment pooling within 2000
    lr_encoder: float = 3e-3
    lr_decoder: float = 6e-3
    decay: float = 0.95
    decay_interval: int = 300
    weight_decay: float = 0.01
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    eval_interval: int = 100


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    decoder: str = "higate"
    encoder: EncoderSection = field(default_factory=EncoderSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    loss: LossSection = field(default_factory=LossSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)

    # resolved views ------------------------------------------------------
    def fusion_layers(self) -> list[int]:
        if self.fusion.layers is None:
            return default_fusion_layers(self.encoder.n_layers)
        return list(self.fusion.layers)

    def fusion_spec(self) -> FusionSpec:
        return FusionSpec(self.fusion_layers(), self.fusion.width, self.fusion.gate_mode)

    def encoder_config(self, modality: str) -> EncoderConfig:
        d_in = self.data.d_in_a if modality == "audio" else self.data.d_in_v
        e = self.encoder
        return EncoderConfig(d_in=d_in, n_layers=e.n_layers, d_enc=e.d_enc, n_heads=e.n_heads,
                             ffn_mult=e.ffn_mult, max_positions=e.max_positions)

    def episode_config(self) -> EpisodeConfig:
        d = self.data
        return EpisodeConfig(t_v=d.t_v, rate=d.rate, d_in_a=d.d_in_a, d_in_v=d.d_in_v,
                             p_speech=d.p_speech, p_distractor_v=d.p_distractor_v,
                             p_distractor_a=d.p_distractor_a, noise_sigma=d.noise_sigma,
                             segment_len=d.segment_len, pattern_seed=d.pattern_seed, seed=self.seed)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.loss.lambda_mal, self.loss.lambda_opp)

    # validation / identity ---------------------------------------------
    def validate(self) -> "RunConfig":
        if self.decoder not in DECODER_KINDS:
            raise ConfigError(f"decoder must be one of {', '.join(DECODER_KINDS)}, got {self.decoder!r}")
        for modality in ("audio", "video"):
            self.encoder_config(modality).validate()
        self.fusion_spec().validate(self.encoder.n_layers)
        ep = self.episode_config()
        ep.validate()
        if ep.t_a > self.encoder.max_positions:
            raise ConfigError(f"audio length {ep.t_a} exceeds encoder.max_positions={self.encoder.max_positions}")
        try:
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        t = self.train
        if t.steps < 0:
            raise ConfigError(f"train.steps must be >= 0, got {t.steps}")
        if t.lr_encoder < 0 or t.lr_decoder < 0:
            raise ConfigError("learning rates must be >= 0 (0 freezes the group)")
        if not 0 < t.decay <= 1:
            raise ConfigError(f"train.decay must lie in (0, 1], got {t.decay}")
        if t.decay_interval < 1 or t.eval_interval < 1 or t.batch_frames < 1:
            raise ConfigError("train.decay_interval, eval_interval and batch_frames must be positive")
        if len(t.betas) != 2 or not all(0 <= b < 1 for b in t.betas):
            raise ConfigError(f"train.betas must be two values in [0, 1), got {t.betas}")
        if self.data.n_val < 1 or self.data.n_test < 1:
            raise ConfigError("data.n_val and data.n_test must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical(self) -> dict:
        d = self.to_dict()
        d.pop("output_dir")
        d["fusion"]["layers"] = self.fusion_layers()
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, overrides) -> "RunConfig":
        d = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            _set_path(d, key.strip(), _parse_value(raw.strip()))
        return from_dict(d)

    def replace(self, **kw) -> "RunConfig":
        return replace(copy.deepcopy(self), **kw)


_SECTIONS = {"encoder": EncoderSection, "fusion": FusionSection, "loss": LossSection,
             "data": DataSection, "train": TrainSection}


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _set_path(d: dict, path: str, value):
    parts = path.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {p!r} in override {path!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {path!r}")
    node[parts[-1]] = value


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**raw)


def from_dict(raw: dict) -> RunConfig:
    raw = copy.deepcopy(raw)
    kwargs = {}
    for name, value in raw.items():
        if name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], value, name)
        else:
            kwargs[name] = value
    try:
        cfg = _build(RunConfig, kwargs, "config")
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path, overrides=(), env=None) -> RunConfig:
    """Read a JSON config, apply ``--override`` items and the seed env var."""
    env = os.environ if env is None else env
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = from_dict(raw).with_overrides(list(overrides))
    if env.get(SEED_ENV):
        cfg = cfg.with_overrides([f"seed={int(env[SEED_ENV])}"])
    return cfg
