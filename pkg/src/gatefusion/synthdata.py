"""Synthetic paired audio/video episodes with a planted cross-modal signal.

An episode is cut into fixed-length segments. A speaking segment carries the
video pattern and the audio pattern; a silent segment may carry exactly one
of them as a distractor (a face that moves without speaking, or an
off-screen voice). The label is 1 iff both patterns are present, so neither
stream alone determines it. Gaussian noise covers every feature.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError

MAGIC = b"GFEP"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


@dataclass(frozen=True)
class EpisodeConfig:
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
    seed: int = 0

    def validate(self):
        if min(self.t_v, self.rate, self.d_in_a, self.d_in_v, self.segment_len) < 1:
            raise ConfigError(f"episode sizes must be positive: {self}")
        for name in ("p_speech", "p_distractor_v", "p_distractor_a"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.p_distractor_v + self.p_distractor_a > 1.0:
            raise ConfigError("p_distractor_v + p_distractor_a must not exceed 1 (distractors are exclusive)")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def t_a(self) -> int:
        return self.rate * self.t_v

    @property
    def n_segments(self) -> int:
        return -(-self.t_v // self.segment_len)


@dataclass
class PlantLog:
    video: np.ndarray  # bool per segment
    audio: np.ndarray

    def labels(self, cfg: EpisodeConfig) -> np.ndarray:
        seg = (self.video & self.audio).astype(np.uint8)
        return np.repeat(seg, cfg.segment_len)[: cfg.t_v]


@dataclass
class Episode:
    audio: np.ndarray   # (T_a, D_in_a)
    video: np.ndarray   # (T_v, D_in_v)
    labels: np.ndarray  # (T_v,) uint8
    plant_log: PlantLog | None = None


def pattern_directions(cfg: EpisodeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unit pattern vectors for (audio, video); fixed by ``pattern_seed`` only."""
    rng = np.random.default_rng([cfg.pattern_seed, 0x9A77])
    a = rng.standard_normal(cfg.d_in_a)
    v = rng.standard_normal(cfg.d_in_v)
    return a / np.linalg.norm(a), v / np.linalg.norm(v)


def generate_episode(cfg: EpisodeConfig, seed=None) -> Episode:
    """Deterministic episode; ``seed`` (int or int sequence) defaults to ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n = cfg.n_segments
    speaking = rng.random(n) < cfg.p_speech
    u = rng.random(n)
    distract_v = ~speaking & (u < cfg.p_distractor_v)
    distract_a = ~speaking & (u >= cfg.p_distractor_v) & (u < cfg.p_distractor_v + cfg.p_distractor_a)
    log = PlantLog(video=speaking | distract_v, audio=speaking | distract_a)

    dir_a, dir_v = pattern_directions(cfg)
    frames_v = np.repeat(log.video, cfg.segment_len)[: cfg.t_v].astype(np.float64)
    frames_a = np.repeat(np.repeat(log.audio, cfg.segment_len)[: cfg.t_v], cfg.rate).astype(np.float64)
    video = frames_v[:, None] * dir_v[None, :] + cfg.noise_sigma * rng.standard_normal((cfg.t_v, cfg.d_in_v))
    audio = frames_a[:, None] * dir_a[None, :] + cfg.noise_sigma * rng.standard_normal((cfg.t_a, cfg.d_in_a))
    return Episode(audio=audio, video=video, labels=log.labels(cfg), plant_log=log)


def corrupt(x: np.ndarray, sigma: float, seed) -> np.ndarray:
    """Additive white Gaussian noise; ``sigma == 0`` returns ``x`` unchanged."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x
    rng = np.random.default_rng(seed)
    return x + rng.normal(0.0, sigma, size=x.shape)


def stack_episodes(episodes: list[Episode]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch arrays (B, T_a, D_a), (B, T_v, D_v), (B, T_v)."""
    return (np.stack([e.audio for e in episodes]), np.stack([e.video for e in episodes]),
            np.stack([e.labels for e in episodes]).astype(np.float64))


# GFEP binary format -------------------------------------------------------

def write_episodes(path, episodes: list[Episode], rate: int):
    """Append-free write of one or more GFEP records to ``path``."""
    with open(path, "wb") as fh:
        for ep in episodes:
            t_v, d_v = ep.video.shape
            t_a, d_a = ep.audio.shape
            if t_a != rate * t_v:
                raise ValueError(f"audio length {t_a} is not rate*T_v = {rate}*{t_v}")
            fh.write(_HEADER.pack(MAGIC, VERSION, t_v, rate, d_a, d_v))
            fh.write(np.ascontiguousarray(ep.audio, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ep.video, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ep.labels, dtype=np.uint8).tobytes())


def read_episodes(path) -> list[Episode]:
    with open(path, "rb") as fh:
        buf = fh.read()
    out = []
    pos = 0
    while pos < len(buf):
        if len(buf) - pos < _HEADER.size:
            raise ValueError(f"{path}: truncated header at byte {pos}")
        magic, version, t_v, rate, d_a, d_v = _HEADER.unpack_from(buf, pos)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at byte {pos}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        pos += _HEADER.size
        t_a = rate * t_v
        n_a, n_v = t_a * d_a, t_v * d_v
        need = 8 * (n_a + n_v) + t_v
        if len(buf) - pos < need:
            raise ValueError(f"{path}: truncated record at byte {pos}")
        audio = np.frombuffer(buf, dtype="<f8", count=n_a, offset=pos).reshape(t_a, d_a).astype(np.float64)
        pos += 8 * n_a
        video = np.frombuffer(buf, dtype="<f8", count=n_v, offset=pos).reshape(t_v, d_v).astype(np.float64)
        pos += 8 * n_v
        labels = np.frombuffer(buf, dtype=np.uint8, count=t_v, offset=pos).copy()
        pos += t_v
        out.append(Episode(audio=audio, video=video, labels=labels))
    return out


def config_dict(cfg: EpisodeConfig) -> dict:
    return asdict(cfg)
