"""Classification heads and the training objective.

The multimodal head is evaluated once; its logits feed a live softmax for the
cross-entropy term and a detached softmax for the alignment term, so the two
agree bit for bit in the forward pass while only the live branch carries
gradient back into the fusion path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .layers import Linear
from .numerics import Module, Tensor

_POSITIVE = np.array([0.0, 1.0])


class AVClassifier(Module):
    """linear -> GELU -> linear to two logits."""

    def __init__(self, width: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, 2, rng)

    def __call__(self, f: Tensor) -> Tensor:
        return self.fc2(nx.gelu(self.fc1(f)))


class UniClassifier(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        super().__init__()
        self.fc = Linear(width, 2, rng)

    def __call__(self, f: Tensor) -> Tensor:
        return self.fc(f)


def classify_av(f_av: Tensor, head: AVClassifier) -> Tensor:
    return head(f_av)


def classify_uni(f: Tensor, head: UniClassifier) -> Tensor:
    return head(f)


@dataclass
class PredictionBundle:
    p_av_live: Tensor
    p_av_detached: Tensor
    p_a: Tensor
    p_v: Tensor

    @classmethod
    def from_logits(cls, logits_av: Tensor, logits_a: Tensor, logits_v: Tensor) -> "PredictionBundle":
        return cls(
            p_av_live=nx.softmax_rows(logits_av),
            p_av_detached=nx.softmax_rows(nx.stop_grad(logits_av)),
            p_a=nx.softmax_rows(logits_a),
            p_v=nx.softmax_rows(logits_v),
        )

    def scores(self) -> dict[str, np.ndarray]:
        """Positive-class probability per frame for each head."""
        return {"av": self.p_av_live.data[..., 1], "a": self.p_a.data[..., 1], "v": self.p_v.data[..., 1]}


@dataclass(frozen=True)
class LossWeights:
    lambda_mal: float = 0.01
    lambda_opp: float = 0.1

    def __post_init__(self):
        for name in ("lambda_mal", "lambda_opp"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def _labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    return y


def _kl_rows(p: Tensor, q: Tensor) -> Tensor:
    return nx.sum(p * (nx.log(p) - nx.log(q)), axis=-1)


def mal(bundle: PredictionBundle, labels) -> Tensor:
    """Masked alignment: mean KL(p_av || p_m) over positive frames, both heads.

    Returns 0 when the batch has no positive frame.
    """
    y = _labels(labels)
    n_pos = float(y.sum())
    if n_pos == 0:
        return nx.Tensor(0.0)
    p_av = bundle.p_av_detached
    kl = _kl_rows(p_av, bundle.p_a) + _kl_rows(p_av, bundle.p_v)
    return nx.sum(kl * y) * (1.0 / (2.0 * n_pos))


def opp(p_v: Tensor, labels) -> Tensor:
    """Mean video positive-class probability over negative frames, divided by all frames."""
    y = _labels(labels)
    pos_prob = nx.sum(p_v * _POSITIVE, axis=-1)
    return nx.sum(pos_prob * (1.0 - y)) * (1.0 / y.size)


def cls(p_av_live: Tensor, labels) -> Tensor:
    """Cross-entropy of the multimodal head against one-hot labels."""
    y = _labels(labels)
    onehot = np.stack([1.0 - y, y], axis=-1)
    return nx.sum(nx.log(p_av_live) * onehot) * (-1.0 / y.size)


def total_loss(l_cls: Tensor, l_mal: Tensor, l_opp: Tensor, w: LossWeights) -> Tensor:
    return l_cls + l_mal * w.lambda_mal + l_opp * w.lambda_opp
