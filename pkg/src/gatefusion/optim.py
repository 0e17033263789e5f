"""AdamW with per-group learning rates and a step-decay schedule."""
from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    pass


def lr_schedule(step: int, base: float, decay: float, decay_interval: int) -> float:
    """``base * decay ** floor(step / decay_interval)``."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return base * decay ** (step // decay_interval)


class AdamW:
    """Adam with decoupled weight decay.

    ``theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta``
    with bias-corrected moments. A step whose gradients contain a non-finite
    value is rejected before any parameter or moment changes.
    """

    def __init__(self, params, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lrs):
        """Apply one update; ``lrs`` is one rate per parameter (or a scalar)."""
        if np.isscalar(lrs):
            lrs = [float(lrs)] * len(self.params)
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        for i, g in enumerate(grads):
            if not np.isfinite(g).all():
                logger.error("rejecting optimizer step %d: non-finite gradient in parameter %d", self.t + 1, i)
                raise NonFiniteGradient(f"non-finite gradient in parameter {i}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v, lr in zip(self.params, grads, self.m, self.v, lrs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr == 0.0:
                continue
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update += lr * self.weight_decay * p.data
            p.data -= update

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}
