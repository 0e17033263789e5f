"""Frame-level average precision."""
from __future__ import annotations

import math

import numpy as np

from . import kernels


class UndefinedMetricError(ValueError):
    pass


def average_precision(scores, labels) -> float:
    """Non-interpolated AP: mean precision at the rank of each positive.

    Ranking is by descending score; ties keep the original order.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    npos = int(np.count_nonzero(labels))
    if npos == 0:
        raise UndefinedMetricError("average precision is undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    prec = kernels.precision_at_hits((labels[order] != 0).astype(np.int8))
    return math.fsum(prec) / npos
