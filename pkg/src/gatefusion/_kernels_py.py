"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and conventions are identical; the selector in ``kernels`` falls
back here when the extension is missing or ``GATEFUSION_PURE_PYTHON`` is set.
"""
import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.70710678118654752440
_INV_SQRT2PI = 0.39894228040143267794


def pool_bins(t_in, t_target):
    """Start/stop row indices of each averaging bin (requires t_target <= t_in)."""
    i = np.arange(t_target + 1)
    edges = (i * t_in) // t_target
    return edges[:-1], edges[1:]


def replicate_index(t_in, t_target):
    return (np.arange(t_target) * t_in) // t_target


def _ordered_bin_sums(x, starts, counts):
    # row-by-row accumulation, so every bin is summed strictly left to right
    out = x[:, starts, :].copy()
    for k in range(1, int(counts.max())):
        m = counts > k
        out[:, m, :] += x[:, starts[m] + k, :]
    return out


def align_forward(x, t_target):
    t_in = x.shape[1]
    if t_target <= t_in:
        starts, stops = pool_bins(t_in, t_target)
        counts = stops - starts
        return _ordered_bin_sums(x, starts, counts) / counts.astype(np.float64)[None, :, None]
    return np.ascontiguousarray(x[:, replicate_index(t_in, t_target), :])


def align_backward(g, t_in):
    t_target = g.shape[1]
    if t_target <= t_in:
        starts, stops = pool_bins(t_in, t_target)
        counts = stops - starts
        return np.repeat(g / counts.astype(np.float64)[None, :, None], counts, axis=1)
    idx = replicate_index(t_in, t_target)
    first = np.searchsorted(idx, np.arange(t_in))
    counts = np.diff(np.append(first, t_target))
    return _ordered_bin_sums(g, first, counts)


def layer_norm_forward(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv
    return xhat * gamma + beta, xhat, inv[:, 0]


def layer_norm_backward(g, xhat, inv, gamma):
    gh = g * gamma
    m1 = gh.mean(axis=1, keepdims=True)
    m2 = (gh * xhat).mean(axis=1, keepdims=True)
    dx = inv[:, None] * (gh - m1 - xhat * m2)
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def gelu_forward(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(x, g):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return g * (cdf + x * pdf)


def precision_at_hits(ranked_labels):
    hits = np.cumsum(ranked_labels, dtype=np.int64)
    ranks = np.arange(1, len(ranked_labels) + 1)
    mask = ranked_labels.astype(bool)
    return hits[mask].astype(np.float64) / ranks[mask].astype(np.float64)


def attention_forward(q, k, v):
    """softmax(q k^T) v per leading index; q is pre-scaled. Returns (out, weights)."""
    out = np.empty(q.shape[:-1] + (v.shape[-1],))
    w = np.empty(q.shape[:-1] + (k.shape[-2],))
    for n in range(q.shape[0]):
        s = q[n] @ k[n].T
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        w[n] = s
        out[n] = s @ v[n]
    return out, w


def attention_backward(go, q, k, v, w):
    gq, gk, gv = np.empty_like(q), np.empty_like(k), np.empty_like(v)
    for n in range(q.shape[0]):
        gs = go[n] @ v[n].T
        gv[n] = w[n].T @ go[n]
        gs *= w[n]
        gs -= w[n] * gs.sum(axis=-1, keepdims=True)
        gq[n] = gs @ k[n]
        gk[n] = gs.T @ q[n]
    return gq, gk, gv
