"""Kernel backend selection.

The compiled extension is used when importable; set the environment variable
``GATEFUSION_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names the
active implementation.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("GATEFUSION_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _attention, _kernels  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
    else:
        class _Compiled:
            align_forward = staticmethod(_kernels.align_forward)
            align_backward = staticmethod(_kernels.align_backward)
            layer_norm_forward = staticmethod(_kernels.layer_norm_forward)
            layer_norm_backward = staticmethod(_kernels.layer_norm_backward)
            gelu_forward = staticmethod(_kernels.gelu_forward)
            gelu_backward = staticmethod(_kernels.gelu_backward)
            precision_at_hits = staticmethod(_kernels.precision_at_hits)
            attention_forward = staticmethod(_attention.attention_forward)
            attention_backward = staticmethod(_attention.attention_backward)

        _impl = _Compiled
        BACKEND = "cython"


def _as3d(x):
    return np.ascontiguousarray(x.reshape((-1,) + x.shape[-2:]), dtype=np.float64)


def align_forward(x, t_target, impl=None):
    """Resample axis -2 of ``x`` to ``t_target`` rows (bin-average or floor-replicate)."""
    impl = impl or _impl
    lead = x.shape[:-2]
    out = impl.align_forward(_as3d(x), int(t_target))
    return np.asarray(out).reshape(lead + (int(t_target), x.shape[-1]))


def align_backward(g, t_in, impl=None):
    impl = impl or _impl
    lead = g.shape[:-2]
    out = impl.align_backward(_as3d(g), int(t_in))
    return np.asarray(out).reshape(lead + (int(t_in), g.shape[-1]))


def layer_norm_forward(x, gamma, beta, eps, impl=None):
    impl = impl or _impl
    f = x.shape[-1]
    x2 = np.ascontiguousarray(x.reshape(-1, f), dtype=np.float64)
    y, xhat, inv = impl.layer_norm_forward(
        x2, np.ascontiguousarray(gamma, dtype=np.float64),
        np.ascontiguousarray(beta, dtype=np.float64), float(eps))
    return np.asarray(y).reshape(x.shape), np.asarray(xhat), np.asarray(inv)


def layer_norm_backward(g, xhat, inv, gamma, impl=None):
    impl = impl or _impl
    f = g.shape[-1]
    g2 = np.ascontiguousarray(g.reshape(-1, f), dtype=np.float64)
    dx, dgamma, dbeta = impl.layer_norm_backward(
        g2, xhat, inv, np.ascontiguousarray(gamma, dtype=np.float64))
    return np.asarray(dx).reshape(g.shape), np.asarray(dgamma), np.asarray(dbeta)


def gelu_forward(x, impl=None):
    impl = impl or _impl
    flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    return np.asarray(impl.gelu_forward(flat)).reshape(x.shape)


def gelu_backward(x, g, impl=None):
    impl = impl or _impl
    flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    gf = np.ascontiguousarray(g, dtype=np.float64).ravel()
    return np.asarray(impl.gelu_backward(flat, gf)).reshape(x.shape)


def precision_at_hits(ranked_labels, impl=None):
    """Precision at the rank of each positive, in ranked order."""
    impl = impl or _impl
    arr = np.ascontiguousarray(ranked_labels, dtype=np.int8)
    return np.asarray(impl.precision_at_hits(arr))


def _lead(x):
    return np.ascontiguousarray(x.reshape((-1,) + x.shape[-2:]), dtype=np.float64)


def attention_forward(q, k, v, impl=None):
    """Row softmax of ``q @ k^T`` applied to ``v`` over axis -2; ``q`` is pre-scaled.

    Returns ``(out, weights)`` with the leading axes of ``q`` restored.
    """
    impl = impl or _impl
    lead = q.shape[:-2]
    out, w = impl.attention_forward(_lead(q), _lead(k), _lead(v))
    out, w = np.asarray(out), np.asarray(w)
    return (out.reshape(lead + out.shape[-2:]), w.reshape(lead + w.shape[-2:]))


def attention_backward(go, q, k, v, w, impl=None):
    impl = impl or _impl
    gq, gk, gv = impl.attention_backward(_lead(go), _lead(q), _lead(k), _lead(v), _lead(w))
    return (np.asarray(gq).reshape(q.shape), np.asarray(gk).reshape(k.shape),
            np.asarray(gv).reshape(v.shape))
