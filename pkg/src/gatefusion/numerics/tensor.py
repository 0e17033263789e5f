"""Dense float64 tensors with an eager reverse-mode tape.

Every operation records its inputs and a closure that maps the output
gradient to input gradients. ``Tensor.backward`` walks the recorded graph in
reverse topological order, visiting each node once and accumulating into
shared inputs.

Shapes follow a ``(..., T, F)`` convention: the last axis is features, the
one before it is time. Leading axes are batch axes and broadcast only against
missing leading axes (e.g. a ``(F,)`` bias or a ``(K, F)`` weight).
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np
from scipy.special import expit

from .. import kernels

LOG_CLAMP = 1e-12
LN_EPS = 1e-5

_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run forward computations without recording the tape (thread-local)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data, parents, backward, op):
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: cannot combine shapes {a.shape} and {b.shape}") from None


# elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    na, nb = a.requires_grad, b.requires_grad
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, sa) if na else None, unbroadcast(g, sb) if nb else None), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    na, nb = a.requires_grad, b.requires_grad
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, sa) if na else None, unbroadcast(-g, sb) if nb else None), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    na, nb = a.requires_grad, b.requires_grad
    return _make(ad * bd, (a, b),
                 lambda g: (unbroadcast(g * bd, ad.shape) if na else None,
                            unbroadcast(g * ad, bd.shape) if nb else None), "mul")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    """Natural log with inputs clamped below at ``LOG_CLAMP``."""
    xd = x.data
    clamped = np.maximum(xd, LOG_CLAMP)
    live = xd > LOG_CLAMP
    return _make(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0.0),), "log")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def gelu(x: Tensor) -> Tensor:
    """GELU, exact erf form: x * Phi(x)."""
    xd = x.data
    return _make(kernels.gelu_forward(xd), (x,), lambda g: (kernels.gelu_backward(xd, g),), "gelu")


# linear algebra / shape ---------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad
    if bd.ndim == 2 and ad.ndim > 2:
        # (..., T, K) @ (K, F): fold batch axes into rows so BLAS sees one GEMM
        a2 = ad.reshape(-1, ad.shape[-1])
        out = (a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if need_a else None
            gb = a2.T @ g2 if need_b else None
            return ga, gb

        return _make(out, (a, b), backward, "matmul")

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if need_a else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if need_b else None
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(x, -1, -2)


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    return _make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (features by default)."""
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def select_rows(x: Tensor, index) -> Tensor:
    """Gather rows along the time axis (-2); ``index`` may be a boolean mask."""
    index = np.asarray(index)
    if index.dtype == bool:
        index = np.flatnonzero(index)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, (..., index, slice(None)), g)
        return (out,)

    return _make(x.data[..., index, :], (x,), backward, "select_rows")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# normalisation ------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted."""
    if x.shape[-1] < 2:
        raise ShapeError(f"softmax_rows needs at least 2 classes, got shape {x.shape}")
    out = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def backward(g):
        gy = g * out
        gy -= out * gy.sum(axis=-1, keepdims=True)
        return (gy,)

    return _make(out, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Per-row normalisation over features, then ``gamma * . + beta``."""
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}, {beta.shape} do not match features of {x.shape}")
    y, xhat, inv = kernels.layer_norm_forward(x.data, gamma.data, beta.data, eps)
    gd = gamma.data

    def backward(g):
        dx, dgamma, dbeta = kernels.layer_norm_backward(g, xhat, inv, gd)
        return dx, dgamma, dbeta

    return _make(y, (x, gamma, beta), backward, "layer_norm")


def attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Fused ``softmax(q k^T) v`` over the time axis (no scaling applied).

    Returns the output and the attention weights; the weights are detached.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
        raise ShapeError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    qd, kd, vd = q.data, k.data, v.data
    out, w = kernels.attention_forward(qd, kd, vd)
    nq, nk, nv = q.requires_grad, k.requires_grad, v.requires_grad

    def backward(g):
        gq, gk, gv = kernels.attention_backward(g, qd, kd, vd, w)
        return (gq if nq else None, gk if nk else None, gv if nv else None)

    return _make(out, (q, k, v), backward, "attention"), Tensor(w, op="attention_weights")


def stop_grad(x: Tensor) -> Tensor:
    """Identity forward; severs the tape so nothing upstream receives gradient.

    Inside ``frozen_stop_grads`` the value returned is the one recorded at the
    same call position, making detached quantities constants of the function.
    """
    frozen = getattr(_state, "frozen", None)
    if frozen is not None:
        mode, values, pos = frozen
        if mode == "record":
            values.append(x.data.copy())
        else:
            _state.frozen = (mode, values, pos + 1)
            return Tensor(values[pos], op="stop_grad")
    return Tensor(x.data, op="stop_grad")


@contextlib.contextmanager
def frozen_stop_grads(mode: str, values: list):
    """``mode="record"`` stores every stop_grad output in ``values``; ``"replay"`` returns them in order."""
    prev = getattr(_state, "frozen", None)
    _state.frozen = (mode, values, 0)
    try:
        yield
    finally:
        _state.frozen = prev


def align(x: Tensor, t_target: int) -> Tensor:
    """Temporal alignment of axis -2 to ``t_target`` rows.

    Downsampling averages the rows of bin ``[floor(i*T/t), floor((i+1)*T/t))``;
    upsampling replicates row ``floor(i*T/t)``. Equal lengths return ``x``.
    """
    t_in = x.shape[-2]
    if t_target < 1:
        raise ShapeError(f"align: target length must be positive, got {t_target}")
    if t_target == t_in:
        return x
    return _make(kernels.align_forward(x.data, t_target), (x,),
                 lambda g: (kernels.align_backward(g, t_in),), "align")
