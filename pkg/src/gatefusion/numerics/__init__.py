"""Float64 tensors, reverse-mode differentiation and a finite-difference harness."""
from .gradcheck import GradCheckError, GradCheckReport, ParamCheck, grad_check
from .tensor import (
    LN_EPS,
    LOG_CLAMP,
    ShapeError,
    Tensor,
    add,
    align,
    attention,
    as_tensor,
    concat,
    exp,
    frozen_stop_grads,
    gelu,
    is_grad_enabled,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    parameter,
    reshape,
    select_rows,
    sigmoid,
    softmax_rows,
    stop_grad,
    sub,
    sum,
    swapaxes,
    transpose,
    unbroadcast,
)
from .module import Module

__all__ = [
    "GradCheckError", "GradCheckReport", "LN_EPS", "LOG_CLAMP", "Module", "ParamCheck",
    "ShapeError", "Tensor", "add", "align", "attention", "as_tensor", "concat", "exp", "frozen_stop_grads", "gelu",
    "grad_check", "is_grad_enabled", "layer_norm", "log", "matmul", "mean", "mul",
    "no_grad", "parameter", "reshape", "select_rows", "sigmoid", "softmax_rows",
    "stop_grad", "sub", "sum", "swapaxes", "transpose", "unbroadcast",
]
