"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, frozen_stop_grads


class GradCheckError(RuntimeError):
    """The checked function returned a non-finite value at a perturbed point."""


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    max_abs_err: float
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def failures(self) -> list[ParamCheck]:
        return [p for p in self.params if not p.passed]


def _named(params):
    if isinstance(params, dict):
        return list(params.items())
    return [(f"p{i}", p) for i, p in enumerate(params)]


def grad_check(f, params, h: float = 1e-3, rtol: float = 1e-4, atol: float = 1e-6,
               max_entries: int | None = None, rng=None) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from ``params``
    (a dict name -> Tensor, or a list). An entry passes when its relative error
    is below ``rtol`` or its absolute error below ``atol``. ``max_entries``
    limits the number of coordinates probed per parameter (chosen with ``rng``).

    Values passed through ``stop_grad`` are held at their base-point values
    while differencing, so the numeric side sees them as constants too.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    named = _named(params)
    for _, p in named:
        p.zero_grad()
    frozen: list = []
    with frozen_stop_grads("record", frozen):
        loss = f()
    if not np.isfinite(loss.data).all():
        raise GradCheckError(f"non-finite value {loss.data} at the base point")
    loss.backward()
    rng = rng if rng is not None else np.random.default_rng(0)

    report = GradCheckReport()
    for name, p in named:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst_rel = worst_abs = 0.0
        ok = True
        for i in idx:
            orig = flat[i]
            try:
                flat[i] = orig + h
                with frozen_stop_grads("replay", frozen):
                    fp = float(f().data)
                flat[i] = orig - h
                with frozen_stop_grads("replay", frozen):
                    fm = float(f().data)
            finally:
                flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(f"non-finite value evaluating {name}[{i}] at +/-{h}")
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            abs_err = abs(a - numeric)
            denom = max(abs(a), abs(numeric))
            rel_err = abs_err / denom if denom > 0 else 0.0
            worst_rel = max(worst_rel, rel_err)
            worst_abs = max(worst_abs, abs_err)
            if not (rel_err < rtol or abs_err < atol):
                ok = False
        report.params.append(ParamCheck(name, worst_rel, worst_abs, len(idx), ok))
    for _, p in named:
        p.zero_grad()
    return report
