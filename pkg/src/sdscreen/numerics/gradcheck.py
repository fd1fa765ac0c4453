"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor

__all__ = ["gradcheck", "numeric_grad"]


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar-valued fn w.r.t. one tensor."""
    out = np.zeros_like(param.data)
    flat_param = param.data.reshape(-1)
    flat_out = out.reshape(-1)
    for i in range(flat_param.size):
        orig = flat_param[i]
        flat_param[i] = orig + step
        hi = fn().item()
        flat_param[i] = orig - step
        lo = fn().item()
        flat_param[i] = orig
        flat_out[i] = (hi - lo) / (2.0 * step)
    return out


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor],
              step: float = 1e-5, tol: float = 1e-4) -> float:
    """Compare tape gradients of fn() against central differences.

    Returns the worst relative error over all checked entries; raises if it
    exceeds ``tol``. Relative error per entry is |a - n| / max(|a|, |n|, 1e-6).
    """
    for p in params:
        if not p.requires_grad:
            raise ContractError("gradcheck: every checked tensor must require gradients")
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(fn, p, step=step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()))
    if worst > tol:
        raise ContractError(f"gradcheck failed: worst relative error {worst:.3e} > {tol:.1e}")
    return worst
