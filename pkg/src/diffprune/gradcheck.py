"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


def _eval64(f: Callable[..., Tensor], arrays: list[np.ndarray]) -> float:
    return float(f(*[Tensor(a.astype(np.float64)) for a in arrays]).data)


def grad_check(f: Callable[..., Tensor], *xs: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between tape gradients of ``f`` and central differences.

    ``f`` maps the tensors ``xs`` to a scalar tensor. Gradients are taken at the
    precision of ``xs``; the central differences (five-point stencil) are always
    evaluated in float64 so the reference does not inherit float32 rounding.
    Returns ``max |g_auto - g_fd| / (|g_fd| + 1e-8)`` over all coordinates.
    """
    leaves = [Tensor(x.data.copy(), requires_grad=True) for x in xs]
    with Tape() as tape:
        y = f(*leaves)
    tape.backward(y)

    base = [x.data.astype(np.float64) for x in xs]
    worst = 0.0
    for k, leaf in enumerate(leaves):
        auto = np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.astype(np.float64)
        flat = base[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for step in (2.0, 1.0, -1.0, -2.0):
                flat[i] = orig + step * eps
                vals.append(_eval64(f, base))
            flat[i] = orig
            fd = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * eps)
            err = abs(auto.reshape(-1)[i] - fd) / (abs(fd) + 1e-8)
            worst = max(worst, err)
    return worst
