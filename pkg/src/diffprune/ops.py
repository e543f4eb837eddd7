"""Differentiable primitives.

The set is deliberately closed: elementwise add/sub/mul, matmul and linear,
conv2d (cross-correlation), nearest upsampling, group_norm, silu, sum/mean,
mse_loss, plus the shape plumbing (reshape, concat) the UNet needs.
No operation writes into its inputs' arrays.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, make_result


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def vjp(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return make_result(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def vjp(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return make_result(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def vjp(g, needs):
        return (
            _unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None,
        )

    return make_result(a.data * b.data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``[m, k] @ [k, n] -> [m, n]``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g, needs):
        return (
            g @ b.data.T if needs[0] else None,
            a.data.T @ g if needs[1] else None,
        )

    return make_result(a.data @ b.data, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` laid out ``[out, in]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear shape mismatch: x{x.shape} w{w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g, needs):
        grads = [
            g @ w.data if needs[0] else None,
            g.T @ x.data if needs[1] else None,
        ]
        if b is not None:
            grads.append(g.sum(axis=0) if needs[2] else None)
        return grads

    return make_result(out, inputs, vjp)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise ValueError(
            f"conv2d output size is not integral: (size={size} + 2*pad={pad} - k={kernel})"
            f" / stride={stride}"
        )
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,Cin,H,W]`` with ``w[Cout,Cin,kh,kw]``."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x{x.shape} w{w.shape}")
    cout, cin, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d needs odd kernel sizes, got {kh}x{kw}")
    if pad < 0 or stride < 1:
        raise ValueError("conv2d needs pad >= 0 and stride >= 1")
    n, _, h, wd = x.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(wd, kw, stride, pad)

    cols = kernels.im2col(x.data, kh, kw, stride, pad)  # [Cin*kh*kw, N*Ho*Wo]
    w2 = w.data.reshape(cout, -1)
    y = w2 @ cols
    if b is not None:
        y += b.data[:, None]
    out = np.ascontiguousarray(y.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g, needs):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        dx = dw = db = None
        if needs[0]:
            dx = kernels.col2im(w2.T @ g2, x.shape, kh, kw, stride, pad)
        if needs[1]:
            dw = (g2 @ cols.T).reshape(w.shape)
        if b is not None and needs[2]:
            db = g2.sum(axis=1)
        return (dx, dw) if b is None else (dx, dw, db)

    return make_result(out, inputs, vjp)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def vjp(g, needs):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_result(out, (x,), vjp)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize ``x[N,C,...]`` over channel groups, then per-channel affine."""
    n, c = x.shape[:2]
    if c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(x.shape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def vjp(g, needs):
        dx = dgamma = dbeta = None
        if needs[0]:
            dxhat = (g * gamma.data.reshape(bshape)).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            dx = inv * (
                dxhat
                - dxhat.mean(axis=2, keepdims=True)
                - xh * (dxhat * xh).mean(axis=2, keepdims=True)
            )
            dx = dx.reshape(x.shape)
        if needs[1]:
            dgamma = (g * xhat).sum(axis=red)
        if needs[2]:
            dbeta = g.sum(axis=red)
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), vjp)


def silu(x: Tensor) -> Tensor:
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = x.data * sig

    def vjp(g, needs):
        return (g * (sig * (1.0 + x.data * (1.0 - sig))),)

    return make_result(out, (x,), vjp)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def vjp(g, needs):
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), vjp)


def mean(x: Tensor) -> Tensor:
    size = x.data.size

    def vjp(g, needs):
        return (np.full(x.shape, g / size, dtype=x.dtype),)

    return make_result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), vjp)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over all elements."""
    target = _lift(target, pred)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    size = diff.size

    def vjp(g, needs):
        scaled = diff * (2.0 * g / size)
        return (scaled if needs[0] else None, -scaled if needs[1] else None)

    return make_result(np.asarray((diff * diff).mean(), dtype=diff.dtype), (pred, target), vjp)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def vjp(g, needs):
        return (g.reshape(x.shape),)

    return make_result(x.data.reshape(shape), (x,), vjp)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g, needs):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if needs[i] else None
            for i in range(len(tensors))
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def avg_pool2(x: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 blocks of ``x[N,C,H,W]`` (H, W even)."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g, needs):
        return (np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3),)

    return make_result(out, (x,), vjp)
