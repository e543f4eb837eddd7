"""Dense tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it in
execution order, which is a valid topological order of the graph. Calling
:meth:`Tape.backward` walks the record once in reverse and accumulates
gradients into every leaf tensor that has ``requires_grad`` set. Outside a
tape nothing is recorded, so inference carries no bookkeeping cost.

    >>> w = Tensor(np.array([3.0]), requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (w * w).sum()
    >>> tape.backward(y)
    >>> w.grad
    array([6.])
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """Array of float32/float64 values with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None and not isinstance(data, np.ndarray):
            dtype = DEFAULT_DTYPE  # lists and Python scalars
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def sum(self):
        from . import ops

        return ops.sum(self)

    def mean(self):
        from . import ops

        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


VJP = Callable[[np.ndarray, tuple], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of differentiable operations.

    A tape is single-use: after :meth:`backward` it is consumed and its
    records are released. Tapes are confined to the thread that created them.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, VJP]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, out: Tensor, inputs: tuple, vjp: VJP) -> None:
        if self.consumed:
            raise RuntimeError("cannot record on a consumed tape")
        out.requires_grad = True
        out._tape = self
        self.records.append((out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise RuntimeError("tape already consumed by a previous backward()")
        if loss.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise RuntimeError("loss was not recorded on this tape")
        if not np.all(np.isfinite(loss.data)):
            raise FloatingPointError(f"non-finite loss {loss.data.reshape(-1)[0]}")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            needs = tuple(t.requires_grad for t in inputs)
            for t, gi in zip(inputs, vjp(g, needs)):
                if gi is None or not t.requires_grad:
                    continue
                if gi.dtype != t.data.dtype:
                    gi = gi.astype(t.data.dtype)
                if t._tape is self:
                    k = id(t)
                    prev = grads.get(k)
                    grads[k] = gi if prev is None else prev + gi
                else:
                    if not np.all(np.isfinite(gi)):
                        raise FloatingPointError("non-finite gradient reached a leaf")
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
        self.consumed = True
        self.records = []


class no_grad:
    """Suspend recording inside an active tape."""

    def __enter__(self):
        _stack().append(None)

    def __exit__(self, *exc):
        _stack().pop()


def backward(loss: Tensor) -> None:
    """Backpropagate ``loss`` through the tape it was recorded on."""
    if loss._tape is None:
        raise RuntimeError("loss is not attached to any tape")
    loss._tape.backward(loss)


def make_result(data: np.ndarray, inputs: tuple, vjp: VJP) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, vjp)
    return out
