"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Every op records its parents and a backward closure on the output tensor.
``Tensor.backward`` replays the recorded ops in exact reverse creation order,
so each node's gradient is complete before it is propagated to its inputs.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "ShapeError",
    "Tensor",
    "concat",
    "elementwise",
    "exp",
    "gradcheck",
    "log",
    "log_softmax",
    "matmul",
    "no_grad",
    "power",
    "reduce",
    "relu",
    "set_debug",
    "sigmoid",
    "softmax",
    "stack",
    "take",
    "tanh",
]


class ShapeError(ValueError):
    """Incompatible tensor dimensions."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an op."""


_creation_order = itertools.count()
_local = threading.local()
_debug = False


def set_debug(enabled: bool) -> None:
    """Turn on NaN/Inf checks after every op (off by default)."""
    global _debug
    _debug = bool(enabled)


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Run ops without recording them on the tape."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_order")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._order = next(_creation_order)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Intermediate gradients live only for the duration of the call, so
        running backward twice on the same graph doubles every leaf gradient.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        nodes = _reachable(self)
        nodes.sort(key=lambda t: t._order, reverse=True)
        pending = {self._order: np.ones_like(self.data)}
        for node in nodes:
            g = pending.pop(node._order, None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = parent._order
                pending[key] = pg if key not in pending else pending[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a1: int, a2: int):
        return swapaxes(self, a1, a2)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def _reachable(root: Tensor) -> list[Tensor]:
    seen = {root._order}
    out = [root]
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.requires_grad and p._order not in seen:
                seen.add(p._order)
                out.append(p)
                stack.append(p)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._order = next(_creation_order)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    if _debug and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced (shape {data.shape})")
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be a vector (contracts the last axis of ``a``), a single matrix
    shared across the leading axes of ``a``, or a batch of matrices.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul needs at least 1-d operands, got {a.shape} and {b.shape}")
    inner_b = b.shape[0] if b.ndim <= 2 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.ndim < 2:
        raise ShapeError(f"batched matmul needs a matrix on the left: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None

    def backward(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            axes = list(range(g.ndim))
            gb = np.tensordot(g, a.data, axes=(axes, axes))
        elif b.ndim == 2:
            ga = g @ b.data.T
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(out, (a, b), backward)


# ----------------------------------------------------------------- unary ops


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _result(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a constant exponent."""
    a = as_tensor(a)
    out = a.data**p
    return _result(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    if op_kind in _UNARY:
        if b is not None:
            raise TypeError(f"{op_kind} takes one operand")
        return _UNARY[op_kind](a)
    if op_kind in _BINARY:
        if b is None:
            raise TypeError(f"{op_kind} takes two operands")
        return _BINARY[op_kind](a, b)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# --------------------------------------------------------- axis-aware ops


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    if a.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    z = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    if a.shape[axis] == 0:
        raise ShapeError("log_softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), backward)


def reduce(op_kind: str, a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Sum or mean along one axis (or over everything when ``axis`` is None)."""
    a = as_tensor(a)
    if op_kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {op_kind!r}")
    if axis is None:
        count = a.size
        out = a.data.sum() if op_kind == "sum" else a.data.mean()
        if keepdims:
            out = np.reshape(out, (1,) * a.ndim)

        def backward(g):
            scale = 1.0 if op_kind == "sum" else 1.0 / count
            return (np.broadcast_to(np.reshape(g, (1,) * a.ndim) * scale, a.shape).copy(),)

        return _result(np.asarray(out, dtype=np.float64), (a,), backward)

    axis = _norm_axis(axis, a.ndim)
    count = a.shape[axis]
    if op_kind == "sum":
        out = a.data.sum(axis=axis, keepdims=keepdims)
    else:
        out = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        if op_kind == "mean":
            g = g / count
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a, a1: int, a2: int) -> Tensor:
    a = as_tensor(a)
    return _result(np.swapaxes(a.data, a1, a2), (a,), lambda g: (np.swapaxes(g, a1, a2),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(a.data[index]), (a,), backward)


def take(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add back onto the rows used."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"cannot concatenate shapes {shapes} on axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of an empty list")
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"cannot stack shapes {shapes}") from None
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _result(out, tensors, backward)


# ---------------------------------------------------------------- gradcheck


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-6,
              seed: int = 0) -> float:
    """Largest relative disagreement between backprop and central differences.

    Non-scalar outputs are contracted with a fixed random weighting first.
    The relative error per coordinate is |a - n| / max(1, |a|, |n|).
    """
    inputs = list(inputs)
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    weights = None
    if out.size != 1:
        weights = np.random.default_rng(seed).standard_normal(out.shape)
        loss = (out * weights).sum()
    else:
        loss = out.sum()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def evaluate() -> np.ndarray:
        with no_grad():
            return np.array(f(*inputs).data, dtype=np.float64, copy=True)

    worst = 0.0
    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi_x = flat[i]
            hi = evaluate()
            flat[i] = orig - step
            lo_x = flat[i]
            lo = evaluate()
            flat[i] = orig
            # divide by the step actually represented in float64
            ratio = (hi - lo) / (hi_x - lo_x)
            numeric = float((ratio * weights).sum()) if weights is not None else float(ratio.sum())
            a = float(gflat[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    for t, flag in zip(inputs, saved):
        t.requires_grad = flag
        t.grad = None
    return worst
