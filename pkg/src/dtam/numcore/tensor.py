"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray and remembers how it was produced. Calling
``backward()`` on a scalar result walks the recorded graph once in reverse
topological order and accumulates ``grad`` arrays on every tensor that was
created with ``requires_grad=True``. The graph is built eagerly and is not
reusable: run the forward pass again for a second backward.

Float64 is the working dtype; float32 arrays are accepted and promoted.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from dtam.errors import DomainError, NumericError, ShapeError

_state = threading.local()


def _grad_on() -> bool:
    return getattr(_state, "grad_enabled", True)


def _debug_on() -> bool:
    return getattr(_state, "debug_checks", False)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    prev = _grad_on()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_on()


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-operation finiteness validation (slow, for debugging)."""
    _state.debug_checks = bool(enabled)


def debug_checks() -> bool:
    return _debug_on()


def _coerce(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float32:
        return arr
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    elif arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the autodiff graph.

    ``data`` is a numpy array, ``grad`` is filled in by ``backward()``.
    Arithmetic operators build new tensors; python scalars and ndarrays are
    promoted to constant tensors on the fly.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = _coerce(data)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor constructed from non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_on()
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents, backward):
        """Internal node constructor; prunes the graph when grads are off."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _debug_on() and not np.all(np.isfinite(data)):
            raise NumericError("operation produced non-finite values")
        if _grad_on() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # ---- basic introspection -------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # ---- backward pass --------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, copy=True)
        else:
            self.grad = self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    # ---- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._from_op(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            other._accumulate(
                _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape)
            )

        return Tensor._from_op(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("tensor power requires a python scalar exponent")
        out_data = self.data ** exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._from_op(out_data, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim > 2 or b.ndim > 2:
            raise ShapeError("matmul supports 1-D and 2-D operands only")
        out_data = a @ b

        def backward(g):
            ga = g
            if a.ndim == 1 and b.ndim == 1:
                self._accumulate(g * b)
                other._accumulate(g * a)
                return
            if a.ndim == 1:
                ga = np.atleast_2d(g)
                self._accumulate((ga @ b.T).reshape(a.shape))
                other._accumulate(np.outer(a, g.reshape(-1)))
                return
            if b.ndim == 1:
                gg = g.reshape(-1, 1)
                self._accumulate(gg @ np.atleast_2d(b))
                other._accumulate((a.T @ g.reshape(-1)).reshape(b.shape))
                return
            self._accumulate(ga @ b.T)
            other._accumulate(a.T @ ga)

        return Tensor._from_op(out_data, (self, other), backward)

    # ---- reductions -----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._from_op(np.asarray(out_data), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    # ---- shape manipulation ----------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        out_data = self.data.reshape(shape)
        src_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(src_shape))

        return Tensor._from_op(out_data, (self,), backward)

    @property
    def T(self):
        out_data = self.data.T

        def backward(g):
            self._accumulate(g.T)

        return Tensor._from_op(out_data, (self,), backward)

    def transpose(self, *axes):
        if not axes:
            return self.T
        out_data = self.data.transpose(axes)
        inverse = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inverse))

        return Tensor._from_op(out_data, (self,), backward)

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accumulate(full)

        return Tensor._from_op(np.asarray(out_data), (self,), backward)


def as_tensor(value) -> Tensor:
    """Wrap scalars and arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], tuple):
        shape = shape[0]
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


# ---- elementwise nonlinearities ------------------------------------------


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out_data)

    return Tensor._from_op(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return Tensor._from_op(out_data, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt requires non-negative inputs")
    out_data = np.sqrt(x.data)

    def backward(g):
        x._accumulate(g * 0.5 / np.maximum(out_data, 1e-300))

    return Tensor._from_op(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._from_op(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # Split by sign so exp never overflows.
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._from_op(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        x._accumulate(g * (x.data > 0.0))

    return Tensor._from_op(out_data, (x,), backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp values to [low, high]; gradient is zero outside the interval."""
    x = as_tensor(x)
    out_data = np.clip(x.data, low, high)

    def backward(g):
        inside = (x.data >= low) & (x.data <= high)
        x._accumulate(g * inside)

    return Tensor._from_op(out_data, (x,), backward)


def clip_min(x: Tensor, low: float) -> Tensor:
    """Clamp values from below; used to keep probabilities away from zero."""
    x = as_tensor(x)
    out_data = np.maximum(x.data, low)

    def backward(g):
        x._accumulate(g * (x.data >= low))

    return Tensor._from_op(out_data, (x,), backward)


# ---- structured ops --------------------------------------------------------


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Normalized exponential along ``axis`` as one fused graph node.

    The max is subtracted before exponentiation; by shift invariance this is
    exact, not an approximation. ``mask`` (same shape, boolean) marks valid
    entries: masked-out positions get probability zero and zero gradient.
    Rows with no valid entries come out all-zero.
    """
    x = as_tensor(x)
    d = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != d.shape:
            raise ShapeError(
                f"softmax mask shape {mask.shape} != input shape {d.shape}"
            )
        neg = np.where(mask, d, -np.inf)
        m = np.max(neg, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(mask, np.exp(d - m), 0.0)
    else:
        m = np.max(d, axis=axis, keepdims=True)
        e = np.exp(d - m)
    denom = e.sum(axis=axis, keepdims=True)
    safe = np.where(denom > 0.0, denom, 1.0)
    y = e / safe

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate(y * (g - inner))

    return Tensor._from_op(y, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            p._accumulate(g[tuple(idx)])

    return Tensor._from_op(out_data, tuple(parts), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out_data = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        for i, p in enumerate(parts):
            p._accumulate(np.take(g, i, axis=axis))

    return Tensor._from_op(out_data, tuple(parts), backward)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]`` for embeddings; indices may be any shape."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("gather_rows indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError("gather_rows index out of range")
    out_data = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return Tensor._from_op(out_data, (table,), backward)


def tile_rows(row: Tensor, count: int) -> Tensor:
    """Repeat a 1-D tensor as ``count`` identical rows; backward sums them."""
    row = as_tensor(row)
    if row.data.ndim != 1:
        raise ShapeError("tile_rows expects a 1-D tensor")
    out_data = np.broadcast_to(row.data, (count, row.data.shape[0])).copy()

    def backward(g):
        row._accumulate(g.sum(axis=0))

    return Tensor._from_op(out_data, (row,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            training: bool = True) -> Tensor:
    """Inverted dropout: zero a fraction ``rate`` and rescale the rest."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    x = as_tensor(x)
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out_data = x.data * keep

    def backward(g):
        x._accumulate(g * keep)

    return Tensor._from_op(out_data, (x,), backward)
