"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations are recorded on the innermost active :class:`Tape`. Outside a tape
nothing is recorded, which is how evaluation runs::

    with Tape() as tape:
        loss = ops.sum(ops.relu(x @ w))
        grads = tape.backward(loss)

Forward results are checked for NaN/Inf and raise :class:`NumericsError`.
No operation writes into its inputs.
"""

from __future__ import annotations

import threading
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import InvalidInput, NumericsError, ShapeError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of the operations of one forward pass.

    A tape belongs to the thread that opened it. Nodes are appended as they
    are created, so inputs always precede the ops that consume them.
    """

    def __init__(self):
        self.nodes: List[Tensor] = []
        self.leaves: Dict[int, Tensor] = {}

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, node: "Tensor", parents: Sequence["Tensor"]):
        node.node_id = len(self.nodes)
        node._tape = self
        self.nodes.append(node)
        for p in parents:
            if p.requires_grad and p._tape is None:
                self.leaves.setdefault(id(p), p)

    def backward(self, loss: "Tensor") -> Dict[int, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

        Leaf gradients start from zero on each call. Returns ``{id(leaf): grad}``.
        """
        if loss.data.size != 1:
            raise InvalidInput(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise InvalidInput("loss was not recorded on this tape")
        for leaf in self.leaves.values():
            leaf.grad = np.zeros_like(leaf.data)
        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.node_id + 1]):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            pgrads = node._backward(g)
            for parent, pg in zip(node._parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._tape is self:
                    prev = grads.get(parent.node_id)
                    grads[parent.node_id] = pg if prev is None else prev + pg
                else:
                    parent.grad = parent.grad + pg
        return {k: v.grad for k, v in self.leaves.items()}


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name",
                 "_parents", "_backward", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericsError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> Dict[int, np.ndarray]:
        if self._tape is None:
            raise InvalidInput("tensor was not produced under an active Tape")
        return self._tape.backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericsError("non-finite value in forward pass")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = None
    out.name = None
    out._tape = None
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.record(out, parents)
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise arithmetic ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics for ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} @ {bd.shape}")
    try:
        out = ad @ bd
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(out, (a, b), backward)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` applied along the last axis of ``x`` (any leading shape)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} vs weight {w.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} vs weight {w.shape}")
    xd, wd = x.data, w.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if b is not None:
        out += b.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward)


# pointwise nonlinearities ---------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    return _result(out, (x,), lambda g: (g * (out > 0),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _result(e, (x,), lambda g: (g * e,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _result(out, (x,), lambda g: (g / xd,))


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (x,), backward)


def log_softmax(x) -> Tensor:
    """Numerically stable log of :func:`softmax` over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), backward)


# reductions ------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def max_over_set(x, axis: int) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal element."""
    x = as_tensor(x)
    ax = axis % x.ndim
    arg = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    out = np.take_along_axis(x.data, arg, axis=ax).squeeze(ax)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, arg, np.expand_dims(g, ax), axis=ax)
        return (gx,)

    return _result(out, (x,), backward)


def standardize(x, eps: float = 1e-5) -> Tensor:
    """Per-feature standardization over every axis but the last.

    Batch-norm without the affine part and without running statistics.
    """
    x = as_tensor(x)
    axes = tuple(range(x.ndim - 1))
    n = x.data.size // x.shape[-1]
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xh).sum(axis=axes, keepdims=True) / n
        return (inv * (g - gm - xh * gxm),)

    return _result(xh, (x,), backward)


# structural ops --------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return _result(out, (x,), lambda g: (g.reshape(old),))


def gather(x, indices) -> Tensor:
    """Rows of ``x`` selected along axis 0: ``x[indices]``."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(f"gather: index out of range for axis of size {n}")
    idx = idx % n if idx.size else idx
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), backward)


def batch_gather(x, indices) -> Tensor:
    """Per-batch gather: ``out[b, ...] = x[b, indices[b, ...]]``.

    ``x`` is (B, n, C...), ``indices`` is (B, ...) into axis 1.
    """
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    bsz, n = x.shape[0], x.shape[1]
    if idx.shape[0] != bsz:
        raise ShapeError(f"batch_gather: batch {idx.shape[0]} vs {bsz}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"batch_gather: index out of range for axis of size {n}")
    flat_idx = (idx + (np.arange(bsz) * n).reshape((bsz,) + (1,) * (idx.ndim - 1))).reshape(-1)
    tail = x.shape[2:]
    xf = x.data.reshape((bsz * n,) + tail)
    out = xf[flat_idx].reshape(idx.shape + tail)
    shape = x.shape

    def backward(g):
        gf = g.reshape((-1,) + tail)
        width = int(np.prod(tail)) if tail else 1
        if width == 1:
            acc = np.bincount(flat_idx, weights=gf.reshape(-1), minlength=bsz * n)
        else:
            acc = np.zeros((bsz * n, width))
            np.add.at(acc, flat_idx, gf.reshape(-1, width))
        return (acc.reshape(shape),)

    return _result(out, (x,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of nothing")
    ax = axis % ts[0].ndim
    try:
        out = np.concatenate([t.data for t in ts], axis=ax)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, ts, backward)


def detach(x) -> Tensor:
    """A constant copy of ``x``: gradients stop here."""
    x = as_tensor(x)
    return Tensor(x.data)


# the operator registry the gradient checks iterate over
OPS = {
    "add": add, "sub": sub, "mul": mul, "matmul": matmul, "linear": linear,
    "relu": relu, "tanh": tanh, "exp": exp, "log": log, "softmax": softmax,
    "log_softmax": log_softmax, "sum": sum, "mean": mean,
    "max_over_set": max_over_set, "standardize": standardize,
    "reshape": reshape, "gather": gather, "batch_gather": batch_gather,
    "concat": concat,
}
