"""Minimal reverse-mode automatic differentiation over float64 arrays.

A :class:`Tape` records every operation whose inputs include a watched tensor.
Gradients can be taken with respect to any watched leaf, which is how the
attacks get at the model *input* rather than only its parameters::

    with Tape() as tape:
        x = tape.watch(x)
        loss = mean(square(model(x) - y))
    grads = tape.backward(loss)
    dx = grads[x.node]

Tensors are immutable; a tape is meant to live for one evaluation and be
dropped after ``backward``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels

LEAKY_SLOPE = 0.01

_local = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an operation."""


class NonFiniteError(ValueError):
    """Raised when a tensor would hold NaN or Inf."""


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Immutable n-d float64 array, optionally registered on a tape."""

    __slots__ = ("data", "node", "tape")
    __array_priority__ = 100

    def __init__(self, data, *, _node: int | None = None, _tape: "Tape | None" = None, _check=True):
        arr = np.array(data, dtype=np.float64) if _check else data
        if _check and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor values must be finite")
        arr.flags.writeable = False
        self.data = arr
        self.node = _node
        self.tape = _tape

    @classmethod
    def _wrap(cls, arr, node=None, tape=None) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("operation produced non-finite values")
        if not arr.flags.owndata:
            arr = arr.copy()
        return cls(arr, _node=node, _tape=tape, _check=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, _check=False)

    def __repr__(self):
        flag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class _Node:
    tag: str
    parents: tuple  # node id per input, None for unrecorded inputs
    vjp: Callable | None
    shape: tuple


class Tape:
    """Append-only computation record.

    Nodes are stored in creation order, which is a topological order, so the
    backward pass is a single reverse sweep.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def _push(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def watch(self, x) -> Tensor:
        """Register ``x`` as a differentiable leaf and return the recorded view."""
        x = as_tensor(x)
        nid = self._push(_Node("leaf", (), None, x.shape))
        return Tensor(x.data, _node=nid, _tape=self, _check=False)

    def leaves(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.tag == "leaf"]

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Gradients of a scalar ``loss`` for every leaf on this tape.

        Leaves the loss does not depend on get zero tensors.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self or loss.node is None:
            raise ValueError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
        for nid in range(loss.node, -1, -1):
            g = grads.pop(nid, None) if self.nodes[nid].tag != "leaf" else grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            needs = tuple(p is not None for p in node.parents)
            for pid, pg in zip(node.parents, node.vjp(g, needs)):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        out = {}
        for lid in self.leaves():
            g = grads.get(lid)
            out[lid] = Tensor(g if g is not None else np.zeros(self.nodes[lid].shape))
        return out

    def gradient(self, loss: Tensor, *wrt: Tensor) -> list[np.ndarray]:
        """Convenience: gradient arrays of ``loss`` for the given watched tensors."""
        grads = self.backward(loss)
        return [grads[t.node].data for t in wrt]


def _record(tag: str, value: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        parents = tuple(t.node if (t.tape is tape and t.node is not None) else None for t in inputs)
        if any(p is not None for p in parents):
            for t in inputs:
                if t.tape is not None and t.tape is not tape:
                    raise ValueError(f"{tag}: operands recorded on different tapes")
            out = Tensor._wrap(value)
            out.node = tape._push(_Node(tag, parents, vjp, out.shape))
            out.tape = tape
            return out
    return Tensor._wrap(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(tag, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{tag}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b),
                   lambda g, n: (_unbroadcast(g, sa) if n[0] else None,
                                 _unbroadcast(g, sb) if n[1] else None))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _record("subtract", a.data - b.data, (a, b),
                   lambda g, n: (_unbroadcast(g, sa) if n[0] else None,
                                 _unbroadcast(-g, sb) if n[1] else None))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _record("multiply", ad * bd, (a, b),
                   lambda g, n: (_unbroadcast(g * bd, ad.shape) if n[0] else None,
                                 _unbroadcast(g * ad, bd.shape) if n[1] else None))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record("square", xd * xd, (x,), lambda g, n: (2.0 * xd * g,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("sqrt: negative input")
    r = np.sqrt(x.data)
    return _record("sqrt", r, (x,), lambda g, n: (g / (2.0 * r),))


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """2-D matrix product (M, K) @ (K, N)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", ad @ bd, (a, b),
                   lambda g, n: (g @ bd.T if n[0] else None, ad.T @ g if n[1] else None))


def conv2d(x, weight, bias) -> Tensor:
    """Stride-1 convolution with zero "same" padding.

    x: (N, C, H, W); weight: (F, C, K, K) with odd K; bias: (F,).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match filters {weight.shape}")
    if weight.shape[2] != weight.shape[3] or weight.shape[2] % 2 == 0:
        raise ShapeError(f"conv2d: filters must be square with odd size, got {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match filters {weight.shape}")
    xd, wd = x.data, weight.data
    out = kernels.conv2d_forward(xd, wd, bias.data)

    def vjp(g, n):
        gx, gw, gb = kernels.conv2d_backward(xd, wd, g, need_input=n[0], need_weight=n[1] or n[2])
        return gx, gw, gb

    return _record("conv2d", out, (x, weight, bias), vjp)


# -- nonlinearities ---------------------------------------------------------


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", s, (x,), lambda g, n: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _record("tanh", t, (x,), lambda g, n: (g * (1.0 - t * t),))


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return _record("leaky_relu", x.data * scale, (x,), lambda g, n: (g * scale,))


def mask_select(x, mask) -> Tensor:
    """Keep entries where ``mask`` is true, zero elsewhere (indicator multiply)."""
    x = as_tensor(x)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape).astype(np.float64)
    return _record("mask_select", x.data * m, (x,), lambda g, n: (g * m,))


# -- reductions and structure -------------------------------------------------


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    r = x.data.mean(axis=axis)
    count = x.size // max(np.size(r), 1) if axis is not None else x.size

    def vjp(g, n):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / count,)

    return _record("mean", r, (x,), vjp)


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def vjp(g, n):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", x.data.sum(axis=axis), (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        r = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _record("reshape", r, (x,), lambda g, n: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        r = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concatenate: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record("concatenate", r, ts, lambda g, n: tuple(np.split(g, sizes, axis=axis)))


def take(x, index) -> Tensor:
    """Basic slicing / integer indexing."""
    x = as_tensor(x)
    shape = x.shape
    try:
        r = x.data[index]
    except IndexError as err:
        raise ShapeError(f"slice: {err} for shape {shape}") from None

    def vjp(g, n):
        out = np.zeros(shape)
        np.add.at(out, index, g) if _fancy(index) else out.__setitem__(index, g)
        return (out,)

    return _record("slice", np.array(r, dtype=np.float64), (x,), vjp)


def _fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in map(as_tensor, tensors)]
    return concat(ts, axis=axis)


# -- validation oracle ------------------------------------------------------


def check_gradients(f: Callable[[Tensor], Tensor], x, h: float = 1e-5, coords=None) -> float:
    """Largest relative gap between taped and central-difference gradients.

    ``coords`` optionally restricts the comparison to a subset of flat indices.
    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    x = as_tensor(x)
    with Tape() as tape:
        xw = tape.watch(x)
        out = f(xw)
        if out.node is None:
            analytic = np.zeros(x.size)
        else:
            analytic = tape.backward(out)[xw.node].data.reshape(-1)
    base = x.data.reshape(-1)
    idx = range(x.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        plus, minus = base.copy(), base.copy()
        plus[i] += h
        minus[i] -= h
        fp = f(Tensor(plus.reshape(x.shape))).item()
        fm = f(Tensor(minus.reshape(x.shape))).item()
        numeric = (fp - fm) / (2.0 * h)
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst


__all__ = [
    "Tensor", "Tape", "ShapeError", "NonFiniteError", "as_tensor",
    "add", "sub", "mul", "square", "sqrt", "matmul", "conv2d", "sigmoid", "tanh",
    "leaky_relu", "mask_select", "mean", "sum_", "reshape", "concat", "take", "stack",
    "check_gradients",
]
