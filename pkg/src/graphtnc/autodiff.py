"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: each operation returns a :class:`Tensor` holding the forward
value and a closure that scatters the incoming gradient to its parents.
``backward`` walks the graph once in reverse topological order. Subgraphs
whose inputs all have ``requires_grad=False`` are folded into constants, so
no-gradient branches (frozen encoders, stop-gradient targets, finite
difference probes) cost nothing beyond the forward arithmetic.

Everything is float64; gradients accumulate into per-tensor buffers that are
allocated lazily on first touch.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(
        self,
        value: Array,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[Array], None] | None = None,
        requires_grad: bool | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    # operator sugar; non-Tensor operands are treated as constants
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, idx):
        return getitem(self, idx)


def parameter(value: Array) -> Tensor:
    return Tensor(value, requires_grad=True)


def constant(value: Array) -> Tensor:
    return Tensor(value, requires_grad=False)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` over axes that were broadcast relative to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _op(value: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if not any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=False)
    return Tensor(value, parents=parents, backward_fn=backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.value + b.value

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.value.shape))

    return _op(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        a._accumulate(-g)

    return _op(-a.value, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value * b.value

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _op(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.value / b.value

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _op(out, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value @ b.value

    def bwd(g: Array) -> None:
        if a.requires_grad:
            ga = g @ np.swapaxes(b.value, -1, -2)
            a._accumulate(_unbroadcast(ga, a.value.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.value, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.value.shape))

    return _op(out, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0
    out = np.where(mask, a.value, 0.0)

    def bwd(g: Array) -> None:
        a._accumulate(g * mask)

    return _op(out, (a,), bwd)


def sigmoid_value(v: Array) -> Array:
    # split by sign for overflow-free evaluation
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = sigmoid_value(a.value)

    def bwd(g: Array) -> None:
        a._accumulate(g * out * (1.0 - out))

    return _op(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def bwd(g: Array) -> None:
        a._accumulate(g * (1.0 - out * out))

    return _op(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)

    def bwd(g: Array) -> None:
        a._accumulate(g * out)

    return _op(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        a._accumulate(g / a.value)

    return _op(np.log(a.value), (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.value)

    def bwd(g: Array) -> None:
        a._accumulate(g * 0.5 / out)

    return _op(out, (a,), bwd)


def square(a: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        a._accumulate(g * 2.0 * a.value)

    return _op(a.value * a.value, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is zero in the clipped region."""
    out = np.clip(a.value, lo, hi)
    mask = (a.value > lo) & (a.value < hi)

    def bwd(g: Array) -> None:
        a._accumulate(g * mask)

    return _op(out, (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g: Array) -> None:
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                p._accumulate(g[tuple(idx)])

    return _op(out, tuple(parts), bwd)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.value[idx]

    def bwd(g: Array) -> None:
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        np.add.at(a.grad, idx, g)

    return _op(out, (a,), bwd)


def gather_rows(a: Tensor, cols: Array) -> Tensor:
    """Pick ``a[i, cols[i]]`` for each row i of a 2-d tensor."""
    rows = np.arange(a.value.shape[0])
    out = a.value[rows, cols]

    def bwd(g: Array) -> None:
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        np.add.at(a.grad, (rows, cols), g)

    return _op(out, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(g: Array) -> None:
        a._accumulate(g.reshape(a.value.shape))

    return _op(a.value.reshape(shape), (a,), bwd)


def swap_last_axes(a: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        a._accumulate(np.swapaxes(g, -1, -2))

    return _op(np.swapaxes(a.value, -1, -2), (a,), bwd)


def tsum(a: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    out = a.value.sum(axis=axis)

    def bwd(g: Array) -> None:
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.value.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.value.shape))

    return _op(out, (a,), bwd)


def tmean(a: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    n = a.value.size if axis is None else np.prod([a.value.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis), as_tensor(1.0 / float(n)))


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.value for p in parts], axis=axis)

    def bwd(g: Array) -> None:
        slabs = np.moveaxis(g, axis, 0)
        for p, slab in zip(parts, slabs):
            if p.requires_grad:
                p._accumulate(slab)

    return _op(out, tuple(parts), bwd)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-vector convention: ``x @ w + b`` with w shaped (in, out)."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax, shifted by the row max for stability."""
    shift = add(logits, constant(-logits.value.max(axis=1, keepdims=True)))
    lse = log(tsum(exp(shift), axis=1))
    return add(shift, neg(reshape(lse, (-1, 1))))


def cross_entropy(logits: Tensor, labels: Array) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    return neg(tmean(gather_rows(log_softmax(logits), labels)))
