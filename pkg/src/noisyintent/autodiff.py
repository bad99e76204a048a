"""Reverse-mode automatic differentiation over dense float64 arrays.

Implements exactly the operations the intent model needs: broadcasted
arithmetic, 2-d matrix products, pointwise nonlinearities, reductions,
concatenation, slicing, embedding lookups and inverted dropout.  Calling
``backward()`` on a scalar output accumulates gradients into the ``grad``
slot of every leaf tensor created with ``requires_grad=True``.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block (cheap forward-only evals)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # keep numpy from intercepting `ndarray <op> Tensor`; Python then falls
    # back to the reflected operator on Tensor
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat float64 view of the stored values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # graph plumbing
    # ------------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = grad if node.grad is None else node.grad + grad
                continue
            for parent, pgrad in zip(node._parents, node._backward(grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pgrad if key not in grads else grads[key] + pgrad

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        a, b = self.data, other.data
        return _node(a + b, (self, other),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        a, b = self.data, other.data
        return _node(a - b, (self, other),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __mul__(self, other):
        other = _wrap(other)
        a, b = self.data, other.data
        return _node(a * b, (self, other),
                     lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        a, b = self.data, other.data
        return _node(a / b, (self, other),
                     lambda g: (_unbroadcast(g / b, a.shape),
                                _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other):
        return _wrap(other).__truediv__(self)

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        other = _wrap(other)
        a, b = self.data, other.data
        if a.ndim > 2 or b.ndim > 2:
            raise ShapeError("matmul supports 1-d and 2-d operands only")
        out = a @ b

        def backward(g):
            if a.ndim == 2 and b.ndim == 2:
                return g @ b.T, a.T @ g
            if a.ndim == 1 and b.ndim == 2:
                return g @ b.T, np.outer(a, g)
            if a.ndim == 2 and b.ndim == 1:
                return np.outer(g, b), a.T @ g
            return g * b, g * a

        return _node(out, (self, other), backward)

    def __getitem__(self, key):
        out = self.data[key]

        def backward(g):
            gx = np.zeros_like(self.data)
            np.add.at(gx, key, g)
            return (gx,)

        return _node(out, (self,), backward)

    # ------------------------------------------------------------------
    # pointwise nonlinearities
    # ------------------------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return _node(out, (self,), lambda g: (g * out,))

    def log(self):
        return _node(np.log(self.data), (self,), lambda g: (g / self.data,))

    def tanh(self):
        out = np.tanh(self.data)
        return _node(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        # tanh form is overflow-free for large |x|
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return _node(out, (self,), lambda g: (g * out * (1.0 - out),))

    def sqrt(self):
        out = np.sqrt(self.data)
        # guard keeps 0 * inf out of hinge losses evaluated at distance 0
        return _node(out, (self,), lambda g: (g / (2.0 * np.maximum(out, 1e-12)),))

    def relu(self):
        return _node(np.maximum(self.data, 0.0), (self,),
                     lambda g: (g * (self.data > 0.0),))

    # ------------------------------------------------------------------
    # reductions and shape ops
    # ------------------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape),)
            expanded = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(expanded, self.data.shape),)

        return _node(out, (self,), backward)

    def mean(self, axis: int | None = None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        old = self.data.shape
        return _node(self.data.reshape(*shape), (self,),
                     lambda g: (g.reshape(old),))

    @property
    def T(self):
        if self.data.ndim != 2:
            raise ShapeError("T is defined for 2-d tensors")
        return _node(self.data.T, (self,), lambda g: (g.T,))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    boundaries = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, boundaries, axis=axis))

    return _node(out, tuple(tensors), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.intp)
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _node(out, (table,), backward)


def gather_rows(t: Tensor, cols) -> Tensor:
    """Pick one column per row of a 2-d tensor: ``out[i] = t[i, cols[i]]``."""
    cols = np.asarray(cols, dtype=np.intp)
    if t.data.ndim != 2 or cols.shape != (t.data.shape[0],):
        raise ShapeError("gather_rows expects a 2-d tensor and one index per row")
    rows = np.arange(t.data.shape[0])
    out = t.data[rows, cols]

    def backward(g):
        gt = np.zeros_like(t.data)
        gt[rows, cols] = g
        return (gt,)

    return _node(out, (t,), backward)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    # the max shift is treated as a constant; softmax is shift-invariant so
    # the gradient is unaffected
    shift = t - t.data.max(axis=axis, keepdims=True)
    return shift - shift.exp().sum(axis=axis, keepdims=True).log()


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    return log_softmax(t, axis=axis).exp()


def dropout(t: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scaled at train time so inference needs no rescale."""
    if rate <= 0.0:
        return t
    keep = 1.0 - rate
    mask = (rng.random(t.data.shape) < keep) / keep
    return t * mask
