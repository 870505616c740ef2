"""Reverse-mode automatic differentiation over dense float64 arrays."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


def _as_array(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray. Gradients accumulate into ``grad``
    when :meth:`backward` is called on a scalar descendant.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _op: str = ""):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents if self.requires_grad else ()
        self._backward: Callable[[Array], None] | None = None
        self._op = _op

    # ------------------------------------------------------------------ basics
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
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, op={self._op or 'leaf'})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: Array) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def _make(self, data, parents: tuple, op: str, backward) -> "Tensor":
        out = Tensor(data, _parents=parents, _op=op)
        if out.requires_grad:
            out._backward = backward
        return out

    # -------------------------------------------------------------- backprop
    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor; scalar tensors default to seed 1."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): _as_array(grad).reshape(self.shape)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node._accum(g)
                continue
            node._backward_into(g, grads)

    def _backward_into(self, g: Array, grads: dict) -> None:
        contributions = self._backward(g)
        for parent, pg in zip(self._parents, contributions):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    # ------------------------------------------------------------ arithmetic
    def __add__(self, other) -> "Tensor":
        other = _lift(other)
        a_shape, b_shape = self.shape, other.shape
        return self._make(self.data + other.data, (self, other), "add",
                          lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self._make(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = _lift(other)
        a_shape, b_shape = self.shape, other.shape
        return self._make(self.data - other.data, (self, other), "sub",
                          lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)))

    def __rsub__(self, other) -> "Tensor":
        return _lift(other) - self

    def __mul__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self.data, other.data
        return self._make(a * b, (self, other), "mul",
                          lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self.data, other.data
        return self._make(a / b, (self, other), "div",
                          lambda g: (_unbroadcast(g / b, a.shape),
                                     _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other) -> "Tensor":
        return _lift(other) / self

    def __pow__(self, p: float) -> "Tensor":
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self.data
        return self._make(a ** p, (self,), "pow", lambda g: (g * p * a ** (p - 1),))

    def __matmul__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self.data, other.data

        def back(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * b, g * a
            if a.ndim == 1:
                # a (k,), b (..., k, n), g (..., n)
                ga = (b @ g[..., None])[..., 0].reshape(-1, a.shape[0]).sum(axis=0)
                return ga, _unbroadcast(a[:, None] * g[..., None, :], b.shape)
            if b.ndim == 1:
                # a (..., k), b (k,), g (...)
                return _unbroadcast(g[..., None] * b, a.shape), np.tensordot(g, a, axes=g.ndim)
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return self._make(a @ b, (self, other), "matmul", back)

    def __rmatmul__(self, other) -> "Tensor":
        return _lift(other) @ self

    # ----------------------------------------------------------- elementwise
    def relu(self) -> "Tensor":
        mask = self.data > 0
        return self._make(self.data * mask, (self,), "relu", lambda g: (g * mask,))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return self._make(out, (self,), "exp", lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        return self._make(np.log(a), (self,), "log", lambda g: (g / a,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return self._make(out, (self,), "sqrt", lambda g: (g * 0.5 / out,))

    def sigmoid(self) -> "Tensor":
        out = _stable_sigmoid(self.data)
        return self._make(out, (self,), "sigmoid", lambda g: (g * out * (1.0 - out),))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return self._make(out, (self,), "tanh", lambda g: (g * (1.0 - out * out),))

    def clip(self, lo: float, hi: float) -> "Tensor":
        a = self.data
        mask = (a >= lo) & (a <= hi)
        return self._make(np.clip(a, lo, hi), (self,), "clip", lambda g: (g * mask,))

    # ------------------------------------------------------------ reductions
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        """Maximum along one axis; the gradient goes to the first argmax."""
        a = self.data
        idx = np.argmax(a, axis=axis)
        out = np.take_along_axis(a, np.expand_dims(idx, axis), axis=axis)

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(a)
            np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
            return (full,)

        return self._make(out if keepdims else np.squeeze(out, axis=axis), (self,), "max", back)

    def softmax(self, axis: int = -1) -> "Tensor":
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

        return self._make(out, (self,), "softmax", back)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        m = self.data.max(axis=axis, keepdims=True)
        lse = m + np.log(np.exp(self.data - m).sum(axis=axis, keepdims=True))
        out = self.data - lse
        soft = np.exp(out)

        def back(g):
            return (g - soft * g.sum(axis=axis, keepdims=True),)

        return self._make(out, (self,), "log_softmax", back)

    def logsumexp(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        m = self.data.max(axis=axis, keepdims=True)
        e = np.exp(self.data - m)
        s = e.sum(axis=axis, keepdims=True)
        out = m + np.log(s)
        w = e / s

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (g * w,)

        return self._make(out if keepdims else np.squeeze(out, axis=axis), (self,), "logsumexp", back)

    # ---------------------------------------------------------------- shape
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return self._make(self.data.reshape(shape), (self,), "reshape", lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return self._make(self.data.transpose(axes), (self,), "transpose",
                          lambda g: (g.transpose(inv),))

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)

        return self._make(self.data[index], (self,), "slice", back)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _stable_sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, _parents=tuple(tensors), _op="concat")
    if out.requires_grad:
        out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([_lift(t).reshape(_expand_shape(_lift(t).shape, axis)) for t in tensors], axis=axis)


def _expand_shape(shape: tuple, axis: int) -> tuple:
    axis = axis if axis >= 0 else len(shape) + 1 + axis
    return shape[:axis] + (1,) + shape[axis:]


def where(mask, a, b) -> Tensor:
    """Select ``a`` where ``mask`` else ``b``; mask is constant."""
    a, b = _lift(a), _lift(b)
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, a.data, b.data)
    out = Tensor(data, _parents=(a, b), _op="where")
    if out.requires_grad:
        out._backward = lambda g: (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape))
    return out
