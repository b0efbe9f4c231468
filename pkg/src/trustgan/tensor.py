"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when it participates in a
recorded computation, remembers its parents together with a closure that maps
the upstream gradient to one gradient per parent.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order and accumulates gradients into the ``grad`` buffer of every leaf that
has ``requires_grad`` set.
"""

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, InvalidInputError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled():
    return _GRAD_ENABLED


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
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
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    # ------------------------------------------------------------------
    # basic properties

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    # ------------------------------------------------------------------
    # graph traversal

    def backward(self):
        """Backpropagate from this scalar into every ``requires_grad`` leaf.

        Leaf gradients are accumulated, so callers zero them between steps
        (the optimizer does this).
        """
        if self.data.ndim > 1 or self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # ------------------------------------------------------------------
    # operator sugar

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=-1, keepdims=False):
        return tmax(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return tabs(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def make(data, parents, backward):
    """Create the output of an op, recording it only when needed."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


# ----------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return make(out, (a, b), backward)


# ----------------------------------------------------------------------
# elementwise unary ops


def neg(a):
    return make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    """``a ** exponent`` for a constant scalar exponent."""
    a = as_tensor(a)
    p = float(exponent)
    out = a.data ** p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return make(out, (a,), backward)


def exp(a):
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,))


def log(a):
    return make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tabs(a):
    return make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a):
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    mask = a.data > 0
    return make(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.01):
    scale = np.where(a.data > 0, 1.0, slope)
    return make(a.data * scale, (a,), lambda g: (g * scale,))


def clamp_min(a, floor):
    """``max(a, floor)``; the gradient is zero where the floor is active."""
    mask = a.data > floor
    return make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# ----------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make(out, (a,), backward)


def tmax(a, axis=-1, keepdims=False):
    """Maximum along one axis; the gradient goes to the first maximiser."""
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx_k, g, axis=axis)
        return (grad,)

    return make(out, (a,), backward)


def reshape(a, shape):
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return make(out, (a,), lambda g: (np.transpose(g, inverse),))


def take(a, index):
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    out = a.data[index]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return make(np.array(out), (a,), backward)


def matmul(a, b):
    """Matrix product of ``[..., m, k] @ [k, n]`` or two 2D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1:
        raise InvalidInputError(f"matmul expects a @ 2D matrix, got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return make(out, (a, b), backward)
