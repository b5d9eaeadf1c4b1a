"""
Tensor Module

This module implements the dense tensor engine behind every network in
the detector. It provides:
- Tensor: float64 n-dimensional values with an optional gradient buffer
- Parameter: a named, trainable Tensor owned by a network
- Elementwise arithmetic with numpy broadcasting
- Reductions, reshaping and indexing
- Reverse-mode differentiation through backward()
- no_grad() for inference passes

The graph is rebuilt on every forward pass (define-by-run). Each op result
remembers its parents and a closure that maps the upstream gradient to one
gradient per parent.

Gradient contract:
- Only leaf tensors with requires_grad accumulate into .grad
- Calling backward twice without zeroing adds the two gradients
- Detached tensors never receive gradient
"""

import contextlib
import threading

import numpy as np

from toothnet.errors import GradientError, ShapeError


class _GradMode(threading.local):
    enabled = True


_grad_mode = _GradMode()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    previous = _grad_mode.enabled
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def is_grad_enabled():
    return _grad_mode.enabled


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Tensor:
    """
    A node of the computation graph.

    Attributes:
        values: float64 numpy array, row-major
        grad: accumulated gradient (same shape as values) or None
        requires_grad: whether gradient flows into this tensor
        op: name of the op that produced this tensor ("" for leaves)
    """

    __array_priority__ = 1000  # numpy scalars defer to our operators

    def __init__(self, values, requires_grad=False):
        self.values = np.array(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = ""
        self._parents = ()
        self._backward_fn = None

    @classmethod
    def _from_op(cls, values, parents, backward_fn, op):
        out = cls.__new__(cls)
        out.values = np.asarray(values, dtype=np.float64)
        out.grad = None
        out.op = op
        track = _grad_mode.enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward_fn = backward_fn if track else None
        return out

    # -- basic properties -------------------------------------------------

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self):
        return self.values.copy()

    def detach(self):
        """A copy cut off from the graph."""
        return Tensor(self.values, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.values.shape[0]

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape

        def backward_fn(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._from_op(self.values + other.values, (self, other), backward_fn, "add")

    def __radd__(self, other):
        return self + other

    def __neg__(self):
        return Tensor._from_op(-self.values, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape

        def backward_fn(g):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

        return Tensor._from_op(self.values - other.values, (self, other), backward_fn, "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.values, other.values

        def backward_fn(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._from_op(a * b, (self, other), backward_fn, "mul")

    def __rmul__(self, other):
        return self * other

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.values, other.values

        def backward_fn(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._from_op(a / b, (self, other), backward_fn, "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise ShapeError("only scalar exponents are supported")
        a = self.values
        p = float(exponent)

        def backward_fn(g):
            return (g * p * a ** (p - 1.0),)

        return Tensor._from_op(a ** p, (self,), backward_fn, "pow")

    def square(self):
        a = self.values
        return Tensor._from_op(a * a, (self,), lambda g: (2.0 * a * g,), "square")

    def sqrt(self):
        """Square root; the gradient at exactly 0 is defined as 0."""
        out = np.sqrt(self.values)
        safe = np.where(out > 0.0, out, 1.0)

        def backward_fn(g):
            return (np.where(out > 0.0, 0.5 * g / safe, 0.0),)

        return Tensor._from_op(out, (self,), backward_fn, "sqrt")

    # -- reductions and shape ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def backward_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        out = self.values.sum(axis=axis, keepdims=keepdims)
        return Tensor._from_op(out, (self,), backward_fn, "sum")

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.values.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        out = self.values.reshape(shape)
        return Tensor._from_op(out, (self,), lambda g: (g.reshape(original),), "reshape")

    def __getitem__(self, index):
        original = self.shape
        parts = index if isinstance(index, tuple) else (index,)
        basic = all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis for p in parts)

        def backward_fn(g):
            full = np.zeros(original, dtype=np.float64)
            if basic:
                full[index] = g  # basic indexing never repeats an element
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._from_op(self.values[index], (self,), backward_fn, "index")


class Parameter(Tensor):
    """
    A trainable tensor registered in a network.

    Args:
        values: Initial values
        name: Unique name inside the owning network
        trainable: Whether optimizers update it (and gradients reach it)
    """

    def __init__(self, values, name, trainable=True):
        super().__init__(values, requires_grad=trainable)
        self.name = name

    @property
    def trainable(self):
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag):
        self.requires_grad = bool(flag)
        if not flag:
            self.grad = None

    @property
    def tensor(self):
        return self

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _topological_order(root):
    """Parents before children, restricted to gradient-carrying nodes."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """
    Back-propagate from a scalar loss.

    Every leaf tensor reachable from the loss with requires_grad set has the
    gradient added to its .grad; everything else is left untouched.
    """
    if loss.values.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss is not connected to any tensor that requires grad")

    grads = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
