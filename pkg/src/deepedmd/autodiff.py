"""A small reverse-mode automatic differentiation tape over numpy arrays.

Every operation returns a :class:`Node` holding its forward value, its input
nodes and a closure mapping the output adjoint to input adjoints. Batched
operands follow numpy broadcasting; adjoints are summed back down to each
input's shape.

    >>> x = parameter(np.array([1.0, 2.0]))
    >>> y = sum(x * x)
    >>> backward(y)[x]
    array([2., 4.])
"""
from __future__ import annotations

import builtins
import itertools

import numpy as np

from .errors import InvalidArgument, NumericError

_ids = itertools.count()


class Node:
    __slots__ = ("value", "inputs", "vjp", "op", "requires_grad", "id")
    # make ndarray <op> Node dispatch to the reflected Node methods
    __array_ufunc__ = None

    def __init__(self, value, inputs=(), vjp=None, op="const", requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64) if not isinstance(value, np.ndarray) else value
        self.inputs = tuple(inputs)
        self.vjp = vjp
        self.op = op
        if requires_grad is None:
            requires_grad = builtins.any(n.requires_grad for n in self.inputs)
        self.requires_grad = requires_grad
        self.id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def parameter(value):
    return Node(np.array(value, dtype=np.float64), op="param", requires_grad=True)


def constant(value):
    return Node(np.asarray(value, dtype=np.float64), op="const", requires_grad=False)


def _lift(x):
    return x if isinstance(x, Node) else constant(x)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise --------------------------------------------------------------


def add(a, b):
    a, b = _lift(a), _lift(b)
    return Node(a.value + b.value, (a, b),
                lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    return Node(a.value - b.value, (a, b),
                lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    return Node(a.value * b.value, (a, b),
                lambda g: (unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)),
                "mul")


def relu(x):
    x = _lift(x)
    out = np.maximum(x.value, 0.0)

    def vjp(g):
        # subgradient at 0 is 0
        return (np.where(out > 0, g, 0.0),)

    return Node(out, (x,), vjp, "relu")


def square(x):
    x = _lift(x)
    return Node(x.value * x.value, (x,), lambda g: (2.0 * g * x.value,), "square")


def power(x, p: float):
    x = _lift(x)
    return Node(x.value ** p, (x,), lambda g: (g * p * x.value ** (p - 1),), "pow")


def sqrt(x):
    x = _lift(x)
    out = np.sqrt(x.value)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return Node(out, (x,), vjp, "sqrt")


# -- reductions and shape -------------------------------------------------------


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    x = _lift(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Node(np.asarray(out), (x,), vjp, "sum")


def mean(x, axis=None):
    x = _lift(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis), 1.0 / n)


def reshape(x, shape):
    x = _lift(x)
    return Node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def permute(x, axes):
    x = _lift(x)
    inverse = np.argsort(axes)
    return Node(np.transpose(x.value, axes), (x,),
                lambda g: (np.transpose(g, inverse),), "permute")


def transpose(x):
    """Swap the last two axes."""
    x = _lift(x)
    return Node(np.swapaxes(x.value, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "T")


def getitem(x, idx):
    x = _lift(x)

    def vjp(g):
        out = np.zeros_like(x.value)
        out[idx] = g
        return (out,)

    return Node(x.value[idx], (x,), vjp, "getitem")


def stack(nodes, axis=0):
    nodes = [_lift(n) for n in nodes]
    out = np.stack([n.value for n in nodes], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))

    return Node(out, nodes, vjp, "stack")


def concatenate(nodes, axis=0):
    nodes = [_lift(n) for n in nodes]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    splits = np.cumsum([n.shape[axis] for n in nodes])[:-1]
    return Node(out, nodes, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


# -- linear algebra --------------------------------------------------------------


def _fold_batch(g, b):
    """``sum_batch g @ b^T`` for 2-D left operands, done as one GEMM."""
    m, k = g.shape[-2], b.shape[-2]
    g2 = np.moveaxis(g, -2, 0).reshape(m, -1)
    b2 = np.moveaxis(b, -2, 0).reshape(k, -1)
    return g2 @ b2.T


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value

    def vjp(g):
        if av.ndim == 2 and bv.ndim > 2:
            ga = _fold_batch(g, bv)
        else:
            ga = unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = None
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return Node(av @ bv, (a, b), vjp, "matmul")


def inv(x):
    """Batched matrix inverse; adjoint ``-Y^T g Y^T`` with ``Y = inv(x)``."""
    x = _lift(x)
    try:
        y = np.linalg.inv(x.value)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular matrix in inv: {exc}") from exc
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite matrix inverse")

    def vjp(g):
        yt = np.swapaxes(y, -1, -2)
        return (-(yt @ g @ yt),)

    return Node(y, (x,), vjp, "inv")


def frobenius(x):
    """Frobenius norm over the last two axes."""
    return sqrt(sum(square(x), axis=(-2, -1)))


def mse(a, b):
    return mean(square(sub(a, b)))


# -- backward pass -------------------------------------------------------------


def _topological(root):
    seen, order, stack_ = set(), [], [root]
    while stack_:
        n = stack_.pop()
        if n.id in seen or not n.requires_grad:
            continue
        seen.add(n.id)
        order.append(n)
        stack_.extend(n.inputs)
    order.sort(key=lambda n: n.id, reverse=True)
    return order


def backward(loss: Node) -> dict:
    """Adjoints of scalar ``loss`` for every reachable node that requires grad."""
    if loss.value.size != 1:
        raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {loss: np.ones_like(loss.value)}
    for node in _topological(loss):
        g = grads.pop(node, None) if node.vjp is not None else grads.get(node)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.inputs, node.vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg
    return grads


def gradients(loss: Node, wrt) -> list:
    """Adjoints of ``loss`` with respect to each node in ``wrt`` (zeros when unreachable)."""
    grads = backward(loss)
    return [grads.get(n, np.zeros_like(n.value)) for n in wrt]


def diff_koopman(minus, plus, ridge: float):
    """Ridge least-squares Koopman matrix ``plus minus^T (minus minus^T + ridge I)^-1``.

    Batched over leading axes; differentiable through the inverse.
    """
    if not ridge > 0:
        raise InvalidArgument(f"ridge must be positive, got {ridge}")
    minus, plus = _lift(minus), _lift(plus)
    mt = transpose(minus)
    gram = matmul(minus, mt) + ridge * np.eye(minus.shape[-2])
    return matmul(matmul(plus, mt), inv(gram))
