"""Minimal reverse-mode differentiation over numpy float64 values.

The operation set is fixed to what the planning objective needs: affine maps,
tanh, fused softmax, exp/log/sqrt/pow, elementwise arithmetic with limited
broadcasting, absolute value (subgradient 0 at 0), clip-above-zero, sums and
dot products. Graphs are built per objective and differentiated once; a second
`backward` on the same root raises. Only `Node` operands receive gradients;
raw floats and arrays are treated as detached constants.
"""

from __future__ import annotations

import numpy as np

from .errors import TapeLifecycleError


def _unbroadcast(g, shape):
    if np.shape(g) == shape:
        return g
    if shape == ():
        return np.sum(g)
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Node:
    __slots__ = ("value", "grad", "_parents", "_vjp", "_consumed")

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.grad = None
        self._parents = parents
        self._vjp = vjp
        self._consumed = False

    # -- graph execution ----------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every ancestor's `.grad`."""
        if self._consumed:
            raise TapeLifecycleError("objective already differentiated; rebuild the graph")
        self._consumed = True
        order = _toposort(self)
        self.grad = 1.0 if np.shape(self.value) == () else np.ones_like(self.value)
        for node in order:
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # -- operator sugar -----------------------------------------------------

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
        return mul(self, -1.0)

    def __pow__(self, p):
        return powc(self, p)


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
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
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def value_of(x):
    return x.value if isinstance(x, Node) else x


def leaf(value) -> Node:
    """A differentiable input; read its `.grad` after backward."""
    return Node(np.asarray(value, dtype=np.float64))


def _binary(a, b, fwd, da, db):
    av, bv = value_of(a), value_of(b)
    out = fwd(av, bv)
    parents, sides = [], []
    if isinstance(a, Node):
        parents.append(a)
        sides.append((da, np.shape(av)))
    if isinstance(b, Node):
        parents.append(b)
        sides.append((db, np.shape(bv)))
    if not parents:
        return Node(out)

    def vjp(g):
        return [_unbroadcast(d(g, av, bv, out), shape) for d, shape in sides]

    return Node(out, tuple(parents), vjp)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y, lambda g, x, y, o: -g * x / (y * y))


def _unary(a, fwd, da):
    av = value_of(a)
    out = fwd(av)
    if not isinstance(a, Node):
        return Node(out)
    return Node(out, (a,), lambda g: [da(g, av, out)])


def powc(a, p):
    return _unary(a, lambda x: x ** p, lambda g, x, o: g * p * x ** (p - 1))


def tanh(a):
    return _unary(a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def exp(a):
    return _unary(a, np.exp, lambda g, x, o: g * o)


def log(a):
    return _unary(a, np.log, lambda g, x, o: g / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda g, x, o: g * 0.5 / o)


def absolute(a):
    """|x| with subgradient 0 at x == 0."""
    return _unary(a, np.abs, lambda g, x, o: g * np.sign(x))


def clip_above_zero(a):
    """min(x, 0); gradient passes only where x < 0."""
    return _unary(a, lambda x: np.minimum(x, 0.0), lambda g, x, o: g * (x < 0.0))


def vsum(a):
    return _unary(a, np.sum, lambda g, x, o: np.full(np.shape(x), g))


def dot(a, b):
    return _binary(a, b, lambda x, y: float(np.dot(x, y)),
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def add_n(items):
    """Sum of scalars in fixed order; deterministic particle reduction."""
    total = 0.0
    parents = []
    for item in items:
        total = total + value_of(item)
        if isinstance(item, Node):
            parents.append(item)
    if not parents:
        return Node(total)
    return Node(total, tuple(parents), lambda g: [g] * len(parents))


def affine(w, b, x):
    """w @ x + b for a weight matrix, bias vector, and input vector."""
    wv, bv, xv = value_of(w), value_of(b), value_of(x)
    out = wv @ xv + bv
    parents, kinds = [], []
    for arg, kind in ((w, "w"), (b, "b"), (x, "x")):
        if isinstance(arg, Node):
            parents.append(arg)
            kinds.append(kind)
    if not parents:
        return Node(out)

    def vjp(g):
        gs = []
        for kind in kinds:
            if kind == "w":
                gs.append(np.outer(g, xv))
            elif kind == "b":
                gs.append(g)
            else:
                gs.append(wv.T @ g)
        return gs

    return Node(out, tuple(parents), vjp)


def softmax(a):
    """Fused stable softmax over a vector."""
    av = value_of(a)
    e = np.exp(av - av.max())
    s = e / e.sum()
    if not isinstance(a, Node):
        return Node(s)
    return Node(s, (a,), lambda g: [s * (g - np.dot(g, s))])
