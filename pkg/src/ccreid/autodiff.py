"""Minimal reverse-mode differentiation over float64 numpy arrays.

A Tape records the computation graph as operations execute.  Nodes are
created strictly after their operands, so the tape's creation order is a
topological order and backward() can sweep it once in reverse.  A tape is
meant to live for a single mini-batch and be discarded.

Operands of every op may be Node instances (gradients flow) or plain
arrays / scalars (treated as constants).  Values are stored as float64
arrays; scalars are 0-d arrays.
"""

import numpy as np

from .errors import (
    DimensionMismatchError,
    NotScalarRootError,
    ZeroVectorError,
)
from .numerics import ZERO_NORM_FLOOR


class Node:
    """One value in the computation graph."""

    __slots__ = ("tape", "value", "parents", "backward_fn", "grad", "index")

    def __init__(self, tape, value, parents=(), backward_fn=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape


def _value_of(operand):
    if isinstance(operand, Node):
        return operand.value
    return np.asarray(operand, dtype=np.float64)


def _accumulate(node, grad):
    if isinstance(node, Node):
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
        node.grad += grad


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Records ops for one mini-batch; owns every Node it creates."""

    def __init__(self):
        self.nodes = []
        self.leaves = []

    # -- graph construction -------------------------------------------

    def leaf(self, value):
        """Register a differentiable input (a parameter tensor)."""
        arr = np.asarray(value, dtype=np.float64)
        node = Node(self, arr)
        self.leaves.append(node)
        return node

    def constant(self, value):
        """Wrap a value as a non-leaf node (no gradient is kept for it)."""
        return Node(self, np.asarray(value, dtype=np.float64))

    def _binary(self, a, b, forward, backward_a, backward_b):
        av, bv = _value_of(a), _value_of(b)
        out = Node(self, forward(av, bv), parents=(a, b))

        def backward(grad):
            if isinstance(a, Node):
                _accumulate(a, _unbroadcast(backward_a(grad, av, bv), av.shape))
            if isinstance(b, Node):
                _accumulate(b, _unbroadcast(backward_b(grad, av, bv), bv.shape))

        out.backward_fn = backward
        return out

    def add(self, a, b):
        return self._binary(
            a, b, np.add,
            lambda g, av, bv: g,
            lambda g, av, bv: g,
        )

    def sub(self, a, b):
        return self._binary(
            a, b, np.subtract,
            lambda g, av, bv: g,
            lambda g, av, bv: -g,
        )

    def mul(self, a, b):
        return self._binary(
            a, b, np.multiply,
            lambda g, av, bv: g * bv,
            lambda g, av, bv: g * av,
        )

    def scale(self, a, factor):
        av = _value_of(a)
        factor = float(factor)
        out = Node(self, av * factor, parents=(a,))

        def backward(grad):
            _accumulate(a, grad * factor)

        out.backward_fn = backward
        return out

    def matmul(self, a, b):
        av, bv = _value_of(a), _value_of(b)
        if av.ndim != 2 or bv.ndim != 2:
            raise DimensionMismatchError("matmul expects 2-d operands")
        if av.shape[1] != bv.shape[0]:
            raise DimensionMismatchError(
                f"matmul shapes {av.shape} and {bv.shape} do not chain"
            )
        out = Node(self, av @ bv, parents=(a, b))

        def backward(grad):
            if isinstance(a, Node):
                _accumulate(a, grad @ bv.T)
            if isinstance(b, Node):
                _accumulate(b, av.T @ grad)

        out.backward_fn = backward
        return out

    def tanh(self, a):
        av = _value_of(a)
        y = np.tanh(av)
        out = Node(self, y, parents=(a,))

        def backward(grad):
            _accumulate(a, grad * (1.0 - y * y))

        out.backward_fn = backward
        return out

    def row_normalize(self, a):
        """L2-normalize each row of a 2-d node."""
        av = _value_of(a)
        if av.ndim != 2:
            raise DimensionMismatchError("row_normalize expects a 2-d operand")
        norms = np.linalg.norm(av, axis=1, keepdims=True)
        if np.any(norms < ZERO_NORM_FLOOR):
            bad = int(np.argmax(norms[:, 0] < ZERO_NORM_FLOOR))
            raise ZeroVectorError(f"row {bad} has near-zero norm before normalization")
        y = av / norms
        out = Node(self, y, parents=(a,))

        def backward(grad):
            # d(x/||x||) pushes grad onto the tangent space of the sphere
            inner = (grad * y).sum(axis=1, keepdims=True)
            _accumulate(a, (grad - y * inner) / norms)

        out.backward_fn = backward
        return out

    def softmax_rows(self, a):
        av = _value_of(a)
        if av.ndim != 2:
            raise DimensionMismatchError("softmax_rows expects a 2-d operand")
        shifted = av - av.max(axis=1, keepdims=True)
        exps = np.exp(shifted)
        y = exps / exps.sum(axis=1, keepdims=True)
        out = Node(self, y, parents=(a,))

        def backward(grad):
            inner = (grad * y).sum(axis=1, keepdims=True)
            _accumulate(a, y * (grad - inner))

        out.backward_fn = backward
        return out

    def log_softmax_rows(self, a):
        av = _value_of(a)
        if av.ndim != 2:
            raise DimensionMismatchError("log_softmax_rows expects a 2-d operand")
        shifted = av - av.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        y = shifted - lse
        softmax = np.exp(y)
        out = Node(self, y, parents=(a,))

        def backward(grad):
            _accumulate(a, grad - softmax * grad.sum(axis=1, keepdims=True))

        out.backward_fn = backward
        return out

    def logsumexp_rows(self, a):
        av = _value_of(a)
        if av.ndim != 2:
            raise DimensionMismatchError("logsumexp_rows expects a 2-d operand")
        high = av.max(axis=1, keepdims=True)
        exps = np.exp(av - high)
        y = (high + np.log(exps.sum(axis=1, keepdims=True)))[:, 0]
        softmax = exps / exps.sum(axis=1, keepdims=True)
        out = Node(self, y, parents=(a,))

        def backward(grad):
            _accumulate(a, softmax * grad[:, None])

        out.backward_fn = backward
        return out

    def gather_rows(self, a, indices):
        """Select rows (2-d) or entries (1-d) along axis 0, repeats allowed."""
        av = _value_of(a)
        idx = np.asarray(indices, dtype=np.intp)
        out = Node(self, av[idx], parents=(a,))

        def backward(grad):
            if isinstance(a, Node):
                if a.grad is None:
                    a.grad = np.zeros_like(a.value)
                np.add.at(a.grad, idx, grad)

        out.backward_fn = backward
        return out

    def take_entries(self, a, rows, cols):
        """Pick a[rows[i], cols[i]] into a 1-d node, repeats allowed."""
        av = _value_of(a)
        if av.ndim != 2:
            raise DimensionMismatchError("take_entries expects a 2-d operand")
        r = np.asarray(rows, dtype=np.intp)
        c = np.asarray(cols, dtype=np.intp)
        out = Node(self, av[r, c], parents=(a,))

        def backward(grad):
            if isinstance(a, Node):
                if a.grad is None:
                    a.grad = np.zeros_like(a.value)
                np.add.at(a.grad, (r, c), grad)

        out.backward_fn = backward
        return out

    def row_sum(self, a):
        av = _value_of(a)
        if av.ndim != 2:
            raise DimensionMismatchError("row_sum expects a 2-d operand")
        out = Node(self, av.sum(axis=1), parents=(a,))

        def backward(grad):
            _accumulate(a, np.broadcast_to(grad[:, None], av.shape))

        out.backward_fn = backward
        return out

    def total_sum(self, a):
        av = _value_of(a)
        out = Node(self, np.asarray(av.sum()), parents=(a,))

        def backward(grad):
            _accumulate(a, np.broadcast_to(grad, av.shape))

        out.backward_fn = backward
        return out

    def mean(self, a):
        av = _value_of(a)
        out = Node(self, np.asarray(av.mean()), parents=(a,))

        def backward(grad):
            _accumulate(a, np.broadcast_to(grad / av.size, av.shape))

        out.backward_fn = backward
        return out

    # -- differentiation ------------------------------------------------

    def backward(self, root):
        """Accumulate d(root)/d(leaf) into every leaf's .grad.

        The root must be a scalar node created on this tape.  Each node's
        backward rule runs at most once, in reverse creation order, which
        is a reverse topological order by construction.
        """
        if not isinstance(root, Node) or root.tape is not self:
            raise NotScalarRootError("root does not belong to this tape")
        if root.value.ndim != 0:
            raise NotScalarRootError(
                f"root must be scalar, got shape {root.value.shape}"
            )
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones(())
        for node in self.nodes[root.index::-1]:
            if node.grad is None or node.backward_fn is None:
                continue
            node.backward_fn(node.grad)

    def gradient(self, leaf):
        """Gradient of the last backward() root w.r.t. a leaf.

        Leaves the root never touched get an exactly-zero array.
        """
        if leaf.grad is None:
            return np.zeros_like(leaf.value)
        return leaf.grad
